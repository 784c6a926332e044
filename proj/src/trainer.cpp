#include "xmodal/trainer.hpp"

#include <spdlog/spdlog.h>

#include <chrono>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "xmodal/errors.hpp"
#include "xmodal/rng.hpp"

namespace xmodal {

void OptConfig::validate() const {
  if (!(lr_stage1 > 0.0)) throw ConfigError("lr_stage1", "must be > 0");
  if (!(lr_stage2 > 0.0)) throw ConfigError("lr_stage2", "must be > 0");
  if (!(lr_stage3 > 0.0)) throw ConfigError("lr_stage3", "must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum", "must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay", "must be >= 0");
  if (!(plateau_tol >= 0.0)) throw ConfigError("plateau_tol", "must be >= 0");
  if (plateau_window < 1) throw ConfigError("plateau_window", "must be >= 1");
  if (batch_identities < 1) throw ConfigError("batch_identities", "must be >= 1");
}

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::kBaseline: return "baseline";
    case Variant::kLmm: return "lmm";
    case Variant::kApm: return "apm";
    case Variant::kFfm: return "ffm";
    case Variant::kLmmFfm: return "lmm+ffm";
    case Variant::kApmFfm: return "apm+ffm";
  }
  return "?";
}

Variant parse_variant(const std::string& name) {
  for (Variant v : kAllVariants) {
    if (variant_name(v) == name) return v;
  }
  throw ConfigError("variant", "unknown variant '" + name +
                                   "' (expected baseline, lmm, apm, ffm, lmm+ffm, apm+ffm)");
}

Metric variant_metric(Variant v) {
  switch (v) {
    case Variant::kLmm:
    case Variant::kLmmFfm:
      return Metric::kLmm;
    case Variant::kApm:
    case Variant::kApmFfm:
      return Metric::kApm;
    default:
      return Metric::kNone;
  }
}

bool variant_uses_fusion(Variant v) {
  return v == Variant::kFfm || v == Variant::kLmmFfm || v == Variant::kApmFfm;
}

void sgd_step(std::span<Matrix* const> params, std::span<const Matrix> grads,
              std::span<Matrix> velocity, double lr, double momentum, double weight_decay) {
  if (params.size() != grads.size() || params.size() != velocity.size()) {
    throw ShapeError("sgd_step: parameter, gradient and velocity counts differ");
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    Matrix& p = *params[k];
    const Matrix& g = grads[k];
    Matrix& v = velocity[k];
    if (!p.same_shape(g) || !p.same_shape(v)) {
      throw ShapeError("sgd_step: shape mismatch at tensor " + std::to_string(k) + " (" +
                       p.shape_str() + ", " + g.shape_str() + ", " + v.shape_str() + ")");
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      v.data[i] = momentum * v.data[i] + g.data[i] + weight_decay * p.data[i];
      p.data[i] -= lr * v.data[i];
    }
  }
}

std::string epoch_json(const EpochRecord& rec) {
  nlohmann::ordered_json j;
  j["stage"] = rec.stage;
  j["epoch"] = rec.epoch;
  j["loss"] = rec.loss;
  j["id"] = rec.id;
  j["dom"] = rec.dom;
  j["fid"] = rec.fid;
  j["metric"] = rec.metric;
  j["pair_stats"] = {{"easy_pos", rec.stats.easy_pos}, {"hard_pos", rec.stats.hard_pos},
                     {"band_pos", rec.stats.band_pos}, {"easy_neg", rec.stats.easy_neg},
                     {"hard_neg", rec.stats.hard_neg}, {"band_neg", rec.stats.band_neg}};
  j["wall_ms"] = rec.wall_ms;
  return j.dump();
}

namespace {

enum class Objective { kDa, kDom, kFfm };

struct StagePlan {
  int stage;
  unsigned groups;
  double lr;
  std::size_t epochs;
  Objective objective;
};

// Velocity buffers of `groups`; tensor order is Theta, Phi, fusion, so every
// stage's groups form a contiguous range.
std::span<Matrix> velocity_range(TrainState& st, unsigned groups) {
  std::size_t begin = 0;
  for (unsigned g : {kTheta, kPhi, kFusion}) {
    if (groups & g) break;
    begin += st.params.tensors(g).size();
  }
  return std::span<Matrix>(st.opt.velocity).subspan(begin, st.params.tensors(groups).size());
}

bool all_finite(const std::vector<Matrix>& ms) {
  for (const auto& m : ms) {
    if (!m.all_finite()) return false;
  }
  return true;
}

// Identity-feature distances for pair statistics when the stage objective
// has no metric term.
std::vector<double> identity_d2(const ParamSet& ps, const PairInputs& in, bool normalize) {
  const Matrix xv = agnostic_features(ps, in.vis.value());
  const Matrix xn = agnostic_features(ps, in.nir.value());
  std::vector<double> d2(in.pair_vis.size());
  for (std::size_t i = 0; i < d2.size(); ++i) {
    auto a = xv.row(in.pair_vis[i]);
    auto b = xn.row(in.pair_nir[i]);
    double na = 1.0;
    double nb = 1.0;
    if (normalize) {
      double sa = 0.0;
      double sb = 0.0;
      for (std::size_t c = 0; c < a.size(); ++c) {
        sa += a[c] * a[c];
        sb += b[c] * b[c];
      }
      na = sa > 0.0 ? std::sqrt(sa) : 1.0;
      nb = sb > 0.0 ? std::sqrt(sb) : 1.0;
    }
    double s = 0.0;
    for (std::size_t c = 0; c < a.size(); ++c) {
      const double t = a[c] / na - b[c] / nb;
      s += t * t;
    }
    d2[i] = s;
  }
  return d2;
}

std::size_t negatives_per_anchor(const SampleSet& data, const OptConfig& opt) {
  if (opt.pairs_per_anchor > 0) return opt.pairs_per_anchor;
  // Balanced: as many negatives per VIS anchor as it has positives.
  const auto ids = identities_of(data);
  if (ids.empty()) return 0;
  const std::size_t nir = data.rows_of(Domain::kNir).size();
  return std::max<std::size_t>(1, nir / ids.size());
}

std::vector<double> run_stage(TrainState& st, const SampleSet& data, const TrainSettings& s,
                              const StagePlan& plan, const EpochSink& sink) {
  s.opt.validate();
  s.margin.validate();
  const Metric metric = variant_metric(s.variant);
  std::vector<std::uint32_t> ids = identities_of(data);
  if (ids.empty()) throw DataError("training set is empty");
  const std::size_t ppa = negatives_per_anchor(data, s.opt);
  std::vector<double> trajectory;

  for (std::size_t epoch = 0; epoch < plan.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(derive_seed(s.seed, 1000 + static_cast<std::uint64_t>(plan.stage), epoch));
    for (std::size_t i = ids.size(); i > 1; --i) {
      std::swap(ids[i - 1], ids[rng.below(i)]);
    }

    EpochRecord rec;
    rec.stage = plan.stage;
    rec.epoch = epoch;
    std::size_t batches = 0;
    for (std::size_t b = 0; b < ids.size(); b += s.opt.batch_identities) {
      const std::size_t e = std::min(ids.size(), b + s.opt.batch_identities);
      const std::span<const std::uint32_t> chunk(ids.data() + b, e - b);
      PairBatch pb = make_pairs(data, chunk, ppa, rng);

      ad::Tape tape;
      const ModelVars mv = bind(tape, st.params, plan.groups);
      const PairInputs in = make_pair_inputs(tape, data, pb);
      LossTerms terms;
      switch (plan.objective) {
        case Objective::kDa:
          terms = l_da(mv, in, s.margin, metric);
          break;
        case Objective::kDom:
          terms = l_dom(mv, in);
          terms.d2 = identity_d2(st.params, in, s.margin.normalize_features);
          break;
        case Objective::kFfm:
          terms = l_ffm(mv, in, s.margin, metric);
          break;
      }
      const double loss = terms.total.value().data[0];
      if (!std::isfinite(loss)) {
        std::ostringstream msg;
        msg << "non-finite loss at stage " << plan.stage << " epoch " << epoch << " batch "
            << batches << ": total=" << loss << " id=" << terms.id << " dom=" << terms.dom
            << " fid=" << terms.fid << " metric=" << terms.metric;
        throw NumericError(msg.str());
      }
      tape.backward(terms.total);

      std::vector<Matrix> grads;
      for (const ad::Var& v : mv.vars(plan.groups)) grads.push_back(v.grad());
      if (!all_finite(grads)) {
        throw NumericError("non-finite gradient at stage " + std::to_string(plan.stage) +
                           " epoch " + std::to_string(epoch));
      }
      const auto params = st.params.tensors(plan.groups);
      sgd_step(params, grads, velocity_range(st, plan.groups), plan.lr, s.opt.momentum,
               s.opt.weight_decay);

      pb.d2 = std::move(terms.d2);
      rec.stats += pair_stats(pb, s.margin);
      rec.loss += loss;
      rec.id += terms.id;
      rec.dom += terms.dom;
      rec.fid += terms.fid;
      rec.metric += terms.metric;
      ++batches;
    }
    const double nb = static_cast<double>(batches);
    rec.loss /= nb;
    rec.id /= nb;
    rec.dom /= nb;
    rec.fid /= nb;
    rec.metric /= nb;
    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                      .count();
    trajectory.push_back(rec.loss);
    spdlog::debug("stage {} epoch {} loss {:.6f} (hard_pos {}, hard_neg {})", plan.stage, epoch,
                  rec.loss, rec.stats.hard_pos, rec.stats.hard_neg);
    if (sink) sink(rec);

    const std::size_t w = s.opt.plateau_window;
    if (trajectory.size() > w) {
      const double before = trajectory[trajectory.size() - 1 - w];
      const double gain = (before - rec.loss) / std::max(std::abs(before), 1e-12);
      if (gain < s.opt.plateau_tol) {
        spdlog::debug("stage {} plateaued after {} epochs", plan.stage, epoch + 1);
        break;
      }
    }
  }
  return trajectory;
}

}  // namespace

std::vector<double> train_stage1(TrainState& st, const SampleSet& data, const TrainSettings& s,
                                 const EpochSink& sink) {
  return run_stage(st, data, s, {1, kTheta, s.opt.lr_stage1, s.opt.epochs_stage1, Objective::kDa},
                   sink);
}

std::vector<double> train_stage2(TrainState& st, const SampleSet& data, const TrainSettings& s,
                                 const EpochSink& sink) {
  return run_stage(st, data, s, {2, kPhi, s.opt.lr_stage2, s.opt.epochs_stage2, Objective::kDom},
                   sink);
}

std::vector<double> train_stage3(TrainState& st, const SampleSet& data, const TrainSettings& s,
                                 const EpochSink& sink) {
  return run_stage(st, data, s,
                   {3, kAllGroups, s.opt.lr_stage3, s.opt.epochs_stage3, Objective::kFfm}, sink);
}

TrainResult train_full(const TrainSettings& s, const SampleSet& train,
                       const std::optional<std::filesystem::path>& out_dir, bool resume) {
  namespace fs = std::filesystem;
  s.dims.validate();
  s.margin.validate();
  s.opt.validate();

  TrainResult result;
  result.state.params = init_params(s.dims, s.seed);
  result.state.opt = OptState::zeros_like(result.state.params);

  const int last_stage = variant_uses_fusion(s.variant) ? 3 : 1;
  if (resume && out_dir) {
    for (int stage = last_stage; stage >= 1; --stage) {
      const fs::path p = *out_dir / ("stage" + std::to_string(stage) + ".xmck");
      if (!fs::exists(p)) continue;
      Checkpoint ck = load_checkpoint(p);
      if (ck.params.dims != s.dims) throw DataError("resume: checkpoint dims differ from config");
      if (ck.seed != s.seed) throw ConfigError("seed", "differs from the checkpoint's seed");
      if (ck.stage != stage) throw DataError("resume: stage marker mismatch in " + p.string());
      result.state = {std::move(ck.params), std::move(ck.opt)};
      result.resumed_from = stage;
      result.completed_stage = stage;
      spdlog::info("resuming after stage {} from {}", stage, p.string());
      break;
    }
  }

  std::ofstream log;
  if (out_dir) {
    fs::create_directories(*out_dir);
    const auto mode = result.resumed_from > 0 ? std::ios::app : std::ios::trunc;
    log.open(*out_dir / "runlog.jsonl", std::ios::out | mode);
    if (!log) throw DataError("cannot open run log in " + out_dir->string());
  }
  EpochSink sink = [&log](const EpochRecord& rec) {
    if (log.is_open()) log << epoch_json(rec) << '\n' << std::flush;
  };

  auto checkpoint = [&](const std::string& name, int stage) {
    if (!out_dir) return;
    save_checkpoint({result.state.params, result.state.opt, s.seed, static_cast<std::uint8_t>(stage)},
                    *out_dir / name);
  };

  try {
    for (int stage = result.resumed_from + 1; stage <= last_stage; ++stage) {
      spdlog::info("stage {} ({})", stage, variant_name(s.variant));
      auto& traj = result.trajectories[stage - 1];
      if (stage == 1) traj = train_stage1(result.state, train, s, sink);
      if (stage == 2) traj = train_stage2(result.state, train, s, sink);
      if (stage == 3) traj = train_stage3(result.state, train, s, sink);
      result.completed_stage = stage;
      checkpoint("stage" + std::to_string(stage) + ".xmck", stage);
    }
  } catch (const NumericError&) {
    checkpoint("abort.xmck", result.completed_stage);
    throw;
  }
  checkpoint("final.xmck", result.completed_stage);
  return result;
}

}  // namespace xmodal
