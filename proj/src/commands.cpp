#include "xmodal/commands.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <malloc.h>
#include <json.hpp>
#include <sstream>

#include "xmodal/binio.hpp"
#include "xmodal/errors.hpp"

namespace xmodal::cli {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  binio::write_file(path, std::span<const std::uint8_t>(
                              reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string hex32(std::uint32_t v) {
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08x", v);
  return buf;
}

fs::path resolve_data(const fs::path& data, const char* default_name) {
  if (fs::is_directory(data)) return data / default_name;
  return data;
}

ordered_json config_json(const RunConfig& cfg) {
  ordered_json j;
  std::istringstream in(cfg.to_text());
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find(" = ");
    if (line.empty() || line[0] == '#' || eq == std::string::npos) continue;
    j[line.substr(0, eq)] = line.substr(eq + 3);
  }
  return j;
}

constexpr const char* kRowLabels[] = {"(a)", "(b)", "(c)", "(d)", "(e)", "(f)"};

}  // namespace

void tune_allocator() {
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
}

int guarded(const std::function<void()>& body) {
  try {
    body();
    return kExitOk;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const ShapeError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  }
}

void cmd_gen(const RunConfig& cfg, const fs::path& out) {
  const SynthData data = generate(cfg.synth);
  fs::create_directories(out);
  ordered_json manifest;
  manifest["config"] = config_json(cfg);
  manifest["config_digest"] = cfg.digest();
  auto& files = manifest["files"];
  for (const auto& [name, set] : {std::pair{"train.xmds", &data.train}, {"test.xmds", &data.test}}) {
    const auto bytes = encode_set(*set);
    binio::write_file(out / name, bytes);
    files[name] = {{"bytes", bytes.size()},
                   {"rows", set->size()},
                   {"crc32", hex32(binio::crc32(bytes))}};
  }
  write_text(out / "manifest.json", manifest.dump(2) + "\n");
  write_text(out / "effective.conf", cfg.to_text());
  spdlog::info("wrote {} train and {} test rows to {}", data.train.size(), data.test.size(),
               out.string());
}

TrainResult cmd_train(const RunConfig& cfg_in, const fs::path& data, const fs::path& out,
                      bool resume) {
  const SampleSet train = load_set(resolve_data(data, "train.xmds"));
  train.validate();
  RunConfig cfg = cfg_in;
  cfg.synth.input_dim = train.features.cols;
  std::uint32_t max_id = 0;
  for (auto id : train.identity_labels) max_id = std::max(max_id, id);
  cfg.synth.n_identities = std::max<std::size_t>(cfg.synth.n_identities, max_id + 1);
  if (cfg.synth.latent_dim > cfg.synth.input_dim) cfg.synth.latent_dim = cfg.synth.input_dim;
  cfg.finalize();

  fs::create_directories(out);
  write_text(out / "effective.conf", cfg.to_text());
  TrainResult res = train_full(cfg.train_settings(), train, out, resume);
  spdlog::info("training finished after stage {}", res.completed_stage);
  return res;
}

EvalReport cmd_eval(const RunConfig& cfg, const fs::path& checkpoint, const fs::path& data,
                    const fs::path& out_json, const std::optional<fs::path>& roc_csv_path) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  const SampleSet test = load_set(resolve_data(data, "test.xmds"));
  test.validate();
  if (test.features.cols != ck.params.dims.input_dim) {
    throw ShapeError("checkpoint expects input_dim " + std::to_string(ck.params.dims.input_dim) +
                     " but the dataset has " + std::to_string(test.features.cols));
  }
  Rng rng(derive_seed(cfg.synth.seed, 7));
  EvalReport report = evaluate(ck.params, test, kDefaultFarTargets,
                               cfg.random_gallery ? &rng : nullptr);
  report.config_digest = cfg.digest();
  if (!out_json.parent_path().empty()) fs::create_directories(out_json.parent_path());
  write_text(out_json, report_to_json(report) + "\n");
  if (roc_csv_path) write_text(*roc_csv_path, roc_csv(report));
  return report;
}

MeanStd mean_std(const std::vector<double>& xs) {
  MeanStd r;
  if (xs.empty()) return r;
  double s = 0.0;
  for (double x : xs) s += x;
  r.mean = s / static_cast<double>(xs.size());
  if (xs.size() < 2) return r;
  double ss = 0.0;
  for (double x : xs) ss += (x - r.mean) * (x - r.mean);
  r.std = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  return r;
}

namespace {

void summarize(VariantRow& row) {
  std::vector<double> r1, v01, v1;
  for (const auto& run : row.runs) {
    if (!run.error.empty()) continue;
    r1.push_back(run.rank1);
    v01.push_back(run.vr_far_0p1);
    v1.push_back(run.vr_far_1);
  }
  const MeanStd a = mean_std(r1), b = mean_std(v01), c = mean_std(v1);
  row.rank1_mean = a.mean;
  row.rank1_std = a.std;
  row.vr_0p1_mean = b.mean;
  row.vr_0p1_std = b.std;
  row.vr_1_mean = c.mean;
  row.vr_1_std = c.std;
}

ordered_json run_json(const std::string& variant, const SeedResult& r) {
  ordered_json j;
  j["variant"] = variant;
  j["seed"] = r.seed;
  j["rank1"] = r.rank1;
  j["vr_far_0.001"] = r.vr_far_0p1;
  j["vr_far_0.01"] = r.vr_far_1;
  if (!r.error.empty()) j["error"] = r.error;
  return j;
}

}  // namespace

std::vector<VariantRow> cmd_ablate(const RunConfig& cfg, const std::optional<fs::path>& out) {
  std::vector<VariantRow> rows;
  for (std::size_t i = 0; i < kAllVariants.size(); ++i) {
    rows.push_back({kRowLabels[i], variant_name(kAllVariants[i]), {}});
  }
  std::ofstream runs_log;
  if (out) {
    fs::create_directories(*out);
    write_text(*out / "effective.conf", cfg.to_text());
    runs_log.open(*out / "ablation_runs.jsonl", std::ios::trunc);
  }

  for (std::size_t k = 0; k < cfg.eval_seeds; ++k) {
    RunConfig c = cfg;
    c.synth.seed = cfg.synth.seed + k;
    const SynthData data = generate(c.synth);
    for (std::size_t i = 0; i < kAllVariants.size(); ++i) {
      c.variant = kAllVariants[i];
      SeedResult r;
      r.seed = c.synth.seed;
      try {
        std::optional<fs::path> run_dir;
        if (out) run_dir = *out / variant_name(c.variant) / ("seed" + std::to_string(r.seed));
        const TrainResult tr = train_full(c.train_settings(), data.train, run_dir);
        Rng rng(derive_seed(c.synth.seed, 7));
        const EvalReport rep = evaluate(tr.state.params, data.test, kDefaultFarTargets,
                                        c.random_gallery ? &rng : nullptr);
        r.rank1 = rep.rank1;
        r.vr_far_0p1 = rep.vr_at.at(0).vr;
        r.vr_far_1 = rep.vr_at.at(1).vr;
      } catch (const std::exception& e) {
        r.error = e.what();
        spdlog::warn("ablation run {} seed {} failed: {}", variant_name(c.variant), r.seed,
                     e.what());
      }
      spdlog::info("{} {} seed {}: rank1 {:.4f}", rows[i].label, rows[i].variant, r.seed, r.rank1);
      if (runs_log.is_open()) runs_log << run_json(rows[i].variant, r).dump() << '\n' << std::flush;
      rows[i].runs.push_back(r);
    }
  }
  for (auto& row : rows) summarize(row);
  if (out) {
    write_text(*out / "ablation.json", ablation_json(rows) + "\n");
    write_text(*out / "ablation.txt", ablation_table(rows));
  }
  return rows;
}

std::string ablation_table(const std::vector<VariantRow>& rows) {
  std::ostringstream o;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-4s %-8s %-17s %-17s %-17s %s\n", "row", "variant",
                "rank1", "vr@far=0.1%", "vr@far=1%", "runs");
  o << buf;
  for (const auto& r : rows) {
    std::size_t ok = 0;
    for (const auto& run : r.runs) ok += run.error.empty();
    std::snprintf(buf, sizeof buf, "%-4s %-8s %.4f +- %.4f  %.4f +- %.4f  %.4f +- %.4f  %zu/%zu\n",
                  r.label.c_str(), r.variant.c_str(), r.rank1_mean, r.rank1_std, r.vr_0p1_mean,
                  r.vr_0p1_std, r.vr_1_mean, r.vr_1_std, ok, r.runs.size());
    o << buf;
  }
  return o.str();
}

std::string ablation_json(const std::vector<VariantRow>& rows) {
  ordered_json j = ordered_json::array();
  for (const auto& r : rows) {
    ordered_json row;
    row["row"] = r.label;
    row["variant"] = r.variant;
    row["rank1"] = {{"mean", r.rank1_mean}, {"std", r.rank1_std}};
    row["vr_far_0.001"] = {{"mean", r.vr_0p1_mean}, {"std", r.vr_0p1_std}};
    row["vr_far_0.01"] = {{"mean", r.vr_1_mean}, {"std", r.vr_1_std}};
    auto& runs = row["runs"] = ordered_json::array();
    for (const auto& run : r.runs) runs.push_back(run_json(r.variant, run));
    j.push_back(std::move(row));
  }
  return j.dump(2);
}

std::string cmd_inspect(const fs::path& checkpoint) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  const ModelDims& d = ck.params.dims;
  std::ostringstream o;
  o << "format: XMCK v1\n";
  o << "stage: " << static_cast<int>(ck.stage) << '\n';
  o << "seed: " << ck.seed << '\n';
  o << "input_dim: " << d.input_dim << '\n';
  o << "hidden_dims:";
  for (auto h : d.hidden_dims) o << ' ' << h;
  o << '\n';
  o << "feat_dim: " << d.feat_dim << '\n';
  o << "dom_feat_dim: " << d.dom_feat_dim << '\n';
  o << "reduce_dim: " << d.reduce_dim << '\n';
  o << "n_identities: " << d.n_identities << '\n';
  std::size_t total = 0;
  for (const Matrix* m : ck.params.tensors()) total += m->size();
  o << "parameters: " << total << '\n';
  for (auto [name, g] : {std::pair{"theta", kTheta}, {"phi", kPhi}, {"fusion", kFusion}}) {
    o << name << ':';
    for (const Matrix* m : ck.params.tensors(g)) o << ' ' << m->shape_str();
    o << '\n';
  }
  return o.str();
}

}  // namespace xmodal::cli
