#include "xmodal/losses.hpp"

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>

#include "xmodal/errors.hpp"
#include "xmodal/pairing.hpp"
#include "xmodal/synth.hpp"

namespace xmodal {

void MarginConfig::validate() const {
  if (!(r1 > 0.0)) throw ConfigError("r1", "must be > 0");
  if (!(r2 > r1)) throw ConfigError("r2", "must be > r1");
  if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("delta", "must lie in (0, 1)");
  if (!(alpha1 >= 0.0)) throw ConfigError("alpha1", "must be >= 0");
  if (!(alpha2 >= 0.0)) throw ConfigError("alpha2", "must be >= 0");
}

MarginConfig MarginConfig::normalized() {
  MarginConfig cfg;
  cfg.r1 = 0.05;
  cfg.r2 = 1.0;
  cfg.normalize_features = true;
  return cfg;
}

int beta_indicator(double d2, int y_vn, const MarginConfig& cfg) noexcept {
  if (y_vn > 0) return d2 > cfg.r2 + cfg.r1 ? 1 : 0;
  return d2 < cfg.r2 - cfg.r1 ? 1 : 0;
}

namespace {

void check_pairs(ad::Var d2, std::span<const int> y_vn, const char* what) {
  if (d2.cols() != 1 || d2.rows() != y_vn.size()) {
    throw ShapeError(std::string(what) + ": " + std::to_string(y_vn.size()) +
                     " pair labels for distances of shape " + d2.value().shape_str());
  }
  if (y_vn.empty()) throw ShapeError(std::string(what) + ": empty pair batch");
}

// hinge(offset_i + coef_i * d2_i), averaged.
ad::Var margin_hinge(ad::Var d2, std::vector<double> coef, std::vector<double> offset) {
  const std::size_t m = coef.size();
  ad::Var inner = ad::affine(d2, Matrix(m, 1, std::move(coef)), Matrix(m, 1, std::move(offset)));
  return ad::mean(ad::hinge(inner));
}

}  // namespace

ad::Var lmm_loss(ad::Var d2, std::span<const int> y_vn, const MarginConfig& cfg) {
  check_pairs(d2, y_vn, "lmm_loss");
  std::vector<double> coef(y_vn.size());
  std::vector<double> offset(y_vn.size());
  for (std::size_t i = 0; i < y_vn.size(); ++i) {
    const double y = y_vn[i];
    coef[i] = y;
    offset[i] = cfg.r1 - y * cfg.r2;
  }
  return margin_hinge(d2, std::move(coef), std::move(offset));
}

ad::Var apm_loss(ad::Var d2, std::span<const int> y_vn, const MarginConfig& cfg,
                 std::vector<std::uint8_t>* beta_out) {
  check_pairs(d2, y_vn, "apm_loss");
  const Matrix& dist = d2.value();
  std::vector<double> coef(y_vn.size());
  std::vector<double> offset(y_vn.size());
  if (beta_out) beta_out->assign(y_vn.size(), 0);
  for (std::size_t i = 0; i < y_vn.size(); ++i) {
    const double y = y_vn[i];
    const int beta = beta_indicator(dist.data[i], y_vn[i], cfg);
    // eps1^(1-lambda) * eps2^lambda as a branch on lambda.
    const double eps_rate = lambda_of(y_vn[i]) == 0 ? cfg.delta : 1.0 - cfg.delta;
    coef[i] = y + beta * eps_rate;
    offset[i] = cfg.r1 - y * cfg.r2;
    if (beta_out) (*beta_out)[i] = static_cast<std::uint8_t>(beta);
  }
  return margin_hinge(d2, std::move(coef), std::move(offset));
}

ad::Var metric_loss(Metric metric, ad::Var d2, std::span<const int> y_vn,
                    const MarginConfig& cfg, std::vector<std::uint8_t>* beta_out) {
  switch (metric) {
    case Metric::kLmm:
      if (beta_out) {
        beta_out->resize(y_vn.size());
        for (std::size_t i = 0; i < y_vn.size(); ++i) {
          (*beta_out)[i] = static_cast<std::uint8_t>(beta_indicator(d2.value().data[i], y_vn[i], cfg));
        }
      }
      return lmm_loss(d2, y_vn, cfg);
    case Metric::kApm:
      return apm_loss(d2, y_vn, cfg, beta_out);
    case Metric::kNone:
      break;
  }
  throw std::invalid_argument("metric_loss: no metric selected");
}

ad::Var pair_distance(ad::Var k_v, ad::Var k_n, bool normalize) {
  if (normalize) return ad::sq_pair_dist(ad::normalize_rows(k_v), ad::normalize_rows(k_n));
  return ad::sq_pair_dist(k_v, k_n);
}

ad::Var l_id(const ModelVars& mv, ad::Var x_v, ad::Var x_n, std::span<const std::size_t> y_v,
             std::span<const std::size_t> y_n) {
  return ad::add(ad::softmax_ce(classify_id(mv, x_v), y_v),
                 ad::softmax_ce(classify_id(mv, x_n), y_n));
}

ad::Var l_dom(const ModelVars& mv, ad::Var m_v, ad::Var m_n, std::span<const std::size_t> d_v,
              std::span<const std::size_t> d_n) {
  return ad::add(ad::softmax_ce(classify_dom(mv, m_v), d_v),
                 ad::softmax_ce(classify_dom(mv, m_n), d_n));
}

ad::Var l_fid(const ModelVars& mv, ad::Var s_v, ad::Var s_n, ad::Var t_v, ad::Var t_n,
              std::span<const std::size_t> y_v, std::span<const std::size_t> y_n) {
  const auto& shape = s_v.value();
  for (ad::Var f : {s_n, t_v, t_n}) {
    if (!f.value().same_shape(shape)) {
      throw ShapeError("l_fid: fusion features differ in shape (" + shape.shape_str() + ", " +
                       f.value().shape_str() + ")");
    }
  }
  ad::Var s_terms = ad::add(ad::softmax_ce(enhance_classify(mv, s_v), y_v),
                            ad::softmax_ce(enhance_classify(mv, s_n), y_v));
  ad::Var t_terms = ad::add(ad::softmax_ce(enhance_classify(mv, t_v), y_n),
                            ad::softmax_ce(enhance_classify(mv, t_n), y_n));
  return ad::add(s_terms, t_terms);
}

PairInputs make_pair_inputs(ad::Tape& tape, const SampleSet& set, const PairBatch& pb) {
  PairInputs in;
  std::map<std::size_t, std::size_t> vis_slot;
  std::map<std::size_t, std::size_t> nir_slot;
  for (std::size_t v : pb.v_indices) vis_slot.emplace(v, 0);
  for (std::size_t n : pb.n_indices) nir_slot.emplace(n, 0);

  auto assign = [&set](std::map<std::size_t, std::size_t>& slots, Domain want,
                       std::vector<std::size_t>& labels) {
    std::vector<std::size_t> rows;
    for (auto& [row, slot] : slots) {
      if (row >= set.size() || set.domain_labels[row] != want) {
        throw DataError("pair batch row " + std::to_string(row) + " is not in the expected domain");
      }
      slot = rows.size();
      rows.push_back(row);
      labels.push_back(set.identity_labels[row]);
    }
    return rows;
  };
  const auto vis_rows = assign(vis_slot, Domain::kVis, in.vis_labels);
  const auto nir_rows = assign(nir_slot, Domain::kNir, in.nir_labels);
  in.vis = tape.constant(gather_rows(set.features, vis_rows));
  in.nir = tape.constant(gather_rows(set.features, nir_rows));

  in.pair_vis.reserve(pb.size());
  in.pair_nir.reserve(pb.size());
  for (std::size_t i = 0; i < pb.size(); ++i) {
    in.pair_vis.push_back(vis_slot.at(pb.v_indices[i]));
    in.pair_nir.push_back(nir_slot.at(pb.n_indices[i]));
  }
  in.y_vn = pb.y_vn;
  return in;
}

namespace {

std::vector<std::size_t> pick(const std::vector<std::size_t>& labels,
                              const std::vector<std::size_t>& slots) {
  std::vector<std::size_t> out;
  out.reserve(slots.size());
  for (std::size_t s : slots) out.push_back(labels[s]);
  return out;
}

double scalar(ad::Var v) { return v.value().data[0]; }

}  // namespace

LossTerms l_da(const ModelVars& mv, const PairInputs& in, const MarginConfig& cfg,
               Metric metric) {
  ad::Var x_v = encode_agnostic(mv, in.vis);
  ad::Var x_n = encode_agnostic(mv, in.nir);
  LossTerms t;
  ad::Var id = l_id(mv, x_v, x_n, in.vis_labels, in.nir_labels);
  t.id = scalar(id);
  t.total = id;

  ad::Var d2 = pair_distance(ad::gather_rows(x_v, in.pair_vis), ad::gather_rows(x_n, in.pair_nir),
                             cfg.normalize_features);
  t.d2 = d2.value().data;
  if (metric == Metric::kNone) {
    t.beta.resize(t.d2.size());
    for (std::size_t i = 0; i < t.d2.size(); ++i) {
      t.beta[i] = static_cast<std::uint8_t>(beta_indicator(t.d2[i], in.y_vn[i], cfg));
    }
    return t;
  }
  ad::Var m = metric_loss(metric, d2, in.y_vn, cfg, &t.beta);
  t.metric = scalar(m);
  t.total = ad::add(id, ad::scale(m, cfg.alpha1));
  return t;
}

LossTerms l_dom(const ModelVars& mv, const PairInputs& in) {
  ad::Var m_v = encode_private(mv, in.vis);
  ad::Var m_n = encode_private(mv, in.nir);
  const std::vector<std::size_t> d_v(in.vis_labels.size(), 0);
  const std::vector<std::size_t> d_n(in.nir_labels.size(), 1);
  LossTerms t;
  t.total = l_dom(mv, m_v, m_n, d_v, d_n);
  t.dom = scalar(t.total);
  return t;
}

LossTerms l_ffm(const ModelVars& mv, const PairInputs& in, const MarginConfig& cfg,
                Metric metric) {
  ad::Var x_v = ad::gather_rows(encode_agnostic(mv, in.vis), in.pair_vis);
  ad::Var x_n = ad::gather_rows(encode_agnostic(mv, in.nir), in.pair_nir);
  ad::Var m_v = ad::gather_rows(encode_private(mv, in.vis), in.pair_vis);
  ad::Var m_n = ad::gather_rows(encode_private(mv, in.nir), in.pair_nir);

  ad::Var s_v = fuse(x_v, m_v);
  ad::Var s_n = fuse(x_v, m_n);
  ad::Var t_v = fuse(x_n, m_v);
  ad::Var t_n = fuse(x_n, m_n);

  const auto y_v = pick(in.vis_labels, in.pair_vis);
  const auto y_n = pick(in.nir_labels, in.pair_nir);

  LossTerms t;
  ad::Var fid = l_fid(mv, s_v, s_n, t_v, t_n, y_v, y_n);
  t.fid = scalar(fid);
  t.total = fid;

  ad::Var d2 = pair_distance(s_v, t_n, cfg.normalize_features);
  t.d2 = d2.value().data;
  if (metric == Metric::kNone) {
    t.beta.resize(t.d2.size());
    for (std::size_t i = 0; i < t.d2.size(); ++i) {
      t.beta[i] = static_cast<std::uint8_t>(beta_indicator(t.d2[i], in.y_vn[i], cfg));
    }
    return t;
  }
  ad::Var m = metric_loss(metric, d2, in.y_vn, cfg, &t.beta);
  if (cfg.symmetric_ffm) {
    ad::Var d2_sym = pair_distance(s_n, t_v, cfg.normalize_features);
    m = ad::add(m, metric_loss(metric, d2_sym, in.y_vn, cfg));
  }
  t.metric = scalar(m);
  t.total = ad::add(fid, ad::scale(m, cfg.alpha2));
  return t;
}

}  // namespace xmodal
