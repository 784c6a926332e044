#pragma once

// Test-only helpers: random inputs, kink detection and independent scalar
// oracles. Nothing here calls into the code paths it is used to check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <vector>

#include "xmodal/autodiff.hpp"
#include "xmodal/losses.hpp"
#include "xmodal/matrix.hpp"
#include "xmodal/model.hpp"
#include "xmodal/pairing.hpp"
#include "xmodal/synth.hpp"
#include "xmodal/rng.hpp"

namespace xmodal::testing {

inline Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c, double lo = -1.0,
                            double hi = 1.0) {
  Matrix m(r, c);
  for (double& v : m.data) v = lo + (hi - lo) * rng.uniform();
  return m;
}

// Like random_matrix but every entry has |x| >= margin.
inline Matrix random_away_from_zero(Rng& rng, std::size_t r, std::size_t c,
                                    double margin = 1e-3) {
  Matrix m(r, c);
  for (double& v : m.data) {
    do {
      v = -1.0 + 2.0 * rng.uniform();
    } while (std::abs(v) < margin);
  }
  return m;
}

// Smallest |x| over the inputs of every rectifier on the tape.
inline double min_kink_distance(const ad::Tape& tape) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < tape.size(); ++i) {
    const auto& n = tape.node(i);
    if (n.op != ad::OpKind::kRelu && n.op != ad::OpKind::kHinge) continue;
    for (double v : tape.node(n.parents[0]).value.data) best = std::min(best, std::abs(v));
  }
  return best;
}

// Smallest distance of any pair distance on the tape to the hard-pair
// thresholds r2 - r1 and r2 + r1.
inline double min_beta_distance(const ad::Tape& tape, const MarginConfig& cfg) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < tape.size(); ++i) {
    const auto& n = tape.node(i);
    if (n.op != ad::OpKind::kSqPairDist) continue;
    for (double v : n.value.data) {
      best = std::min({best, std::abs(v - (cfg.r2 - cfg.r1)), std::abs(v - (cfg.r2 + cfg.r1))});
    }
  }
  return best;
}

// Scalar oracles.

// -log softmax(z)_label, computed directly.
inline double ce_oracle(const std::vector<double>& z, std::size_t label) {
  double denom = 0.0;
  for (double v : z) denom += std::exp(v);
  return -std::log(std::exp(z[label]) / denom);
}

inline double ce_mean_oracle(const Matrix& logits, const std::vector<std::size_t>& labels) {
  double s = 0.0;
  for (std::size_t r = 0; r < logits.rows; ++r) {
    std::vector<double> z(logits.row(r).begin(), logits.row(r).end());
    s += ce_oracle(z, labels[r]);
  }
  return s / static_cast<double>(logits.rows);
}

// Per-pair LMM: max(r1 - y (r2 - d2), 0).
inline double lmm_oracle(double d2, int y, double r1, double r2) {
  return std::max(r1 - y * (r2 - d2), 0.0);
}

// Per-pair APM written term by term, with real exponents on the penalties.
inline double apm_oracle(double d2, int y, double r1, double r2, double delta) {
  int beta = 0;
  if (y == 1 && d2 > r2 + r1) beta = 1;
  if (y == -1 && d2 < r2 - r1) beta = 1;
  const double lambda = y == 1 ? 0.0 : 1.0;
  const double eps1 = delta * d2;
  const double eps2 = (1.0 - delta) * d2;
  const double penalty = beta * std::pow(eps1, 1.0 - lambda) * std::pow(eps2, lambda);
  return std::max(r1 + penalty - y * (r2 - d2), 0.0);
}

// Dense forward pass with loops; rectifier between layers when `relu`.
inline Matrix affine_oracle(const Matrix& x, const Dense& d) {
  Matrix out(x.rows, d.weight.cols);
  for (std::size_t r = 0; r < x.rows; ++r) {
    for (std::size_t c = 0; c < d.weight.cols; ++c) {
      double s = d.bias(0, c);
      for (std::size_t k = 0; k < x.cols; ++k) s += x(r, k) * d.weight(k, c);
      out(r, c) = s;
    }
  }
  return out;
}

inline Matrix relu_oracle(Matrix m) {
  for (double& v : m.data) v = std::max(v, 0.0);
  return m;
}

inline Matrix encoder_oracle(const EncoderParams& enc, const Matrix& x) {
  Matrix h = x;
  for (std::size_t i = 0; i < enc.layers.size(); ++i) {
    h = affine_oracle(h, enc.layers[i]);
    if (i + 1 < enc.layers.size()) h = relu_oracle(std::move(h));
  }
  return h;
}

inline Matrix concat_oracle(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows, a.cols + b.cols);
  for (std::size_t r = 0; r < a.rows; ++r) {
    for (std::size_t c = 0; c < a.cols; ++c) out(r, c) = a(r, c);
    for (std::size_t c = 0; c < b.cols; ++c) out(r, a.cols + c) = b(r, c);
  }
  return out;
}

inline double sqdist_oracle(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

inline Matrix rows_oracle(const Matrix& src, const std::vector<std::size_t>& rows) {
  Matrix out(rows.size(), src.cols);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t c = 0; c < src.cols; ++c) out(i, c) = src(rows[i], c);
  }
  return out;
}

inline std::vector<std::size_t> sorted_unique(std::vector<std::size_t> v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

inline std::vector<double> unit_row(std::span<const double> r) {
  double n = 0.0;
  for (double v : r) n += v * v;
  n = std::sqrt(n);
  std::vector<double> out(r.begin(), r.end());
  if (n > 0.0) {
    for (double& v : out) v /= n;
  }
  return out;
}

inline double pair_d2_oracle(std::span<const double> a, std::span<const double> b, bool normalize) {
  if (!normalize) return sqdist_oracle(a, b);
  auto ua = unit_row(a), ub = unit_row(b);
  return sqdist_oracle(ua, ub);
}

inline double metric_oracle(Metric metric, const std::vector<double>& d2,
                            const std::vector<int>& y, const MarginConfig& cfg) {
  double s = 0.0;
  for (std::size_t i = 0; i < d2.size(); ++i) {
    s += metric == Metric::kApm ? apm_oracle(d2[i], y[i], cfg.r1, cfg.r2, cfg.delta)
                                : lmm_oracle(d2[i], y[i], cfg.r1, cfg.r2);
  }
  return s / static_cast<double>(d2.size());
}

inline std::vector<std::size_t> labels_oracle(const SampleSet& set,
                                              const std::vector<std::size_t>& rows) {
  std::vector<std::size_t> out;
  for (std::size_t r : rows) out.push_back(set.identity_labels[r]);
  return out;
}

// L_id + alpha1 * metric over the identity features, from loops.
inline double l_da_oracle(const ParamSet& ps, const SampleSet& set, const PairBatch& pb,
                          const MarginConfig& cfg, Metric metric) {
  auto vis = sorted_unique(pb.v_indices);
  auto nir = sorted_unique(pb.n_indices);
  Matrix xv = encoder_oracle(ps.agnostic, rows_oracle(set.features, vis));
  Matrix xn = encoder_oracle(ps.agnostic, rows_oracle(set.features, nir));
  double loss = ce_mean_oracle(affine_oracle(xv, ps.id_head), labels_oracle(set, vis)) +
                ce_mean_oracle(affine_oracle(xn, ps.id_head), labels_oracle(set, nir));
  if (metric == Metric::kNone) return loss;
  std::vector<double> d2;
  for (std::size_t i = 0; i < pb.size(); ++i) {
    auto sv = std::lower_bound(vis.begin(), vis.end(), pb.v_indices[i]) - vis.begin();
    auto sn = std::lower_bound(nir.begin(), nir.end(), pb.n_indices[i]) - nir.begin();
    d2.push_back(pair_d2_oracle(xv.row(sv), xn.row(sn), cfg.normalize_features));
  }
  return loss + cfg.alpha1 * metric_oracle(metric, d2, pb.y_vn, cfg);
}

inline double l_dom_oracle(const ParamSet& ps, const SampleSet& set, const PairBatch& pb) {
  auto vis = sorted_unique(pb.v_indices);
  auto nir = sorted_unique(pb.n_indices);
  Matrix mv = encoder_oracle(ps.private_enc, rows_oracle(set.features, vis));
  Matrix mn = encoder_oracle(ps.private_enc, rows_oracle(set.features, nir));
  return ce_mean_oracle(affine_oracle(mv, ps.dom_head), std::vector<std::size_t>(vis.size(), 0)) +
         ce_mean_oracle(affine_oracle(mn, ps.dom_head), std::vector<std::size_t>(nir.size(), 1));
}

inline Matrix fusion_logits_oracle(const ParamSet& ps, const Matrix& fused) {
  return affine_oracle(relu_oracle(affine_oracle(fused, ps.fuse_reduce)), ps.fuse_classify);
}

// L_Fid + alpha2 * metric(s^v, t^n), per pair, from loops.
inline double l_ffm_oracle(const ParamSet& ps, const SampleSet& set, const PairBatch& pb,
                           const MarginConfig& cfg, Metric metric) {
  Matrix iv = rows_oracle(set.features, pb.v_indices);
  Matrix in = rows_oracle(set.features, pb.n_indices);
  Matrix xv = encoder_oracle(ps.agnostic, iv), xn = encoder_oracle(ps.agnostic, in);
  Matrix mv = encoder_oracle(ps.private_enc, iv), mn = encoder_oracle(ps.private_enc, in);
  Matrix sv = concat_oracle(xv, mv), sn = concat_oracle(xv, mn);
  Matrix tv = concat_oracle(xn, mv), tn = concat_oracle(xn, mn);
  auto yv = labels_oracle(set, pb.v_indices), yn = labels_oracle(set, pb.n_indices);
  double loss = ce_mean_oracle(fusion_logits_oracle(ps, sv), yv) +
                ce_mean_oracle(fusion_logits_oracle(ps, sn), yv) +
                ce_mean_oracle(fusion_logits_oracle(ps, tv), yn) +
                ce_mean_oracle(fusion_logits_oracle(ps, tn), yn);
  if (metric == Metric::kNone) return loss;
  std::vector<double> d2, d2_sym;
  for (std::size_t i = 0; i < pb.size(); ++i) {
    d2.push_back(pair_d2_oracle(sv.row(i), tn.row(i), cfg.normalize_features));
    d2_sym.push_back(pair_d2_oracle(sn.row(i), tv.row(i), cfg.normalize_features));
  }
  double m = metric_oracle(metric, d2, pb.y_vn, cfg);
  if (cfg.symmetric_ffm) m += metric_oracle(metric, d2_sym, pb.y_vn, cfg);
  return loss + cfg.alpha2 * m;
}

// Rank-1 by exhaustive scan: a probe hits when its first top-scoring
// gallery column carries its identity.
inline double rank1_oracle(const Matrix& scores, const std::vector<std::uint32_t>& probe_ids,
                           const std::vector<std::uint32_t>& gallery_ids) {
  std::size_t hits = 0;
  for (std::size_t p = 0; p < scores.rows; ++p) {
    std::size_t best = 0;
    for (std::size_t g = 1; g < scores.cols; ++g) {
      if (scores(p, g) > scores(p, best)) best = g;
    }
    hits += gallery_ids[best] == probe_ids[p] ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(scores.rows);
}

struct SweepPoint {
  double threshold;  // +inf for the empty acceptance set
  double far;
  double vr;
};

// Accept-if-score>=threshold rates at +inf and at every distinct score,
// by counting over all entries for each threshold. Sorted by descending
// threshold.
inline std::vector<SweepPoint> threshold_sweep(const Matrix& scores,
                                               const std::vector<std::uint32_t>& probe_ids,
                                               const std::vector<std::uint32_t>& gallery_ids) {
  std::vector<double> cands(scores.data);
  std::sort(cands.begin(), cands.end(), std::greater<>());
  cands.erase(std::unique(cands.begin(), cands.end()), cands.end());
  cands.insert(cands.begin(), std::numeric_limits<double>::infinity());
  std::vector<SweepPoint> out;
  for (double t : cands) {
    double gen = 0, imp = 0, acc_gen = 0, acc_imp = 0;
    for (std::size_t p = 0; p < scores.rows; ++p) {
      for (std::size_t g = 0; g < scores.cols; ++g) {
        const bool genuine = probe_ids[p] == gallery_ids[g];
        const bool accepted = scores(p, g) >= t;
        (genuine ? gen : imp) += 1;
        if (accepted) (genuine ? acc_gen : acc_imp) += 1;
      }
    }
    out.push_back({t, acc_imp / imp, acc_gen / gen});
  }
  return out;
}

struct VrOracle {
  double vr = 0.0;
  double far = 0.0;
  std::optional<double> threshold;
};

// Best vr among thresholds with far <= target; ties go to the smallest far,
// then the highest threshold.
inline VrOracle vr_at_far_oracle(const std::vector<SweepPoint>& sweep, double target) {
  VrOracle best;
  bool have = false;
  for (const auto& pt : sweep) {
    if (pt.far > target) continue;
    const bool better = !have || pt.vr > best.vr ||
                        (pt.vr == best.vr && pt.far < best.far);
    if (better) {
      have = true;
      best.vr = pt.vr;
      best.far = pt.far;
      best.threshold = std::isinf(pt.threshold) ? std::nullopt : std::optional<double>(pt.threshold);
    }
  }
  return best;
}

// Tiny model dims for gradient checks.
inline ModelDims tiny_dims(std::size_t n_ids = 4) {
  ModelDims d;
  d.input_dim = 4;
  d.hidden_dims = {5};
  d.feat_dim = 3;
  d.dom_feat_dim = 3;
  d.reduce_dim = 3;
  d.n_identities = n_ids;
  return d;
}

inline std::vector<Matrix> param_values(const ParamSet& ps) {
  std::vector<Matrix> out;
  for (const Matrix* m : ps.tensors()) out.push_back(*m);
  return out;
}

}  // namespace xmodal::testing
