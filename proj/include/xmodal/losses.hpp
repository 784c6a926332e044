#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "xmodal/autodiff.hpp"
#include "xmodal/model.hpp"

namespace xmodal {

struct PairBatch;
struct SampleSet;

// Margin geometry of the cross-modal metric losses. Positive pairs should
// satisfy D^2 < r2 - r1 and negative pairs D^2 > r2 + r1.
struct MarginConfig {
  double r1 = 5.0;
  double r2 = 100.0;
  // Penalty trade-off: hard positives gain delta * D^2, hard negatives
  // (1 - delta) * D^2 inside the hinge.
  double delta = 0.5;
  double alpha1 = 0.01;
  double alpha2 = 0.01;
  // Length-normalize features before measuring pair distances.
  bool normalize_features = false;
  // Also penalize the (s^n, t^v) fusion pair in the fusion-stage metric.
  bool symmetric_ffm = false;

  void validate() const;
  // Thresholds rescaled for unit-length features (r1 = 0.05, r2 = 1).
  static MarginConfig normalized();
};

enum class Metric { kNone, kLmm, kApm };

// 1 for hard pairs: positives with d2 > r2 + r1, negatives with d2 < r2 - r1.
int beta_indicator(double d2, int y_vn, const MarginConfig& cfg) noexcept;
// 0 for positive pairs, 1 for negative pairs.
inline int lambda_of(int y_vn) noexcept { return (1 - y_vn) / 2; }

// mean_i h(r1 - y_i (r2 - d2_i)).
ad::Var lmm_loss(ad::Var d2, std::span<const int> y_vn, const MarginConfig& cfg);

// mean_i h(r1 + beta_i * eps_i - y_i (r2 - d2_i)), eps = delta * d2 for
// positives and (1 - delta) * d2 for negatives. beta is taken from the
// forward value of d2 and is a gradient constant. When `beta_out` is given
// it receives the per-pair beta.
ad::Var apm_loss(ad::Var d2, std::span<const int> y_vn, const MarginConfig& cfg,
                 std::vector<std::uint8_t>* beta_out = nullptr);

// Dispatch on `metric`; kNone is not allowed here.
ad::Var metric_loss(Metric metric, ad::Var d2, std::span<const int> y_vn,
                    const MarginConfig& cfg, std::vector<std::uint8_t>* beta_out = nullptr);

// Squared pair distance, optionally on length-normalized rows.
ad::Var pair_distance(ad::Var k_v, ad::Var k_n, bool normalize);

// CE(x^v, y^v) + CE(x^n, y^n) through the identity head.
ad::Var l_id(const ModelVars& mv, ad::Var x_v, ad::Var x_n, std::span<const std::size_t> y_v,
             std::span<const std::size_t> y_n);
// CE(m^v, d^v) + CE(m^n, d^n) through the domain head.
ad::Var l_dom(const ModelVars& mv, ad::Var m_v, ad::Var m_n, std::span<const std::size_t> d_v,
              std::span<const std::size_t> d_n);
// Four cross-entropy terms through the shared fusion head; s-features use
// the VIS labels, t-features the NIR labels.
ad::Var l_fid(const ModelVars& mv, ad::Var s_v, ad::Var s_n, ad::Var t_v, ad::Var t_n,
              std::span<const std::size_t> y_v, std::span<const std::size_t> y_n);

// Tape-resident inputs of a pair batch: each distinct VIS and NIR row is
// encoded once and pairs gather from those encodings.
struct PairInputs {
  ad::Var vis;  // distinct VIS input rows (constant)
  ad::Var nir;  // distinct NIR input rows (constant)
  std::vector<std::size_t> vis_labels;
  std::vector<std::size_t> nir_labels;
  std::vector<std::size_t> pair_vis;  // row of `vis` per pair
  std::vector<std::size_t> pair_nir;  // row of `nir` per pair
  std::vector<int> y_vn;
};

PairInputs make_pair_inputs(ad::Tape& tape, const SampleSet& set, const PairBatch& pb);

// A composite objective and its parts, evaluated on one pair batch.
struct LossTerms {
  ad::Var total;
  double id = 0.0;
  double dom = 0.0;
  double fid = 0.0;
  double metric = 0.0;
  // Distances the metric term saw, and their beta flags.
  std::vector<double> d2;
  std::vector<std::uint8_t> beta;
};

// L_id + alpha1 * metric(x^v, x^n).
LossTerms l_da(const ModelVars& mv, const PairInputs& in, const MarginConfig& cfg,
               Metric metric);
// L_dom with VIS rows labeled 0 and NIR rows labeled 1.
LossTerms l_dom(const ModelVars& mv, const PairInputs& in);
// L_Fid + alpha2 * metric(s^v, t^n).
LossTerms l_ffm(const ModelVars& mv, const PairInputs& in, const MarginConfig& cfg,
                Metric metric);

}  // namespace xmodal
