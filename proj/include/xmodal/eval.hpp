#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "xmodal/matrix.hpp"
#include "xmodal/model.hpp"
#include "xmodal/rng.hpp"
#include "xmodal/synth.hpp"

namespace xmodal {

// Gallery: one VIS row per identity. Probe: every NIR row.
struct Protocol {
  std::vector<std::size_t> gallery_rows;
  std::vector<std::size_t> probe_rows;
  std::vector<std::uint32_t> gallery_ids;
  std::vector<std::uint32_t> probe_ids;
};

// Picks the first VIS row of each identity, or a uniformly chosen one when
// `rng` is given. Throws DataError if an identity lacks a domain.
Protocol build_protocol(const SampleSet& test, Rng* rng = nullptr);

// probe x gallery cosine similarities. Rows with zero norm score 0 and are
// counted in `zero_norm` when provided.
Matrix cosine_scores(const Matrix& probe, const Matrix& gallery, std::size_t* zero_norm = nullptr);

// Fraction of probes whose best-scoring gallery entry has their identity.
// Ties go to the lowest gallery index.
double rank1(const Matrix& scores, std::span<const std::uint32_t> probe_ids,
             std::span<const std::uint32_t> gallery_ids);

struct RocPoint {
  double far = 0.0;
  double vr = 0.0;
  bool operator==(const RocPoint&) const = default;
};

struct VrAtFar {
  double far_target = 0.0;
  double vr = 0.0;
  double achieved_far = 0.0;
  // Acceptance threshold (score >= threshold); empty when nothing is accepted.
  std::optional<double> threshold;
  bool operator==(const VrAtFar&) const = default;
};

struct RocResult {
  // Starts at (0, 0) and adds one point per distinct score, sorted by far.
  std::vector<RocPoint> roc;
  std::vector<VrAtFar> vr_at;
  std::size_t n_genuine = 0;
  std::size_t n_impostor = 0;
};

// Genuine scores are same-identity entries, impostors the rest. VR@FAR is
// the largest verification rate over thresholds whose false accept rate does
// not exceed the target. Throws std::invalid_argument if either set is empty.
RocResult roc_and_vr(const Matrix& scores, std::span<const std::uint32_t> probe_ids,
                     std::span<const std::uint32_t> gallery_ids,
                     std::span<const double> far_targets);

struct EvalReport {
  double rank1 = 0.0;
  std::vector<RocPoint> roc;
  std::vector<VrAtFar> vr_at;
  std::size_t n_gallery = 0;
  std::size_t n_probe = 0;
  std::size_t zero_norm = 0;
  std::string config_digest;

  bool operator==(const EvalReport&) const = default;
};

inline constexpr double kDefaultFarTargets[] = {0.001, 0.01};

// Encodes with the agnostic network only and scores by cosine similarity.
EvalReport evaluate(const ParamSet& ps, const SampleSet& test,
                    std::span<const double> far_targets = kDefaultFarTargets,
                    Rng* gallery_rng = nullptr);

std::string report_to_json(const EvalReport& r);
EvalReport report_from_json(const std::string& text);
// "far,vr" header plus one line per ROC point.
std::string roc_csv(const EvalReport& r);

}  // namespace xmodal
