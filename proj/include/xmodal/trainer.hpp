#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "xmodal/losses.hpp"
#include "xmodal/model.hpp"
#include "xmodal/pairing.hpp"
#include "xmodal/synth.hpp"

namespace xmodal {

struct OptConfig {
  double lr_stage1 = 1e-4;
  double lr_stage2 = 1e-3;
  double lr_stage3 = 1e-3;
  double momentum = 0.9;
  double weight_decay = 2e-4;
  std::size_t epochs_stage1 = 30;
  std::size_t epochs_stage2 = 5;
  std::size_t epochs_stage3 = 20;
  // Stop a stage once the relative loss improvement over `plateau_window`
  // epochs falls below `plateau_tol`.
  double plateau_tol = 1e-4;
  std::size_t plateau_window = 5;
  // Identities per mini-batch; each epoch visits every training identity once.
  std::size_t batch_identities = 2;
  // Sampled negatives per VIS anchor; 0 matches the anchor's positive count.
  std::size_t pairs_per_anchor = 0;

  void validate() const;
};

// Training recipes mirroring the ablation rows: identity loss alone, with a
// metric term, and optionally followed by the fusion stages.
enum class Variant { kBaseline, kLmm, kApm, kFfm, kLmmFfm, kApmFfm };

inline constexpr std::array<Variant, 6> kAllVariants{Variant::kBaseline, Variant::kLmm,
                                                     Variant::kApm,      Variant::kFfm,
                                                     Variant::kLmmFfm,   Variant::kApmFfm};

std::string variant_name(Variant v);
// Throws ConfigError("variant", ...) for unknown names.
Variant parse_variant(const std::string& name);
Metric variant_metric(Variant v);
bool variant_uses_fusion(Variant v);

struct TrainSettings {
  ModelDims dims;
  MarginConfig margin;
  OptConfig opt;
  Variant variant = Variant::kApmFfm;
  std::uint64_t seed = 42;
};

// v <- momentum * v + g + wd * theta; theta <- theta - lr * v, per matrix.
void sgd_step(std::span<Matrix* const> params, std::span<const Matrix> grads,
              std::span<Matrix> velocity, double lr, double momentum, double weight_decay);

struct EpochRecord {
  int stage = 0;
  std::size_t epoch = 0;
  double loss = 0.0;
  double id = 0.0;
  double dom = 0.0;
  double fid = 0.0;
  double metric = 0.0;
  PairStats stats;
  double wall_ms = 0.0;
};

// One JSON object per line.
std::string epoch_json(const EpochRecord& rec);

using EpochSink = std::function<void(const EpochRecord&)>;

// Training state shared by the stages.
struct TrainState {
  ParamSet params;
  OptState opt;
};

// Minimizes L_DA updating only Theta. Returns per-epoch mean losses.
std::vector<double> train_stage1(TrainState& st, const SampleSet& data, const TrainSettings& s,
                                 const EpochSink& sink = {});
// Minimizes L_dom updating only Phi.
std::vector<double> train_stage2(TrainState& st, const SampleSet& data, const TrainSettings& s,
                                 const EpochSink& sink = {});
// Minimizes L_FFM updating Theta, Phi and W jointly.
std::vector<double> train_stage3(TrainState& st, const SampleSet& data, const TrainSettings& s,
                                 const EpochSink& sink = {});

struct TrainResult {
  TrainState state;
  std::array<std::vector<double>, 3> trajectories;
  int completed_stage = 0;
  // Stage the run resumed after, 0 for a fresh run.
  int resumed_from = 0;
};

// Runs the stages of `s.variant` in order. With `out_dir`, writes
// stage<N>.xmck after each stage, final.xmck and runlog.jsonl. With `resume`,
// restarts after the latest stage checkpoint in `out_dir`. A numeric failure
// writes abort.xmck before rethrowing.
TrainResult train_full(const TrainSettings& s, const SampleSet& train,
                       const std::optional<std::filesystem::path>& out_dir = std::nullopt,
                       bool resume = false);

}  // namespace xmodal
