#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "xmodal/config.hpp"
#include "xmodal/eval.hpp"

// Operator commands behind the `xmodal` tool. Each throws ConfigError,
// DataError, ShapeError or NumericError; `exit_code_for` maps those to
// process exit codes.
namespace xmodal::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumeric = 4;

// Raises the glibc mmap and trim thresholds for the process.
void tune_allocator();

// Runs `body`, printing any error to stderr and returning its exit code.
int guarded(const std::function<void()>& body);

// Writes train.xmds, test.xmds, manifest.json and effective.conf to `out`.
void cmd_gen(const RunConfig& cfg, const std::filesystem::path& out);

// `data` is a dataset file or a directory holding train.xmds.
TrainResult cmd_train(const RunConfig& cfg, const std::filesystem::path& data,
                      const std::filesystem::path& out, bool resume);

// `data` is a dataset file or a directory holding test.xmds. Writes the
// report to `out_json` and, when given, the ROC points to `roc_csv_path`.
EvalReport cmd_eval(const RunConfig& cfg, const std::filesystem::path& checkpoint,
                    const std::filesystem::path& data, const std::filesystem::path& out_json,
                    const std::optional<std::filesystem::path>& roc_csv_path);

struct SeedResult {
  std::uint64_t seed = 0;
  double rank1 = 0.0;
  double vr_far_0p1 = 0.0;  // VR at FAR 0.1%
  double vr_far_1 = 0.0;    // VR at FAR 1%
  std::string error;        // non-empty when this run failed
};

struct VariantRow {
  std::string label;  // "(a)" .. "(f)"
  std::string variant;
  std::vector<SeedResult> runs;
  double rank1_mean = 0.0, rank1_std = 0.0;
  double vr_0p1_mean = 0.0, vr_0p1_std = 0.0;
  double vr_1_mean = 0.0, vr_1_std = 0.0;
};

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation (n - 1), 0 for n < 2
};
MeanStd mean_std(const std::vector<double>& xs);

// Trains and evaluates all six variants over `cfg.eval_seeds` seeds
// (cfg.synth.seed, +1, ...). With `out`, writes ablation.json,
// ablation.txt and per-run artifacts, appending each finished run to
// ablation_runs.jsonl so partial results survive failures.
std::vector<VariantRow> cmd_ablate(const RunConfig& cfg,
                                   const std::optional<std::filesystem::path>& out);

std::string ablation_table(const std::vector<VariantRow>& rows);
std::string ablation_json(const std::vector<VariantRow>& rows);

// Human-readable checkpoint metadata.
std::string cmd_inspect(const std::filesystem::path& checkpoint);

}  // namespace xmodal::cli
