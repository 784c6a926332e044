// xmodal: generate synthetic cross-modal data, train, evaluate and run the
// ablation ladder.

#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include "xmodal/commands.hpp"
#include "xmodal/errors.hpp"

namespace {

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string variant;
  bool normalize = false;
};

xmodal::RunConfig effective_config(const CommonFlags& f) {
  xmodal::RunConfig cfg = f.config.empty() ? xmodal::RunConfig{} : xmodal::load_config(f.config);
  if (f.seed) cfg.set("seed", std::to_string(*f.seed));
  if (!f.variant.empty()) cfg.set("variant", f.variant);
  if (f.normalize) cfg.set("normalize_features", "true");
  cfg.finalize();
  return cfg;
}

void set_log_level() {
  const char* env = std::getenv("XMODAL_LOG");
  const std::string level = env ? env : "info";
  if (level == "quiet") {
    spdlog::set_level(spdlog::level::warn);
  } else if (level == "debug") {
    spdlog::set_level(spdlog::level::debug);
  } else {
    spdlog::set_level(spdlog::level::info);
  }
}

}  // namespace

int main(int argc, char** argv) {
  xmodal::cli::tune_allocator();
  set_log_level();
  CLI::App app{"Cross-modal identity embedding trainer"};
  app.require_subcommand(1);

  CommonFlags flags;
  auto add_common = [&flags](CLI::App* sub) {
    sub->add_option("--config", flags.config, "key = value configuration file");
    sub->add_option("--seed", flags.seed, "root seed (overrides the config)");
  };

  std::string out;
  std::string data;
  std::string checkpoint;
  std::string roc_csv;
  bool resume = false;

  auto* gen = app.add_subcommand("gen", "write synthetic train/test datasets");
  add_common(gen);
  gen->add_option("--out", out, "output directory")->default_val("data");

  auto* train = app.add_subcommand("train", "run the staged training");
  add_common(train);
  train->add_option("data", data, "dataset directory or train file")->required();
  train->add_option("--out", out, "output directory")->default_val("run");
  train->add_option("--variant", flags.variant,
                    "baseline, lmm, apm, ffm, lmm+ffm or apm+ffm");
  train->add_flag("--resume", resume, "continue after the latest stage checkpoint");
  train->add_flag("--normalize", flags.normalize, "length-normalize features for the metric");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the gallery/probe protocol");
  add_common(eval);
  eval->add_option("checkpoint", checkpoint, "checkpoint file")->required();
  eval->add_option("data", data, "dataset directory or test file")->required();
  eval->add_option("--out", out, "report path")->default_val("report.json");
  eval->add_option("--roc-csv", roc_csv, "also write ROC points as CSV");

  auto* ablate = app.add_subcommand("ablate", "train and evaluate all six variants");
  add_common(ablate);
  ablate->add_option("--out", out, "output directory")->default_val("ablation");
  ablate->add_flag("--normalize", flags.normalize, "length-normalize features for the metric");

  auto* inspect = app.add_subcommand("inspect", "print checkpoint metadata");
  inspect->add_option("checkpoint", checkpoint, "checkpoint file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : xmodal::cli::kExitConfig;
  }

  using namespace xmodal::cli;
  return guarded([&] {
    if (*inspect) {
      std::cout << cmd_inspect(checkpoint);
      return;
    }
    const xmodal::RunConfig cfg = effective_config(flags);
    if (*gen) {
      cmd_gen(cfg, out);
    } else if (*train) {
      cmd_train(cfg, data, out, resume);
    } else if (*eval) {
      const auto report = cmd_eval(cfg, checkpoint, data, out,
                                   roc_csv.empty() ? std::nullopt : std::optional<std::filesystem::path>(roc_csv));
      std::cout << "rank1 " << report.rank1;
      for (const auto& v : report.vr_at) {
        std::cout << "  vr@far" << v.far_target << " " << v.vr << " (far " << v.achieved_far << ")";
      }
      std::cout << '\n';
    } else if (*ablate) {
      const auto rows = cmd_ablate(cfg, out);
      std::cout << ablation_table(rows);
    }
  });
}
