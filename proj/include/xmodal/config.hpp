#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "xmodal/losses.hpp"
#include "xmodal/model.hpp"
#include "xmodal/synth.hpp"
#include "xmodal/trainer.hpp"

namespace xmodal {

// Everything a run needs, read from a flat `key = value` file.
//
// Lines are `key = value`; `#` starts a comment; blank lines are ignored.
// Later assignments win. `hidden_dims` takes a comma-separated list.
// `normalize_features = true` switches the default thresholds to
// r1 = 0.05, r2 = 1 unless r1 or r2 is set explicitly.
struct RunConfig {
  SynthConfig synth;
  ModelDims dims;
  MarginConfig margin;
  OptConfig opt;
  Variant variant = Variant::kApmFfm;
  // Seeds per variant in `ablate`.
  std::size_t eval_seeds = 5;
  bool random_gallery = false;
  std::string out_dir = "run";

  // Applies one assignment. Throws ConfigError naming the key.
  void set(const std::string& key, const std::string& value);
  // Propagates shared fields (seed, dims) and validates every sub-config.
  void finalize();
  TrainSettings train_settings() const;

  // Effective configuration in the file format, keys in a fixed order.
  std::string to_text() const;
  // CRC32 of `to_text()`, as 8 hex digits.
  std::string digest() const;

 private:
  bool r1_set_ = false;
  bool r2_set_ = false;
};

RunConfig parse_config_text(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

}  // namespace xmodal
