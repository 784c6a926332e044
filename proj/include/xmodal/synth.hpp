#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "xmodal/matrix.hpp"

namespace xmodal {

enum class Domain : std::uint8_t { kVis = 0, kNir = 1 };

// Linear-Gaussian two-modality identity data.
//
// Each identity i has a latent z_i ~ N(0, I). A sample of modality q is
// A_q z_i + b_q + sigma * eta, where A_n = A_v + gap_scale * Delta with
// ||Delta||_F = 1 and ||b_n - b_v|| = gap_scale. The last
// ceil(hard_fraction * n_identities) identities are "hard": their noise is
// multiplied by hard_spread_multiplier and their latents are moved halfway
// toward the nearest other hard latent.
struct SynthConfig {
  std::size_t n_identities = 32;
  std::size_t samples_per_modality = 20;
  std::size_t latent_dim = 16;
  std::size_t input_dim = 64;
  double gap_scale = 1.0;
  double noise_sigma = 0.1;
  double hard_fraction = 0.0;
  double hard_spread_multiplier = 1.0;
  std::uint64_t seed = 42;
  // Train and test use disjoint identity halves instead of disjoint samples
  // of the same identities.
  bool disjoint_identities = false;

  // Throws ConfigError naming the first invalid field.
  void validate() const;
};

struct SampleSet {
  Matrix features;
  std::vector<std::uint32_t> identity_labels;
  std::vector<Domain> domain_labels;

  std::size_t size() const noexcept { return identity_labels.size(); }
  // Row indices of `domain`, in order.
  std::vector<std::size_t> rows_of(Domain domain) const;
  // Throws DataError unless label lengths match and every identity present
  // appears in both domains.
  void validate() const;

  bool operator==(const SampleSet&) const = default;
};

struct SynthData {
  SampleSet train;
  SampleSet test;
};

SynthData generate(const SynthConfig& cfg);

// Number of identities flagged hard by `cfg`.
std::size_t hard_identity_count(const SynthConfig& cfg);

// "XMDS" v1 little-endian dataset file with trailing CRC32.
std::vector<std::uint8_t> encode_set(const SampleSet& set);
SampleSet decode_set(std::vector<std::uint8_t> bytes);
void save_set(const SampleSet& set, const std::filesystem::path& path);
SampleSet load_set(const std::filesystem::path& path);

}  // namespace xmodal
