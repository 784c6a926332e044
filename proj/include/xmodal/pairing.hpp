#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "xmodal/rng.hpp"
#include "xmodal/synth.hpp"

namespace xmodal {

struct MarginConfig;

// Cross-modal pairs over the rows of a SampleSet.
struct PairBatch {
  std::vector<std::size_t> v_indices;  // domain-0 rows
  std::vector<std::size_t> n_indices;  // domain-1 rows
  std::vector<int> y_vn;               // +1 same identity, -1 otherwise
  std::vector<std::uint8_t> lambda;    // (1 - y_vn) / 2
  std::vector<double> d2;              // filled per forward pass
  std::vector<std::uint8_t> beta;      // filled per forward pass

  std::size_t size() const noexcept { return v_indices.size(); }
};

// For each identity in `identities`: every cross-modal positive pair, plus
// `pairs_per_anchor` negatives per VIS anchor drawn by choosing another
// identity of the set uniformly and then one of its NIR rows uniformly.
// Positives and negatives are interleaved. Throws DataError if an identity
// lacks a modality.
PairBatch make_pairs(const SampleSet& set, std::span<const std::uint32_t> identities,
                     std::size_t pairs_per_anchor, Rng& rng);

// Same, over `identity_count` identities sampled without replacement.
PairBatch make_pairs(const SampleSet& set, std::size_t identity_count,
                     std::size_t pairs_per_anchor, Rng& rng);

// Pair composition relative to the margin band [r2 - r1, r2 + r1].
struct PairStats {
  std::size_t easy_pos = 0;  // d2 < r2 - r1
  std::size_t hard_pos = 0;  // d2 > r2 + r1
  std::size_t band_pos = 0;
  std::size_t easy_neg = 0;  // d2 > r2 + r1
  std::size_t hard_neg = 0;  // d2 < r2 - r1
  std::size_t band_neg = 0;

  std::size_t total() const noexcept {
    return easy_pos + hard_pos + band_pos + easy_neg + hard_neg + band_neg;
  }
  PairStats& operator+=(const PairStats& o) noexcept;
  bool operator==(const PairStats&) const = default;
};

// Throws std::logic_error if d2 has not been filled.
PairStats pair_stats(const PairBatch& pb, const MarginConfig& cfg);

// Distinct identity labels of the set, ascending.
std::vector<std::uint32_t> identities_of(const SampleSet& set);

}  // namespace xmodal
