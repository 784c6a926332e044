#include "xmodal/pairing.hpp"

#include <algorithm>
#include <map>
#include <stdexcept>
#include <string>

#include "xmodal/errors.hpp"
#include "xmodal/losses.hpp"

namespace xmodal {

namespace {

struct RowIndex {
  std::map<std::uint32_t, std::vector<std::size_t>> vis;
  std::map<std::uint32_t, std::vector<std::size_t>> nir;
};

RowIndex index_rows(const SampleSet& set) {
  RowIndex idx;
  for (std::size_t i = 0; i < set.size(); ++i) {
    auto& bucket = set.domain_labels[i] == Domain::kVis ? idx.vis : idx.nir;
    bucket[set.identity_labels[i]].push_back(i);
  }
  return idx;
}

}  // namespace

PairStats& PairStats::operator+=(const PairStats& o) noexcept {
  easy_pos += o.easy_pos;
  hard_pos += o.hard_pos;
  band_pos += o.band_pos;
  easy_neg += o.easy_neg;
  hard_neg += o.hard_neg;
  band_neg += o.band_neg;
  return *this;
}

std::vector<std::uint32_t> identities_of(const SampleSet& set) {
  std::vector<std::uint32_t> ids(set.identity_labels.begin(), set.identity_labels.end());
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return ids;
}

PairBatch make_pairs(const SampleSet& set, std::span<const std::uint32_t> identities,
                     std::size_t pairs_per_anchor, Rng& rng) {
  const RowIndex idx = index_rows(set);
  std::vector<std::uint32_t> all_ids;
  for (const auto& [id, rows] : idx.vis) all_ids.push_back(id);
  for (const auto& [id, rows] : idx.nir) {
    if (!idx.vis.contains(id)) {
      throw DataError("make_pairs: identity " + std::to_string(id) + " has no VIS sample");
    }
  }
  for (std::uint32_t id : all_ids) {
    if (!idx.nir.contains(id)) {
      throw DataError("make_pairs: identity " + std::to_string(id) + " has no NIR sample");
    }
  }

  PairBatch pb;
  auto push = [&pb](std::size_t v, std::size_t n, int y) {
    pb.v_indices.push_back(v);
    pb.n_indices.push_back(n);
    pb.y_vn.push_back(y);
    pb.lambda.push_back(static_cast<std::uint8_t>((1 - y) / 2));
  };

  for (std::uint32_t id : identities) {
    auto vit = idx.vis.find(id);
    auto nit = idx.nir.find(id);
    if (vit == idx.vis.end() || nit == idx.nir.end()) {
      throw DataError("make_pairs: identity " + std::to_string(id) + " is missing a modality");
    }
    std::vector<std::pair<std::size_t, std::size_t>> pos;
    std::vector<std::pair<std::size_t, std::size_t>> neg;
    for (std::size_t v : vit->second) {
      for (std::size_t n : nit->second) pos.emplace_back(v, n);
      if (all_ids.size() < 2) continue;
      for (std::size_t k = 0; k < pairs_per_anchor; ++k) {
        // Uniform over the other identities: draw from n-1 slots and skip self.
        auto slot = static_cast<std::size_t>(rng.below(all_ids.size() - 1));
        const auto self = static_cast<std::size_t>(
            std::lower_bound(all_ids.begin(), all_ids.end(), id) - all_ids.begin());
        if (slot >= self) ++slot;
        const auto& rows = idx.nir.at(all_ids[slot]);
        neg.emplace_back(v, rows[rng.below(rows.size())]);
      }
    }
    const std::size_t m = std::max(pos.size(), neg.size());
    for (std::size_t k = 0; k < m; ++k) {
      if (k < pos.size()) push(pos[k].first, pos[k].second, +1);
      if (k < neg.size()) push(neg[k].first, neg[k].second, -1);
    }
  }
  return pb;
}

PairBatch make_pairs(const SampleSet& set, std::size_t identity_count,
                     std::size_t pairs_per_anchor, Rng& rng) {
  std::vector<std::uint32_t> ids = identities_of(set);
  if (identity_count > ids.size()) {
    throw std::invalid_argument("make_pairs: asked for " + std::to_string(identity_count) +
                                " identities, set has " + std::to_string(ids.size()));
  }
  // Partial Fisher-Yates.
  for (std::size_t i = 0; i < identity_count; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(ids.size() - i));
    std::swap(ids[i], ids[j]);
  }
  ids.resize(identity_count);
  return make_pairs(set, ids, pairs_per_anchor, rng);
}

PairStats pair_stats(const PairBatch& pb, const MarginConfig& cfg) {
  if (pb.d2.size() != pb.size()) throw std::logic_error("pair_stats: distances not filled");
  const double lower = cfg.r2 - cfg.r1;
  const double upper = cfg.r2 + cfg.r1;
  PairStats s;
  for (std::size_t i = 0; i < pb.size(); ++i) {
    const double d2 = pb.d2[i];
    if (pb.y_vn[i] > 0) {
      if (d2 < lower) {
        ++s.easy_pos;
      } else if (d2 > upper) {
        ++s.hard_pos;
      } else {
        ++s.band_pos;
      }
    } else {
      if (d2 > upper) {
        ++s.easy_neg;
      } else if (d2 < lower) {
        ++s.hard_neg;
      } else {
        ++s.band_neg;
      }
    }
  }
  return s;
}

}  // namespace xmodal
