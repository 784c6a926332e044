#include "xmodal/synth.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "xmodal/binio.hpp"
#include "xmodal/errors.hpp"
#include "xmodal/rng.hpp"

namespace xmodal {

namespace {

constexpr std::uint32_t kSetVersion = 1;

enum Stream : std::uint64_t { kMaps = 1, kLatents = 2, kTrainNoise = 3, kTestNoise = 4 };

struct ModalityMaps {
  Matrix a_vis;  // input_dim x latent_dim
  Matrix a_nir;
  std::vector<double> b_vis;
  std::vector<double> b_nir;
};

ModalityMaps draw_maps(const SynthConfig& cfg) {
  Rng rng(derive_seed(cfg.seed, kMaps));
  const double w = 1.0 / std::sqrt(static_cast<double>(cfg.latent_dim));
  ModalityMaps maps;
  maps.a_vis = Matrix(cfg.input_dim, cfg.latent_dim);
  for (double& v : maps.a_vis.data) v = w * rng.normal();

  Matrix delta(cfg.input_dim, cfg.latent_dim);
  for (double& v : delta.data) v = rng.normal();
  const double dn = std::sqrt(frobenius_sq(delta));
  maps.a_nir = maps.a_vis;
  for (std::size_t i = 0; i < delta.size(); ++i) {
    maps.a_nir.data[i] += cfg.gap_scale * delta.data[i] / dn;
  }

  maps.b_vis.resize(cfg.input_dim);
  for (double& v : maps.b_vis) v = rng.normal();
  std::vector<double> dir(cfg.input_dim);
  double dir_sq = 0.0;
  for (double& v : dir) {
    v = rng.normal();
    dir_sq += v * v;
  }
  const double dir_norm = std::sqrt(dir_sq);
  maps.b_nir = maps.b_vis;
  for (std::size_t i = 0; i < dir.size(); ++i) {
    maps.b_nir[i] += cfg.gap_scale * dir[i] / dir_norm;
  }
  return maps;
}

Matrix draw_latents(const SynthConfig& cfg) {
  Rng rng(derive_seed(cfg.seed, kLatents));
  Matrix z(cfg.n_identities, cfg.latent_dim);
  for (double& v : z.data) v = rng.normal();

  const std::size_t n_hard = hard_identity_count(cfg);
  const std::size_t first_hard = cfg.n_identities - n_hard;
  if (n_hard < 2) return z;
  const Matrix original = z;
  for (std::size_t i = first_hard; i < cfg.n_identities; ++i) {
    std::size_t nearest = i;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = first_hard; j < cfg.n_identities; ++j) {
      if (j == i) continue;
      double d = 0.0;
      for (std::size_t c = 0; c < cfg.latent_dim; ++c) {
        const double t = original(i, c) - original(j, c);
        d += t * t;
      }
      if (d < best) {
        best = d;
        nearest = j;
      }
    }
    for (std::size_t c = 0; c < cfg.latent_dim; ++c) {
      z(i, c) = original(i, c) + 0.5 * (original(nearest, c) - original(i, c));
    }
  }
  return z;
}

SampleSet draw_samples(const SynthConfig& cfg, const ModalityMaps& maps, const Matrix& latents,
                       const std::vector<std::uint32_t>& identities, std::uint64_t stream) {
  Rng rng(derive_seed(cfg.seed, stream));
  const std::size_t first_hard = cfg.n_identities - hard_identity_count(cfg);
  const std::size_t n = identities.size() * 2 * cfg.samples_per_modality;

  SampleSet set;
  set.features = Matrix(n, cfg.input_dim);
  set.identity_labels.reserve(n);
  set.domain_labels.reserve(n);

  std::size_t row = 0;
  for (std::uint32_t id : identities) {
    const double sigma =
        cfg.noise_sigma * (id >= first_hard ? cfg.hard_spread_multiplier : 1.0);
    for (Domain dom : {Domain::kVis, Domain::kNir}) {
      const Matrix& a = dom == Domain::kVis ? maps.a_vis : maps.a_nir;
      const std::vector<double>& b = dom == Domain::kVis ? maps.b_vis : maps.b_nir;
      for (std::size_t s = 0; s < cfg.samples_per_modality; ++s, ++row) {
        auto out = set.features.row(row);
        for (std::size_t r = 0; r < cfg.input_dim; ++r) {
          double v = b[r];
          for (std::size_t c = 0; c < cfg.latent_dim; ++c) v += a(r, c) * latents(id, c);
          out[r] = v + sigma * rng.normal();
        }
        set.identity_labels.push_back(id);
        set.domain_labels.push_back(dom);
      }
    }
  }
  return set;
}

}  // namespace

void SynthConfig::validate() const {
  if (n_identities < 1) throw ConfigError("n_identities", "must be >= 1");
  if (samples_per_modality < 1) throw ConfigError("samples_per_modality", "must be >= 1");
  if (latent_dim < 1) throw ConfigError("latent_dim", "must be >= 1");
  if (input_dim < latent_dim) throw ConfigError("input_dim", "must be >= latent_dim");
  if (!(gap_scale >= 0.0) || !std::isfinite(gap_scale)) {
    throw ConfigError("gap_scale", "must be a finite value >= 0");
  }
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) {
    throw ConfigError("noise_sigma", "must be a finite value >= 0");
  }
  if (!(hard_fraction >= 0.0 && hard_fraction <= 1.0)) {
    throw ConfigError("hard_fraction", "must lie in [0, 1]");
  }
  if (!(hard_spread_multiplier >= 1.0) || !std::isfinite(hard_spread_multiplier)) {
    throw ConfigError("hard_spread_multiplier", "must be a finite value >= 1");
  }
  if (disjoint_identities && n_identities < 2) {
    throw ConfigError("n_identities", "disjoint identity split needs at least 2 identities");
  }
}

std::size_t hard_identity_count(const SynthConfig& cfg) {
  return static_cast<std::size_t>(
      std::ceil(cfg.hard_fraction * static_cast<double>(cfg.n_identities) - 1e-12));
}

std::vector<std::size_t> SampleSet::rows_of(Domain domain) const {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < domain_labels.size(); ++i) {
    if (domain_labels[i] == domain) rows.push_back(i);
  }
  return rows;
}

void SampleSet::validate() const {
  if (identity_labels.size() != features.rows || domain_labels.size() != features.rows) {
    throw DataError("sample set: label lengths do not match feature rows");
  }
  std::uint32_t max_id = 0;
  for (auto id : identity_labels) max_id = std::max(max_id, id);
  std::vector<std::uint8_t> seen(size() ? max_id + 1 : 0, 0);
  for (std::size_t i = 0; i < size(); ++i) {
    const auto d = static_cast<std::uint8_t>(domain_labels[i]);
    if (d > 1) throw DataError("sample set: domain label outside {0,1}");
    seen[identity_labels[i]] |= static_cast<std::uint8_t>(1u << d);
  }
  for (std::size_t id = 0; id < seen.size(); ++id) {
    if (seen[id] != 0 && seen[id] != 3) {
      throw DataError("sample set: identity " + std::to_string(id) + " is missing a modality");
    }
  }
}

SynthData generate(const SynthConfig& cfg) {
  cfg.validate();
  const ModalityMaps maps = draw_maps(cfg);
  const Matrix latents = draw_latents(cfg);

  std::vector<std::uint32_t> train_ids;
  std::vector<std::uint32_t> test_ids;
  for (std::uint32_t i = 0; i < cfg.n_identities; ++i) {
    if (!cfg.disjoint_identities) {
      train_ids.push_back(i);
      test_ids.push_back(i);
    } else {
      // even ids train, odd ids test
      (i % 2 == 0 ? train_ids : test_ids).push_back(i);
    }
  }
  return {draw_samples(cfg, maps, latents, train_ids, kTrainNoise),
          draw_samples(cfg, maps, latents, test_ids, kTestNoise)};
}

std::vector<std::uint8_t> encode_set(const SampleSet& set) {
  binio::Writer w;
  w.magic("XMDS");
  w.u32(kSetVersion);
  w.u32(static_cast<std::uint32_t>(set.features.rows));
  w.u32(static_cast<std::uint32_t>(set.features.cols));
  w.f64s(set.features.data);
  for (auto id : set.identity_labels) w.u32(id);
  for (auto d : set.domain_labels) w.u8(static_cast<std::uint8_t>(d));
  w.seal();
  return w.bytes();
}

SampleSet decode_set(std::vector<std::uint8_t> bytes) {
  const std::size_t total = bytes.size();
  binio::Reader r(std::move(bytes), "dataset");
  r.expect_magic("XMDS");
  const std::uint32_t version = r.u32();
  if (version != kSetVersion) {
    throw DataError("dataset: unsupported version " + std::to_string(version));
  }
  const std::uint64_t n = r.u32();
  const std::uint64_t dim = r.u32();
  const std::uint64_t expected = 16 + n * dim * 8 + n * 4 + n + 4;
  if (total != expected) {
    throw DataError("dataset: malformed file (expected " + std::to_string(expected) +
                    " bytes, found " + std::to_string(total) + ")");
  }
  r.verify_crc();

  SampleSet set;
  set.features = Matrix(n, dim);
  r.f64s(set.features.data);
  set.identity_labels.resize(n);
  for (auto& id : set.identity_labels) id = r.u32();
  set.domain_labels.resize(n);
  for (auto& d : set.domain_labels) {
    const std::uint8_t v = r.u8();
    if (v > 1) throw DataError("dataset: domain label outside {0,1}");
    d = static_cast<Domain>(v);
  }
  r.expect_end();
  return set;
}

void save_set(const SampleSet& set, const std::filesystem::path& path) {
  binio::write_file(path, encode_set(set));
}

SampleSet load_set(const std::filesystem::path& path) {
  return decode_set(binio::read_file(path));
}

}  // namespace xmodal
