#include "xmodal/eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <json.hpp>
#include <sstream>
#include <stdexcept>

#include "xmodal/errors.hpp"

namespace xmodal {

Protocol build_protocol(const SampleSet& test, Rng* rng) {
  std::map<std::uint32_t, std::vector<std::size_t>> vis;
  std::map<std::uint32_t, std::size_t> nir_count;
  for (std::size_t i = 0; i < test.size(); ++i) {
    if (test.domain_labels[i] == Domain::kVis) {
      vis[test.identity_labels[i]].push_back(i);
    } else {
      ++nir_count[test.identity_labels[i]];
    }
  }
  for (const auto& [id, n] : nir_count) {
    if (!vis.contains(id)) {
      throw DataError("protocol: identity " + std::to_string(id) + " has no VIS sample");
    }
  }
  Protocol p;
  for (const auto& [id, rows] : vis) {
    if (!nir_count.contains(id)) {
      throw DataError("protocol: identity " + std::to_string(id) + " has no NIR sample");
    }
    const std::size_t pick = rng ? rows[rng->below(rows.size())] : rows.front();
    p.gallery_rows.push_back(pick);
    p.gallery_ids.push_back(id);
  }
  for (std::size_t i = 0; i < test.size(); ++i) {
    if (test.domain_labels[i] == Domain::kNir) {
      p.probe_rows.push_back(i);
      p.probe_ids.push_back(test.identity_labels[i]);
    }
  }
  return p;
}

Matrix cosine_scores(const Matrix& probe, const Matrix& gallery, std::size_t* zero_norm) {
  if (probe.cols != gallery.cols) {
    throw ShapeError("cosine_scores: feature widths differ (" + probe.shape_str() + ", " +
                     gallery.shape_str() + ")");
  }
  std::size_t zeros = 0;
  auto unit_rows = [&zeros](Matrix m) {
    for (std::size_t r = 0; r < m.rows; ++r) {
      double s = 0.0;
      for (double v : m.row(r)) s += v * v;
      if (s == 0.0) {
        ++zeros;
        continue;
      }
      const double inv = 1.0 / std::sqrt(s);
      for (double& v : m.row(r)) v *= inv;
    }
    return m;
  };
  Matrix scores = matmul_bt(unit_rows(probe), unit_rows(gallery));
  if (zero_norm) *zero_norm = zeros;
  return scores;
}

double rank1(const Matrix& scores, std::span<const std::uint32_t> probe_ids,
             std::span<const std::uint32_t> gallery_ids) {
  if (scores.rows != probe_ids.size() || scores.cols != gallery_ids.size()) {
    throw ShapeError("rank1: scores " + scores.shape_str() + " vs " +
                     std::to_string(probe_ids.size()) + " probes and " +
                     std::to_string(gallery_ids.size()) + " gallery entries");
  }
  if (scores.rows == 0 || scores.cols == 0) return 0.0;
  std::size_t hits = 0;
  for (std::size_t p = 0; p < scores.rows; ++p) {
    auto row = scores.row(p);
    // max_element returns the first maximum.
    const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    if (gallery_ids[best] == probe_ids[p]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(scores.rows);
}

RocResult roc_and_vr(const Matrix& scores, std::span<const std::uint32_t> probe_ids,
                     std::span<const std::uint32_t> gallery_ids,
                     std::span<const double> far_targets) {
  if (scores.rows != probe_ids.size() || scores.cols != gallery_ids.size()) {
    throw ShapeError("roc_and_vr: score shape does not match id lists");
  }
  std::vector<std::pair<double, bool>> all;  // (score, genuine)
  all.reserve(scores.size());
  RocResult res;
  for (std::size_t p = 0; p < scores.rows; ++p) {
    for (std::size_t g = 0; g < scores.cols; ++g) {
      const bool genuine = probe_ids[p] == gallery_ids[g];
      all.emplace_back(scores(p, g), genuine);
      ++(genuine ? res.n_genuine : res.n_impostor);
    }
  }
  if (res.n_genuine == 0) throw std::invalid_argument("roc_and_vr: no genuine scores");
  if (res.n_impostor == 0) throw std::invalid_argument("roc_and_vr: no impostor scores");
  std::sort(all.begin(), all.end(),
            [](const auto& a, const auto& b) { return a.first > b.first; });

  const double ng = static_cast<double>(res.n_genuine);
  const double ni = static_cast<double>(res.n_impostor);
  std::vector<double> thresholds;
  res.roc.push_back({0.0, 0.0});
  std::size_t gen = 0;
  std::size_t imp = 0;
  for (std::size_t i = 0; i < all.size();) {
    const double t = all[i].first;
    for (; i < all.size() && all[i].first == t; ++i) ++(all[i].second ? gen : imp);
    res.roc.push_back({static_cast<double>(imp) / ni, static_cast<double>(gen) / ng});
    thresholds.push_back(t);
  }

  for (double target : far_targets) {
    VrAtFar v;
    v.far_target = target;
    // first point with the best vr at far <= target
    for (std::size_t k = 0; k < res.roc.size(); ++k) {
      if (res.roc[k].far > target) break;
      if (k == 0 || res.roc[k].vr > v.vr) {
        v.vr = res.roc[k].vr;
        v.achieved_far = res.roc[k].far;
        v.threshold = k == 0 ? std::nullopt : std::optional<double>(thresholds[k - 1]);
      }
    }
    res.vr_at.push_back(v);
  }
  return res;
}

EvalReport evaluate(const ParamSet& ps, const SampleSet& test, std::span<const double> far_targets,
                    Rng* gallery_rng) {
  const Protocol proto = build_protocol(test, gallery_rng);
  const Matrix probe = agnostic_features(ps, gather_rows(test.features, proto.probe_rows));
  const Matrix gallery = agnostic_features(ps, gather_rows(test.features, proto.gallery_rows));
  EvalReport r;
  const Matrix scores = cosine_scores(probe, gallery, &r.zero_norm);
  r.rank1 = rank1(scores, proto.probe_ids, proto.gallery_ids);
  RocResult roc = roc_and_vr(scores, proto.probe_ids, proto.gallery_ids, far_targets);
  r.roc = std::move(roc.roc);
  r.vr_at = std::move(roc.vr_at);
  r.n_gallery = proto.gallery_rows.size();
  r.n_probe = proto.probe_rows.size();
  return r;
}

std::string report_to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["rank1"] = r.rank1;
  auto& vr = j["vr_at"] = nlohmann::ordered_json::array();
  for (const auto& v : r.vr_at) {
    nlohmann::ordered_json e;
    e["far_target"] = v.far_target;
    e["vr"] = v.vr;
    e["achieved_far"] = v.achieved_far;
    e["threshold"] = v.threshold ? nlohmann::ordered_json(*v.threshold) : nlohmann::ordered_json();
    vr.push_back(std::move(e));
  }
  j["n_gallery"] = r.n_gallery;
  j["n_probe"] = r.n_probe;
  j["zero_norm"] = r.zero_norm;
  j["config_digest"] = r.config_digest;
  auto& roc = j["roc"] = nlohmann::ordered_json::array();
  for (const auto& p : r.roc) roc.push_back({p.far, p.vr});
  return j.dump(2);
}

EvalReport report_from_json(const std::string& text) {
  EvalReport r;
  try {
    const auto j = nlohmann::json::parse(text);
    r.rank1 = j.at("rank1").get<double>();
    for (const auto& e : j.at("vr_at")) {
      VrAtFar v;
      v.far_target = e.at("far_target").get<double>();
      v.vr = e.at("vr").get<double>();
      v.achieved_far = e.at("achieved_far").get<double>();
      if (!e.at("threshold").is_null()) v.threshold = e.at("threshold").get<double>();
      r.vr_at.push_back(v);
    }
    r.n_gallery = j.at("n_gallery").get<std::size_t>();
    r.n_probe = j.at("n_probe").get<std::size_t>();
    r.zero_norm = j.at("zero_norm").get<std::size_t>();
    r.config_digest = j.at("config_digest").get<std::string>();
    for (const auto& p : j.at("roc")) r.roc.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("report: ") + e.what());
  }
  return r;
}

std::string roc_csv(const EvalReport& r) {
  std::ostringstream out;
  out.precision(17);
  out << "far,vr\n";
  for (const auto& p : r.roc) out << p.far << ',' << p.vr << '\n';
  return out.str();
}

}  // namespace xmodal
