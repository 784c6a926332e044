#include "xmodal/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

#include "xmodal/binio.hpp"
#include "xmodal/errors.hpp"

namespace xmodal {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) throw ConfigError(key, "expected a non-negative integer, got '" + v + "'");
  return out;
}

std::size_t to_count(const std::string& key, const std::string& v) {
  return static_cast<std::size_t>(to_u64(key, v));
}

double to_real(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError(key, "expected a real number, got '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key, "expected true or false, got '" + v + "'");
}

// Shortest text that reads back to the same double.
std::string fmt_real(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& raw) {
  const std::string v = trim(raw);
  using Setter = std::function<void(const std::string&)>;
  const std::map<std::string, Setter> table{
      {"n_identities", [&](auto& s) { synth.n_identities = to_count(key, s); }},
      {"samples_per_modality", [&](auto& s) { synth.samples_per_modality = to_count(key, s); }},
      {"latent_dim", [&](auto& s) { synth.latent_dim = to_count(key, s); }},
      {"input_dim", [&](auto& s) { synth.input_dim = to_count(key, s); }},
      {"gap_scale", [&](auto& s) { synth.gap_scale = to_real(key, s); }},
      {"noise_sigma", [&](auto& s) { synth.noise_sigma = to_real(key, s); }},
      {"hard_fraction", [&](auto& s) { synth.hard_fraction = to_real(key, s); }},
      {"hard_spread_multiplier", [&](auto& s) { synth.hard_spread_multiplier = to_real(key, s); }},
      {"seed", [&](auto& s) { synth.seed = to_u64(key, s); }},
      {"disjoint_identities", [&](auto& s) { synth.disjoint_identities = to_bool(key, s); }},
      {"hidden_dims",
       [&](auto& s) {
         dims.hidden_dims.clear();
         std::stringstream ss(s);
         std::string item;
         while (std::getline(ss, item, ',')) {
           if (!trim(item).empty()) dims.hidden_dims.push_back(to_count(key, trim(item)));
         }
       }},
      {"feat_dim", [&](auto& s) { dims.feat_dim = to_count(key, s); }},
      {"dom_feat_dim", [&](auto& s) { dims.dom_feat_dim = to_count(key, s); }},
      {"reduce_dim", [&](auto& s) { dims.reduce_dim = to_count(key, s); }},
      {"r1",
       [&](auto& s) {
         margin.r1 = to_real(key, s);
         r1_set_ = true;
       }},
      {"r2",
       [&](auto& s) {
         margin.r2 = to_real(key, s);
         r2_set_ = true;
       }},
      {"delta", [&](auto& s) { margin.delta = to_real(key, s); }},
      {"alpha1", [&](auto& s) { margin.alpha1 = to_real(key, s); }},
      {"alpha2", [&](auto& s) { margin.alpha2 = to_real(key, s); }},
      {"normalize_features", [&](auto& s) { margin.normalize_features = to_bool(key, s); }},
      {"symmetric_ffm_apm", [&](auto& s) { margin.symmetric_ffm = to_bool(key, s); }},
      {"lr_stage1", [&](auto& s) { opt.lr_stage1 = to_real(key, s); }},
      {"lr_stage2", [&](auto& s) { opt.lr_stage2 = to_real(key, s); }},
      {"lr_stage3", [&](auto& s) { opt.lr_stage3 = to_real(key, s); }},
      {"momentum", [&](auto& s) { opt.momentum = to_real(key, s); }},
      {"weight_decay", [&](auto& s) { opt.weight_decay = to_real(key, s); }},
      {"epochs_stage1", [&](auto& s) { opt.epochs_stage1 = to_count(key, s); }},
      {"epochs_stage2", [&](auto& s) { opt.epochs_stage2 = to_count(key, s); }},
      {"epochs_stage3", [&](auto& s) { opt.epochs_stage3 = to_count(key, s); }},
      {"plateau_tol", [&](auto& s) { opt.plateau_tol = to_real(key, s); }},
      {"plateau_window", [&](auto& s) { opt.plateau_window = to_count(key, s); }},
      {"batch_identities", [&](auto& s) { opt.batch_identities = to_count(key, s); }},
      {"pairs_per_anchor", [&](auto& s) { opt.pairs_per_anchor = to_count(key, s); }},
      {"variant", [&](auto& s) { variant = parse_variant(s); }},
      {"eval_seeds", [&](auto& s) { eval_seeds = to_count(key, s); }},
      {"random_gallery", [&](auto& s) { random_gallery = to_bool(key, s); }},
      {"out_dir", [&](auto& s) { out_dir = s; }},
  };
  auto it = table.find(key);
  if (it == table.end()) throw ConfigError(key, "unknown configuration key");
  it->second(v);
}

void RunConfig::finalize() {
  if (margin.normalize_features) {
    const MarginConfig n = MarginConfig::normalized();
    if (!r1_set_) margin.r1 = n.r1;
    if (!r2_set_) margin.r2 = n.r2;
  }
  synth.validate();
  dims.input_dim = synth.input_dim;
  dims.n_identities = synth.n_identities;
  dims.validate();
  margin.validate();
  opt.validate();
  if (eval_seeds < 1) throw ConfigError("eval_seeds", "must be >= 1");
}

TrainSettings RunConfig::train_settings() const {
  return {dims, margin, opt, variant, synth.seed};
}

std::string RunConfig::to_text() const {
  std::ostringstream o;
  auto kv = [&o](const char* k, const std::string& v) { o << k << " = " << v << '\n'; };
  auto b = [](bool x) { return std::string(x ? "true" : "false"); };
  std::string hidden;
  for (std::size_t i = 0; i < dims.hidden_dims.size(); ++i) {
    hidden += (i ? "," : "") + std::to_string(dims.hidden_dims[i]);
  }
  o << "# data\n";
  kv("n_identities", std::to_string(synth.n_identities));
  kv("samples_per_modality", std::to_string(synth.samples_per_modality));
  kv("latent_dim", std::to_string(synth.latent_dim));
  kv("input_dim", std::to_string(synth.input_dim));
  kv("gap_scale", fmt_real(synth.gap_scale));
  kv("noise_sigma", fmt_real(synth.noise_sigma));
  kv("hard_fraction", fmt_real(synth.hard_fraction));
  kv("hard_spread_multiplier", fmt_real(synth.hard_spread_multiplier));
  kv("seed", std::to_string(synth.seed));
  kv("disjoint_identities", b(synth.disjoint_identities));
  o << "# model\n";
  kv("hidden_dims", hidden);
  kv("feat_dim", std::to_string(dims.feat_dim));
  kv("dom_feat_dim", std::to_string(dims.dom_feat_dim));
  kv("reduce_dim", std::to_string(dims.reduce_dim));
  o << "# margins\n";
  kv("r1", fmt_real(margin.r1));
  kv("r2", fmt_real(margin.r2));
  kv("delta", fmt_real(margin.delta));
  kv("alpha1", fmt_real(margin.alpha1));
  kv("alpha2", fmt_real(margin.alpha2));
  kv("normalize_features", b(margin.normalize_features));
  kv("symmetric_ffm_apm", b(margin.symmetric_ffm));
  o << "# optimizer\n";
  kv("lr_stage1", fmt_real(opt.lr_stage1));
  kv("lr_stage2", fmt_real(opt.lr_stage2));
  kv("lr_stage3", fmt_real(opt.lr_stage3));
  kv("momentum", fmt_real(opt.momentum));
  kv("weight_decay", fmt_real(opt.weight_decay));
  kv("epochs_stage1", std::to_string(opt.epochs_stage1));
  kv("epochs_stage2", std::to_string(opt.epochs_stage2));
  kv("epochs_stage3", std::to_string(opt.epochs_stage3));
  kv("plateau_tol", fmt_real(opt.plateau_tol));
  kv("plateau_window", std::to_string(opt.plateau_window));
  kv("batch_identities", std::to_string(opt.batch_identities));
  kv("pairs_per_anchor", std::to_string(opt.pairs_per_anchor));
  o << "# run\n";
  kv("variant", variant_name(variant));
  kv("eval_seeds", std::to_string(eval_seeds));
  kv("random_gallery", b(random_gallery));
  kv("out_dir", out_dir);
  return o.str();
}

std::string RunConfig::digest() const {
  const std::string text = to_text();
  const auto crc = binio::crc32(std::span<const std::uint8_t>(
      reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08x", crc);
  return buf;
}

RunConfig parse_config_text(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno), "expected 'key = value'");
    }
    cfg.set(trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config", "cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

}  // namespace xmodal
