#include "xmodal/model.hpp"

#include <cmath>
#include <string>

#include "xmodal/binio.hpp"
#include "xmodal/errors.hpp"
#include "xmodal/rng.hpp"

namespace xmodal {

namespace {

constexpr std::uint32_t kCheckpointVersion = 1;

Dense he_dense(Rng& rng, std::size_t fan_in, std::size_t fan_out) {
  Dense d{Matrix(fan_in, fan_out), Matrix(1, fan_out)};
  const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (double& v : d.weight.data) v = sd * rng.normal();
  return d;
}

EncoderParams he_encoder(Rng& rng, const ModelDims& dims, std::size_t out_dim) {
  EncoderParams enc;
  std::size_t in = dims.input_dim;
  for (std::size_t h : dims.hidden_dims) {
    enc.layers.push_back(he_dense(rng, in, h));
    in = h;
  }
  enc.layers.push_back(he_dense(rng, in, out_dim));
  return enc;
}

template <typename PS, typename Out>
void collect(PS& ps, unsigned groups, Out& out) {
  auto take = [&](auto& dense) {
    out.push_back(&dense.weight);
    out.push_back(&dense.bias);
  };
  if (groups & kTheta) {
    for (auto& l : ps.agnostic.layers) take(l);
    take(ps.id_head);
  }
  if (groups & kPhi) {
    for (auto& l : ps.private_enc.layers) take(l);
    take(ps.dom_head);
  }
  if (groups & kFusion) {
    take(ps.fuse_reduce);
    take(ps.fuse_classify);
  }
}

DenseVars bind_dense(ad::Tape& t, const Dense& d, bool trainable) {
  if (trainable) return {t.leaf(d.weight), t.leaf(d.bias)};
  return {t.constant(d.weight), t.constant(d.bias)};
}

EncoderVars bind_encoder(ad::Tape& t, const EncoderParams& e, bool trainable) {
  EncoderVars ev;
  for (const auto& l : e.layers) ev.layers.push_back(bind_dense(t, l, trainable));
  return ev;
}

void check_width(ad::Var x, std::size_t want, const char* what) {
  if (x.cols() != want) {
    throw ShapeError(std::string(what) + ": expected width " + std::to_string(want) +
                     ", got " + x.value().shape_str());
  }
}

}  // namespace

void ModelDims::validate() const {
  if (input_dim == 0) throw ConfigError("input_dim", "zero-width layer");
  for (std::size_t h : hidden_dims) {
    if (h == 0) throw ConfigError("hidden_dims", "zero-width layer");
  }
  if (feat_dim == 0) throw ConfigError("feat_dim", "zero-width layer");
  if (dom_feat_dim == 0) throw ConfigError("dom_feat_dim", "zero-width layer");
  if (reduce_dim == 0) throw ConfigError("reduce_dim", "zero-width layer");
  if (n_identities == 0) throw ConfigError("n_identities", "must be >= 1");
}

std::vector<Matrix*> ParamSet::tensors(unsigned groups) {
  std::vector<Matrix*> out;
  collect(*this, groups, out);
  return out;
}

std::vector<const Matrix*> ParamSet::tensors(unsigned groups) const {
  std::vector<const Matrix*> out;
  collect(*this, groups, out);
  return out;
}

ParamSet init_params(const ModelDims& dims, std::uint64_t seed) {
  dims.validate();
  ParamSet ps;
  ps.dims = dims;
  Rng theta_rng(derive_seed(seed, 101));
  ps.agnostic = he_encoder(theta_rng, dims, dims.feat_dim);
  ps.id_head = he_dense(theta_rng, dims.feat_dim, dims.n_identities);
  Rng phi_rng(derive_seed(seed, 102));
  ps.private_enc = he_encoder(phi_rng, dims, dims.dom_feat_dim);
  ps.dom_head = he_dense(phi_rng, dims.dom_feat_dim, 2);
  Rng w_rng(derive_seed(seed, 103));
  ps.fuse_reduce = he_dense(w_rng, dims.feat_dim + dims.dom_feat_dim, dims.reduce_dim);
  ps.fuse_classify = he_dense(w_rng, dims.reduce_dim, dims.n_identities);
  return ps;
}

OptState OptState::zeros_like(const ParamSet& ps) {
  OptState st;
  for (const Matrix* m : ps.tensors()) st.velocity.emplace_back(m->rows, m->cols);
  return st;
}

std::vector<ad::Var> ModelVars::vars(unsigned groups) const {
  std::vector<const ad::Var*> ptrs;
  collect(*this, groups, ptrs);
  std::vector<ad::Var> vs;
  vs.reserve(ptrs.size());
  for (const ad::Var* v : ptrs) vs.push_back(*v);
  return vs;
}

ModelVars bind(ad::Tape& tape, const ParamSet& ps, unsigned trainable) {
  ModelVars mv;
  mv.agnostic = bind_encoder(tape, ps.agnostic, trainable & kTheta);
  mv.id_head = bind_dense(tape, ps.id_head, trainable & kTheta);
  mv.private_enc = bind_encoder(tape, ps.private_enc, trainable & kPhi);
  mv.dom_head = bind_dense(tape, ps.dom_head, trainable & kPhi);
  mv.fuse_reduce = bind_dense(tape, ps.fuse_reduce, trainable & kFusion);
  mv.fuse_classify = bind_dense(tape, ps.fuse_classify, trainable & kFusion);
  return mv;
}

ModelVars assemble(const ParamSet& layout, std::span<const ad::Var> vars) {
  if (vars.size() != layout.tensors().size()) {
    throw ShapeError("assemble: expected " + std::to_string(layout.tensors().size()) +
                     " vars, got " + std::to_string(vars.size()));
  }
  std::size_t k = 0;
  auto take = [&]() {
    DenseVars d{vars[k], vars[k + 1]};
    k += 2;
    return d;
  };
  ModelVars mv;
  for (std::size_t i = 0; i < layout.agnostic.layers.size(); ++i) mv.agnostic.layers.push_back(take());
  mv.id_head = take();
  for (std::size_t i = 0; i < layout.private_enc.layers.size(); ++i) {
    mv.private_enc.layers.push_back(take());
  }
  mv.dom_head = take();
  mv.fuse_reduce = take();
  mv.fuse_classify = take();
  return mv;
}

ad::Var dense(const DenseVars& layer, ad::Var x) {
  return ad::add_rowvec(ad::matmul(x, layer.weight), layer.bias);
}

ad::Var encode(const EncoderVars& enc, ad::Var batch) {
  check_width(batch, enc.layers.front().weight.rows(), "encode");
  ad::Var h = batch;
  for (std::size_t i = 0; i < enc.layers.size(); ++i) {
    h = dense(enc.layers[i], h);
    if (i + 1 < enc.layers.size()) h = ad::relu(h);
  }
  return h;
}

ad::Var encode_agnostic(const ModelVars& mv, ad::Var batch) { return encode(mv.agnostic, batch); }
ad::Var encode_private(const ModelVars& mv, ad::Var batch) { return encode(mv.private_enc, batch); }

ad::Var fuse(ad::Var identity, ad::Var domain) { return ad::concat_cols(identity, domain); }

ad::Var enhance_classify(const ModelVars& mv, ad::Var fused) {
  check_width(fused, mv.fuse_reduce.weight.rows(), "enhance_classify");
  return dense(mv.fuse_classify, ad::relu(dense(mv.fuse_reduce, fused)));
}

ad::Var classify_id(const ModelVars& mv, ad::Var x) {
  check_width(x, mv.id_head.weight.rows(), "classify_id");
  return dense(mv.id_head, x);
}

ad::Var classify_dom(const ModelVars& mv, ad::Var m) {
  check_width(m, mv.dom_head.weight.rows(), "classify_dom");
  return dense(mv.dom_head, m);
}

Matrix agnostic_features(const ParamSet& ps, const Matrix& batch) {
  if (batch.cols != ps.dims.input_dim) {
    throw ShapeError("agnostic_features: expected width " + std::to_string(ps.dims.input_dim) +
                     ", got " + batch.shape_str());
  }
  Matrix h = batch;
  const auto& layers = ps.agnostic.layers;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    Matrix next = matmul(h, layers[i].weight);
    for (std::size_t r = 0; r < next.rows; ++r) {
      auto row = next.row(r);
      for (std::size_t c = 0; c < next.cols; ++c) {
        row[c] += layers[i].bias.data[c];
        if (i + 1 < layers.size() && row[c] < 0.0) row[c] = 0.0;
      }
    }
    h = std::move(next);
  }
  return h;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck) {
  const ModelDims& d = ck.params.dims;
  binio::Writer w;
  w.magic("XMCK");
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(d.input_dim));
  w.u32(static_cast<std::uint32_t>(d.hidden_dims.size()));
  for (auto h : d.hidden_dims) w.u32(static_cast<std::uint32_t>(h));
  w.u32(static_cast<std::uint32_t>(d.feat_dim));
  w.u32(static_cast<std::uint32_t>(d.dom_feat_dim));
  w.u32(static_cast<std::uint32_t>(d.reduce_dim));
  w.u32(static_cast<std::uint32_t>(d.n_identities));
  for (const Matrix* m : ck.params.tensors()) w.f64s(m->data);
  const auto shapes = ck.params.tensors();
  if (ck.opt.velocity.size() != shapes.size()) {
    throw ShapeError("checkpoint: optimizer state does not mirror parameters");
  }
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    if (!ck.opt.velocity[i].same_shape(*shapes[i])) {
      throw ShapeError("checkpoint: momentum buffer shape mismatch");
    }
    w.f64s(ck.opt.velocity[i].data);
  }
  w.u64(ck.seed);
  w.u8(ck.stage);
  w.seal();
  return w.bytes();
}

Checkpoint decode_checkpoint(std::vector<std::uint8_t> bytes) {
  binio::Reader r(std::move(bytes), "checkpoint");
  r.expect_magic("XMCK");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw DataError("checkpoint: unsupported version " + std::to_string(version));
  }
  r.verify_crc();

  ModelDims d;
  d.input_dim = r.u32();
  const std::uint32_t n_hidden = r.u32();
  if (n_hidden > 64) throw DataError("checkpoint: malformed dims block");
  d.hidden_dims.resize(n_hidden);
  for (auto& h : d.hidden_dims) h = r.u32();
  d.feat_dim = r.u32();
  d.dom_feat_dim = r.u32();
  d.reduce_dim = r.u32();
  d.n_identities = r.u32();
  try {
    d.validate();
  } catch (const ConfigError& e) {
    throw DataError(std::string("checkpoint: malformed dims block (") + e.what() + ")");
  }

  Checkpoint ck;
  ck.params = init_params(d, 0);
  for (Matrix* m : ck.params.tensors()) r.f64s(m->data);
  ck.opt = OptState::zeros_like(ck.params);
  for (Matrix& v : ck.opt.velocity) r.f64s(v.data);
  ck.seed = r.u64();
  ck.stage = r.u8();
  r.expect_end();
  return ck;
}

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  binio::write_file(path, encode_checkpoint(ck));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(binio::read_file(path));
}

}  // namespace xmodal
