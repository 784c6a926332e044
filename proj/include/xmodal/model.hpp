#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "xmodal/autodiff.hpp"
#include "xmodal/matrix.hpp"

namespace xmodal {

struct ModelDims {
  std::size_t input_dim = 64;
  std::vector<std::size_t> hidden_dims{64};
  std::size_t feat_dim = 32;
  // Width of the domain feature m; the fusion head sees feat_dim + dom_feat_dim.
  std::size_t dom_feat_dim = 32;
  std::size_t reduce_dim = 32;
  std::size_t n_identities = 32;

  void validate() const;
  bool operator==(const ModelDims&) const = default;
};

// Affine layer x * weight + bias, weight fan_in x fan_out, bias 1 x fan_out.
struct Dense {
  Matrix weight;
  Matrix bias;

  bool operator==(const Dense&) const = default;
};

// Rectifier MLP; the last layer is linear.
struct EncoderParams {
  std::vector<Dense> layers;

  bool operator==(const EncoderParams&) const = default;
};

// Parameter groups updated by the training stages.
enum Group : unsigned {
  kTheta = 1u << 0,   // agnostic encoder + identity head
  kPhi = 1u << 1,     // private encoder + domain head
  kFusion = 1u << 2,  // identity-enhanced fusion head
  kAllGroups = kTheta | kPhi | kFusion,
};

struct ParamSet {
  ModelDims dims;
  EncoderParams agnostic;
  Dense id_head;
  EncoderParams private_enc;
  Dense dom_head;
  Dense fuse_reduce;
  Dense fuse_classify;

  // Parameter matrices of the selected groups in declaration order
  // (Theta, then Phi, then fusion; weight before bias).
  std::vector<Matrix*> tensors(unsigned groups = kAllGroups);
  std::vector<const Matrix*> tensors(unsigned groups = kAllGroups) const;

  bool operator==(const ParamSet&) const = default;
};

// He-normal weights (variance 2 / fan_in), zero biases; deterministic in seed.
ParamSet init_params(const ModelDims& dims, std::uint64_t seed);

// Momentum buffers, one per parameter matrix in `ParamSet::tensors()` order.
struct OptState {
  std::vector<Matrix> velocity;

  static OptState zeros_like(const ParamSet& ps);
  bool operator==(const OptState&) const = default;
};

// Tape bindings. Parameters outside the trainable groups are recorded as
// constants so their gradients are never formed.

struct DenseVars {
  ad::Var weight;
  ad::Var bias;
};

struct EncoderVars {
  std::vector<DenseVars> layers;
};

struct ModelVars {
  EncoderVars agnostic;
  DenseVars id_head;
  EncoderVars private_enc;
  DenseVars dom_head;
  DenseVars fuse_reduce;
  DenseVars fuse_classify;

  // Vars in the same order as ParamSet::tensors(groups).
  std::vector<ad::Var> vars(unsigned groups = kAllGroups) const;
};

ModelVars bind(ad::Tape& tape, const ParamSet& ps, unsigned trainable);
// Rebuilds a ModelVars from vars laid out like `layout.tensors()`.
ModelVars assemble(const ParamSet& layout, std::span<const ad::Var> vars);

ad::Var dense(const DenseVars& layer, ad::Var x);
ad::Var encode(const EncoderVars& enc, ad::Var batch);

// Identity features x^q = f(I^q; Theta). Independent of the batch's domain.
ad::Var encode_agnostic(const ModelVars& mv, ad::Var batch);
// Domain features m^q = g(I^q; Phi).
ad::Var encode_private(const ModelVars& mv, ad::Var batch);
// [identity | domain] feature concatenation.
ad::Var fuse(ad::Var identity, ad::Var domain);
// Fusion head W: affine -> rectifier -> affine identity logits.
ad::Var enhance_classify(const ModelVars& mv, ad::Var fused);
ad::Var classify_id(const ModelVars& mv, ad::Var x);
ad::Var classify_dom(const ModelVars& mv, ad::Var m);

// Identity features for raw rows without recording gradients.
Matrix agnostic_features(const ParamSet& ps, const Matrix& batch);

// Training snapshot, "XMCK" v1 file format.
struct Checkpoint {
  ParamSet params;
  OptState opt;
  std::uint64_t seed = 0;
  std::uint8_t stage = 0;

  bool operator==(const Checkpoint&) const = default;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck);
Checkpoint decode_checkpoint(std::vector<std::uint8_t> bytes);
void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace xmodal
