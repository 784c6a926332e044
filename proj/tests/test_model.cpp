#include <doctest.h>

#include <chrono>
#include <cmath>
#include <filesystem>

#include "support.hpp"
#include "xmodal/binio.hpp"
#include "xmodal/errors.hpp"
#include "xmodal/losses.hpp"
#include "xmodal/model.hpp"

using namespace xmodal;
using xmodal::testing::random_matrix;
namespace fs = std::filesystem;

namespace {

ParamSet zeroed(ParamSet ps) {
  for (Matrix* m : ps.tensors()) *m = Matrix(m->rows, m->cols);
  return ps;
}

}  // namespace

TEST_CASE("init_params") {
  ModelDims d;
  auto a = init_params(d, 9);
  auto b = init_params(d, 9);
  CHECK(a == b);
  CHECK_FALSE(a == init_params(d, 10));
  for (const Dense* l : {&a.agnostic.layers[0], &a.id_head, &a.dom_head, &a.fuse_reduce}) {
    CHECK(l->bias == Matrix(1, l->bias.cols));
  }
  CHECK(a.id_head.weight.cols == d.n_identities);
  CHECK(a.dom_head.weight.cols == 2);
  CHECK(a.fuse_reduce.weight.rows == d.feat_dim + d.dom_feat_dim);
  CHECK(a.fuse_classify.weight.cols == d.n_identities);

  ModelDims wide;
  wide.input_dim = 256;
  wide.hidden_dims = {256};
  auto w = init_params(wide, 1).agnostic.layers[0].weight;
  double mean = 0.0, var = 0.0;
  for (double v : w.data) mean += v;
  mean /= static_cast<double>(w.size());
  for (double v : w.data) var += (v - mean) * (v - mean);
  var /= static_cast<double>(w.size() - 1);
  CHECK(std::abs(var - 2.0 / 256.0) < 0.2 * 2.0 / 256.0);

  ModelDims bad;
  bad.hidden_dims = {64, 0};
  CHECK_THROWS_AS(init_params(bad, 1), ConfigError);
}

TEST_CASE("tensors order and group selection") {
  auto ps = init_params(testing::tiny_dims(), 1);
  const std::size_t layers = ps.agnostic.layers.size();
  CHECK(ps.tensors(kTheta).size() == 2 * (layers + 1));
  CHECK(ps.tensors(kPhi).size() == 2 * (ps.private_enc.layers.size() + 1));
  CHECK(ps.tensors(kFusion).size() == 4);
  auto all = ps.tensors();
  CHECK(all.size() == ps.tensors(kTheta).size() + ps.tensors(kPhi).size() + 4);
  CHECK(all.front() == &ps.agnostic.layers[0].weight);
  CHECK(all.back() == &ps.fuse_classify.bias);
}

TEST_CASE("encoders are shared across domains and match a loop oracle") {
  ModelDims d = testing::tiny_dims();
  d.hidden_dims = {6, 5};
  auto ps = init_params(d, 4);
  Rng rng(2);
  Matrix rows = random_matrix(rng, 7, d.input_dim);

  ad::Tape t;
  auto mv = bind(t, ps, kAllGroups);
  auto as_vis = encode_agnostic(mv, t.constant(rows));
  auto as_nir = encode_agnostic(mv, t.constant(rows));
  CHECK(as_vis.value() == as_nir.value());
  CHECK(as_vis.rows() == 7);
  CHECK(as_vis.cols() == d.feat_dim);
  auto oracle = testing::encoder_oracle(ps.agnostic, rows);
  for (std::size_t i = 0; i < oracle.size(); ++i) {
    CHECK(as_vis.value().data[i] == doctest::Approx(oracle.data[i]).epsilon(1e-12));
  }
  CHECK(agnostic_features(ps, rows) == as_vis.value());

  auto m = encode_private(mv, t.constant(rows));
  CHECK(m.cols() == d.dom_feat_dim);
  auto poracle = testing::encoder_oracle(ps.private_enc, rows);
  for (std::size_t i = 0; i < poracle.size(); ++i) {
    CHECK(m.value().data[i] == doctest::Approx(poracle.data[i]).epsilon(1e-12));
  }

  auto z = zeroed(ps);
  ad::Tape t2;
  auto zv = bind(t2, z, kAllGroups);
  CHECK(encode_agnostic(zv, t2.constant(rows)).value() == Matrix(7, d.feat_dim));
  CHECK(encode_private(zv, t2.constant(rows)).value() == Matrix(7, d.dom_feat_dim));

  CHECK_THROWS_AS(encode_agnostic(mv, t.constant(Matrix(2, d.input_dim + 1))), ShapeError);
}

TEST_CASE("fusion and heads") {
  ModelDims d = testing::tiny_dims(5);
  auto ps = init_params(d, 3);
  Rng rng(8);
  ad::Tape t;
  auto mv = bind(t, ps, kAllGroups);
  auto xv = t.leaf(random_matrix(rng, 4, d.feat_dim));
  auto xn = t.leaf(random_matrix(rng, 4, d.feat_dim));
  auto mvv = t.leaf(random_matrix(rng, 4, d.dom_feat_dim));
  auto mnn = t.leaf(random_matrix(rng, 4, d.dom_feat_dim));
  auto sv = fuse(xv, mvv), sn = fuse(xv, mnn), tv = fuse(xn, mvv), tn = fuse(xn, mnn);
  for (auto f : {sv, sn, tv, tn}) {
    CHECK(f.rows() == 4);
    CHECK(f.cols() == d.feat_dim + d.dom_feat_dim);
  }
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t c = 0; c < d.feat_dim; ++c) CHECK(sv.value()(r, c) == xv.value()(r, c));
  }
  CHECK(enhance_classify(mv, sv).cols() == d.n_identities);
  CHECK(classify_dom(mv, encode_private(mv, t.constant(Matrix(3, d.input_dim)))).cols() == 2);
  CHECK_THROWS_AS(enhance_classify(mv, xv), ShapeError);
  CHECK_THROWS_AS(classify_id(mv, t.leaf(Matrix(1, d.feat_dim + 1))), ShapeError);

  auto z = zeroed(ps);
  ad::Tape t2;
  auto zv = bind(t2, z, kAllGroups);
  std::vector<std::size_t> labels{0, 1, 2, 3};
  auto ce = ad::softmax_ce(enhance_classify(zv, t2.constant(sv.value())), labels);
  CHECK(ce.value()(0, 0) == doctest::Approx(std::log(5.0)).epsilon(1e-12));
  auto ce_id = ad::softmax_ce(classify_id(zv, t2.constant(xv.value())), labels);
  CHECK(ce_id.value()(0, 0) == doctest::Approx(std::log(5.0)).epsilon(1e-12));
}

TEST_CASE("fusion gradient partitions by column range") {
  Rng rng(6);
  Matrix x = random_matrix(rng, 3, 2), m = random_matrix(rng, 3, 4);
  Matrix coef = random_matrix(rng, 3, 6, 0.5, 1.5);
  ad::Tape t;
  auto xv = t.leaf(x), mv = t.leaf(m);
  t.backward(ad::sum(ad::affine(fuse(xv, mv), coef, Matrix(3, 6))));
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t c = 0; c < 2; ++c) CHECK(xv.grad()(r, c) == coef(r, c));
    for (std::size_t c = 0; c < 4; ++c) CHECK(mv.grad()(r, c) == coef(r, 2 + c));
  }
  double err = ad::grad_check(
      [&](ad::Tape&, std::span<const ad::Var> v) {
        return ad::sum(ad::affine(fuse(v[0], v[1]), coef, Matrix(3, 6)));
      },
      {x, m});
  CHECK(err < 1e-6);
}

TEST_CASE("head gradients match finite differences") {
  ModelDims d = testing::tiny_dims();
  auto ps = init_params(d, 5);
  Rng rng(1);
  Matrix feats = random_matrix(rng, 4, d.feat_dim);
  std::vector<std::size_t> labels{0, 3, 1, 2};
  double err = ad::grad_check(
      [&](ad::Tape& t, std::span<const ad::Var> v) {
        ModelVars mv = assemble(ps, v);
        return ad::softmax_ce(classify_id(mv, t.constant(feats)), labels);
      },
      testing::param_values(ps));
  CHECK(err < 1e-6);
}

TEST_CASE("bind records frozen groups as constants") {
  auto ps = init_params(testing::tiny_dims(), 1);
  ad::Tape t;
  auto mv = bind(t, ps, kTheta);
  for (auto v : mv.vars(kTheta)) CHECK_FALSE(t.node(v.id).constant);
  for (auto v : mv.vars(kPhi | kFusion)) CHECK(t.node(v.id).constant);
}

TEST_CASE("forward and backward of a 64-row batch is fast") {
  ModelDims d;
  auto ps = init_params(d, 1);
  Rng rng(4);
  Matrix batch = random_matrix(rng, 64, d.input_dim);
  std::vector<std::size_t> labels(64);
  for (std::size_t i = 0; i < 64; ++i) labels[i] = i % d.n_identities;
  auto start = std::chrono::steady_clock::now();
  ad::Tape t;
  auto mv = bind(t, ps, kAllGroups);
  auto x = encode_agnostic(mv, t.constant(batch));
  auto m = encode_private(mv, t.constant(batch));
  auto loss = ad::add(ad::softmax_ce(classify_id(mv, x), labels),
                      ad::softmax_ce(enhance_classify(mv, fuse(x, m)), labels));
  t.backward(loss);
  double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  CHECK(ms < 50.0);
}

TEST_CASE("checkpoints round-trip byte-exactly") {
  fs::path dir = fs::temp_directory_path() / "xmodal_test_ckpt";
  fs::remove_all(dir);
  fs::create_directories(dir);

  Checkpoint ck;
  ck.params = init_params(testing::tiny_dims(), 12);
  ck.opt = OptState::zeros_like(ck.params);
  Rng rng(3);
  for (auto& v : ck.opt.velocity) v = random_matrix(rng, v.rows, v.cols);
  ck.seed = 0xDEADBEEFCAFEull;
  ck.stage = 2;

  save_checkpoint(ck, dir / "a.xmck");
  auto back = load_checkpoint(dir / "a.xmck");
  CHECK(back == ck);
  save_checkpoint(back, dir / "b.xmck");
  CHECK(binio::read_file(dir / "a.xmck") == binio::read_file(dir / "b.xmck"));

  auto bytes = encode_checkpoint(ck);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "XMCK");
  auto corrupt = bytes;
  corrupt.back() ^= 0xFF;
  try {
    decode_checkpoint(corrupt);
    FAIL("expected checksum error");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("checksum") != std::string::npos);
  }
  auto versioned = bytes;
  versioned[4] = 9;
  try {
    decode_checkpoint(versioned);
    FAIL("expected version error");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("unsupported version") != std::string::npos);
  }
  auto truncated = bytes;
  truncated.resize(bytes.size() / 2);
  CHECK_THROWS_AS(decode_checkpoint(truncated), DataError);
  fs::remove_all(dir);
}
