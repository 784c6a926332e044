#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "support.hpp"
#include "xmodal/autodiff.hpp"
#include "xmodal/errors.hpp"

using namespace xmodal;
using namespace xmodal::ad;
using xmodal::testing::random_away_from_zero;
using xmodal::testing::random_matrix;

namespace {

// Reduces a node to a scalar with fixed random weights so every upstream
// gradient entry is O(1) and distinct.
Var weighted_sum(Var a, std::uint64_t seed) {
  Rng rng(seed);
  Matrix coef = random_matrix(rng, a.rows(), a.cols(), 0.5, 1.5);
  return sum(affine(a, std::move(coef), Matrix(a.rows(), a.cols())));
}

constexpr int kInstances = 20;
constexpr double kTol = 1e-5;

}  // namespace

TEST_CASE("matmul values and shape errors") {
  Tape t;
  auto a = t.leaf(Matrix::from_rows({{1, 2}, {3, 4}}));
  auto i2 = t.leaf(Matrix::from_rows({{1, 0}, {0, 1}}));
  CHECK(matmul(a, i2).value() == Matrix::from_rows({{1, 2}, {3, 4}}));
  auto r = t.leaf(Matrix::from_rows({{1, 0}}));
  auto c = t.leaf(Matrix::from_rows({{0}, {5}}));
  CHECK(matmul(r, c).value() == Matrix::from_rows({{0}}));

  auto bad = t.leaf(Matrix(3, 2));
  try {
    matmul(a, bad);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    std::string msg = e.what();
    CHECK(msg.find("2x2") != std::string::npos);
    CHECK(msg.find("3x2") != std::string::npos);
  }
}

TEST_CASE("add_rowvec, relu, hinge, concat, sq_pair_dist examples") {
  Tape t;
  auto a = t.leaf(Matrix::from_rows({{1, 1}, {2, 2}}));
  const Matrix shifted = add_rowvec(a, t.leaf(Matrix(1, 2))).value();
  CHECK(shifted == a.value());
  const Matrix single = add_rowvec(t.leaf(Matrix(1, 2)), t.leaf(Matrix::from_rows({{3, -1}}))).value();
  CHECK(single == Matrix::from_rows({{3, -1}}));
  CHECK_THROWS_AS(add_rowvec(a, t.leaf(Matrix(1, 3))), ShapeError);

  CHECK(relu(t.leaf(Matrix::from_rows({{-1, 0, 2}}))).value() == Matrix::from_rows({{0, 0, 2}}));
  auto h = hinge(t.leaf(Matrix::from_rows({{-3, 0, 7}})));
  CHECK(h.value() == Matrix::from_rows({{0, 0, 7}}));
  const Matrix again = hinge(h).value();
  CHECK(again == h.value());

  auto cc = concat_cols(t.leaf(Matrix::from_rows({{1}})), t.leaf(Matrix::from_rows({{2}})));
  CHECK(cc.value() == Matrix::from_rows({{1, 2}}));
  CHECK(concat_cols(t.leaf(Matrix(3, 4)), t.leaf(Matrix(3, 5))).cols() == 9);
  CHECK_THROWS_AS(concat_cols(t.leaf(Matrix(3, 4)), t.leaf(Matrix(2, 5))), ShapeError);

  auto same = t.leaf(Matrix::from_rows({{1, 2, 3}}));
  CHECK(sq_pair_dist(same, same).value()(0, 0) == 0.0);
  CHECK(sq_pair_dist(t.leaf(Matrix::from_rows({{0, 0}})), t.leaf(Matrix::from_rows({{3, 4}})))
            .value()(0, 0) == 25.0);
  CHECK_THROWS_AS(sq_pair_dist(t.leaf(Matrix(2, 3)), t.leaf(Matrix(2, 4))), ShapeError);
}

TEST_CASE("relu gradient is a sign mask") {
  Tape t;
  auto x = t.leaf(Matrix::from_rows({{1, -2}}));
  t.backward(sum(relu(x)));
  CHECK(x.grad() == Matrix::from_rows({{1, 0}}));
}

TEST_CASE("softmax_ce values") {
  Tape t;
  std::vector<std::size_t> lab{2};
  auto u = softmax_ce(t.leaf(Matrix(1, 4)), lab);
  CHECK(u.value()(0, 0) == doctest::Approx(std::log(4.0)).epsilon(1e-12));

  double prev = 1e300;
  for (double margin : {1.0, 5.0, 10.0}) {
    Matrix z(1, 3);
    z(0, 0) = margin;
    std::vector<std::size_t> l0{0};
    double v = softmax_ce(t.leaf(z), l0).value()(0, 0);
    CHECK(v < prev);
    prev = v;
  }
  CHECK(prev < 1e-4);

  std::vector<std::size_t> out_of_range{4};
  CHECK_THROWS_AS(softmax_ce(t.leaf(Matrix(1, 4)), out_of_range), std::out_of_range);

  Rng rng(11);
  Matrix logits = random_matrix(rng, 6, 3, -2, 2);
  std::vector<std::size_t> labels{0, 1, 2, 2, 1, 0};
  auto ce = softmax_ce(t.leaf(logits), labels);
  CHECK(ce.value()(0, 0) ==
        doctest::Approx(xmodal::testing::ce_mean_oracle(logits, labels)).epsilon(1e-12));
}

TEST_CASE("backward semantics") {
  SUBCASE("sum gives unit gradients") {
    Tape t;
    auto x = t.leaf(Matrix(2, 3, 0.7));
    t.backward(sum(x));
    CHECK(x.grad() == Matrix(2, 3, 1.0));
  }
  SUBCASE("diamond sharing sums both paths") {
    Tape t;
    auto x = t.leaf(Matrix::from_rows({{1.5, -2.0}}));
    auto y = add(scale(x, 3.0), scale(x, -0.5));
    t.backward(sum(y));
    CHECK(x.grad() == Matrix(1, 2, 2.5));
  }
  SUBCASE("second backward doubles every gradient") {
    Tape t;
    Rng rng(5);
    auto x = t.leaf(random_matrix(rng, 3, 4));
    auto w = t.leaf(random_matrix(rng, 4, 2));
    auto loss = weighted_sum(relu(matmul(x, w)), 9);
    t.backward(loss);
    Matrix gx = x.grad(), gw = w.grad();
    t.backward(loss);
    for (std::size_t i = 0; i < gx.size(); ++i) CHECK(x.grad().data[i] == 2.0 * gx.data[i]);
    for (std::size_t i = 0; i < gw.size(); ++i) CHECK(w.grad().data[i] == 2.0 * gw.data[i]);
    t.zero_grad();
    CHECK(x.grad() == Matrix(3, 4));
  }
  SUBCASE("constants receive no gradient") {
    Tape t;
    auto c = t.constant(Matrix(1, 2, 1.0));
    auto x = t.leaf(Matrix(1, 2, 2.0));
    t.backward(sum(add(c, x)));
    CHECK(c.grad() == Matrix(1, 2));
    CHECK(x.grad() == Matrix(1, 2, 1.0));
  }
  SUBCASE("non-scalar root is rejected") {
    Tape t;
    auto x = t.leaf(Matrix(2, 2));
    CHECK_THROWS_AS(t.backward(x), ShapeError);
  }
}

TEST_CASE("grad_check utility") {
  Rng rng(3);
  Matrix x = random_matrix(rng, 3, 3);
  double sq = grad_check(
      [](Tape& t, Var v) { return sum(sq_pair_dist(v, t.constant(Matrix(v.rows(), v.cols())))); },
      x, 1e-5);
  CHECK(sq < 1e-8);
  CHECK_THROWS_AS(grad_check([](Tape&, Var v) { return sum(v); }, x, 0.0), std::invalid_argument);
  Matrix bad(1, 1, std::numeric_limits<double>::infinity());
  CHECK_THROWS_AS(grad_check([](Tape&, Var v) { return sum(v); }, bad), NumericError);
}

TEST_CASE("finite-difference property suite per op") {
  Rng rng(2024);
  for (int i = 0; i < kInstances; ++i) {
    const std::uint64_t ws = 1000 + i;
    Matrix a34 = random_matrix(rng, 3, 4), b42 = random_matrix(rng, 4, 2);
    CHECK(grad_check([&](Tape&, std::span<const Var> v) { return weighted_sum(matmul(v[0], v[1]), ws); },
                     {a34, b42}) < kTol);

    Matrix a23 = random_matrix(rng, 2, 3), b13 = random_matrix(rng, 1, 3);
    CHECK(grad_check([&](Tape&, std::span<const Var> v) { return weighted_sum(add_rowvec(v[0], v[1]), ws); },
                     {a23, b13}) < kTol);

    Matrix k = random_away_from_zero(rng, 3, 3);
    CHECK(grad_check([&](Tape&, Var v) { return weighted_sum(relu(v), ws); }, k) < kTol);
    CHECK(grad_check([&](Tape&, Var v) { return weighted_sum(hinge(v), ws); }, k) < kTol);

    Matrix c22 = random_matrix(rng, 2, 2);
    CHECK(grad_check([&](Tape&, std::span<const Var> v) { return weighted_sum(concat_cols(v[0], v[1]), ws); },
                     {a23, c22}) < kTol);

    Matrix p = random_matrix(rng, 5, 8), q = random_matrix(rng, 5, 8);
    CHECK(grad_check([&](Tape&, std::span<const Var> v) { return weighted_sum(sq_pair_dist(v[0], v[1]), ws); },
                     {p, q}) < kTol);

    Matrix logits = random_matrix(rng, 6, 3);
    std::vector<std::size_t> labels(6);
    for (auto& l : labels) l = rng.below(3);
    CHECK(grad_check([&](Tape&, Var v) { return softmax_ce(v, labels); }, logits) < kTol);

    CHECK(grad_check([&](Tape&, std::span<const Var> v) {
            return weighted_sum(add(v[0], scale(v[1], -1.7)), ws);
          },
                     {a23, random_matrix(rng, 2, 3)}) < kTol);
    CHECK(grad_check([&](Tape&, Var v) { return mean(sq_pair_dist(v, scale(v, 0.3))); }, p) < kTol);

    Matrix coef = random_matrix(rng, 2, 3), off = random_matrix(rng, 2, 3);
    CHECK(grad_check([&](Tape&, Var v) { return weighted_sum(affine(v, coef, off), ws); }, a23) <
          kTol);

    std::vector<std::size_t> idx{2, 0, 2, 1};
    CHECK(grad_check([&](Tape&, Var v) { return weighted_sum(gather_rows(v, idx), ws); }, a34) <
          kTol);

    Matrix n = random_matrix(rng, 4, 3);
    CHECK(grad_check([&](Tape&, Var v) { return weighted_sum(normalize_rows(v), ws); }, n) < kTol);
  }
}

TEST_CASE("values and gradients stay finite") {
  Rng rng(77);
  for (int i = 0; i < 10; ++i) {
    Tape t;
    auto x = t.leaf(random_matrix(rng, 4, 5, -30, 30));
    auto w = t.leaf(random_matrix(rng, 5, 3, -30, 30));
    std::vector<std::size_t> labels{0, 1, 2, 0};
    auto loss = add(softmax_ce(matmul(x, w), labels), mean(normalize_rows(relu(x))));
    t.backward(sum(loss));
    CHECK(loss.value().all_finite());
    CHECK(x.grad().all_finite());
    CHECK(w.grad().all_finite());
  }
}
