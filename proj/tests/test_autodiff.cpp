// SPDX-License-Identifier: Apache-2.0
#include "flowlm/autodiff.hpp"
#include "flowlm/errors.hpp"
#include "testing.hpp"

#include <doctest.h>

#include <array>
#include <vector>

using namespace flowlm;
using namespace flowlm::ad;
using flowlm::testing::gradient_check;
using flowlm::testing::random_matrix;

namespace {

// Weighted sum with fixed random weights so every output entry matters.
Var weighted(Tape& t, const Var& v, std::uint64_t seed = 99) {
    std::mt19937_64 gen(seed + static_cast<std::uint64_t>(v.rows() * 31 + v.cols()));
    Var w = t.constant(random_matrix(gen, v.rows(), v.cols()));
    return sum(mul(v, w));
}

struct Fixture {
    std::mt19937_64 gen{7};
    Parameter a{"a", random_matrix(gen, 6, 4)};
    Parameter b{"b", random_matrix(gen, 6, 4)};
    Parameter c{"c", random_matrix(gen, 4, 3)};
    Parameter col{"col", random_matrix(gen, 6, 1)};
    Parameter row{"row", random_matrix(gen, 1, 4)};
    Parameter pos{"pos", (random_matrix(gen, 6, 4).array().abs() + 0.5).matrix()};
};

}  // namespace

TEST_CASE("elementwise binary ops have exact gradients") {
    Fixture f;
    std::vector<Parameter*> ps{&f.a, &f.pos};
    CHECK(gradient_check([&](Tape& t) { return weighted(t, add(t.param(f.a), t.param(f.pos))); }, ps) < 1e-6);
    CHECK(gradient_check([&](Tape& t) { return weighted(t, sub(t.param(f.a), t.param(f.pos))); }, ps) < 1e-6);
    CHECK(gradient_check([&](Tape& t) { return weighted(t, mul(t.param(f.a), t.param(f.pos))); }, ps) < 1e-6);
    CHECK(gradient_check([&](Tape& t) { return weighted(t, div(t.param(f.a), t.param(f.pos))); }, ps) < 1e-6);
}

TEST_CASE("broadcast ops have exact gradients") {
    Fixture f;
    std::vector<Parameter*> ps{&f.a, &f.col, &f.row};
    CHECK(gradient_check([&](Tape& t) { return weighted(t, add_col(t.param(f.a), t.param(f.col))); }, ps) < 1e-6);
    CHECK(gradient_check([&](Tape& t) { return weighted(t, mul_col(t.param(f.a), t.param(f.col))); }, ps) < 1e-6);
    CHECK(gradient_check([&](Tape& t) { return weighted(t, add_row(t.param(f.a), t.param(f.row))); }, ps) < 1e-6);
    CHECK(gradient_check([&](Tape& t) { return weighted(t, mul_row(t.param(f.a), t.param(f.row))); }, ps) < 1e-6);
}

TEST_CASE("matrix products have exact gradients") {
    Fixture f;
    std::vector<Parameter*> ps{&f.a, &f.b, &f.c};
    CHECK(gradient_check([&](Tape& t) { return weighted(t, matmul(t.param(f.a), t.param(f.c))); }, ps) < 1e-6);
    CHECK(gradient_check([&](Tape& t) { return weighted(t, matmul_nt(t.param(f.a), t.param(f.b))); }, ps) < 1e-6);
}

TEST_CASE("unary ops have exact gradients") {
    Fixture f;
    std::vector<Parameter*> ps{&f.a};
    std::vector<Parameter*> pp{&f.pos};
    CHECK(gradient_check([&](Tape& t) { return weighted(t, exp(t.param(f.a))); }, ps) < 1e-6);
    CHECK(gradient_check([&](Tape& t) { return weighted(t, log(t.param(f.pos))); }, pp) < 1e-6);
    CHECK(gradient_check([&](Tape& t) { return weighted(t, sqrt(t.param(f.pos))); }, pp) < 1e-6);
    CHECK(gradient_check([&](Tape& t) { return weighted(t, square(t.param(f.a))); }, ps) < 1e-6);
    CHECK(gradient_check([&](Tape& t) { return weighted(t, reciprocal(t.param(f.pos))); }, pp) < 1e-6);
    CHECK(gradient_check([&](Tape& t) { return weighted(t, sigmoid(t.param(f.a))); }, ps) < 1e-6);
    CHECK(gradient_check([&](Tape& t) { return weighted(t, softplus(t.param(f.a))); }, ps) < 1e-6);
    CHECK(gradient_check([&](Tape& t) { return weighted(t, silu(t.param(f.a))); }, ps) < 1e-6);
    CHECK(gradient_check([&](Tape& t) { return weighted(t, tanh(t.param(f.a))); }, ps) < 1e-6);
    CHECK(gradient_check([&](Tape& t) { return weighted(t, shift(scale(neg(t.param(f.a)), 3.0), 2.0)); }, ps) < 1e-6);
}

TEST_CASE("reductions and softmax have exact gradients") {
    Fixture f;
    std::vector<Parameter*> ps{&f.a};
    CHECK(gradient_check([&](Tape& t) { return weighted(t, row_sum(t.param(f.a))); }, ps) < 1e-6);
    CHECK(gradient_check([&](Tape& t) { return weighted(t, row_mean(t.param(f.a))); }, ps) < 1e-6);
    CHECK(gradient_check([&](Tape& t) { return weighted(t, col_sum(t.param(f.a))); }, ps) < 1e-6);
    CHECK(gradient_check([&](Tape& t) { return weighted(t, softmax_rows(t.param(f.a))); }, ps) < 1e-6);
    CHECK(gradient_check([&](Tape& t) { return weighted(t, log_softmax_rows(t.param(f.a))); }, ps) < 1e-6);
    const std::array<int, 6> idx{0, 3, 2, 1, 1, 0};
    CHECK(gradient_check([&](Tape& t) { return weighted(t, pick(t.param(f.a), idx)); }, ps) < 1e-6);
}

TEST_CASE("structural ops route gradients") {
    Fixture f;
    std::vector<Parameter*> ps{&f.a, &f.b};
    CHECK(gradient_check([&](Tape& t) { return weighted(t, slice_cols(t.param(f.a), 1, 2)); }, ps) < 1e-6);
    CHECK(gradient_check([&](Tape& t) { return weighted(t, slice_rows(t.param(f.a), 2, 3)); }, ps) < 1e-6);
    CHECK(gradient_check([&](Tape& t) {
              std::array<Var, 2> parts{t.param(f.a), t.param(f.b)};
              return weighted(t, concat_cols(parts));
          }, ps) < 1e-6);
    CHECK(gradient_check([&](Tape& t) {
              std::array<Var, 2> parts{t.param(f.a), t.param(f.b)};
              return weighted(t, concat_rows(parts));
          }, ps) < 1e-6);
    CHECK(gradient_check([&](Tape& t) { return weighted(t, reshape(t.param(f.a), 3, 8)); }, ps) < 1e-6);
    const std::array<int, 5> ids{5, 0, 5, 2, 1};
    CHECK(gradient_check([&](Tape& t) { return weighted(t, gather_rows(t.param(f.a), ids)); }, ps) < 1e-6);
    CHECK(gradient_check([&](Tape& t) { return weighted(t, repeat_rows(t.param(f.a), 3)); }, ps) < 1e-6);
    CHECK(gradient_check([&](Tape& t) { return weighted(t, tile_rows(t.param(f.a), 3)); }, ps) < 1e-6);
}

TEST_CASE("sequence-blocked ops have exact gradients") {
    Fixture f;
    std::vector<Parameter*> ps{&f.a, &f.b};
    // 6 rows = 2 sequences of length 3
    CHECK(gradient_check([&](Tape& t) { return weighted(t, seq_mean_rows(t.param(f.a), 3)); }, ps) < 1e-6);
    CHECK(gradient_check([&](Tape& t) { return weighted(t, seq_sum(t.param(f.a), 3)); }, ps) < 1e-6);
    CHECK(gradient_check([&](Tape& t) { return weighted(t, seq_scores(t.param(f.a), t.param(f.b), 3)); }, ps) < 1e-6);
    std::mt19937_64 gen(3);
    Parameter p{"p", random_matrix(gen, 6, 3)};
    std::vector<Parameter*> pv{&p, &f.a};
    CHECK(gradient_check([&](Tape& t) { return weighted(t, seq_mix(t.param(p), t.param(f.a), 3)); }, pv) < 1e-6);
}

TEST_CASE("seq_scores matches a per-block product") {
    std::mt19937_64 gen(5);
    Tape t(false);
    Matrix q = random_matrix(gen, 4, 3), k = random_matrix(gen, 4, 3);
    Matrix s = seq_scores(t.constant(q), t.constant(k), 2).value();
    REQUIRE(s.rows() == 4);
    REQUIRE(s.cols() == 2);
    Matrix top = q.topRows(2) * k.topRows(2).transpose();
    Matrix bottom = q.bottomRows(2) * k.bottomRows(2).transpose();
    CHECK((s.topRows(2) - top).norm() < 1e-14);
    CHECK((s.bottomRows(2) - bottom).norm() < 1e-14);
}

TEST_CASE("shape and index errors are reported") {
    Tape t(false);
    Var a = t.constant(Matrix::Zero(2, 3));
    Var b = t.constant(Matrix::Zero(3, 2));
    CHECK_THROWS_AS(add(a, b), ShapeError);
    CHECK_THROWS_AS(matmul(a, a), ShapeError);
    const std::array<int, 1> bad{7};
    CHECK_THROWS_AS(gather_rows(a, bad), InputError);
}

TEST_CASE("gradients accumulate across uses of one parameter") {
    Parameter p{"p", Matrix::Constant(1, 1, 3.0)};
    Tape t;
    Var x = t.param(p);
    Var y = mul(x, x);  // x^2
    t.backward(add(y, x));
    CHECK(p.grad(0, 0) == doctest::Approx(7.0));
}

TEST_CASE("non-recording tape keeps values only") {
    Parameter p{"p", Matrix::Constant(1, 1, 2.0)};
    Tape t(false);
    Var y = exp(t.param(p));
    CHECK(y.value()(0, 0) == doctest::Approx(std::exp(2.0)));
    CHECK_FALSE(y.needs_grad());
}
