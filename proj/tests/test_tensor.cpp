#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

#include "mnp/autodiff.hpp"
#include "mnp/optim.hpp"
#include "mnp/rng.hpp"
#include "mnp/tensor.hpp"
#include "test_util.hpp"

using namespace mnp;
using testutil::matmul_ref;
using testutil::max_rel_grad_error;
using testutil::random_tensor;

TEST_CASE("matmul: hand case and oracle agreement") {
  Var a(Tensor::matrix(2, 2, {1, 2, 3, 4}));
  Var b(Tensor::matrix(2, 1, {1, 1}));
  Tensor c = matmul(a, b).value();
  REQUIRE(c.at(0, 0) == 3.0);
  REQUIRE(c.at(1, 0) == 7.0);

  Rng rng(42);
  for (int trial = 0; trial < 20; ++trial) {
    std::size_t n = 1 + rng.integer(6), k = 1 + rng.integer(6),
                m = 1 + rng.integer(6);
    Tensor x = random_tensor(n, k, rng), y = random_tensor(k, m, rng);
    Tensor got = matmul_values(x, y);
    Tensor ref = matmul_ref(x, y);
    REQUIRE(max_abs_diff(got, ref) < 1e-13);

    Tensor got_nt = matmul_nt_values(x, testutil::transpose_ref(y));
    REQUIRE(max_abs_diff(got_nt, ref) < 1e-13);
    Tensor got_tn = matmul_tn_values(testutil::transpose_ref(x), y);
    REQUIRE(max_abs_diff(got_tn, ref) < 1e-13);
  }
}

TEST_CASE("matmul: rejects mismatched shapes") {
  Var a(Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6}));
  Var b(Tensor::matrix(2, 2, {1, 0, 0, 1}));
  REQUIRE_THROWS_AS(matmul(a, b), shape_error);
}

TEST_CASE("matmul: gradients match finite differences") {
  Rng rng(7);
  Tensor x = random_tensor(3, 4, rng), y = random_tensor(4, 2, rng);
  double err = max_rel_grad_error(
      [](std::vector<Var>& leaves) {
        return sum_all(square(matmul(leaves[0], leaves[1])));
      },
      {x, y});
  REQUIRE(err < 1e-6);
}

TEST_CASE("broadcast: single row spreads across all rows") {
  // loop oracle for [2x3] * [1x3]
  Tensor a = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
  Tensor b = Tensor::row({10, 20, 30});
  Tensor got = mul(Var(a), Var(b)).value();
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      REQUIRE(got.at(i, j) == a.at(i, j) * b.at(0, j));

  // gradient of the broadcast operand sums over rows
  Var bb(b, true);
  Var s = sum_all(mul(Var(a), bb));
  backward(s);
  for (std::size_t j = 0; j < 3; ++j)
    REQUIRE(bb.grad().at(0, j) == a.at(0, j) + a.at(1, j));
}

TEST_CASE("broadcast: rank-1 operand behaves as a row") {
  Tensor a = Tensor::matrix(2, 2, {1, 2, 3, 4});
  Var v(Tensor::vec({2, 3}), true);
  Tensor got = add(Var(a), v).value();
  REQUIRE(got.at(1, 0) == 5.0);
  backward(sum_all(mul(Var(a), v)));
  REQUIRE(v.grad().shape() == std::vector<std::size_t>{2});
  REQUIRE(v.grad()[0] == 4.0);
  REQUIRE(v.grad()[1] == 6.0);
}

TEST_CASE("activations: fixed points") {
  REQUIRE(softplus(Var(Tensor::scalar(0.0))).value()[0] ==
          Catch::Approx(std::log(2.0)).epsilon(1e-12));
  REQUIRE(leaky_relu(Var(Tensor::scalar(-1.0)), 0.01).value()[0] ==
          Catch::Approx(-0.01).margin(1e-15));
  REQUIRE(leaky_relu(Var(Tensor::scalar(2.5)), 0.01).value()[0] == 2.5);
  REQUIRE(relu(Var(Tensor::scalar(-3.0))).value()[0] == 0.0);
}

TEST_CASE("softmax rows: stochastic and stable") {
  Rng rng(3);
  Tensor x = random_tensor(5, 7, rng, -30.0, 30.0);
  Tensor y = softmax_rows(Var(x)).value();
  for (std::size_t i = 0; i < 5; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < 7; ++j) {
      REQUIRE(y.at(i, j) > 0.0);
      REQUIRE(y.at(i, j) < 1.0);
      s += y.at(i, j);
    }
    REQUIRE(s == Catch::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("layer norm rows: mean zero, unit variance before affine") {
  Rng rng(11);
  Tensor x = random_tensor(4, 16, rng, -2.0, 5.0);
  Tensor y = layer_norm_rows(Var(x)).value();
  for (std::size_t i = 0; i < 4; ++i) {
    double mean = 0.0, var = 0.0;
    for (std::size_t j = 0; j < 16; ++j) mean += y.at(i, j);
    mean /= 16.0;
    for (std::size_t j = 0; j < 16; ++j)
      var += (y.at(i, j) - mean) * (y.at(i, j) - mean);
    var /= 16.0;
    REQUIRE(std::fabs(mean) < 1e-12);
    REQUIRE(var == Catch::Approx(1.0).epsilon(1e-8));
  }
}

TEST_CASE("unary and reduction gradients match finite differences") {
  Rng rng(19);
  Tensor x = random_tensor(3, 5, rng, 0.3, 2.0);

  auto check = [&](std::function<Var(std::vector<Var>&)> f) {
    REQUIRE(max_rel_grad_error(f, {x}) < 1e-6);
  };

  check([](std::vector<Var>& v) { return sum_all(exp(v[0])); });
  check([](std::vector<Var>& v) { return sum_all(log(v[0])); });
  check([](std::vector<Var>& v) { return sum_all(sqrt(v[0])); });
  check([](std::vector<Var>& v) { return sum_all(reciprocal(v[0])); });
  check([](std::vector<Var>& v) { return sum_all(softplus(v[0])); });
  check([](std::vector<Var>& v) { return sum_all(square(softmax_rows(v[0]))); });
  check([](std::vector<Var>& v) { return sum_all(square(layer_norm_rows(v[0]))); });
  check([](std::vector<Var>& v) {
    return sum_all(mul(mean_over_rows(v[0]), mean_over_rows(v[0])));
  });
  check([](std::vector<Var>& v) { return sum_all(square(sum_per_row(v[0]))); });
}

TEST_CASE("concat over columns: values and gradients") {
  Tensor a = Tensor::matrix(2, 2, {1, 2, 3, 4});
  Tensor b = Tensor::matrix(2, 1, {5, 6});
  Var va(a, true), vb(b, true);
  Var c = concat_cols({va, vb});
  REQUIRE(c.value().cols() == 3);
  REQUIRE(c.value().at(0, 2) == 5.0);
  REQUIRE(c.value().at(1, 1) == 4.0);
  backward(sum_all(square(c)));
  REQUIRE(va.grad().at(1, 1) == 8.0);
  REQUIRE(vb.grad().at(0, 0) == 10.0);
}

TEST_CASE("backward: simple closed forms") {
  Var x(Tensor::row({1.0, -2.0, 3.0}), true);
  backward(sum_all(square(x)));
  REQUIRE(x.grad().at(0, 0) == 2.0);
  REQUIRE(x.grad().at(0, 1) == -4.0);
  REQUIRE(x.grad().at(0, 2) == 6.0);
}

TEST_CASE("backward: node with no path to the loss keeps zero gradient") {
  Var used(Tensor::scalar(2.0), true);
  Var unused(Tensor::scalar(5.0), true);
  backward(square(used));
  REQUIRE(used.grad()[0] == 4.0);
  REQUIRE(unused.grad_or_zero()[0] == 0.0);
}

TEST_CASE("backward: differentiating the same graph twice is rejected") {
  Var x(Tensor::scalar(2.0), true);
  Var loss = square(x);
  backward(loss);
  REQUIRE_THROWS_AS(backward(loss), contract_error);
}

TEST_CASE("backward: root must be scalar") {
  Var x(Tensor::row({1.0, 2.0}), true);
  REQUIRE_THROWS_AS(backward(square(x)), contract_error);
}

TEST_CASE("domain errors and non-finite propagation") {
  REQUIRE_THROWS_AS(log(Var(Tensor::scalar(0.0))), numeric_error);
  REQUIRE_THROWS_AS(log(Var(Tensor::scalar(-1.0))), numeric_error);
  REQUIRE_THROWS_AS(sqrt(Var(Tensor::scalar(-1.0))), numeric_error);

  // division by zero propagates an infinity caught by finiteness checks
  Tensor q = div(Var(Tensor::scalar(1.0)), Var(Tensor::scalar(0.0))).value();
  REQUIRE_FALSE(q.all_finite());
}

TEST_CASE("no-grad mode skips taping") {
  Var x(Tensor::scalar(3.0), true);
  Var y;
  {
    NoGradGuard ng;
    y = square(x);
  }
  REQUIRE_FALSE(y.requires_grad());
  REQUIRE(y.value()[0] == 9.0);
}

TEST_CASE("adam: first step with unit gradient moves by ~lr") {
  Var p(Tensor::scalar(1.0), true);
  Adam opt({p}, {.lr = 0.1});
  backward(p * 1.0);  // d(loss)/dp = 1
  opt.step();
  REQUIRE(p.value()[0] == Catch::Approx(0.9).margin(1e-6));
}

TEST_CASE("adam: identical runs stay bitwise identical") {
  auto run = [] {
    Var p(Tensor::row({0.5, -0.3}), true);
    Adam opt({p}, {.lr = 0.01});
    for (int i = 0; i < 10; ++i) {
      opt.zero_grad();
      backward(sum_all(square(square(p))));
      opt.step();
    }
    return p.value();
  };
  REQUIRE(bitwise_equal(run(), run()));
}

TEST_CASE("adam: non-finite gradient rejects the step and leaves state intact") {
  Var p(Tensor::scalar(2.0), true);
  Adam opt({p}, {});
  backward(div(Var(Tensor::scalar(1.0)), p * 0.0) * p);
  REQUIRE_THROWS_AS(opt.step(), numeric_error);
  REQUIRE(p.value()[0] == 2.0);
  REQUIRE(opt.steps_taken() == 0);
}

TEST_CASE("deterministic rng: same seed, same stream") {
  Rng a(123), b(123);
  for (int i = 0; i < 100; ++i) REQUIRE(a.normal() == b.normal());
  Rng c = Rng(5).child(1), d = Rng(5).child(2);
  REQUIRE(c.raw() != d.raw());
}
