#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>
#include <vector>

#include "mnp/attention.hpp"
#include "mnp/rng.hpp"
#include "test_util.hpp"

using namespace mnp;
using testutil::max_rel_grad_error;
using testutil::random_tensor;

namespace {

// Exhaustive-support oracle for the simplex projection: try every candidate
// support subset, solve the equality-constrained problem on it, keep the
// feasible solution with the smallest distance to the input.  Sums run in
// ascending index order to match the implementation bit for bit.
std::vector<double> sparsemax_qp_ref(const std::vector<double>& z) {
  const std::size_t n = z.size();
  double best_obj = std::numeric_limits<double>::infinity();
  std::vector<double> best(n, 0.0);
  for (std::uint32_t mask = 1; mask < (1u << n); ++mask) {
    double sum = 0.0;
    std::size_t k = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (mask & (1u << i)) {
        sum += z[i];
        ++k;
      }
    const double tau = (sum - 1.0) / static_cast<double>(k);
    std::vector<double> p(n, 0.0);
    bool feasible = true;
    for (std::size_t i = 0; i < n; ++i)
      if (mask & (1u << i)) {
        if (z[i] - tau < 0.0) {
          feasible = false;
          break;
        }
        p[i] = std::max(z[i] - tau, 0.0);
      }
    if (!feasible) continue;
    double obj = 0.0;
    for (std::size_t i = 0; i < n; ++i) obj += (p[i] - z[i]) * (p[i] - z[i]);
    if (obj < best_obj) {
      best_obj = obj;
      best = p;
    }
  }
  return best;
}

Tensor sparsemax_row(const std::vector<double>& z) {
  return sparsemax_rows(Var(Tensor::row(z))).value();
}

}  // namespace

TEST_CASE("rbf kernel: fixed values") {
  auto kval = [](double q, double k, double l, RbfScaling s) {
    return rbf_kernel(Var(Tensor::matrix(1, 1, {q})),
                      Var(Tensor::matrix(1, 1, {k})), Var(Tensor::vec({l})), s)
        .value()[0];
  };
  REQUIRE(kval(0, 0, 3.7, RbfScaling::SquaredLengthscale) == 1.0);
  REQUIRE(kval(0, 1, 1, RbfScaling::SquaredLengthscale) ==
          Catch::Approx(std::exp(-0.5)).epsilon(1e-14));
  // wide lengthscale flattens the kernel towards 1
  REQUIRE(kval(0, 1, 10, RbfScaling::SquaredLengthscale) ==
          Catch::Approx(std::exp(-0.5e-4)).epsilon(1e-14));
  // the two scaling conventions genuinely differ for l != 1
  REQUIRE(kval(0, 1, 2, RbfScaling::SquaredLengthscale) ==
          Catch::Approx(std::exp(-0.5 / 16.0)).epsilon(1e-14));
  REQUIRE(kval(0, 1, 2, RbfScaling::PlainLengthscale) ==
          Catch::Approx(std::exp(-0.5 / 4.0)).epsilon(1e-14));
}

TEST_CASE("rbf kernel: symmetric in its arguments and decaying with distance") {
  Rng rng(21);
  Tensor a = random_tensor(4, 3, rng), b = random_tensor(5, 3, rng);
  Var l(Tensor::full({3}, 1.3));
  Tensor kab = rbf_kernel(Var(a), Var(b), l).value();
  Tensor kba = rbf_kernel(Var(b), Var(a), l).value();
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 5; ++j)
      REQUIRE(kab.at(i, j) == kba.at(j, i));

  double prev = 2.0;
  for (double dist = 0.0; dist < 5.0; dist += 0.5) {
    double v = rbf_kernel(Var(Tensor::matrix(1, 1, {0.0})),
                          Var(Tensor::matrix(1, 1, {dist})),
                          Var(Tensor::vec({1.0})))
                   .value()[0];
    REQUIRE(v < prev);
    REQUIRE(v <= 1.0);
    REQUIRE(v > 0.0);
    prev = v;
  }
}

TEST_CASE("rbf kernel: gradients for queries, keys and lengthscale") {
  Rng rng(33);
  Tensor q = random_tensor(3, 4, rng), k = random_tensor(5, 4, rng);
  Tensor l = random_tensor(1, 4, rng, 0.5, 2.0);
  l = Tensor({4}, l.data());
  for (RbfScaling s :
       {RbfScaling::SquaredLengthscale, RbfScaling::PlainLengthscale}) {
    double err = max_rel_grad_error(
        [s](std::vector<Var>& v) {
          return sum_all(square(rbf_kernel(v[0], v[1], v[2], s)));
        },
        {q, k, l});
    REQUIRE(err < 1e-6);
  }
}

TEST_CASE("rbf kernel: contract violations") {
  Var q(Tensor::matrix(1, 2, {0, 0})), k(Tensor::matrix(1, 2, {1, 1}));
  REQUIRE_THROWS_AS(rbf_kernel(q, k, Var(Tensor::vec({1.0, 0.0}))),
                    contract_error);
  REQUIRE_THROWS_AS(rbf_kernel(q, k, Var(Tensor::vec({1.0, -2.0}))),
                    contract_error);
  REQUIRE_THROWS_AS(rbf_kernel(q, k, Var(Tensor::vec({1.0}))), shape_error);
}

TEST_CASE("sparsemax: hand cases") {
  Tensor a = sparsemax_row({1.2, 0.8});
  REQUIRE(a.at(0, 0) == Catch::Approx(0.7).margin(1e-15));
  REQUIRE(a.at(0, 1) == Catch::Approx(0.3).margin(1e-15));

  Tensor b = sparsemax_row({3.0, 1.0, 0.1});
  REQUIRE(b.at(0, 0) == 1.0);
  REQUIRE(b.at(0, 1) == 0.0);
  REQUIRE(b.at(0, 2) == 0.0);

  // all-equal scores project to the uniform distribution
  Tensor c = sparsemax_row({0.4, 0.4, 0.4, 0.4});
  for (std::size_t j = 0; j < 4; ++j)
    REQUIRE(c.at(0, j) == Catch::Approx(0.25).margin(1e-15));
}

TEST_CASE("sparsemax: matches the exhaustive-support projection oracle") {
  Rng rng(101);
  for (int trial = 0; trial < 1000; ++trial) {
    std::size_t n = 2 + rng.integer(5);  // dims 2..6
    std::vector<double> z(n);
    for (double& x : z) x = rng.uniform(-3.0, 3.0);
    Tensor got = sparsemax_row(z);
    std::vector<double> ref = sparsemax_qp_ref(z);
    for (std::size_t j = 0; j < n; ++j) REQUIRE(got.at(0, j) == ref[j]);
  }
}

TEST_CASE("sparsemax: rows are probability vectors, invariant to shifts") {
  Rng rng(55);
  Tensor z = random_tensor(40, 8, rng, -4.0, 4.0);
  Tensor p = sparsemax_rows(Var(z)).value();
  Tensor z_shift = z;
  for (std::size_t i = 0; i < 40; ++i) {
    double c = rng.uniform(-100.0, 100.0);
    for (std::size_t j = 0; j < 8; ++j) z_shift.at(i, j) += c;
  }
  Tensor p_shift = sparsemax_rows(Var(z_shift)).value();
  for (std::size_t i = 0; i < 40; ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < 8; ++j) {
      REQUIRE(p.at(i, j) >= 0.0);
      sum += p.at(i, j);
      REQUIRE(std::fabs(p.at(i, j) - p_shift.at(i, j)) < 1e-12);
    }
    REQUIRE(std::fabs(sum - 1.0) < 1e-12);
  }
}

TEST_CASE("sparsemax: gradient is centred on the support, zero off it") {
  // support {0,1}: each backward entry is g - mean(g over support)
  Var z(Tensor::row({1.2, 0.8, -5.0}), true);
  Var p = sparsemax_rows(z);
  backward(sum_all(mul(p, Var(Tensor::row({3.0, 1.0, 7.0})))));
  REQUIRE(z.grad().at(0, 0) == Catch::Approx(1.0).margin(1e-15));
  REQUIRE(z.grad().at(0, 1) == Catch::Approx(-1.0).margin(1e-15));
  REQUIRE(z.grad().at(0, 2) == 0.0);

  // finite differences agree away from support changes
  Rng rng(77);
  Tensor zz = random_tensor(3, 5, rng, -1.0, 1.0);
  double err = max_rel_grad_error(
      [](std::vector<Var>& v) {
        return sum_all(square(sparsemax_rows(v[0])));
      },
      {zz}, 1e-6);
  REQUIRE(err < 1e-4);
}

TEST_CASE("dot attention: scaled scores with softmax reproduce the oracle") {
  // hand case: q=(1,0), keys e1,e2 -> scores (1/sqrt(2), 0)
  Tensor w = attention_weights(
                 {Similarity::Dot, Normalisation::Softmax},
                 Var(Tensor::matrix(1, 2, {1, 0})),
                 Var(Tensor::matrix(2, 2, {1, 0, 0, 1})), nullptr)
                 .value();
  const double s0 = std::exp(1.0 / std::sqrt(2.0));
  REQUIRE(w.at(0, 0) == Catch::Approx(s0 / (s0 + 1.0)).epsilon(1e-12));
  REQUIRE(w.at(0, 1) == Catch::Approx(1.0 / (s0 + 1.0)).epsilon(1e-12));

  // independent loop implementation on random inputs
  Rng rng(91);
  Tensor q = random_tensor(6, 5, rng), k = random_tensor(9, 5, rng);
  Tensor got = attention_weights({Similarity::Dot, Normalisation::Softmax},
                                 Var(q), Var(k), nullptr)
                   .value();
  for (std::size_t i = 0; i < 6; ++i) {
    std::vector<double> sc(9);
    double denom = 0.0;
    for (std::size_t j = 0; j < 9; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < 5; ++c) s += q.at(i, c) * k.at(j, c);
      sc[j] = std::exp(s / std::sqrt(5.0));
      denom += sc[j];
    }
    for (std::size_t j = 0; j < 9; ++j)
      REQUIRE(got.at(i, j) == Catch::Approx(sc[j] / denom).epsilon(1e-12));
  }
}

TEST_CASE("attention weights: every configuration yields row-stochastic maps") {
  Rng rng(13);
  Tensor q = random_tensor(7, 3, rng), k = random_tensor(11, 3, rng);
  Var l(Tensor::full({3}, 1.5));
  for (Similarity sim : {Similarity::Rbf, Similarity::Dot})
    for (Normalisation nm : {Normalisation::Softmax, Normalisation::Sparsemax}) {
      Tensor w =
          attention_weights({sim, nm}, Var(q), Var(k), sim == Similarity::Rbf ? &l : nullptr)
              .value();
      for (std::size_t i = 0; i < 7; ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < 11; ++j) {
          REQUIRE(w.at(i, j) >= 0.0);
          sum += w.at(i, j);
        }
        REQUIRE(sum == Catch::Approx(1.0).epsilon(1e-12));
      }
    }
}

TEST_CASE("attention weights: degenerate geometries") {
  // a single context point takes all the mass
  Var q(Tensor::matrix(1, 2, {0.3, -0.4})), k1(Tensor::matrix(1, 2, {5, 5}));
  Var l(Tensor::full({2}, 1.0));
  for (Normalisation nm : {Normalisation::Softmax, Normalisation::Sparsemax}) {
    Tensor w = attention_weights({Similarity::Rbf, nm}, q, k1, &l).value();
    REQUIRE(w.at(0, 0) == 1.0);
  }

  // a far, equidistant query spreads uniformly under rbf+sparsemax
  Tensor ring({8, 2});
  for (std::size_t j = 0; j < 8; ++j) {
    const double a = 2.0 * 3.14159265358979323846 * static_cast<double>(j) / 8.0;
    ring.at(j, 0) = std::cos(a);
    ring.at(j, 1) = std::sin(a);
  }
  Tensor far = Tensor::matrix(1, 2, {0.0, 0.0});  // centre: equidistant
  Tensor w = attention_weights({Similarity::Rbf, Normalisation::Sparsemax},
                               Var(far), Var(ring), &l)
                 .value();
  for (std::size_t j = 0; j < 8; ++j)
    REQUIRE(w.at(0, j) == Catch::Approx(0.125).margin(1e-12));
}

TEST_CASE("attention weights: rbf without a lengthscale is a config error") {
  Var q(Tensor::matrix(1, 2, {0, 0})), k(Tensor::matrix(1, 2, {1, 1}));
  REQUIRE_THROWS_AS(
      attention_weights({Similarity::Rbf, Normalisation::Softmax}, q, k, nullptr),
      config_error);
}
