#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "mnp/autodiff.hpp"
#include "mnp/rng.hpp"
#include "mnp/tensor.hpp"

// Shared oracle helpers.  Everything here is written independently of the
// library internals it checks: plain loops, no reuse of the ops under test.

namespace testutil {

// Finite-difference check for a scalar function of several tensors.
// make_loss must build a fresh graph from the given leaf variables each call.
// Returns the largest relative error across every element of every input,
// with a floor on the denominator so near-zero gradients are compared
// absolutely.
inline double max_rel_grad_error(
    const std::function<mnp::Var(std::vector<mnp::Var>&)>& make_loss,
    const std::vector<mnp::Tensor>& inits, double h = 1e-5,
    double denom_floor = 1e-3) {
  using mnp::Tensor;
  using mnp::Var;

  std::vector<Var> leaves;
  for (const Tensor& t : inits) leaves.emplace_back(t, /*requires_grad=*/true);
  Var loss = make_loss(leaves);
  mnp::backward(loss);
  std::vector<Tensor> analytic;
  for (Var& v : leaves) analytic.push_back(v.grad_or_zero());

  auto eval = [&](const std::vector<Tensor>& points) {
    mnp::NoGradGuard ng;
    std::vector<Var> vars;
    for (const Tensor& t : points) vars.emplace_back(t, false);
    return make_loss(vars).value()[0];
  };

  double worst = 0.0;
  for (std::size_t k = 0; k < inits.size(); ++k) {
    for (std::size_t i = 0; i < inits[k].size(); ++i) {
      std::vector<Tensor> plus = inits, minus = inits;
      plus[k][i] += h;
      minus[k][i] -= h;
      const double fd = (eval(plus) - eval(minus)) / (2.0 * h);
      const double ad = analytic[k][i];
      const double denom =
          std::max({std::fabs(ad), std::fabs(fd), denom_floor});
      worst = std::max(worst, std::fabs(ad - fd) / denom);
    }
  }
  return worst;
}

// naive triple-loop matmul, the reference for every matmul variant
inline mnp::Tensor matmul_ref(const mnp::Tensor& a, const mnp::Tensor& b) {
  mnp::Tensor c({a.rows(), b.cols()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a.at(i, k) * b.at(k, j);
      c.at(i, j) = s;
    }
  return c;
}

inline mnp::Tensor transpose_ref(const mnp::Tensor& a) {
  mnp::Tensor t({a.cols(), a.rows()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t.at(j, i) = a.at(i, j);
  return t;
}

inline mnp::Tensor random_tensor(std::size_t r, std::size_t c, mnp::Rng& rng,
                                 double lo = -1.0, double hi = 1.0) {
  mnp::Tensor t({r, c});
  for (double& x : t.data()) x = rng.uniform(lo, hi);
  return t;
}

}  // namespace testutil
