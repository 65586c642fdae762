#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "mnp/autodiff.hpp"
#include "mnp/tensor.hpp"

namespace mnp {

enum class Similarity { Rbf, Dot };
enum class Normalisation { Softmax, Sparsemax };
// How the adaptive kernel scales coordinate differences: (x-x')/l^2 is the
// default; the conventional (x-x')/l reading sits behind a switch.
enum class RbfScaling { SquaredLengthscale, PlainLengthscale };

struct AttentionConfig {
  Similarity similarity = Similarity::Rbf;
  Normalisation normalisation = Normalisation::Sparsemax;
  RbfScaling rbf_scaling = RbfScaling::SquaredLengthscale;
};

// Adaptive-lengthscale RBF similarity between query rows and key rows:
//   kernel[i,j] = exp(-0.5 * sum_d ((q[i,d]-k[j,d]) * l[d]^-p)^2)
// with p = 2 (default) or 1.  One learnable lengthscale per coordinate.
// Fused op: forward and all three gradients run in plain loops.
inline Var rbf_kernel(const Var& queries, const Var& keys,
                      const Var& lengthscale,
                      RbfScaling scaling = RbfScaling::SquaredLengthscale) {
  const Tensor& q = queries.value();
  const Tensor& k = keys.value();
  const Tensor& l = lengthscale.value();
  const std::size_t d = q.cols();
  if (k.cols() != d || l.size() != d)
    throw shape_error("rbf_kernel: feature dimensions disagree");
  if (l.min_value() <= 0.0)
    throw contract_error("rbf_kernel: lengthscale must be strictly positive");

  const std::size_t n = q.rows(), m = k.rows();
  std::vector<double> w(d);  // l^-p per coordinate
  for (std::size_t c = 0; c < d; ++c) {
    const double li = l[c];
    w[c] = scaling == RbfScaling::SquaredLengthscale ? 1.0 / (li * li) : 1.0 / li;
  }
  Tensor out({n, m});
  for (std::size_t i = 0; i < n; ++i) {
    const double* qi = &q.data()[i * d];
    for (std::size_t j = 0; j < m; ++j) {
      const double* kj = &k.data()[j * d];
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        const double z = (qi[c] - kj[c]) * w[c];
        s += z * z;
      }
      out.at(i, j) = std::exp(-0.5 * s);
    }
  }

  const double p = scaling == RbfScaling::SquaredLengthscale ? 2.0 : 1.0;
  return detail::make_node(
      std::move(out), {queries, keys, lengthscale},
      [queries, keys, lengthscale, w, p, n, m, d](Node& node) {
        const Tensor& q = queries.value();
        const Tensor& k = keys.value();
        const Tensor& l = lengthscale.value();
        // d/dl of -0.5*(diff*l^-p)^2 is p*diff^2*l^(-2p-1)
        std::vector<double> lfac(d);
        for (std::size_t c = 0; c < d; ++c)
          lfac[c] = p * std::pow(l[c], -2.0 * p - 1.0);
        Tensor gq({n, d}), gk({m, d}), gl(l.shape());
        for (std::size_t i = 0; i < n; ++i) {
          const double* qi = &q.data()[i * d];
          for (std::size_t j = 0; j < m; ++j) {
            const double* kj = &k.data()[j * d];
            const double gk_ij = node.grad.at(i, j) * node.value.at(i, j);
            if (gk_ij == 0.0) continue;
            for (std::size_t c = 0; c < d; ++c) {
              const double diff = qi[c] - kj[c];
              const double dq = -gk_ij * diff * w[c] * w[c];
              gq.at(i, c) += dq;
              gk.at(j, c) -= dq;
              gl[c] += gk_ij * diff * diff * lfac[c];
            }
          }
        }
        if (queries.requires_grad()) detail::accumulate(*queries.node(), gq);
        if (keys.requires_grad()) detail::accumulate(*keys.node(), gk);
        if (lengthscale.requires_grad())
          detail::accumulate(*lengthscale.node(), gl);
      });
}

namespace detail {

struct SparsemaxRow {
  std::vector<std::uint8_t> support;  // one flag per row element, row-major
  std::vector<std::size_t> sizes;     // support cardinality per row
};

}  // namespace detail

// Row-wise Euclidean projection onto the probability simplex
// (argmin_p ||p - z||^2 s.t. p on the simplex), via the sorted-threshold
// characterisation.  The threshold is recomputed by summing support entries
// in ascending index order so results are reproducible bit for bit.
inline Var sparsemax_rows(const Var& scores) {
  const Tensor& z = scores.value();
  const std::size_t rows = z.rows(), cols = z.cols();
  if (cols == 0) throw shape_error("sparsemax_rows: empty rows");
  Tensor out(z.shape());
  auto info = std::make_shared<detail::SparsemaxRow>();
  info->support.assign(rows * cols, 0);
  info->sizes.assign(rows, 0);

  std::vector<std::size_t> order(cols);
  for (std::size_t i = 0; i < rows; ++i) {
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      const double za = z.at(i, a), zb = z.at(i, b);
      return za != zb ? za > zb : a < b;  // descending value, ties by index
    });
    double cumsum = 0.0;
    std::size_t k = 0;
    for (std::size_t r = 0; r < cols; ++r) {
      const double zr = z.at(i, order[r]);
      cumsum += zr;
      if (1.0 + static_cast<double>(r + 1) * zr > cumsum) k = r + 1;
    }
    // support = the k largest entries; threshold from an index-ordered sum
    for (std::size_t r = 0; r < k; ++r) info->support[i * cols + order[r]] = 1;
    info->sizes[i] = k;
    double ssum = 0.0;
    for (std::size_t j = 0; j < cols; ++j)
      if (info->support[i * cols + j]) ssum += z.at(i, j);
    const double tau = (ssum - 1.0) / static_cast<double>(k);
    for (std::size_t j = 0; j < cols; ++j)
      out.at(i, j) =
          info->support[i * cols + j] ? std::max(z.at(i, j) - tau, 0.0) : 0.0;
  }

  return detail::make_node(
      std::move(out), {scores}, [scores, info, rows, cols](Node& n) {
        if (!scores.requires_grad()) return;
        // Jacobian on the support: identity minus uniform averaging; zero off
        Tensor g(scores.value().shape());
        for (std::size_t i = 0; i < rows; ++i) {
          double s = 0.0;
          for (std::size_t j = 0; j < cols; ++j)
            if (info->support[i * cols + j]) s += n.grad.at(i, j);
          s /= static_cast<double>(info->sizes[i]);
          for (std::size_t j = 0; j < cols; ++j)
            g.at(i, j) =
                info->support[i * cols + j] ? n.grad.at(i, j) - s : 0.0;
        }
        detail::accumulate(*scores.node(), g);
      });
}

// scaled dot-product similarity: queries·keysᵀ / sqrt(d)
inline Var dot_scores(const Var& queries, const Var& keys) {
  if (queries.value().cols() != keys.value().cols())
    throw shape_error("dot_scores: feature dimensions disagree");
  const double inv = 1.0 / std::sqrt(static_cast<double>(queries.value().cols()));
  return scale(matmul_nt(queries, keys), inv);
}

// Row-stochastic attention from targets (queries) onto context points (keys).
// RBF similarity requires a lengthscale; dot similarity must not get one.
inline Var attention_weights(const AttentionConfig& cfg, const Var& queries,
                             const Var& keys, const Var* lengthscale) {
  Var scores;
  if (cfg.similarity == Similarity::Rbf) {
    if (lengthscale == nullptr || !lengthscale->defined())
      throw config_error("attention: rbf similarity needs a lengthscale");
    scores = rbf_kernel(queries, keys, *lengthscale, cfg.rbf_scaling);
  } else {
    scores = dot_scores(queries, keys);
  }
  return cfg.normalisation == Normalisation::Softmax ? softmax_rows(scores)
                                                     : sparsemax_rows(scores);
}

}  // namespace mnp
