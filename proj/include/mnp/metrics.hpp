#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "mnp/tensor.hpp"

namespace mnp {

namespace detail {

inline std::size_t argmax_prob(const Tensor& probs, std::size_t i) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < probs.cols(); ++k)
    if (probs.at(i, k) > probs.at(i, best)) best = k;  // ties keep the lowest
  return best;
}

}  // namespace detail

inline double accuracy(const Tensor& probs, const Tensor& labels) {
  if (!probs.same_shape(labels))
    throw shape_error("accuracy: probs " + probs.shape_string() +
                      " vs labels " + labels.shape_string());
  if (probs.rows() == 0) throw contract_error("accuracy of an empty batch");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < probs.rows(); ++i)
    if (detail::argmax_prob(probs, i) == detail::argmax_prob(labels, i))
      ++hits;
  return static_cast<double>(hits) / static_cast<double>(probs.rows());
}

// Expected calibration error over `bins` equal-width confidence bins
// ((b-1)/B, b/B], the first bin closed at zero.  Confidence is the top
// predicted probability; empty bins contribute nothing.
inline double expected_calibration_error(const Tensor& probs,
                                         const Tensor& labels,
                                         std::size_t bins = 15) {
  if (!probs.same_shape(labels))
    throw shape_error("calibration: probs " + probs.shape_string() +
                      " vs labels " + labels.shape_string());
  if (bins == 0) throw contract_error("calibration needs >= 1 bin");
  const std::size_t n = probs.rows();
  if (n == 0) throw contract_error("calibration of an empty batch");
  std::vector<double> conf_sum(bins, 0.0), acc_sum(bins, 0.0);
  std::vector<std::size_t> count(bins, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t pred = detail::argmax_prob(probs, i);
    const double conf = probs.at(i, pred);
    std::size_t b = conf <= 0.0
                        ? 0
                        : static_cast<std::size_t>(
                              std::ceil(conf * static_cast<double>(bins))) - 1;
    b = std::min(b, bins - 1);
    conf_sum[b] += conf;
    acc_sum[b] += pred == detail::argmax_prob(labels, i) ? 1.0 : 0.0;
    ++count[b];
  }
  double ece = 0.0;
  for (std::size_t b = 0; b < bins; ++b) {
    if (count[b] == 0) continue;
    const double w = static_cast<double>(count[b]) / static_cast<double>(n);
    const double gap = acc_sum[b] / static_cast<double>(count[b]) -
                       conf_sum[b] / static_cast<double>(count[b]);
    ece += w * std::abs(gap);
  }
  return ece;
}

// Probability that a random positive outscores a random negative, ties
// counting one half.  Computed from rank sums with average ranks on ties,
// which matches the pairwise definition exactly.
inline double auroc(const std::vector<double>& positive_scores,
                    const std::vector<double>& negative_scores) {
  if (positive_scores.empty() || negative_scores.empty())
    throw contract_error("auroc needs scores from both populations");
  struct Entry {
    double score;
    bool positive;
  };
  std::vector<Entry> all;
  all.reserve(positive_scores.size() + negative_scores.size());
  for (double s : positive_scores) {
    if (!std::isfinite(s)) throw numeric_error("auroc: non-finite score");
    all.push_back({s, true});
  }
  for (double s : negative_scores) {
    if (!std::isfinite(s)) throw numeric_error("auroc: non-finite score");
    all.push_back({s, false});
  }
  std::sort(all.begin(), all.end(),
            [](const Entry& a, const Entry& b) { return a.score < b.score; });
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < all.size()) {
    std::size_t j = i;
    while (j < all.size() && all[j].score == all[i].score) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // 1-based
    for (std::size_t k = i; k < j; ++k)
      if (all[k].positive) rank_sum_pos += avg_rank;
    i = j;
  }
  const double np = static_cast<double>(positive_scores.size());
  const double nn = static_cast<double>(negative_scores.size());
  const double u = rank_sum_pos - np * (np + 1.0) / 2.0;
  return u / (np * nn);
}

// Predictive entropy per row, with 0 log 0 read as 0.
inline std::vector<double> entropy_scores(const Tensor& probs) {
  std::vector<double> out(probs.rows(), 0.0);
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    double h = 0.0;
    for (std::size_t k = 0; k < probs.cols(); ++k) {
      const double p = probs.at(i, k);
      if (p > 0.0) h -= p * std::log(p);
    }
    out[i] = h;
  }
  return out;
}

// Mean over classes of the population variance of the per-draw
// probabilities.  Needs at least two draws to say anything.
inline std::vector<double> mc_variance_scores(const std::vector<Tensor>& draws) {
  if (draws.size() < 2)
    throw contract_error("mc-variance needs at least two prediction draws");
  const std::size_t n = draws.front().rows();
  const std::size_t k = draws.front().cols();
  for (const Tensor& d : draws)
    if (d.rows() != n || d.cols() != k)
      throw shape_error("mc-variance: draws disagree on shape");
  const double s = static_cast<double>(draws.size());
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      // shifting by the first draw keeps identical draws at exactly zero
      const double ref = draws.front().at(i, c);
      double mean = 0.0;
      for (const Tensor& d : draws) mean += d.at(i, c) - ref;
      mean /= s;
      double var = 0.0;
      for (const Tensor& d : draws) {
        const double dv = d.at(i, c) - ref - mean;
        var += dv * dv;
      }
      acc += var / s;
    }
    out[i] = acc / static_cast<double>(k);
  }
  return out;
}

}  // namespace mnp
