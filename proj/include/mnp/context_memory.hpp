#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "mnp/rng.hpp"
#include "mnp/tensor.hpp"

namespace mnp {

enum class MemoryStrategy { Mse, Ce, Fifo, Random, Frozen };
// Whether the replacement target for class slot k must carry label k
// (default) or may be the single highest-error sample of the whole batch.
enum class MemoryScope { ClassConsistent, Literal };

inline std::size_t argmax_row(const Tensor& t, std::size_t i) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < t.cols(); ++j)
    if (t.at(i, j) > t.at(i, best)) best = j;
  return best;
}

// Class-partitioned context store, one feature block per modality, all blocks
// sharing the same class layout: slot i holds a sample of class i / per_class.
// Rows live in raw input space; feature extraction happens at encode time so
// stored samples never go stale as parameters move.
class ContextMemory {
 public:
  ContextMemory() = default;

  // draws per_class samples per class, the same sample indices for every
  // modality, without replacement
  static ContextMemory init_random(const std::vector<Tensor>& features,
                                   const Tensor& labels_onehot,
                                   std::size_t per_class, Rng& rng) {
    if (features.empty()) throw contract_error("context memory: no modalities");
    const std::size_t n = features[0].rows();
    const std::size_t k = labels_onehot.cols();
    if (labels_onehot.rows() != n)
      throw shape_error("context memory: label/feature row mismatch");
    if (per_class == 0)
      throw contract_error("context memory: per_class must be positive");

    std::vector<std::vector<std::size_t>> by_class(k);
    for (std::size_t i = 0; i < n; ++i)
      by_class[argmax_row(labels_onehot, i)].push_back(i);

    std::vector<std::size_t> chosen;
    for (std::size_t c = 0; c < k; ++c) {
      if (by_class[c].size() < per_class)
        throw contract_error(
            "context memory: class " + std::to_string(c) + " has only " +
            std::to_string(by_class[c].size()) + " samples, need " +
            std::to_string(per_class));
      rng.shuffle(by_class[c]);
      for (std::size_t i = 0; i < per_class; ++i)
        chosen.push_back(by_class[c][i]);
    }

    ContextMemory mem;
    mem.per_class_ = per_class;
    mem.num_classes_ = k;
    for (const Tensor& f : features) {
      if (f.rows() != n)
        throw shape_error("context memory: modality row-count mismatch");
      Tensor block({per_class * k, f.cols()});
      for (std::size_t s = 0; s < chosen.size(); ++s)
        for (std::size_t j = 0; j < f.cols(); ++j)
          block.at(s, j) = f.at(chosen[s], j);
      mem.features_.push_back(std::move(block));
    }
    mem.fifo_next_.assign(features.size(),
                          std::vector<std::size_t>(k, 0));
    return mem;
  }

  std::size_t modalities() const { return features_.size(); }
  std::size_t per_class() const { return per_class_; }
  std::size_t num_classes() const { return num_classes_; }
  std::size_t slots() const { return per_class_ * num_classes_; }
  std::size_t class_of_slot(std::size_t i) const { return i / per_class_; }

  const Tensor& features(std::size_t m) const { return features_[m]; }
  Tensor& mutable_features(std::size_t m) { return features_[m]; }

  // labels are implied by the class partition and never change
  Tensor labels_onehot() const {
    Tensor y({slots(), num_classes_});
    for (std::size_t i = 0; i < slots(); ++i) y.at(i, class_of_slot(i)) = 1.0;
    return y;
  }

  // i*: slot whose column of the attention block is least attended on
  // average; ties resolved to the lowest index
  static std::size_t least_attended_slot(const Tensor& attention,
                                         std::size_t col_begin,
                                         std::size_t col_end) {
    std::size_t best = col_begin;
    double best_mean = column_mean(attention, col_begin);
    for (std::size_t j = col_begin + 1; j < col_end; ++j) {
      const double m = column_mean(attention, j);
      if (m < best_mean) {
        best_mean = m;
        best = j;
      }
    }
    return best;
  }

  // j*: candidate with the largest per-class-averaged classification error;
  // ties resolved to the earliest candidate
  static std::size_t highest_error_target(
      const Tensor& probs, const Tensor& labels,
      const std::vector<std::size_t>& candidates, MemoryStrategy strategy) {
    if (candidates.empty())
      throw contract_error("context memory: no replacement candidates");
    std::size_t best = candidates[0];
    double best_err = prediction_error(probs, labels, candidates[0], strategy);
    for (std::size_t c = 1; c < candidates.size(); ++c) {
      const double e =
          prediction_error(probs, labels, candidates[c], strategy);
      if (e > best_err) {
        best_err = e;
        best = candidates[c];
      }
    }
    return best;
  }

  // One update after an optimiser step.  attention and unimodal_probs carry
  // the pre-step forward values; target features are raw-space rows.
  void update(const std::vector<Tensor>& target_features,
              const Tensor& target_labels,
              const std::vector<Tensor>& attention,
              const std::vector<Tensor>& unimodal_probs,
              MemoryStrategy strategy, MemoryScope scope) {
    if (strategy == MemoryStrategy::Frozen || strategy == MemoryStrategy::Random)
      return;  // random refreshes are drawn at evaluation time, not here
    if (target_features.size() != modalities() ||
        attention.size() != modalities() ||
        unimodal_probs.size() != modalities())
      throw shape_error("context memory update: modality count mismatch");

    const std::size_t n_t = target_labels.rows();
    std::vector<std::vector<std::size_t>> targets_by_class(num_classes_);
    for (std::size_t i = 0; i < n_t; ++i)
      targets_by_class[argmax_row(target_labels, i)].push_back(i);
    std::vector<std::size_t> all_targets(n_t);
    for (std::size_t i = 0; i < n_t; ++i) all_targets[i] = i;

    for (std::size_t m = 0; m < modalities(); ++m) {
      if (attention[m].rows() != n_t || attention[m].cols() != slots())
        throw shape_error("context memory update: attention shape mismatch");

      if (strategy == MemoryStrategy::Fifo) {
        // queue semantics: the newest same-class target replaces the oldest
        // slot of its class block
        for (std::size_t c = 0; c < num_classes_; ++c) {
          if (targets_by_class[c].empty()) continue;
          const std::size_t j = targets_by_class[c].back();
          const std::size_t slot = c * per_class_ + fifo_next_[m][c];
          features_[m].set_row(slot, target_features[m].row_copy(j));
          fifo_next_[m][c] = (fifo_next_[m][c] + 1) % per_class_;
        }
        continue;
      }

      if (scope == MemoryScope::Literal) {
        const std::size_t j = highest_error_target(
            unimodal_probs[m], target_labels, all_targets, strategy);
        for (std::size_t c = 0; c < num_classes_; ++c) {
          const std::size_t slot = least_attended_slot(
              attention[m], c * per_class_, (c + 1) * per_class_);
          features_[m].set_row(slot, target_features[m].row_copy(j));
        }
      } else {
        for (std::size_t c = 0; c < num_classes_; ++c) {
          if (targets_by_class[c].empty()) continue;
          const std::size_t j = highest_error_target(
              unimodal_probs[m], target_labels, targets_by_class[c], strategy);
          const std::size_t slot = least_attended_slot(
              attention[m], c * per_class_, (c + 1) * per_class_);
          features_[m].set_row(slot, target_features[m].row_copy(j));
        }
      }
    }
  }

  // class-balanced refresh from the training set; used by the random strategy
  // before each evaluation batch
  void resample(const std::vector<Tensor>& features,
                const Tensor& labels_onehot, Rng& rng) {
    ContextMemory fresh = init_random(features, labels_onehot, per_class_, rng);
    features_ = std::move(fresh.features_);
  }

 private:
  static double column_mean(const Tensor& a, std::size_t j) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i) s += a.at(i, j);
    return s / static_cast<double>(a.rows());
  }

  static double prediction_error(const Tensor& probs, const Tensor& labels,
                                 std::size_t i, MemoryStrategy strategy) {
    const std::size_t k = probs.cols();
    double e = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      if (strategy == MemoryStrategy::Mse) {
        const double d = labels.at(i, c) - probs.at(i, c);
        e += d * d;
      } else {  // cross-entropy variant
        e += -labels.at(i, c) *
             std::log(std::max(probs.at(i, c), 1e-12));
      }
    }
    return e / static_cast<double>(k);
  }

  std::size_t per_class_ = 0;
  std::size_t num_classes_ = 0;
  std::vector<Tensor> features_;
  std::vector<std::vector<std::size_t>> fifo_next_;  // per modality, per class

 public:
  // serialisation hooks
  const std::vector<std::vector<std::size_t>>& fifo_state() const {
    return fifo_next_;
  }
  static ContextMemory from_parts(std::size_t per_class,
                                  std::size_t num_classes,
                                  std::vector<Tensor> features,
                                  std::vector<std::vector<std::size_t>> fifo) {
    ContextMemory m;
    m.per_class_ = per_class;
    m.num_classes_ = num_classes;
    m.features_ = std::move(features);
    m.fifo_next_ = std::move(fifo);
    return m;
  }
};

}  // namespace mnp
