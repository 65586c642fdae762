#pragma once

#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include <json.hpp>

#include "mnp/aggregation.hpp"
#include "mnp/attention.hpp"
#include "mnp/context_memory.hpp"
#include "mnp/tensor.hpp"

namespace mnp {

enum class UncertaintyKind { Entropy, McVariance };

// Everything a run needs, serialisable as flat JSON.  Unknown keys are
// rejected so typos fail loudly instead of silently using defaults.
struct ExperimentConfig {
  // dataset
  std::string dataset = "moons";  // moons | moons-views | feature-files
  std::size_t n_train = 1000;
  std::size_t n_test = 200;
  double moons_noise = 0.15;
  std::size_t views = 2;      // modality count for moons-views
  double view_noise = 0.05;
  std::vector<std::string> feature_paths;  // one CSV per modality
  std::string labels_path;
  double split_ratio = 0.8;

  // model
  std::size_t d_e = 128;
  std::size_t mc_samples = 5;
  bool feature_extractor = true;  // synthetic datasets only
  std::size_t extractor_dim = 128;
  double leaky_slope = 0.01;

  // attention
  std::string similarity = "rbf";            // rbf | dot
  std::string normalisation = "sparsemax";   // softmax | sparsemax
  std::string rbf_scaling = "squared";       // squared | plain
  double lengthscale_init = 10.0;

  // context memory
  std::size_t n_context = 100;  // total slots, divisible by the class count
  std::string memory_strategy = "mse";  // mse | ce | fifo | random | frozen
  std::string memory_scope = "class-consistent";  // class-consistent | literal

  // aggregation and losses
  std::string aggregation = "bayes";  // bayes | mean | concat
  bool rbf_loss = true;
  double alpha = 1.0;
  double beta = 1.0;
  double tau = 0.1;

  // training
  std::size_t epochs = 500;
  std::size_t batch_size = 200;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;

  // evaluation extras
  std::string uncertainty = "entropy";  // entropy | mc-variance
  std::string ood = "shifted-moons";    // shifted-moons | copy | feature-files
  double ood_shift = 10.0;
  std::vector<std::string> ood_paths;
  std::size_t grid_nx = 100;
  std::size_t grid_ny = 100;
  double grid_pad = 1.0;
  std::vector<std::vector<double>> probes;  // grid probe points [x, y]

  Similarity similarity_kind() const {
    if (similarity == "rbf") return Similarity::Rbf;
    if (similarity == "dot") return Similarity::Dot;
    throw config_error("unknown similarity: " + similarity);
  }
  Normalisation normalisation_kind() const {
    if (normalisation == "softmax") return Normalisation::Softmax;
    if (normalisation == "sparsemax") return Normalisation::Sparsemax;
    throw config_error("unknown normalisation: " + normalisation);
  }
  RbfScaling rbf_scaling_kind() const {
    if (rbf_scaling == "squared") return RbfScaling::SquaredLengthscale;
    if (rbf_scaling == "plain") return RbfScaling::PlainLengthscale;
    throw config_error("unknown rbf_scaling: " + rbf_scaling);
  }
  AttentionConfig attention_config() const {
    return {similarity_kind(), normalisation_kind(), rbf_scaling_kind()};
  }
  MemoryStrategy memory_strategy_kind() const {
    if (memory_strategy == "mse") return MemoryStrategy::Mse;
    if (memory_strategy == "ce") return MemoryStrategy::Ce;
    if (memory_strategy == "fifo") return MemoryStrategy::Fifo;
    if (memory_strategy == "random") return MemoryStrategy::Random;
    if (memory_strategy == "frozen") return MemoryStrategy::Frozen;
    throw config_error("unknown memory_strategy: " + memory_strategy);
  }
  MemoryScope memory_scope_kind() const {
    if (memory_scope == "class-consistent") return MemoryScope::ClassConsistent;
    if (memory_scope == "literal") return MemoryScope::Literal;
    throw config_error("unknown memory_scope: " + memory_scope);
  }
  Aggregation aggregation_kind() const {
    if (aggregation == "bayes") return Aggregation::Bayes;
    if (aggregation == "mean") return Aggregation::Mean;
    if (aggregation == "concat") return Aggregation::Concat;
    throw config_error("unknown aggregation: " + aggregation);
  }
  UncertaintyKind uncertainty_kind() const {
    if (uncertainty == "entropy") return UncertaintyKind::Entropy;
    if (uncertainty == "mc-variance") return UncertaintyKind::McVariance;
    throw config_error("unknown uncertainty: " + uncertainty);
  }

  void validate() const {
    attention_config();
    memory_strategy_kind();
    memory_scope_kind();
    aggregation_kind();
    uncertainty_kind();
    if (dataset != "moons" && dataset != "moons-views" &&
        dataset != "feature-files")
      throw config_error("unknown dataset: " + dataset);
    if (ood != "shifted-moons" && ood != "copy" && ood != "feature-files")
      throw config_error("unknown ood: " + ood);
    if (dataset == "feature-files" && feature_paths.empty())
      throw config_error("feature-files dataset needs feature_paths");
    if (dataset == "feature-files" && labels_path.empty())
      throw config_error("feature-files dataset needs labels_path");
    if (n_context == 0) throw config_error("n_context must be positive");
    if (batch_size == 0) throw config_error("batch_size must be positive");
    if (mc_samples == 0) throw config_error("mc_samples must be positive");
    if (d_e == 0) throw config_error("d_e must be positive");
    if (tau <= 0.0) throw config_error("tau must be positive");
    if (learning_rate <= 0.0) throw config_error("learning_rate must be positive");
    if (lengthscale_init <= 0.0)
      throw config_error("lengthscale_init must be positive");
    if (split_ratio <= 0.0 || split_ratio >= 1.0)
      throw config_error("split_ratio must lie in (0, 1)");
    if (moons_noise < 0.0 || view_noise < 0.0)
      throw config_error("noise levels must be non-negative");
    if (dataset == "moons-views" && views < 2)
      throw config_error("moons-views needs at least two views");
    for (const auto& p : probes)
      if (p.size() != 2) throw config_error("probes must be [x, y] pairs");
    if (uncertainty == "mc-variance" && mc_samples < 2)
      throw config_error("mc-variance needs at least two samples");
  }
};

namespace detail {

template <typename T>
void read_key(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

inline nlohmann::json config_to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["dataset"] = c.dataset;
  j["n_train"] = c.n_train;
  j["n_test"] = c.n_test;
  j["moons_noise"] = c.moons_noise;
  j["views"] = c.views;
  j["view_noise"] = c.view_noise;
  j["feature_paths"] = c.feature_paths;
  j["labels_path"] = c.labels_path;
  j["split_ratio"] = c.split_ratio;
  j["d_e"] = c.d_e;
  j["mc_samples"] = c.mc_samples;
  j["feature_extractor"] = c.feature_extractor;
  j["extractor_dim"] = c.extractor_dim;
  j["leaky_slope"] = c.leaky_slope;
  j["similarity"] = c.similarity;
  j["normalisation"] = c.normalisation;
  j["rbf_scaling"] = c.rbf_scaling;
  j["lengthscale_init"] = c.lengthscale_init;
  j["n_context"] = c.n_context;
  j["memory_strategy"] = c.memory_strategy;
  j["memory_scope"] = c.memory_scope;
  j["aggregation"] = c.aggregation;
  j["rbf_loss"] = c.rbf_loss;
  j["alpha"] = c.alpha;
  j["beta"] = c.beta;
  j["tau"] = c.tau;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["learning_rate"] = c.learning_rate;
  j["seed"] = c.seed;
  j["uncertainty"] = c.uncertainty;
  j["ood"] = c.ood;
  j["ood_shift"] = c.ood_shift;
  j["ood_paths"] = c.ood_paths;
  j["grid_nx"] = c.grid_nx;
  j["grid_ny"] = c.grid_ny;
  j["grid_pad"] = c.grid_pad;
  j["probes"] = c.probes;
  return j;
}

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  const nlohmann::json known = config_to_json(c);
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.contains(it.key()))
      throw config_error("unknown config key: " + it.key());
  using detail::read_key;
  read_key(j, "dataset", c.dataset);
  read_key(j, "n_train", c.n_train);
  read_key(j, "n_test", c.n_test);
  read_key(j, "moons_noise", c.moons_noise);
  read_key(j, "views", c.views);
  read_key(j, "view_noise", c.view_noise);
  read_key(j, "feature_paths", c.feature_paths);
  read_key(j, "labels_path", c.labels_path);
  read_key(j, "split_ratio", c.split_ratio);
  read_key(j, "d_e", c.d_e);
  read_key(j, "mc_samples", c.mc_samples);
  read_key(j, "feature_extractor", c.feature_extractor);
  read_key(j, "extractor_dim", c.extractor_dim);
  read_key(j, "leaky_slope", c.leaky_slope);
  read_key(j, "similarity", c.similarity);
  read_key(j, "normalisation", c.normalisation);
  read_key(j, "rbf_scaling", c.rbf_scaling);
  read_key(j, "lengthscale_init", c.lengthscale_init);
  read_key(j, "n_context", c.n_context);
  read_key(j, "memory_strategy", c.memory_strategy);
  read_key(j, "memory_scope", c.memory_scope);
  read_key(j, "aggregation", c.aggregation);
  read_key(j, "rbf_loss", c.rbf_loss);
  read_key(j, "alpha", c.alpha);
  read_key(j, "beta", c.beta);
  read_key(j, "tau", c.tau);
  read_key(j, "epochs", c.epochs);
  read_key(j, "batch_size", c.batch_size);
  read_key(j, "learning_rate", c.learning_rate);
  read_key(j, "seed", c.seed);
  read_key(j, "uncertainty", c.uncertainty);
  read_key(j, "ood", c.ood);
  read_key(j, "ood_shift", c.ood_shift);
  read_key(j, "ood_paths", c.ood_paths);
  read_key(j, "grid_nx", c.grid_nx);
  read_key(j, "grid_ny", c.grid_ny);
  read_key(j, "grid_pad", c.grid_pad);
  read_key(j, "probes", c.probes);
  return c;
}

// FNV-1a over the canonical (alphabetically keyed) JSON dump
inline std::string config_hash(const ExperimentConfig& c) {
  const std::string dump = config_to_json(c).dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : dump) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(h));
  return std::string(buf);
}

}  // namespace mnp
