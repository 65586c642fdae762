#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "mnp/autodiff.hpp"
#include "mnp/rng.hpp"
#include "mnp/tensor.hpp"

namespace mnp {

enum class Aggregation { Bayes, Mean, Concat };

struct Linear {
  Var w, b;  // [in x out], [1 x out]

  static Linear init(std::size_t in, std::size_t out, Rng& rng,
                     double gain = 1.0) {
    Linear l;
    const double std = gain / std::sqrt(static_cast<double>(in));
    l.w = parameter(rng.normal_tensor(in, out, std));
    l.b = parameter(Tensor({1, out}));
    return l;
  }

  Var operator()(const Var& x) const { return add(matmul(x, w), b); }

  void collect(std::vector<std::pair<std::string, Var>>& out,
               const std::string& prefix) const {
    out.emplace_back(prefix + ".w", w);
    out.emplace_back(prefix + ".b", b);
  }
};

// Two fully connected layers with a leaky rectifier between them, a
// normalisation layer with learnable affine on top.  Variance-style encoders
// finish with 0.01 + 0.99*softplus so outputs stay strictly above 0.01.
struct EncoderMlp {
  Linear fc1, fc2;
  Var ln_gain, ln_bias;
  bool positive = false;
  double slope = 0.01;

  static EncoderMlp init(std::size_t in, std::size_t out, bool positive,
                         double slope, Rng& rng) {
    EncoderMlp e;
    e.fc1 = Linear::init(in, out, rng, std::sqrt(2.0));
    e.fc2 = Linear::init(out, out, rng);
    e.ln_gain = parameter(Tensor::full({1, out}, 1.0));
    e.ln_bias = parameter(Tensor({1, out}));
    e.positive = positive;
    e.slope = slope;
    return e;
  }

  Var operator()(const Var& x) const {
    Var h = fc2(leaky_relu(fc1(x), slope));
    Var n = add(mul(layer_norm_rows(h), ln_gain), ln_bias);
    if (!positive) return n;
    return offset(scale(softplus(n), 0.99), 0.01);
  }

  void collect(std::vector<std::pair<std::string, Var>>& out,
               const std::string& prefix) const {
    fc1.collect(out, prefix + ".fc1");
    fc2.collect(out, prefix + ".fc2");
    out.emplace_back(prefix + ".ln_gain", ln_gain);
    out.emplace_back(prefix + ".ln_bias", ln_bias);
  }
};

// The four context encoders of one modality: per-point mean and variance
// heads plus the two prior heads whose outputs are averaged over the memory.
struct EncoderSet {
  EncoderMlp point_mean, point_var, prior_mean, prior_var;

  static EncoderSet init(std::size_t feat_dim, std::size_t num_classes,
                         std::size_t d_e, double slope, Rng& rng) {
    const std::size_t in = feat_dim + num_classes;
    EncoderSet s;
    s.point_mean = EncoderMlp::init(in, d_e, false, slope, rng);
    s.point_var = EncoderMlp::init(in, d_e, true, slope, rng);
    s.prior_mean = EncoderMlp::init(in, d_e, false, slope, rng);
    s.prior_var = EncoderMlp::init(in, d_e, true, slope, rng);
    return s;
  }

  void collect(std::vector<std::pair<std::string, Var>>& out,
               const std::string& prefix) const {
    point_mean.collect(out, prefix + ".point_mean");
    point_var.collect(out, prefix + ".point_var");
    prior_mean.collect(out, prefix + ".prior_mean");
    prior_var.collect(out, prefix + ".prior_var");
  }
};

// Per-modality functional representation of the encoded context:
// point_* rows align with memory slots, prior_* are single-row averages.
struct ContextEncoding {
  Var point_mean;  // [N x d_e]
  Var point_var;   // [N x d_e], > 0
  Var prior_mean;  // [1 x d_e]
  Var prior_var;   // [1 x d_e], > 0
};

// context rows enter every encoder as cat[features ; one-hot labels]
inline ContextEncoding encode_context(const EncoderSet& enc,
                                      const Var& ctx_features,
                                      const Var& ctx_labels) {
  if (ctx_features.value().rows() != ctx_labels.value().rows())
    throw shape_error("encode_context: feature/label row mismatch");
  Var in = concat_cols({ctx_features, ctx_labels});
  return ContextEncoding{
      enc.point_mean(in),
      enc.point_var(in),
      mean_over_rows(enc.prior_mean(in)),
      mean_over_rows(enc.prior_var(in)),
  };
}

// attention-weighted mixture of per-point context rows; attention rows are
// convex weights, so outputs stay in the convex hull of the encodings
inline Var target_specific(const Var& attention, const Var& point_encoding) {
  return matmul(attention, point_encoding);
}

// target-aligned Gaussian over the latent class representation
struct GaussianVar {
  Var mean;  // [N x d_e]
  Var var;   // [N x d_e], > 0
};

struct ModalityPosterior {
  Var mean;       // r* [N x d_e]
  Var var;        // s* [N x d_e]
  Var prior_mean; // u  [1 x d_e]
  Var prior_var;  // q  [1 x d_e]
};

// Precision-weighted product of per-modality Gaussian factors: posterior
// precision is the sum of all likelihood and prior precisions, the mean is
// the matching precision-weighted combination.  All elementwise.
inline GaussianVar fuse_gaussian(const std::vector<ModalityPosterior>& mods) {
  if (mods.empty()) throw contract_error("fuse_gaussian: no modalities");
  for (const ModalityPosterior& m : mods) {
    if (m.var.value().min_value() <= 0.0 ||
        m.prior_var.value().min_value() <= 0.0)
      throw contract_error("fuse_gaussian: variances must be positive");
  }
  Var precision, weighted;
  for (std::size_t m = 0; m < mods.size(); ++m) {
    Var inv_s = reciprocal(mods[m].var);
    Var inv_q = reciprocal(mods[m].prior_var);
    Var p = add(inv_s, inv_q);  // [N x d_e] + [1 x d_e] broadcast
    Var w = add(mul(mods[m].mean, inv_s), mul(mods[m].prior_mean, inv_q));
    precision = m == 0 ? p : add(precision, p);
    weighted = m == 0 ? w : add(weighted, w);
  }
  GaussianVar out;
  out.var = reciprocal(precision);
  out.mean = mul(out.var, weighted);
  return out;
}

// MLP head for the concatenation baseline
struct ConcatMlp {
  Linear fc1, fc2;
  double slope = 0.01;

  static ConcatMlp init(std::size_t modalities, std::size_t d_e, double slope,
                        Rng& rng) {
    ConcatMlp c;
    c.fc1 = Linear::init(modalities * d_e, d_e, rng, std::sqrt(2.0));
    c.fc2 = Linear::init(d_e, d_e, rng);
    c.slope = slope;
    return c;
  }

  void collect(std::vector<std::pair<std::string, Var>>& out,
               const std::string& prefix) const {
    fc1.collect(out, prefix + ".fc1");
    fc2.collect(out, prefix + ".fc2");
  }
};

// Deterministic aggregation baselines over the target-specific means.
// Mean averages; Concat feeds the feature-dim concatenation through an MLP.
inline Var aggregate_baseline(Aggregation kind, const std::vector<Var>& means,
                              const ConcatMlp* mlp) {
  if (means.empty()) throw contract_error("aggregate_baseline: no modalities");
  if (kind == Aggregation::Mean) {
    Var acc = means[0];
    for (std::size_t m = 1; m < means.size(); ++m) acc = add(acc, means[m]);
    return scale(acc, 1.0 / static_cast<double>(means.size()));
  }
  if (kind == Aggregation::Concat) {
    if (mlp == nullptr)
      throw contract_error("aggregate_baseline: concat needs its mlp");
    return mlp->fc2(leaky_relu(mlp->fc1(concat_cols(means)), mlp->slope));
  }
  throw contract_error("aggregate_baseline: bayes fusion is not a baseline");
}

}  // namespace mnp
