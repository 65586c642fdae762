#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "mnp/aggregation.hpp"
#include "mnp/attention.hpp"
#include "mnp/autodiff.hpp"
#include "mnp/config.hpp"
#include "mnp/context_memory.hpp"
#include "mnp/data.hpp"
#include "mnp/optim.hpp"
#include "mnp/rng.hpp"
#include "mnp/tensor.hpp"

namespace mnp {

// Shared across the unified and all unimodal prediction paths.
struct DecoderMlp {
  Linear fc1, fc2;
  double slope = 0.01;

  static DecoderMlp init(std::size_t d_e, std::size_t num_classes, double slope,
                         Rng& rng) {
    DecoderMlp d;
    d.fc1 = Linear::init(d_e, d_e, rng, std::sqrt(2.0));
    d.fc2 = Linear::init(d_e, num_classes, rng);
    d.slope = slope;
    return d;
  }

  Var operator()(const Var& z) const { return fc2(leaky_relu(fc1(z), slope)); }

  void collect(std::vector<std::pair<std::string, Var>>& out,
               const std::string& prefix) const {
    fc1.collect(out, prefix + ".fc1");
    fc2.collect(out, prefix + ".fc2");
  }
};

// Trainable front end for raw synthetic inputs: a linear projection into the
// working width followed by residual rectified blocks.  Feature-space
// datasets skip it entirely.
struct FeatureExtractor {
  Linear proj;
  std::vector<Linear> blocks;

  static FeatureExtractor init(std::size_t in, std::size_t width, Rng& rng,
                               std::size_t depth = 6) {
    FeatureExtractor f;
    f.proj = Linear::init(in, width, rng);
    f.blocks.reserve(depth);
    for (std::size_t i = 0; i < depth; ++i)
      f.blocks.push_back(Linear::init(width, width, rng, std::sqrt(2.0)));
    return f;
  }

  Var operator()(const Var& x) const {
    Var h = proj(x);
    for (const Linear& b : blocks) h = add(h, relu(b(h)));
    return h;
  }

  void collect(std::vector<std::pair<std::string, Var>>& out,
               const std::string& prefix) const {
    proj.collect(out, prefix + ".proj");
    for (std::size_t i = 0; i < blocks.size(); ++i)
      blocks[i].collect(out, prefix + ".block" + std::to_string(i));
  }
};

// Pre-drawn reparameterisation noise.  Keeping the draws explicit makes a
// forward pass a pure function of (parameters, batch, noise), which the
// finite-difference checks rely on.
struct McNoise {
  std::vector<Tensor> unified;                // S of [n x d_e]
  std::vector<std::vector<Tensor>> unimodal;  // M x S of [n x d_e]

  static McNoise draw(std::size_t modalities, std::size_t samples,
                      std::size_t n, std::size_t d_e, Rng& rng) {
    if (samples == 0) throw contract_error("mc sampling needs >= 1 draw");
    McNoise out;
    out.unified.reserve(samples);
    for (std::size_t s = 0; s < samples; ++s)
      out.unified.push_back(rng.normal_tensor(n, d_e));
    out.unimodal.resize(modalities);
    for (std::size_t m = 0; m < modalities; ++m)
      for (std::size_t s = 0; s < samples; ++s)
        out.unimodal[m].push_back(rng.normal_tensor(n, d_e));
    return out;
  }
};

// One step's loss components.  total = task + beta * rbf while the kernel
// loss is active; with it disabled, rbf records the penalty trajectory only
// and total excludes it.
struct LossReport {
  double total = 0.0;
  double task = 0.0;     // unified + modality-averaged unimodal NLL
  double rbf = 0.0;      // contrastive average + lengthscale penalty
  double penalty = 0.0;  // lengthscale penalty alone
  std::vector<double> contrastive;  // per modality
};

struct Prediction {
  Tensor probs;                   // [n x K] unified, rows sum to 1
  std::vector<Tensor> unimodal;   // per modality [n x K]
  std::vector<Tensor> draws;      // unified per-sample probabilities
  std::vector<Tensor> attention;  // per modality [n x slots]
};

// Mean true-class log-probability with the floor applied before the log.
inline Var mean_true_logprob(const Var& probs, const Tensor& labels_onehot) {
  if (!probs.value().same_shape(labels_onehot))
    throw shape_error("log-likelihood: probs " + probs.value().shape_string() +
                      " vs labels " + labels_onehot.shape_string());
  const double n = static_cast<double>(probs.value().rows());
  Var logp = log(clamp_min(probs, 1e-12));
  return scale(sum_all(mul(logp, constant(labels_onehot))), 1.0 / n);
}

// Joint task loss: negative mean true-class log-probability of the unified
// prediction plus the modality-averaged unimodal terms.
inline Var nll_loss(const Var& unified_probs,
                    const std::vector<Var>& unimodal_probs,
                    const Tensor& labels_onehot) {
  if (unimodal_probs.empty())
    throw contract_error("nll_loss needs at least one unimodal prediction");
  Var unified_ll = mean_true_logprob(unified_probs, labels_onehot);
  Var unimodal_ll;
  for (std::size_t m = 0; m < unimodal_probs.size(); ++m) {
    Var ll = mean_true_logprob(unimodal_probs[m], labels_onehot);
    unimodal_ll = m == 0 ? ll : add(unimodal_ll, ll);
  }
  return neg(add(unified_ll,
                 scale(unimodal_ll,
                       1.0 / static_cast<double>(unimodal_probs.size()))));
}

// Supervised contrastive loss of one modality over kernel similarities
// kappa(i,j)/tau: per anchor, log of the all-others denominator minus the
// mean positive similarity.  Anchors without a same-label partner are
// skipped; a single-row batch contributes nothing.
inline Var supervised_contrastive(const Var& features,
                                  const Tensor& labels_onehot,
                                  const Var& lengthscale, RbfScaling scaling,
                                  double tau) {
  if (tau <= 0.0) throw contract_error("contrastive loss: tau must be > 0");
  const std::size_t n = features.value().rows();
  if (n < 2) return constant(Tensor::scalar(0.0));

  std::vector<std::size_t> cls(n);
  for (std::size_t i = 0; i < n; ++i) cls[i] = argmax_row(labels_onehot, i);

  Var sims = scale(rbf_kernel(features, features, lengthscale, scaling),
                   1.0 / tau);

  Tensor others({n, n}), positives({n, n});
  Tensor anchor_on({n, 1}), inv_pos({n, 1});
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t pos = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      others.at(i, j) = 1.0;
      if (cls[j] == cls[i]) {
        positives.at(i, j) = 1.0;
        ++pos;
      }
    }
    if (pos > 0) {
      anchor_on.at(i, 0) = 1.0;
      inv_pos.at(i, 0) = 1.0 / static_cast<double>(pos);
    }
  }

  // detached per-row maxima keep the exp within range without entering the
  // gradient (constant shift under log-sum-exp)
  const Tensor& sv = sims.value();
  Tensor shift({n, n}), shift_col({n, 1});
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -1e300;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i && sv.at(i, j) > mx) mx = sv.at(i, j);
    shift_col.at(i, 0) = mx;
    for (std::size_t j = 0; j < n; ++j) shift.at(i, j) = mx;
  }

  Var masked_exp = mul(exp(sub(sims, constant(shift))), constant(others));
  Var log_denom = add(log(sum_per_row(masked_exp)), constant(shift_col));
  Var pos_mean = mul(sum_per_row(mul(sims, constant(positives))),
                     constant(inv_pos));
  return sub(sum_all(mul(log_denom, constant(anchor_on))), sum_all(pos_mean));
}

// alpha * (1/M) * sum_m ||l^m||_2
inline Var lengthscale_penalty(const std::vector<Var>& lengthscales,
                               double alpha) {
  if (lengthscales.empty())
    throw contract_error("lengthscale penalty: no lengthscales");
  Var acc;
  for (std::size_t m = 0; m < lengthscales.size(); ++m) {
    Var norm = sqrt(sum_all(square(lengthscales[m])));
    acc = m == 0 ? norm : add(acc, norm);
  }
  return scale(acc, alpha / static_cast<double>(lengthscales.size()));
}

// The full classifier: per-modality front ends, context encoders and
// attention over the dynamic context memory, Gaussian fusion (or a baseline
// aggregator), a shared decoder, and the training losses.
class MnpModel {
 public:
  MnpModel(ExperimentConfig cfg, std::vector<std::size_t> raw_dims,
           std::size_t num_classes)
      : cfg_(std::move(cfg)),
        raw_dims_(std::move(raw_dims)),
        num_classes_(num_classes),
        memory_rng_(Rng(cfg_.seed).child(1)),
        noise_rng_(Rng(cfg_.seed).child(2)) {
    cfg_.validate();
    if (raw_dims_.empty())
      throw contract_error("model needs at least one modality");
    if (num_classes_ < 2) throw contract_error("model needs >= 2 classes");
    if (cfg_.n_context % num_classes_ != 0)
      throw config_error("n_context must be divisible by the class count");

    Rng init_rng = Rng(cfg_.seed).child(0);
    const bool rbf = cfg_.similarity_kind() == Similarity::Rbf;
    for (std::size_t m = 0; m < raw_dims_.size(); ++m) {
      if (cfg_.feature_extractor)
        extractors_.push_back(
            FeatureExtractor::init(raw_dims_[m], cfg_.extractor_dim, init_rng));
      encoders_.push_back(EncoderSet::init(feature_dim(m), num_classes_,
                                           cfg_.d_e, cfg_.leaky_slope,
                                           init_rng));
      if (rbf)
        lengthscales_.push_back(parameter(
            Tensor::full({feature_dim(m)}, cfg_.lengthscale_init)));
    }
    decoder_ = DecoderMlp::init(cfg_.d_e, num_classes_, cfg_.leaky_slope,
                                init_rng);
    if (cfg_.aggregation_kind() == Aggregation::Concat)
      concat_mlp_ = ConcatMlp::init(raw_dims_.size(), cfg_.d_e,
                                    cfg_.leaky_slope, init_rng);

    std::vector<Var> params;
    for (auto& [name, v] : named_parameters()) params.push_back(v);
    optimizer_ = std::make_unique<Adam>(
        std::move(params), AdamConfig{cfg_.learning_rate, 0.9, 0.999, 1e-8});
  }

  std::size_t modalities() const { return raw_dims_.size(); }
  std::size_t num_classes() const { return num_classes_; }
  std::size_t per_class() const { return cfg_.n_context / num_classes_; }
  std::size_t feature_dim(std::size_t m) const {
    return cfg_.feature_extractor ? cfg_.extractor_dim : raw_dims_[m];
  }
  const std::vector<std::size_t>& raw_dims() const { return raw_dims_; }
  const ExperimentConfig& config() const { return cfg_; }
  ContextMemory& memory() { return memory_; }
  const ContextMemory& memory() const { return memory_; }
  void set_memory(ContextMemory m) { memory_ = std::move(m); }
  Adam& optimizer() { return *optimizer_; }
  const std::vector<Var>& lengthscales() const { return lengthscales_; }

  void init_memory(const MultimodalBatch& train) {
    if (train.modalities() != modalities())
      throw shape_error("memory init: modality count mismatch");
    memory_ = ContextMemory::init_random(train.features, train.labels,
                                         per_class(), memory_rng_);
  }

  struct ModelForward {
    Var unified_probs;                // [n x K]
    std::vector<Var> unimodal_probs;  // per modality [n x K]
    std::vector<Var> attention;       // per modality [n x slots]
    std::vector<Var> target_features; // per modality, post-front-end
    std::vector<Tensor> draws;        // unified per-sample probabilities
    std::vector<GaussianVar> unimodal_posteriors;  // per modality
    GaussianVar fused;  // defined only on the Bayes-aggregation path
  };

  // Per modality: front end, context encoding over the memory, attention,
  // target-specific representation, single-modality posterior and its
  // sampled prediction; then the unified path through fusion (or baseline
  // aggregation).  With `noise == nullptr` fresh training noise is drawn.
  ModelForward forward(const MultimodalBatch& batch, std::size_t samples,
                       const McNoise* noise) {
    if (batch.modalities() != modalities())
      throw shape_error("forward: modality count mismatch");
    if (memory_.modalities() == 0)
      throw contract_error("forward: memory not initialised");

    McNoise local;
    if (noise == nullptr) {
      local = McNoise::draw(modalities(), samples, batch.size(), cfg_.d_e,
                            noise_rng_);
      noise = &local;
    }

    const AttentionConfig att_cfg = cfg_.attention_config();
    Var ctx_labels = constant(memory_.labels_onehot());
    std::vector<ModalityPosterior> posteriors;
    ModelForward out;
    for (std::size_t m = 0; m < modalities(); ++m) {
      if (batch.features[m].cols() != raw_dims_[m])
        throw shape_error("forward: modality " + std::to_string(m) +
                          " expects width " + std::to_string(raw_dims_[m]));
      Var target_raw = constant(batch.features[m]);
      Var context_raw = constant(memory_.features(m));
      Var target = cfg_.feature_extractor ? extractors_[m](target_raw)
                                          : target_raw;
      Var context = cfg_.feature_extractor ? extractors_[m](context_raw)
                                           : context_raw;

      ContextEncoding enc = encode_context(encoders_[m], context, ctx_labels);
      const Var* ls =
          lengthscales_.empty() ? nullptr : &lengthscales_[m];
      Var att = attention_weights(att_cfg, target, context, ls);
      Var r_star = target_specific(att, enc.point_mean);
      Var s_star = target_specific(att, enc.point_var);
      posteriors.push_back({r_star, s_star, enc.prior_mean, enc.prior_var});

      GaussianVar single = fuse_gaussian({posteriors.back()});
      out.unimodal_probs.push_back(
          mc_average(single, noise->unimodal[m], nullptr));
      out.unimodal_posteriors.push_back(single);
      out.attention.push_back(att);
      out.target_features.push_back(target);
    }

    if (cfg_.aggregation_kind() == Aggregation::Bayes) {
      out.fused = fuse_gaussian(posteriors);
      out.unified_probs = mc_average(out.fused, noise->unified, &out.draws);
    } else {
      std::vector<Var> means;
      means.reserve(posteriors.size());
      for (const ModalityPosterior& p : posteriors) means.push_back(p.mean);
      const ConcatMlp* mlp =
          cfg_.aggregation_kind() == Aggregation::Concat ? &concat_mlp_
                                                         : nullptr;
      Var z = aggregate_baseline(cfg_.aggregation_kind(), means, mlp);
      out.unified_probs = softmax_rows(decoder_(z));
      out.draws.push_back(out.unified_probs.value());
    }
    return out;
  }

  struct LossBundle {
    Var total;
    LossReport report;
    ModelForward fw;
  };

  LossBundle compute_losses(const MultimodalBatch& batch, std::size_t samples,
                            const McNoise* noise) {
    LossBundle out;
    out.fw = forward(batch, samples, noise);
    const double m_count = static_cast<double>(modalities());

    Var task = nll_loss(out.fw.unified_probs, out.fw.unimodal_probs,
                        batch.labels);
    Var total = task;

    out.report.task = task.value()[0];
    if (!lengthscales_.empty()) {
      Var penalty = lengthscale_penalty(lengthscales_, cfg_.alpha);
      out.report.penalty = penalty.value()[0];
      if (cfg_.rbf_loss) {
        Var contrast;
        for (std::size_t m = 0; m < modalities(); ++m) {
          Var c = supervised_contrastive(out.fw.target_features[m],
                                         batch.labels, lengthscales_[m],
                                         cfg_.rbf_scaling_kind(), cfg_.tau);
          out.report.contrastive.push_back(c.value()[0]);
          contrast = m == 0 ? c : add(contrast, c);
        }
        Var rbf = add(scale(contrast, 1.0 / m_count), penalty);
        out.report.rbf = rbf.value()[0];
        total = add(task, scale(rbf, cfg_.beta));
      } else {
        out.report.rbf = out.report.penalty;  // recorded, not optimised
      }
    }
    out.total = total;
    out.report.total = total.value()[0];
    return out;
  }

  // Optimise with the total loss, then refresh the memory from this batch
  // using the forward pass's (pre-step) attention and unimodal predictions.
  LossReport train_step(const MultimodalBatch& batch) {
    optimizer_->zero_grad();
    LossBundle lb = compute_losses(batch, cfg_.mc_samples, nullptr);
    if (!lb.total.value().all_finite())
      throw numeric_error("training step aborted: non-finite loss");
    backward(lb.total);
    optimizer_->step();
    clamp_lengthscales();

    std::vector<Tensor> att, probs;
    att.reserve(modalities());
    probs.reserve(modalities());
    for (std::size_t m = 0; m < modalities(); ++m) {
      att.push_back(lb.fw.attention[m].value());
      probs.push_back(lb.fw.unimodal_probs[m].value());
    }
    memory_.update(batch.features, batch.labels, att, probs,
                   cfg_.memory_strategy_kind(), cfg_.memory_scope_kind());
    return lb.report;
  }

  Prediction predict(const MultimodalBatch& batch, std::size_t samples,
                     Rng& rng) {
    NoGradGuard no_grad;
    McNoise noise =
        McNoise::draw(modalities(), samples, batch.size(), cfg_.d_e, rng);
    ModelForward fw = forward(batch, samples, &noise);
    Prediction p;
    p.probs = fw.unified_probs.value();
    for (std::size_t m = 0; m < modalities(); ++m) {
      p.unimodal.push_back(fw.unimodal_probs[m].value());
      p.attention.push_back(fw.attention[m].value());
    }
    p.draws = std::move(fw.draws);
    return p;
  }

  // Fixed order: per-modality front end, encoders and lengthscale, then the
  // decoder and (when present) the concat head.  Checkpoints rely on it.
  std::vector<std::pair<std::string, Var>> named_parameters() const {
    std::vector<std::pair<std::string, Var>> out;
    for (std::size_t m = 0; m < raw_dims_.size(); ++m) {
      const std::string tag = "m" + std::to_string(m);
      if (cfg_.feature_extractor)
        extractors_[m].collect(out, tag + ".extractor");
      encoders_[m].collect(out, tag + ".encoders");
      if (!lengthscales_.empty())
        out.emplace_back(tag + ".lengthscale", lengthscales_[m]);
    }
    decoder_.collect(out, "decoder");
    if (cfg_.aggregation_kind() == Aggregation::Concat)
      concat_mlp_.collect(out, "concat_mlp");
    return out;
  }

  // keeps every lengthscale coordinate strictly positive after a step
  void clamp_lengthscales(double floor = 1e-6) {
    for (Var& l : lengthscales_) {
      Tensor& v = l.mutable_value();
      for (std::size_t i = 0; i < v.size(); ++i)
        if (v[i] < floor) v[i] = floor;
    }
  }

  Rng& noise_rng() { return noise_rng_; }

 private:
  Var mc_average(const GaussianVar& g, const std::vector<Tensor>& noise,
                 std::vector<Tensor>* draws) {
    if (noise.empty()) throw contract_error("mc sampling needs >= 1 draw");
    Var sd = sqrt(g.var);
    Var acc;
    for (std::size_t s = 0; s < noise.size(); ++s) {
      Var z = add(g.mean, mul(sd, constant(noise[s])));
      Var p = softmax_rows(decoder_(z));
      if (draws) draws->push_back(p.value());
      acc = s == 0 ? p : add(acc, p);
    }
    return scale(acc, 1.0 / static_cast<double>(noise.size()));
  }

  ExperimentConfig cfg_;
  std::vector<std::size_t> raw_dims_;
  std::size_t num_classes_ = 0;
  std::vector<FeatureExtractor> extractors_;
  std::vector<EncoderSet> encoders_;
  std::vector<Var> lengthscales_;
  DecoderMlp decoder_;
  ConcatMlp concat_mlp_;
  ContextMemory memory_;
  std::unique_ptr<Adam> optimizer_;
  Rng memory_rng_;
  Rng noise_rng_;
};

}  // namespace mnp
