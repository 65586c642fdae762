#pragma once

#include <cmath>
#include <vector>

#include "mnp/autodiff.hpp"
#include "mnp/tensor.hpp"

namespace mnp {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction.  A step with any non-finite gradient is rejected
// before any state is touched, so optimiser state and parameters stay valid.
class Adam {
 public:
  Adam(std::vector<Var> params, AdamConfig cfg = {})
      : params_(std::move(params)), cfg_(cfg) {
    for (const Var& p : params_) {
      m_.emplace_back(p.value().shape());
      v_.emplace_back(p.value().shape());
    }
  }

  void step() {
    std::vector<Tensor> grads;
    grads.reserve(params_.size());
    for (const Var& p : params_) {
      grads.push_back(p.grad_or_zero());
      if (!grads.back().all_finite())
        throw numeric_error("adam: non-finite gradient, step rejected");
    }
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      Tensor& p = params_[k].mutable_value();
      const Tensor& g = grads[k];
      for (std::size_t i = 0; i < p.size(); ++i) {
        m_[k][i] = cfg_.beta1 * m_[k][i] + (1.0 - cfg_.beta1) * g[i];
        v_[k][i] = cfg_.beta2 * v_[k][i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        const double mhat = m_[k][i] / c1;
        const double vhat = v_[k][i] / c2;
        p[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
  }

  void zero_grad() {
    for (Var& p : params_) p.zero_grad();
  }

  long steps_taken() const { return t_; }

 private:
  std::vector<Var> params_;
  std::vector<Tensor> m_, v_;
  AdamConfig cfg_;
  long t_ = 0;
};

}  // namespace mnp
