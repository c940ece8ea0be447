#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "dccl/errors.hpp"
#include "dccl/nn.hpp"

namespace dccl {

enum class OptKind { Sgd, Adam };

inline std::string opt_kind_name(OptKind k) { return k == OptKind::Sgd ? "sgd" : "adam"; }

inline void check_grads(const std::vector<Parameter*>& params) {
  for (const Parameter* p : params) {
    if (!p->frozen && !p->value.has_grad()) {
      throw ContractError("optimizer step: missing gradient on a non-frozen parameter");
    }
  }
}

// p <- p - lr * g. Frozen parameters are skipped entirely.
inline void sgd_step(const std::vector<Parameter*>& params, double lr) {
  check_grads(params);
  for (Parameter* p : params) {
    if (p->frozen) continue;
    double* v = p->value.data.data();
    const double* g = p->value.grad.data();
    for (int64_t i = 0; i < p->numel(); ++i) v[i] -= lr * g[i];
  }
}

// Bias-corrected Adam. Moment buffers are held per parameter slot and sized on
// the first step; the parameter list must stay stable across steps.
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(const std::vector<Parameter*>& params) {
    check_grads(params);
    if (m_.empty()) {
      m_.resize(params.size());
      v_.resize(params.size());
      for (size_t s = 0; s < params.size(); ++s) {
        m_[s].assign(static_cast<size_t>(params[s]->numel()), 0.0);
        v_[s].assign(static_cast<size_t>(params[s]->numel()), 0.0);
      }
    }
    if (m_.size() != params.size()) throw ContractError("adam: parameter list changed between steps");
    ++step_count_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_count_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_count_));
    for (size_t s = 0; s < params.size(); ++s) {
      Parameter* p = params[s];
      if (p->frozen) continue;
      if (m_[s].size() != p->value.data.size()) throw ContractError("adam: parameter shape changed between steps");
      double* val = p->value.data.data();
      const double* g = p->value.grad.data();
      double* m = m_[s].data();
      double* v = v_[s].data();
      for (int64_t i = 0; i < p->numel(); ++i) {
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        val[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

  int64_t step_count() const { return step_count_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  int64_t step_count_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// Uniform front-end used by the trainers.
class Optimizer {
 public:
  Optimizer(OptKind kind, double lr) : kind_(kind), lr_(lr), adam_(lr) {}

  void step(const std::vector<Parameter*>& params) {
    if (kind_ == OptKind::Sgd) {
      sgd_step(params, lr_);
      ++sgd_steps_;
    } else {
      adam_.step(params);
    }
  }

  int64_t step_count() const { return kind_ == OptKind::Sgd ? sgd_steps_ : adam_.step_count(); }
  OptKind kind() const { return kind_; }

 private:
  OptKind kind_;
  double lr_;
  int64_t sgd_steps_ = 0;
  Adam adam_;
};

}  // namespace dccl
