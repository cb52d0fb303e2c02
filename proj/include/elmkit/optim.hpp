#pragma once

#include <cmath>
#include <vector>

#include "elmkit/common.hpp"
#include "elmkit/nn.hpp"

namespace elmkit::optim {

// Layerwise adaptive rate scaling: per-tensor local lr = lr * ||w|| /
// (||g + wd*w|| + eps). Bias and normalization parameters are excluded from
// both the adaptation and the weight decay.
class Lars {
 public:
  explicit Lars(std::vector<nn::Param*> params, double weight_decay = 1e-4, double momentum = 0.9,
                double trust_eps = 1e-9)
      : params_(std::move(params)), weight_decay_(weight_decay), momentum_(momentum), trust_eps_(trust_eps) {
    for (auto* p : params_) velocity_.emplace_back(p->value.shape);
  }

  void step(double lr) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      nn::Param& p = *params_[i];
      NDArray& vel = velocity_[i];
      const double wd = p.norm_or_bias ? 0.0 : weight_decay_;
      double gnorm2 = 0.0, wnorm2 = 0.0;
      for (std::size_t j = 0; j < p.value.v.size(); ++j) {
        const double g = p.grad.v[j];
        if (!std::isfinite(g))
          throw RuntimeError(concat("non-finite gradient in parameter '", p.name, "' at index ", j));
        const double ga = g + wd * p.value.v[j];
        gnorm2 += ga * ga;
        wnorm2 += p.value.v[j] * p.value.v[j];
      }
      double local_lr = lr;
      if (!p.norm_or_bias) {
        const double wn = std::sqrt(wnorm2), gn = std::sqrt(gnorm2);
        local_lr = (wn > 0.0 && gn > 0.0) ? lr * wn / (gn + trust_eps_) : lr;
      }
      for (std::size_t j = 0; j < p.value.v.size(); ++j) {
        const double ga = p.grad.v[j] + wd * p.value.v[j];
        vel.v[j] = momentum_ * vel.v[j] + local_lr * ga;
        p.value.v[j] -= vel.v[j];
      }
    }
  }

 private:
  std::vector<nn::Param*> params_;
  double weight_decay_, momentum_, trust_eps_;
  std::vector<NDArray> velocity_;
};

class Adam {
 public:
  explicit Adam(std::vector<nn::Param*> params, double lr = 1e-3, double weight_decay = 0.0,
                double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : params_(std::move(params)), lr_(lr), weight_decay_(weight_decay), beta1_(beta1), beta2_(beta2),
        eps_(eps) {
    for (auto* p : params_) {
      m_.emplace_back(p->value.shape);
      v_.emplace_back(p->value.shape);
    }
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      nn::Param& p = *params_[i];
      const double wd = p.norm_or_bias ? 0.0 : weight_decay_;
      for (std::size_t j = 0; j < p.value.v.size(); ++j) {
        const double g = p.grad.v[j] + wd * p.value.v[j];
        if (!std::isfinite(g))
          throw RuntimeError(concat("non-finite gradient in parameter '", p.name, "'"));
        m_[i].v[j] = beta1_ * m_[i].v[j] + (1.0 - beta1_) * g;
        v_[i].v[j] = beta2_ * v_[i].v[j] + (1.0 - beta2_) * g * g;
        p.value.v[j] -= lr_ * (m_[i].v[j] / bc1) / (std::sqrt(v_[i].v[j] / bc2) + eps_);
      }
    }
  }

 private:
  std::vector<nn::Param*> params_;
  double lr_, weight_decay_, beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
  std::vector<NDArray> m_, v_;
};

// Linear warmup to peak = base_lr * batch_size / 256 over the warmup epochs,
// then cosine decay to zero at the final epoch.
struct LrSchedule {
  double base_lr = 0.06;
  std::int64_t batch_size = 256;
  std::int64_t warmup_epochs = 4;
  std::int64_t epochs = 50;
  std::int64_t steps_per_epoch = 1;

  double peak() const { return base_lr * static_cast<double>(batch_size) / 256.0; }

  double lr_at(std::int64_t step) const {
    const std::int64_t warm = warmup_epochs * steps_per_epoch;
    const std::int64_t total = epochs * steps_per_epoch;
    require(step >= 0 && step <= total, "lr_at: step outside the training horizon");
    if (warm > 0 && step < warm) return peak() * static_cast<double>(step) / static_cast<double>(warm);
    if (total <= warm) return peak();
    const double t = static_cast<double>(step - warm) / static_cast<double>(total - warm);
    return peak() * 0.5 * (1.0 + std::cos(M_PI * t));
  }
};

}  // namespace elmkit::optim
