#pragma once

// SGD with momentum (L2 weight decay) and Adam. Each optimizer owns its
// parameter group and per-parameter slots; step() consumes the gradients
// accumulated by the last backward pass and clears them.

#include <cmath>
#include <string>
#include <vector>

#include "srdc/errors.hpp"
#include "srdc/tensor.hpp"

namespace srdc {

namespace detail {
inline void check_grad_finite(const std::vector<double>& g, const char* who) {
  for (double x : g)
    if (!std::isfinite(x))
      throw numerical_error(std::string(who) + ": non-finite gradient; aborting run");
}
}  // namespace detail

class SgdMomentum {
 public:
  SgdMomentum(std::vector<Tensor> params, double lr, double momentum = 0.9,
              double weight_decay = 0.0)
      : params_(std::move(params)), lr_(lr), momentum_(momentum), weight_decay_(weight_decay) {
    detail::require(lr > 0.0, "sgd: learning rate must be positive");
    detail::require(weight_decay >= 0.0, "sgd: weight decay must be nonnegative");
    for (const Tensor& p : params_) velocity_.emplace_back(p.size(), 0.0);
  }

  void set_lr(double lr) {
    detail::require(lr > 0.0, "sgd: learning rate must be positive");
    lr_ = lr;
  }
  double lr() const { return lr_; }

  void step() {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto g = params_[i].grad();
      detail::check_grad_finite(g, "sgd");
      auto& v = velocity_[i];
      auto& x = params_[i].mutable_values();
      for (std::size_t j = 0; j < x.size(); ++j) {
        const double grad = g[j] + weight_decay_ * x[j];
        v[j] = momentum_ * v[j] + grad;
        x[j] -= lr_ * v[j];
      }
      params_[i].zero_grad();
    }
  }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> velocity_;
  double lr_, momentum_, weight_decay_;
};

class Adam {
 public:
  explicit Adam(std::vector<Tensor> params, double lr = 1e-3, double beta1 = 0.9,
                double beta2 = 0.999, double eps = 1e-8)
      : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    detail::require(lr > 0.0, "adam: learning rate must be positive");
    for (const Tensor& p : params_) {
      m_.emplace_back(p.size(), 0.0);
      v_.emplace_back(p.size(), 0.0);
    }
  }

  void set_lr(double lr) {
    detail::require(lr > 0.0, "adam: learning rate must be positive");
    lr_ = lr;
  }
  long step_count() const { return t_; }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto g = params_[i].grad();
      detail::check_grad_finite(g, "adam");
      auto& m = m_[i];
      auto& v = v_[i];
      auto& x = params_[i].mutable_values();
      for (std::size_t j = 0; j < x.size(); ++j) {
        m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
        v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
        const double mhat = m[j] / bc1;
        const double vhat = v[j] / bc2;
        x[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
      }
      params_[i].zero_grad();
    }
  }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
};

}  // namespace srdc
