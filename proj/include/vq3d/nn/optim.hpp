#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "vq3d/nn/module.hpp"

namespace vq3d::nn {

/// Adam with optional decoupled weight decay (AdamW when weight_decay > 0).
template <typename T>
class Adam {
 public:
  struct Options {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
  };

  Adam(std::vector<NamedParam<T>> params, Options opts) : params_(std::move(params)), opts_(opts) {
    for (auto& p : params_) {
      m_.emplace_back(p.var->shape());
      v_.emplace_back(p.var->shape());
    }
  }

  void set_lr(double lr) { opts_.lr = lr; }
  double lr() const { return opts_.lr; }
  int64_t steps() const { return step_; }

  void zero_grad() {
    for (auto& p : params_) p.var->zero_grad();
  }

  void step() {
    ++step_;
    const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(step_));
    for (size_t i = 0; i < params_.size(); ++i) {
      auto& var = *params_[i].var;
      const auto& g = var.grad();
      if (g.empty()) continue;
      auto& w = var.mutable_value();
      auto& m = m_[i];
      auto& v = v_[i];
      for (int64_t k = 0; k < w.size(); ++k) {
        const double gk = g[k];
        m[k] = static_cast<T>(opts_.beta1 * m[k] + (1.0 - opts_.beta1) * gk);
        v[k] = static_cast<T>(opts_.beta2 * v[k] + (1.0 - opts_.beta2) * gk * gk);
        const double mhat = m[k] / bc1;
        const double vhat = v[k] / bc2;
        double upd = mhat / (std::sqrt(vhat) + opts_.eps);
        if (opts_.weight_decay > 0) upd += opts_.weight_decay * w[k];
        w[k] = static_cast<T>(w[k] - opts_.lr * upd);
      }
    }
  }

  /// Moment estimates keyed "<param>.m" / "<param>.v", plus the step count.
  std::map<std::string, Tensor<T>*> state() {
    std::map<std::string, Tensor<T>*> out;
    for (size_t i = 0; i < params_.size(); ++i) {
      out[params_[i].name + ".m"] = &m_[i];
      out[params_[i].name + ".v"] = &v_[i];
    }
    return out;
  }
  void set_steps(int64_t s) { step_ = s; }

 private:
  std::vector<NamedParam<T>> params_;
  Options opts_;
  std::vector<Tensor<T>> m_, v_;
  int64_t step_ = 0;
};

/// SGD with classical momentum.
template <typename T>
class Sgd {
 public:
  Sgd(std::vector<NamedParam<T>> params, double lr, double momentum = 0.9, double weight_decay = 0.0)
      : params_(std::move(params)), lr_(lr), momentum_(momentum), wd_(weight_decay) {
    for (auto& p : params_) buf_.emplace_back(p.var->shape());
  }
  void set_lr(double lr) { lr_ = lr; }
  void zero_grad() {
    for (auto& p : params_) p.var->zero_grad();
  }
  void step() {
    for (size_t i = 0; i < params_.size(); ++i) {
      auto& var = *params_[i].var;
      const auto& g = var.grad();
      if (g.empty()) continue;
      auto& w = var.mutable_value();
      for (int64_t k = 0; k < w.size(); ++k) {
        const double gk = g[k] + wd_ * w[k];
        buf_[i][k] = static_cast<T>(momentum_ * buf_[i][k] + gk);
        w[k] = static_cast<T>(w[k] - lr_ * buf_[i][k]);
      }
    }
  }

 private:
  std::vector<NamedParam<T>> params_;
  double lr_, momentum_, wd_;
  std::vector<Tensor<T>> buf_;
};

/// Cosine decay from base_lr at epoch 0 to 0 at `total` epochs.
inline double cosine_lr(double base_lr, int64_t epoch, int64_t total) {
  if (total <= 0) return base_lr;
  const double t = static_cast<double>(epoch) / static_cast<double>(total);
  return 0.5 * base_lr * (1.0 + std::cos(M_PI * t));
}

}  // namespace vq3d::nn
