#pragma once

#include <memory>
#include <string>
#include <vector>

#include "vq3d/autograd.hpp"
#include "vq3d/ops.hpp"
#include "vq3d/random.hpp"

namespace vq3d::nn {

template <typename T>
using Var = ag::Var<T>;

template <typename T>
struct NamedParam {
  std::string name;
  Var<T>* var;
};

template <typename T>
struct NamedBuffer {
  std::string name;
  Tensor<T>* tensor;
};

/// Base for parameterized layers. Children, parameters and buffers are
/// registered by address, so modules are neither copyable nor movable.
template <typename T>
class Module {
 public:
  Module() = default;
  virtual ~Module() = default;
  Module(const Module&) = delete;
  Module& operator=(const Module&) = delete;

  std::vector<NamedParam<T>> parameters(const std::string& prefix = "") {
    std::vector<NamedParam<T>> out;
    collect_params(prefix, out);
    return out;
  }

  std::vector<NamedBuffer<T>> buffers(const std::string& prefix = "") {
    std::vector<NamedBuffer<T>> out;
    collect_buffers(prefix, out);
    return out;
  }

  int64_t parameter_count() {
    int64_t n = 0;
    for (auto& p : parameters()) n += p.var->size();
    return n;
  }

  void train(bool on = true) {
    training_ = on;
    for (auto& [name, child] : children_) child->train(on);
  }
  void eval() { train(false); }
  bool training() const { return training_; }

  void zero_grad() {
    for (auto& p : parameters()) p.var->zero_grad();
  }

 protected:
  Var<T>& register_parameter(std::string name, Var<T>& v) {
    params_.push_back({std::move(name), &v});
    return v;
  }
  void register_buffer(std::string name, Tensor<T>& t) { buffers_.push_back({std::move(name), &t}); }
  template <typename M>
  M& register_module(std::string name, M& m) {
    children_.emplace_back(std::move(name), &m);
    return m;
  }

 private:
  void collect_params(const std::string& prefix, std::vector<NamedParam<T>>& out) {
    for (auto& p : params_) out.push_back({prefix + p.name, p.var});
    for (auto& [name, child] : children_) child->collect_params(prefix + name + ".", out);
  }
  void collect_buffers(const std::string& prefix, std::vector<NamedBuffer<T>>& out) {
    for (auto& b : buffers_) out.push_back({prefix + b.name, b.tensor});
    for (auto& [name, child] : children_) child->collect_buffers(prefix + name + ".", out);
  }

  bool training_ = true;
  std::vector<NamedParam<T>> params_;
  std::vector<NamedBuffer<T>> buffers_;
  std::vector<std::pair<std::string, Module*>> children_;
};

/// He-uniform initialization: U(-b, b) with b = gain * sqrt(3 / fan_in).
template <typename T>
Tensor<T> he_uniform(Shape shape, int64_t fan_in, Rng& rng, double gain = std::sqrt(2.0)) {
  Tensor<T> t(std::move(shape));
  const double bound = gain * std::sqrt(3.0 / static_cast<double>(fan_in));
  for (auto& v : t.values()) v = static_cast<T>(uniform(rng, -bound, bound));
  return t;
}

template <typename T>
class Conv3d : public Module<T> {
 public:
  Conv3d(int64_t in, int64_t out, const ops::ConvGeometry& geom, Rng& rng, bool bias = true, double gain = std::sqrt(2.0))
      : geom_(geom) {
    const int64_t fan_in = in * geom.kernel[0] * geom.kernel[1] * geom.kernel[2];
    weight_ = Var<T>(he_uniform<T>({out, in, geom.kernel[0], geom.kernel[1], geom.kernel[2]}, fan_in, rng, gain), true);
    this->register_parameter("weight", weight_);
    if (bias) {
      bias_ = Var<T>(Tensor<T>({out}), true);
      this->register_parameter("bias", bias_);
    }
  }

  Var<T> forward(const Var<T>& x) const { return ops::conv3d(x, weight_, bias_, geom_); }

  const ops::ConvGeometry& geometry() const { return geom_; }
  Var<T>& weight() { return weight_; }

 private:
  ops::ConvGeometry geom_;
  Var<T> weight_;
  Var<T> bias_;
};

template <typename T>
class BatchNorm : public Module<T> {
 public:
  explicit BatchNorm(int64_t channels, T momentum = T(0.1), T eps = T(1e-5))
      : gamma_(Tensor<T>({channels}, T{1}), true),
        beta_(Tensor<T>({channels}), true),
        running_mean_({channels}),
        running_var_({channels}, T{1}),
        momentum_(momentum),
        eps_(eps) {
    this->register_parameter("gamma", gamma_);
    this->register_parameter("beta", beta_);
    this->register_buffer("running_mean", running_mean_);
    this->register_buffer("running_var", running_var_);
  }

  Var<T> forward(const Var<T>& x) {
    return ops::batch_norm(x, gamma_, beta_, running_mean_, running_var_, this->training(), momentum_, eps_);
  }

 private:
  Var<T> gamma_, beta_;
  Tensor<T> running_mean_, running_var_;
  T momentum_, eps_;
};

template <typename T>
class Linear : public Module<T> {
 public:
  Linear(int64_t in, int64_t out, Rng& rng, bool bias = true, double gain = 1.0) {
    weight_ = Var<T>(he_uniform<T>({out, in}, in, rng, gain), true);
    this->register_parameter("weight", weight_);
    if (bias) {
      bias_ = Var<T>(Tensor<T>({out}), true);
      this->register_parameter("bias", bias_);
    }
  }
  Var<T> forward(const Var<T>& x) const { return ops::linear(x, weight_, bias_); }

 private:
  Var<T> weight_, bias_;
};

template <typename T>
class LayerNorm : public Module<T> {
 public:
  explicit LayerNorm(int64_t dim, T eps = T(1e-5))
      : gamma_(Tensor<T>({dim}, T{1}), true), beta_(Tensor<T>({dim}), true), eps_(eps) {
    this->register_parameter("gamma", gamma_);
    this->register_parameter("beta", beta_);
  }
  Var<T> forward(const Var<T>& x) const { return ops::layer_norm(x, gamma_, beta_, eps_); }

 private:
  Var<T> gamma_, beta_;
  T eps_;
};

template <typename T>
class Embedding : public Module<T> {
 public:
  Embedding(int64_t count, int64_t dim, Rng& rng, double stddev = 0.02) {
    Tensor<T> t({count, dim});
    for (auto& v : t.values()) v = static_cast<T>(stddev * normal(rng));
    table_ = Var<T>(std::move(t), true);
    this->register_parameter("table", table_);
  }
  Var<T> forward(const std::vector<int64_t>& ids) const { return ops::embedding(table_, ids); }
  const Var<T>& table() const { return table_; }

 private:
  Var<T> table_;
};

}  // namespace vq3d::nn
