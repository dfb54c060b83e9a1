#include <cmath>

#include "vq3d/kernels/kernels.hpp"
#include "vq3d/ops.hpp"

namespace vq3d::ops {

using ag::input_grad;
using ag::make_result;
using ag::Node;

namespace {

template <typename T, typename F>
Var<T> unary(const Var<T>& a, F f, std::function<void(Node<T>&)> bw) {
  const auto& av = a.value();
  Tensor<T> out(av.shape());
  for (int64_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  return make_result<T>(std::move(out), {a}, std::move(bw));
}

}  // namespace

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor<T> out = a.value();
  kernels::axpy(out.size(), T{1}, b.value().data(), out.data());
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& n) {
    for (size_t i = 0; i < 2; ++i)
      if (auto* g = input_grad(n, i)) kernels::axpy(g->size(), T{1}, n.grad.data(), g->data());
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "sub");
  Tensor<T> out = a.value();
  kernels::axpy(out.size(), T{-1}, b.value().data(), out.data());
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& n) {
    if (auto* g = input_grad(n, 0)) kernels::axpy(g->size(), T{1}, n.grad.data(), g->data());
    if (auto* g = input_grad(n, 1)) kernels::axpy(g->size(), T{-1}, n.grad.data(), g->data());
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  Tensor<T> out(a.shape());
  for (int64_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& n) {
    const auto& av = n.inputs[0]->value;
    const auto& bv = n.inputs[1]->value;
    if (auto* g = input_grad(n, 0))
      for (int64_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[i] * bv[i];
    if (auto* g = input_grad(n, 1))
      for (int64_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[i] * av[i];
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  Tensor<T> out(a.shape());
  for (int64_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * s;
  return make_result<T>(std::move(out), {a}, [s](Node<T>& n) {
    if (auto* g = input_grad(n, 0)) kernels::axpy(g->size(), s, n.grad.data(), g->data());
  });
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, T s) {
  Tensor<T> out(a.shape());
  for (int64_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + s;
  return make_result<T>(std::move(out), {a}, [](Node<T>& n) {
    if (auto* g = input_grad(n, 0)) kernels::axpy(g->size(), T{1}, n.grad.data(), g->data());
  });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  T acc{0};
  for (T v : a.value().values()) acc += v;
  return make_result<T>(Tensor<T>({1}, acc), {a}, [](Node<T>& n) {
    if (auto* g = input_grad(n, 0))
      for (auto& v : g->values()) v += n.grad[0];
  });
}

template <typename T>
Var<T> mean(const Var<T>& a) {
  const T inv = T{1} / static_cast<T>(a.size());
  return scale(sum(a), inv);
}

template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  Tensor<T> out = a.value().reshaped(std::move(shape));
  return make_result<T>(std::move(out), {a}, [](Node<T>& n) {
    if (auto* g = input_grad(n, 0)) kernels::axpy(g->size(), T{1}, n.grad.data(), g->data());
  });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  return unary<T>(a, [](T v) { return v > T{0} ? v : T{0}; }, [](Node<T>& n) {
    if (auto* g = input_grad(n, 0)) {
      const auto& x = n.inputs[0]->value;
      for (int64_t i = 0; i < g->size(); ++i)
        if (x[i] > T{0}) (*g)[i] += n.grad[i];
    }
  });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& a, T slope) {
  return unary<T>(a, [slope](T v) { return v > T{0} ? v : slope * v; }, [slope](Node<T>& n) {
    if (auto* g = input_grad(n, 0)) {
      const auto& x = n.inputs[0]->value;
      for (int64_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[i] * (x[i] > T{0} ? T{1} : slope);
    }
  });
}

template <typename T>
Var<T> tanh(const Var<T>& a) {
  return unary<T>(a, [](T v) { return std::tanh(v); }, [](Node<T>& n) {
    if (auto* g = input_grad(n, 0)) {
      for (int64_t i = 0; i < g->size(); ++i) {
        const T y = n.value[i];
        (*g)[i] += n.grad[i] * (T{1} - y * y);
      }
    }
  });
}

namespace {
template <typename T>
constexpr T kGeluC = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
}

template <typename T>
Var<T> gelu(const Var<T>& a) {
  return unary<T>(
      a,
      [](T v) {
        const T u = kGeluC<T> * (v + T(0.044715) * v * v * v);
        return T(0.5) * v * (T{1} + std::tanh(u));
      },
      [](Node<T>& n) {
        if (auto* g = input_grad(n, 0)) {
          const auto& x = n.inputs[0]->value;
          for (int64_t i = 0; i < g->size(); ++i) {
            const T v = x[i];
            const T u = kGeluC<T> * (v + T(0.044715) * v * v * v);
            const T th = std::tanh(u);
            const T du = kGeluC<T> * (T{1} + T(3 * 0.044715) * v * v);
            const T d = T(0.5) * (T{1} + th) + T(0.5) * v * (T{1} - th * th) * du;
            (*g)[i] += n.grad[i] * d;
          }
        }
      });
}

template <typename T>
Var<T> mean_abs_diff(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "mean_abs_diff");
  const auto& av = a.value();
  const auto& bv = b.value();
  T acc{0};
  for (int64_t i = 0; i < av.size(); ++i) acc += std::abs(av[i] - bv[i]);
  const T inv = T{1} / static_cast<T>(av.size());
  return make_result<T>(Tensor<T>({1}, acc * inv), {a, b}, [inv](Node<T>& n) {
    const auto& x = n.inputs[0]->value;
    const auto& y = n.inputs[1]->value;
    const T g0 = n.grad[0] * inv;
    auto* ga = input_grad(n, 0);
    auto* gb = input_grad(n, 1);
    for (int64_t i = 0; i < x.size(); ++i) {
      const T d = x[i] - y[i];
      const T s = d > T{0} ? g0 : (d < T{0} ? -g0 : T{0});
      if (ga) (*ga)[i] += s;
      if (gb) (*gb)[i] -= s;
    }
  });
}

template <typename T>
Var<T> mean_sq_diff(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "mean_sq_diff");
  const auto& av = a.value();
  const auto& bv = b.value();
  const T inv = T{1} / static_cast<T>(av.size());
  const T total = kernels::squared_distance(av.data(), bv.data(), av.size());
  return make_result<T>(Tensor<T>({1}, total * inv), {a, b}, [inv](Node<T>& n) {
    const auto& x = n.inputs[0]->value;
    const auto& y = n.inputs[1]->value;
    const T g0 = T{2} * n.grad[0] * inv;
    auto* ga = input_grad(n, 0);
    auto* gb = input_grad(n, 1);
    for (int64_t i = 0; i < x.size(); ++i) {
      const T s = g0 * (x[i] - y[i]);
      if (ga) (*ga)[i] += s;
      if (gb) (*gb)[i] -= s;
    }
  });
}

template <typename T>
Var<T> straight_through(const Var<T>& z, const Tensor<T>& quantized) {
  require_same_shape(z.shape(), quantized.shape(), "straight_through");
  return make_result<T>(quantized, {z}, [](Node<T>& n) {
    if (auto* g = input_grad(n, 0)) kernels::axpy(g->size(), T{1}, n.grad.data(), g->data());
  });
}

#define VQ3D_INSTANTIATE(T)                                                       \
  template Var<T> add(const Var<T>&, const Var<T>&);                              \
  template Var<T> sub(const Var<T>&, const Var<T>&);                              \
  template Var<T> mul(const Var<T>&, const Var<T>&);                              \
  template Var<T> scale(const Var<T>&, T);                                        \
  template Var<T> add_scalar(const Var<T>&, T);                                   \
  template Var<T> sum(const Var<T>&);                                             \
  template Var<T> mean(const Var<T>&);                                            \
  template Var<T> reshape(const Var<T>&, Shape);                                  \
  template Var<T> relu(const Var<T>&);                                            \
  template Var<T> leaky_relu(const Var<T>&, T);                                   \
  template Var<T> tanh(const Var<T>&);                                            \
  template Var<T> gelu(const Var<T>&);                                            \
  template Var<T> mean_abs_diff(const Var<T>&, const Var<T>&);                    \
  template Var<T> mean_sq_diff(const Var<T>&, const Var<T>&);                     \
  template Var<T> straight_through(const Var<T>&, const Tensor<T>&);

VQ3D_INSTANTIATE(float)
VQ3D_INSTANTIATE(double)
#undef VQ3D_INSTANTIATE

}  // namespace vq3d::ops
