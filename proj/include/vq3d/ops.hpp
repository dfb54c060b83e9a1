#pragma once

// Differentiable tensor operations. Every op is instantiated for float
// (training) and double (finite-difference checks).
//
// Layout conventions: volumes are [N, C, D, H, W]; 2D images use the same
// rank-5 layout with D = 1. Dense activations are [rows, features].

#include <array>
#include <cstdint>
#include <vector>

#include "vq3d/autograd.hpp"
#include "vq3d/tensor.hpp"

namespace vq3d::ops {

template <typename T>
using Var = ag::Var<T>;

// ---- elementwise and reductions -------------------------------------------

template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> scale(const Var<T>& a, T s);
template <typename T> Var<T> add_scalar(const Var<T>& a, T s);
template <typename T> Var<T> sum(const Var<T>& a);
template <typename T> Var<T> mean(const Var<T>& a);
template <typename T> Var<T> reshape(const Var<T>& a, Shape shape);

template <typename T> Var<T> relu(const Var<T>& a);
template <typename T> Var<T> leaky_relu(const Var<T>& a, T slope);
template <typename T> Var<T> tanh(const Var<T>& a);
template <typename T> Var<T> gelu(const Var<T>& a);

/// mean |a - b|; the derivative of |0| is taken as 0.
template <typename T> Var<T> mean_abs_diff(const Var<T>& a, const Var<T>& b);
/// mean (a - b)^2
template <typename T> Var<T> mean_sq_diff(const Var<T>& a, const Var<T>& b);

/// Forward value is `quantized`; the gradient flows to `z` unchanged.
template <typename T> Var<T> straight_through(const Var<T>& z, const Tensor<T>& quantized);

// ---- convolutional ----------------------------------------------------------

struct ConvGeometry {
  std::array<int64_t, 3> kernel{1, 1, 1};
  std::array<int64_t, 3> stride{1, 1, 1};
  std::array<int64_t, 3> pad_lo{0, 0, 0};
  std::array<int64_t, 3> pad_hi{0, 0, 0};

  /// Cubic kernel with the same stride on every axis. With `same` padding
  /// and stride 1 the output keeps the input extent (even kernels pad one
  /// extra voxel on the high side).
  static ConvGeometry cube(int64_t k, int64_t stride, int64_t pad_lo, int64_t pad_hi);
  static ConvGeometry cube_same(int64_t k);
  /// k x k in-plane kernel on a D = 1 image.
  static ConvGeometry planar(int64_t k, int64_t stride, int64_t pad);

  std::array<int64_t, 3> output_extent(const std::array<int64_t, 3>& in) const;
};

/// x [N,C,D,H,W], w [O,C,kd,kh,kw], optional bias [O] (pass an undefined Var
/// to omit). Returns [N,O,Do,Ho,Wo].
template <typename T>
Var<T> conv3d(const Var<T>& x, const Var<T>& w, const Var<T>& bias, const ConvGeometry& geom);

/// Nearest-neighbour upsampling of the three spatial axes by `factor`.
template <typename T> Var<T> upsample_nearest(const Var<T>& x, int64_t factor);
/// Same, restricted to H and W (for D = 1 images).
template <typename T> Var<T> upsample_nearest_planar(const Var<T>& x, int64_t factor);

/// Per-channel normalization over every axis except 1. In training mode the
/// batch statistics are used and the running estimates are updated in place.
template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, Tensor<T>& running_mean,
                  Tensor<T>& running_var, bool training, T momentum, T eps);

/// [N,C,...] -> [N,C]
template <typename T> Var<T> global_avg_pool(const Var<T>& x);

/// [N,C,D,H,W] -> [N*D*H*W, C]
template <typename T> Var<T> to_channels_last(const Var<T>& x);
/// [N*D*H*W, C] -> [N,C,D,H,W]
template <typename T> Var<T> from_channels_last(const Var<T>& x, int64_t n, int64_t d, int64_t h, int64_t w);

enum class Plane { axial, coronal, sagittal };

/// Takes 2D slices of a single-channel volume batch [N,1,D,H,W].
/// `indices[n]` lists the slice indices for sample n along `plane`; every
/// sample must request the same count k. The output is
/// [N*k, channels, 1, A, B] with the slice replicated across channels.
/// Axial fixes W (slice is D x H), coronal fixes H (D x W) and sagittal
/// fixes D (H x W).
template <typename T>
Var<T> extract_slices(const Var<T>& x, Plane plane, const std::vector<std::vector<int64_t>>& indices,
                      int64_t channels);

// ---- dense -------------------------------------------------------------------

/// x [M,in], w [out,in], bias [out] (optional) -> [M,out]
template <typename T> Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& bias);
/// Normalizes the last axis of x [M,D].
template <typename T> Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps);
/// table [V,D] -> [ids.size(), D]
template <typename T> Var<T> embedding(const Var<T>& table, const std::vector<int64_t>& ids);
/// Multi-head causal self-attention. qkv is [B,S,3*D] with per-token layout
/// [q | k | v]; returns [B,S,D]. Position i attends to positions <= i.
template <typename T> Var<T> causal_attention(const Var<T>& qkv, int64_t heads);
/// Row-wise softmax of x [M,K].
template <typename T> Var<T> softmax(const Var<T>& x);
/// Row-wise log-softmax of x [M,K].
template <typename T> Var<T> log_softmax(const Var<T>& x);

/// -sum_i w_i log softmax(logits_i)[t_i] / sum_i w_i over rows of logits
/// [M,K]. Returns exactly 0 when every weight is zero.
template <typename T>
Var<T> weighted_cross_entropy(const Var<T>& logits, const std::vector<int64_t>& targets,
                              const std::vector<T>& weights);

/// mean_i -alpha[y_i] (1 - p_i)^gamma log p_i where p_i = probs[i, y_i],
/// probs [M,K].
template <typename T>
Var<T> focal_loss(const Var<T>& probs, const std::vector<int64_t>& labels, T gamma, const std::vector<T>& alpha);

/// Three-plane image-gradient loss between two single-channel volume batches
/// [N,1,D,H,W]: for every plane, the mean over all slices and positions of
/// the squared difference of the in-plane forward-difference gradients,
/// summed over both in-plane directions and the three planes.
template <typename T> Var<T> gradient_3d_loss(const Var<T>& x, const Var<T>& y);

}  // namespace vq3d::ops
