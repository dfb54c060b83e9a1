#pragma once

// Stage-1 objective terms. Every term is mean-reduced.

#include <cstdint>
#include <vector>

#include "vq3d/autograd.hpp"
#include "vq3d/random.hpp"
#include "vq3d/vqgan.hpp"

namespace vq3d {

struct LossWeights {
  double l1 = 4.0;
  double perceptual = 1.0;
  double match = 4.0;
  double gradient = 4.0;
  double codebook = 1.0;
  double adv_weight = 1.0;
  int64_t adv_warmup_steps = 2000;
};

template <typename T>
struct Stage1Components {
  ag::Var<T> l1, perceptual, match, gradient, codebook, adv;
};

template <typename T>
ag::Var<T> l1_loss(const ag::Var<T>& x, const ag::Var<T>& xhat);

/// Sum over `slices` random axial slices (same indices for x and x-hat) and
/// over the extractor taps of the mean squared feature difference; averaged
/// over the batch.
template <typename T>
ag::Var<T> perceptual_loss(const ag::Var<T>& x, const ag::Var<T>& xhat, PerceptualExtractor<T>& f, Rng& rng,
                           int slices = 3);

/// Mean over taps of the mean absolute difference. The real taps are
/// treated as constants.
template <typename T>
ag::Var<T> feature_matching_loss(const std::vector<ag::Var<T>>& real, const std::vector<ag::Var<T>>& fake);

template <typename T>
ag::Var<T> gradient_3d_loss(const ag::Var<T>& x, const ag::Var<T>& xhat);

/// mean(max(0, 1 - D(x))) + mean(max(0, 1 + D(x-hat)))
template <typename T>
ag::Var<T> hinge_disc_loss(const ag::Var<T>& real, const ag::Var<T>& fake);

/// -adv_weight * mean(D(x-hat)), or exactly 0 before the warm-up ends.
template <typename T>
ag::Var<T> generator_adv_loss(const ag::Var<T>& fake, const LossWeights& w, int64_t step);

/// lambda-weighted sum; undefined components contribute 0.
template <typename T>
ag::Var<T> total_stage1_loss(const Stage1Components<T>& c, const LossWeights& w);

}  // namespace vq3d
