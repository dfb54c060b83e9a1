#include "vq3d/losses.hpp"

#include <stdexcept>

#include "vq3d/ops.hpp"

namespace vq3d {

using ag::Var;

template <typename T>
Var<T> l1_loss(const Var<T>& x, const Var<T>& xhat) {
  return ops::mean_abs_diff(x, xhat);
}

template <typename T>
Var<T> perceptual_loss(const Var<T>& x, const Var<T>& xhat, PerceptualExtractor<T>& f, Rng& rng, int slices) {
  require_same_shape(x.shape(), xhat.shape(), "perceptual_loss");
  const auto& s = x.shape();
  if (s.size() != 5 || s[1] != 1) throw std::invalid_argument("perceptual_loss expects [N,1,D,H,W]");
  const int64_t count = s[4];
  if (slices < 1 || slices > count) throw std::invalid_argument("perceptual_loss: bad slice count");
  std::vector<std::vector<int64_t>> idx;
  for (int64_t n = 0; n < s[0]; ++n) idx.push_back(sample_without_replacement(rng, count, slices));
  auto fx = f.forward(ops::extract_slices(x, ops::Plane::axial, idx, PerceptualExtractor<T>::kChannels));
  auto fy = f.forward(ops::extract_slices(xhat, ops::Plane::axial, idx, PerceptualExtractor<T>::kChannels));
  Var<T> total;
  for (size_t i = 0; i < fx.size(); ++i) {
    auto d = ops::mean_sq_diff(fx[i], fy[i]);
    total = total.defined() ? ops::add(total, d) : d;
  }
  // Taps are averaged over the N*slices images; scale back to a sum over slices.
  return ops::scale(total, static_cast<T>(slices));
}

template <typename T>
Var<T> feature_matching_loss(const std::vector<Var<T>>& real, const std::vector<Var<T>>& fake) {
  if (real.size() != fake.size() || real.empty())
    throw std::invalid_argument("feature_matching_loss: tap lists differ in length or are empty");
  Var<T> total;
  for (size_t i = 0; i < real.size(); ++i) {
    require_same_shape(real[i].shape(), fake[i].shape(), "feature_matching_loss");
    auto d = ops::mean_abs_diff(fake[i], real[i].detach());
    total = total.defined() ? ops::add(total, d) : d;
  }
  return ops::scale(total, static_cast<T>(1.0 / static_cast<double>(real.size())));
}

template <typename T>
Var<T> gradient_3d_loss(const Var<T>& x, const Var<T>& xhat) {
  return ops::gradient_3d_loss(x, xhat);
}

template <typename T>
Var<T> hinge_disc_loss(const Var<T>& real, const Var<T>& fake) {
  auto r = ops::mean(ops::relu(ops::add_scalar(ops::scale(real, T(-1)), T(1))));
  auto f = ops::mean(ops::relu(ops::add_scalar(fake, T(1))));
  return ops::add(r, f);
}

template <typename T>
Var<T> generator_adv_loss(const Var<T>& fake, const LossWeights& w, int64_t step) {
  if (step < w.adv_warmup_steps || w.adv_weight == 0) return Var<T>(Tensor<T>({1}), false);
  return ops::scale(ops::mean(fake), static_cast<T>(-w.adv_weight));
}

template <typename T>
Var<T> total_stage1_loss(const Stage1Components<T>& c, const LossWeights& w) {
  Var<T> total(Tensor<T>({1}), false);
  auto acc = [&total](const Var<T>& term, double lambda) {
    if (!term.defined() || lambda == 0) return;
    total = ops::add(total, ops::scale(ops::reshape(term, {1}), static_cast<T>(lambda)));
  };
  acc(c.l1, w.l1);
  acc(c.perceptual, w.perceptual);
  acc(c.match, w.match);
  acc(c.gradient, w.gradient);
  acc(c.codebook, w.codebook);
  acc(c.adv, 1.0);
  return total;
}

#define VQ3D_INSTANTIATE(T)                                                                                      \
  template Var<T> l1_loss(const Var<T>&, const Var<T>&);                                                         \
  template Var<T> perceptual_loss(const Var<T>&, const Var<T>&, PerceptualExtractor<T>&, Rng&, int);             \
  template Var<T> feature_matching_loss(const std::vector<Var<T>>&, const std::vector<Var<T>>&);                 \
  template Var<T> gradient_3d_loss(const Var<T>&, const Var<T>&);                                                \
  template Var<T> hinge_disc_loss(const Var<T>&, const Var<T>&);                                                 \
  template Var<T> generator_adv_loss(const Var<T>&, const LossWeights&, int64_t);                                \
  template Var<T> total_stage1_loss(const Stage1Components<T>&, const LossWeights&);

VQ3D_INSTANTIATE(float)
VQ3D_INSTANTIATE(double)

}  // namespace vq3d
