#include "vq3d/vqgan.hpp"

#include <sstream>
#include <stdexcept>

namespace vq3d {

using ag::Var;
using ops::ConvGeometry;

int64_t NetworkConfig::downsamplings() const {
  int64_t n = 0;
  for (int64_t r = in_edge / latent_edge; r > 1; r >>= 1) ++n;
  return n;
}

int64_t NetworkConfig::width(int64_t stage) const { return std::min(base_channels << stage, max_channels); }

void NetworkConfig::validate() const {
  if (latent_edge != 4 && latent_edge != 8)
    throw std::invalid_argument("latent_edge must be 4 or 8, got " + std::to_string(latent_edge));
  if (in_edge < latent_edge || in_edge % latent_edge != 0)
    throw std::invalid_argument("in_edge " + std::to_string(in_edge) + " is not a multiple of latent_edge");
  const int64_t ratio = in_edge / latent_edge;
  if ((ratio & (ratio - 1)) != 0) throw std::invalid_argument("in_edge / latent_edge must be a power of two");
  const int64_t n = downsamplings();
  if (n < 1 || n > 5) throw std::invalid_argument("in_edge / latent_edge must be between 2 and 32");
  if (in_edge < 32 || in_edge % 32 != 0)
    throw std::invalid_argument("in_edge must be a multiple of 32 (five stride-2 discriminator layers)");
  if (base_channels < 1 || max_channels < base_channels || n_z < 1)
    throw std::invalid_argument("channel counts must be positive");
}

std::string NetworkConfig::str() const {
  std::ostringstream os;
  os << "in_edge=" << in_edge << " latent_edge=" << latent_edge << " base_channels=" << base_channels
     << " max_channels=" << max_channels << " n_z=" << n_z << " norm=" << (norm ? 1 : 0);
  return os.str();
}

// ---- residual block -----------------------------------------------------------

template <typename T>
ResBlock3d<T>::ResBlock3d(int64_t ch, bool norm, bool leaky, double slope, Rng& rng)
    : leaky_(leaky),
      slope_(static_cast<T>(slope)),
      c1_(ch, ch, ConvGeometry::cube_same(3), rng, !norm),
      c2_(ch, ch, ConvGeometry::cube_same(3), rng, !norm, 0.5) {
  this->register_module("conv1", c1_);
  this->register_module("conv2", c2_);
  if (norm) {
    n1_ = std::make_unique<nn::BatchNorm<T>>(ch);
    n2_ = std::make_unique<nn::BatchNorm<T>>(ch);
    this->register_module("norm1", *n1_);
    this->register_module("norm2", *n2_);
  }
}

template <typename T>
Var<T> ResBlock3d<T>::act(const Var<T>& x) const {
  return leaky_ ? ops::leaky_relu(x, slope_) : ops::relu(x);
}

template <typename T>
Var<T> ResBlock3d<T>::forward(const Var<T>& x) {
  auto h = c1_.forward(act(x));
  if (n1_) h = n1_->forward(h);
  h = c2_.forward(act(h));
  if (n2_) h = n2_->forward(h);
  return ops::add(x, h);
}

// ---- encoder --------------------------------------------------------------------

template <typename T>
Encoder<T>::Encoder(const NetworkConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg.validate();
  const int64_t nd = cfg.downsamplings();
  int64_t in = 1;
  for (int64_t i = 0; i < 5; ++i) {
    const int64_t out = i < 4 ? cfg.width(i) : cfg.n_z;
    const auto geom = i < nd ? ConvGeometry::cube(4, 2, 1, 1) : ConvGeometry::cube_same(4);
    const bool last = i == 4;
    convs_.push_back(std::make_unique<nn::Conv3d<T>>(in, out, geom, rng, !cfg.norm || last, last ? 1.0 : std::sqrt(2.0)));
    this->register_module("conv" + std::to_string(i), *convs_.back());
    if (cfg.norm && !last) {
      norms_.push_back(std::make_unique<nn::BatchNorm<T>>(out));
      this->register_module("norm" + std::to_string(i), *norms_.back());
    }
    if (i < 4) {
      const int reps = i == 3 ? 2 : 1;
      for (int r = 0; r < reps; ++r) {
        res_.push_back(std::make_unique<ResBlock3d<T>>(out, cfg.norm, true, cfg.leaky_slope, rng));
        this->register_module("res" + std::to_string(res_.size() - 1), *res_.back());
      }
    }
    in = out;
  }
}

template <typename T>
Var<T> Encoder<T>::forward(const Var<T>& x) {
  const auto& s = x.shape();
  if (s.size() != 5 || s[1] != 1 || s[2] != cfg_.in_edge || s[3] != cfg_.in_edge || s[4] != cfg_.in_edge)
    throw std::invalid_argument("encoder expects [N,1," + std::to_string(cfg_.in_edge) + "^3], got " + shape_str(s));
  const T slope = static_cast<T>(cfg_.leaky_slope);
  Var<T> h = x;
  size_t r = 0;
  for (int64_t i = 0; i < 5; ++i) {
    h = convs_[i]->forward(h);
    if (i == 4) break;
    if (cfg_.norm) h = norms_[i]->forward(h);
    h = ops::leaky_relu(h, slope);
    const int reps = i == 3 ? 2 : 1;
    for (int k = 0; k < reps; ++k) h = res_[r++]->forward(h);
  }
  return h;
}

// ---- decoder --------------------------------------------------------------------

template <typename T>
Decoder<T>::Decoder(const NetworkConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg.validate();
  int64_t in = cfg.n_z;
  for (int64_t i = 0; i < 5; ++i) {
    const int64_t out = i < 4 ? cfg.width(3 - i) : 1;
    const bool last = i == 4;
    convs_.push_back(std::make_unique<nn::Conv3d<T>>(in, out, ConvGeometry::cube_same(3), rng, !cfg.norm || last,
                                                     last ? 1.0 : std::sqrt(2.0)));
    this->register_module("conv" + std::to_string(i), *convs_.back());
    if (cfg.norm && !last) {
      norms_.push_back(std::make_unique<nn::BatchNorm<T>>(out));
      this->register_module("norm" + std::to_string(i), *norms_.back());
    }
    if (i < 4) {
      const int reps = i == 0 ? 2 : 1;
      for (int r = 0; r < reps; ++r) {
        res_.push_back(std::make_unique<ResBlock3d<T>>(out, cfg.norm, false, 0.0, rng));
        this->register_module("res" + std::to_string(res_.size() - 1), *res_.back());
      }
    }
    in = out;
  }
}

template <typename T>
Var<T> Decoder<T>::forward(const Var<T>& z) {
  const auto& s = z.shape();
  const int64_t L = cfg_.latent_edge;
  if (s.size() != 5 || s[1] != cfg_.n_z || s[2] != L || s[3] != L || s[4] != L)
    throw std::invalid_argument("decoder expects [N," + std::to_string(cfg_.n_z) + "," + std::to_string(L) + "^3], got " +
                                shape_str(s));
  const int64_t first_up = 5 - cfg_.downsamplings();
  Var<T> h = z;
  size_t r = 0;
  for (int64_t i = 0; i < 5; ++i) {
    if (i >= first_up) h = ops::upsample_nearest(h, int64_t{2});
    h = convs_[i]->forward(h);
    if (i == 4) break;
    if (cfg_.norm) h = norms_[i]->forward(h);
    h = ops::relu(h);
    const int reps = i == 0 ? 2 : 1;
    for (int k = 0; k < reps; ++k) h = res_[r++]->forward(h);
  }
  return ops::tanh(h);
}

// ---- discriminator --------------------------------------------------------------

template <typename T>
Discriminator<T>::Discriminator(const NetworkConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg.validate();
  int64_t in = 1;
  for (int64_t i = 0; i < 5; ++i) {
    const int64_t out = i < 4 ? cfg.width(i) : 1;
    convs_.push_back(std::make_unique<nn::Conv3d<T>>(in, out, ConvGeometry::cube(4, 2, 1, 1), rng, true,
                                                     i < 4 ? std::sqrt(2.0) : 1.0));
    this->register_module("conv" + std::to_string(i), *convs_.back());
    in = out;
  }
}

template <typename T>
DiscOutput<T> Discriminator<T>::forward(const Var<T>& x) {
  const auto& s = x.shape();
  if (s.size() != 5 || s[1] != 1) throw std::invalid_argument("discriminator expects [N,1,D,H,W], got " + shape_str(s));
  DiscOutput<T> out;
  Var<T> h = x;
  const T slope = static_cast<T>(cfg_.leaky_slope);
  for (int64_t i = 0; i < 5; ++i) {
    h = convs_[i]->forward(h);
    if (i == 4) break;
    h = ops::leaky_relu(h, slope);
    out.taps.push_back(h);
  }
  out.scores = h;
  return out;
}

// ---- perceptual extractor ---------------------------------------------------------

template <typename T>
PerceptualExtractor<T>::PerceptualExtractor(uint64_t seed) : seed_(seed) {
  Rng rng = make_rng(seed, 0x9E7C);
  const int64_t widths[4] = {kChannels, 8, 16, 32};
  for (int i = 0; i < 3; ++i) {
    convs_.push_back(std::make_unique<nn::Conv3d<T>>(widths[i], widths[i + 1], ConvGeometry::planar(3, i == 0 ? 1 : 2, 1),
                                                     rng, false));
    auto& w = convs_.back()->weight();
    w = Var<T>(w.value(), false);
  }
  this->train(false);
}

template <typename T>
std::vector<Var<T>> PerceptualExtractor<T>::forward(const Var<T>& img) {
  const auto& s = img.shape();
  if (s.size() != 5 || s[1] != kChannels || s[2] != 1)
    throw std::invalid_argument("perceptual extractor expects [M,3,1,A,B], got " + shape_str(s));
  std::vector<Var<T>> taps;
  Var<T> h = img;
  for (auto& c : convs_) {
    h = ops::relu(c->forward(h));
    taps.push_back(h);
  }
  return taps;
}

template <typename T>
Tensor<T> PerceptualExtractor<T>::pooled_features(const Var<T>& img) {
  ag::NoGradGuard ng;
  auto taps = forward(img);
  const int64_t m = img.shape()[0];
  Tensor<T> out({m, kFeatureDim});
  int64_t off = 0;
  for (auto& t : taps) {
    auto p = ops::global_avg_pool(t);
    const int64_t c = p.shape()[1];
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < c; ++j) out[i * kFeatureDim + off + j] = p.value()[i * c + j];
    off += c;
  }
  return out;
}

template class ResBlock3d<float>;
template class ResBlock3d<double>;
template class Encoder<float>;
template class Encoder<double>;
template class Decoder<float>;
template class Decoder<double>;
template class Discriminator<float>;
template class Discriminator<double>;
template class PerceptualExtractor<float>;
template class PerceptualExtractor<double>;

}  // namespace vq3d
