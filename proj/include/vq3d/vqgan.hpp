#pragma once

// Stage-1 networks: encoder, decoder, patch discriminator and the frozen 2D
// perceptual feature extractor.

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "vq3d/nn/module.hpp"

namespace vq3d {

struct NetworkConfig {
  int64_t in_edge = 128;
  int64_t latent_edge = 4;
  int64_t base_channels = 32;
  int64_t max_channels = 256;
  int64_t n_z = 64;
  bool norm = true;
  double leaky_slope = 0.2;

  /// log2(in_edge / latent_edge)
  int64_t downsamplings() const;
  /// Width after encoder stage i (0..3), doubling from base_channels.
  int64_t width(int64_t stage) const;
  void validate() const;
  std::string str() const;
};

template <typename T>
class ResBlock3d : public nn::Module<T> {
 public:
  ResBlock3d(int64_t ch, bool norm, bool leaky, double slope, Rng& rng);
  ag::Var<T> forward(const ag::Var<T>& x);

 private:
  ag::Var<T> act(const ag::Var<T>& x) const;
  bool leaky_;
  T slope_;
  nn::Conv3d<T> c1_, c2_;
  std::unique_ptr<nn::BatchNorm<T>> n1_, n2_;
};

/// Five 4^3 convolutions interleaved with five residual blocks. The first
/// log2(in/latent) convolutions have stride 2; the rest keep the extent.
template <typename T>
class Encoder : public nn::Module<T> {
 public:
  Encoder(const NetworkConfig& cfg, Rng& rng);
  /// [N,1,E,E,E] -> [N,n_z,L,L,L]
  ag::Var<T> forward(const ag::Var<T>& x);
  const NetworkConfig& config() const { return cfg_; }

 private:
  NetworkConfig cfg_;
  std::vector<std::unique_ptr<nn::Conv3d<T>>> convs_;
  std::vector<std::unique_ptr<nn::BatchNorm<T>>> norms_;
  std::vector<std::unique_ptr<ResBlock3d<T>>> res_;
};

/// Five 3^3 convolutions with ReLU and five residual blocks; nearest
/// upsampling precedes the last log2(in/latent) convolutions; tanh output.
template <typename T>
class Decoder : public nn::Module<T> {
 public:
  Decoder(const NetworkConfig& cfg, Rng& rng);
  /// [N,n_z,L,L,L] -> [N,1,E,E,E]
  ag::Var<T> forward(const ag::Var<T>& z);
  const NetworkConfig& config() const { return cfg_; }

 private:
  NetworkConfig cfg_;
  std::vector<std::unique_ptr<nn::Conv3d<T>>> convs_;
  std::vector<std::unique_ptr<nn::BatchNorm<T>>> norms_;
  std::vector<std::unique_ptr<ResBlock3d<T>>> res_;
};

template <typename T>
struct DiscOutput {
  ag::Var<T> scores;               // [N,1,E/32,E/32,E/32]
  std::vector<ag::Var<T>> taps;    // post-activation outputs of the first four convolutions
};

/// Five stride-2 4^3 convolutions with LeakyReLU.
template <typename T>
class Discriminator : public nn::Module<T> {
 public:
  Discriminator(const NetworkConfig& cfg, Rng& rng);
  DiscOutput<T> forward(const ag::Var<T>& x);

 private:
  NetworkConfig cfg_;
  std::vector<std::unique_ptr<nn::Conv3d<T>>> convs_;
};

/// Frozen 2D CNN on 3-channel images [M,3,1,A,B]; returns three taps.
template <typename T>
class PerceptualExtractor : public nn::Module<T> {
 public:
  static constexpr int64_t kChannels = 3;
  explicit PerceptualExtractor(uint64_t seed);
  std::vector<ag::Var<T>> forward(const ag::Var<T>& img);
  /// Global-average-pooled taps concatenated: [M, 8 + 16 + 32].
  Tensor<T> pooled_features(const ag::Var<T>& img);
  static constexpr int64_t kFeatureDim = 56;
  std::string id() const { return "random-cnn3-seed" + std::to_string(seed_); }

 private:
  uint64_t seed_;
  std::vector<std::unique_ptr<nn::Conv3d<T>>> convs_;
};

}  // namespace vq3d
