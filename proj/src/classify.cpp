#include "vq3d/classify.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <iomanip>
#include <json.hpp>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "vq3d/config.hpp"
#include "vq3d/nn/optim.hpp"
#include "vq3d/train.hpp"

namespace vq3d {

using ag::Var;
using ops::ConvGeometry;

// ---- class weights -------------------------------------------------------------

WeightMode parse_weight_mode(const std::string& s) {
  if (s == "paper") return WeightMode::paper;
  if (s == "inverse") return WeightMode::inverse;
  if (s == "none") return WeightMode::none;
  throw std::invalid_argument("unknown class weight mode '" + s + "' (paper | inverse | none)");
}

std::string weight_mode_name(WeightMode m) {
  switch (m) {
    case WeightMode::paper: return "paper";
    case WeightMode::inverse: return "inverse";
    case WeightMode::none: return "none";
  }
  return "?";
}

std::vector<double> class_weights(const std::vector<int>& labels, int classes, WeightMode mode) {
  if (classes < 1) throw std::invalid_argument("class_weights: need at least one class");
  std::vector<int64_t> n(static_cast<size_t>(classes), 0);
  for (int l : labels) {
    if (l < 0 || l >= classes) throw std::invalid_argument("class_weights: label " + std::to_string(l) + " out of range");
    ++n[static_cast<size_t>(l)];
  }
  for (int c = 0; c < classes; ++c)
    if (n[static_cast<size_t>(c)] == 0) throw std::invalid_argument("class_weights: class " + std::to_string(c) + " has no samples");
  const double total = static_cast<double>(labels.size());
  std::vector<double> w(static_cast<size_t>(classes), 1.0);
  if (mode == WeightMode::none) return w;
  for (int c = 0; c < classes; ++c) {
    const double f = static_cast<double>(n[static_cast<size_t>(c)]) / total;
    w[static_cast<size_t>(c)] = mode == WeightMode::paper ? f : 1.0 - f;
  }
  return w;
}

std::vector<double> class_weights(const DatasetManifest& m, int classes, WeightMode mode) {
  std::vector<int> labels;
  for (const auto& e : m.split("train")) labels.push_back(e.label);
  return class_weights(labels, classes, mode);
}

// ---- augmentation ----------------------------------------------------------------

namespace {

constexpr float kBackground = -1.f;

float sample(const Volume& v, double z, double y, double x) {
  constexpr double tol = 1e-6;
  const double hi[3] = {static_cast<double>(v.d - 1), static_cast<double>(v.h - 1), static_cast<double>(v.w - 1)};
  double p[3] = {z, y, x};
  for (int a = 0; a < 3; ++a) {
    if (p[a] < -tol || p[a] > hi[a] + tol) return kBackground;
    p[a] = std::clamp(p[a], 0.0, hi[a]);
  }
  int64_t i0[3], i1[3];
  double f[3];
  for (int a = 0; a < 3; ++a) {
    i0[a] = std::min(static_cast<int64_t>(p[a]), static_cast<int64_t>(hi[a]));
    i1[a] = std::min(i0[a] + 1, static_cast<int64_t>(hi[a]));
    f[a] = p[a] - static_cast<double>(i0[a]);
  }
  double out = 0;
  for (int c = 0; c < 8; ++c) {
    const int64_t zz = (c & 4) ? i1[0] : i0[0];
    const int64_t yy = (c & 2) ? i1[1] : i0[1];
    const int64_t xx = (c & 1) ? i1[2] : i0[2];
    const double wgt = ((c & 4) ? f[0] : 1 - f[0]) * ((c & 2) ? f[1] : 1 - f[1]) * ((c & 1) ? f[2] : 1 - f[2]);
    if (wgt != 0) out += wgt * v.at(zz, yy, xx);
  }
  return static_cast<float>(out);
}

template <typename Map>
Volume warp(const Volume& v, Map map) {
  Volume out(v.d, v.h, v.w);
  out.spacing = v.spacing;
  for (int64_t z = 0; z < v.d; ++z)
    for (int64_t y = 0; y < v.h; ++y)
      for (int64_t x = 0; x < v.w; ++x) {
        double p[3] = {static_cast<double>(z), static_cast<double>(y), static_cast<double>(x)};
        map(p);
        out.at(z, y, x) = sample(v, p[0], p[1], p[2]);
      }
  return out;
}

void clamp_unit(Volume& v) {
  for (float& x : v.data) x = std::clamp(x, -1.f, 1.f);
}

}  // namespace

Volume flip_lr(const Volume& v) {
  Volume out = v;
  for (int64_t z = 0; z < v.d; ++z)
    for (int64_t y = 0; y < v.h; ++y)
      for (int64_t x = 0; x < v.w; ++x) out.at(z, y, x) = v.at(z, y, v.w - 1 - x);
  return out;
}

Volume rotate_inplane(const Volume& v, double degrees) {
  const double t = degrees * M_PI / 180.0, c = std::cos(t), s = std::sin(t);
  const double cy = 0.5 * static_cast<double>(v.h - 1), cx = 0.5 * static_cast<double>(v.w - 1);
  // Backward map: rotate the output coordinate by -t.
  return warp(v, [&](double* p) {
    const double y = p[1] - cy, x = p[2] - cx;
    p[1] = cy + (y * c - x * s);
    p[2] = cx + (x * c + y * s);
  });
}

Volume scale_volume(const Volume& v, double factor) {
  if (!(factor > 0)) throw std::invalid_argument("scale_volume: factor must be positive");
  const double ctr[3] = {0.5 * static_cast<double>(v.d - 1), 0.5 * static_cast<double>(v.h - 1),
                         0.5 * static_cast<double>(v.w - 1)};
  return warp(v, [&](double* p) {
    for (int a = 0; a < 3; ++a) p[a] = ctr[a] + (p[a] - ctr[a]) / factor;
  });
}

Volume elastic_deform(const Volume& v, Rng& rng, double sigma) {
  constexpr int G = 4;
  double grid[3][G][G][G];
  for (auto& axis : grid)
    for (auto& a : axis)
      for (auto& b : a)
        for (double& c : b) c = sigma * normal(rng);
  const int64_t ext[3] = {v.d, v.h, v.w};
  return warp(v, [&](double* p) {
    int i0[3];
    double f[3];
    for (int a = 0; a < 3; ++a) {
      const double g = ext[a] > 1 ? p[a] * (G - 1) / static_cast<double>(ext[a] - 1) : 0.0;
      i0[a] = std::min(static_cast<int>(g), G - 2);
      f[a] = g - i0[a];
    }
    double disp[3] = {0, 0, 0};
    for (int c = 0; c < 8; ++c) {
      const int zz = i0[0] + ((c >> 2) & 1), yy = i0[1] + ((c >> 1) & 1), xx = i0[2] + (c & 1);
      const double wgt = ((c & 4) ? f[0] : 1 - f[0]) * ((c & 2) ? f[1] : 1 - f[1]) * ((c & 1) ? f[2] : 1 - f[2]);
      for (int a = 0; a < 3; ++a) disp[a] += wgt * grid[a][zz][yy][xx];
    }
    for (int a = 0; a < 3; ++a) p[a] += disp[a];
  });
}

Volume augment_traditional(const Volume& v, uint64_t seed, const AugmentOptions& opts) {
  Rng rng = make_rng(seed, 0xA06);
  Volume out = v;
  if (uniform01(rng) < opts.prob) out = flip_lr(out);
  if (uniform01(rng) < opts.prob) out = rotate_inplane(out, uniform(rng, -opts.max_rotation_deg, opts.max_rotation_deg));
  if (uniform01(rng) < opts.prob) out = scale_volume(out, uniform(rng, 1.0, opts.max_scale));
  if (uniform01(rng) < opts.prob) out = elastic_deform(out, rng, opts.elastic_sigma);
  clamp_unit(out);
  return out;
}

// ---- classifier --------------------------------------------------------------------

ClassifierPreset parse_preset(const std::string& s) {
  if (s == "toy") return ClassifierPreset::toy;
  if (s == "resnet50") return ClassifierPreset::resnet50;
  throw std::invalid_argument("unknown classifier preset '" + s + "' (toy | resnet50)");
}

ClassifierConfig ClassifierConfig::from(const RunConfig& cfg) {
  ClassifierConfig c;
  const auto& s = cfg.classify;
  c.preset = parse_preset(s.preset);
  c.in_edge = cfg.net.in_edge;
  c.base_channels = s.base_channels;
  c.epochs = s.epochs;
  c.finetune_epochs = s.finetune_epochs;
  c.batch = s.batch;
  c.lr = s.lr;
  c.finetune_lr = s.finetune_lr;
  c.focal_gamma = s.focal_gamma;
  c.weights = parse_weight_mode(s.class_weights);
  c.augment.elastic_sigma = s.elastic_sigma;
  c.augment.prob = s.augment_prob;
  return c;
}

void ClassifierConfig::validate() const {
  auto need = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("classifier config: ") + what);
  };
  need(base_channels >= 1, "base_channels must be >= 1");
  need(classes >= 2, "need at least two classes");
  need(epochs >= 1 && finetune_epochs >= 1, "epochs must be >= 1");
  need(batch >= 1, "batch must be >= 1");
  need(lr > 0 && finetune_lr > 0, "learning rates must be positive");
  need(focal_gamma >= 0, "focal_gamma must be >= 0");
  need(augment.prob >= 0 && augment.prob <= 1, "augment probability must lie in [0, 1]");
  need(augment.max_scale >= 1 && augment.elastic_sigma >= 0, "augment ranges must be non-negative");
  const int64_t stride = preset == ClassifierPreset::toy ? 8 : 32;
  if (in_edge < stride || in_edge % stride != 0)
    throw std::invalid_argument("classifier config: in_edge must be a positive multiple of " + std::to_string(stride));
}

namespace {

template <typename T>
class BasicBlock : public nn::Module<T> {
 public:
  BasicBlock(int64_t in, int64_t out, int64_t stride, Rng& rng)
      : c1_(in, out, ConvGeometry::cube(3, stride, 1, 1), rng, false),
        n1_(out),
        c2_(out, out, ConvGeometry::cube_same(3), rng, false),
        n2_(out) {
    this->register_module("conv1", c1_);
    this->register_module("bn1", n1_);
    this->register_module("conv2", c2_);
    this->register_module("bn2", n2_);
    if (stride != 1 || in != out) {
      proj_ = std::make_unique<nn::Conv3d<T>>(in, out, ConvGeometry::cube(1, stride, 0, 0), rng, false, 1.0);
      pn_ = std::make_unique<nn::BatchNorm<T>>(out);
      this->register_module("proj", *proj_);
      this->register_module("proj_bn", *pn_);
    }
  }

  Var<T> forward(const Var<T>& x) {
    auto h = ops::relu(n1_.forward(c1_.forward(x)));
    h = n2_.forward(c2_.forward(h));
    return ops::relu(ops::add(h, proj_ ? pn_->forward(proj_->forward(x)) : x));
  }

 private:
  nn::Conv3d<T> c1_;
  nn::BatchNorm<T> n1_;
  nn::Conv3d<T> c2_;
  nn::BatchNorm<T> n2_;
  std::unique_ptr<nn::Conv3d<T>> proj_;
  std::unique_ptr<nn::BatchNorm<T>> pn_;
};

template <typename T>
class Bottleneck : public nn::Module<T> {
 public:
  static constexpr int64_t expansion = 4;

  Bottleneck(int64_t in, int64_t width, int64_t stride, Rng& rng)
      : c1_(in, width, ConvGeometry::cube(1, 1, 0, 0), rng, false),
        n1_(width),
        c2_(width, width, ConvGeometry::cube(3, stride, 1, 1), rng, false),
        n2_(width),
        c3_(width, width * expansion, ConvGeometry::cube(1, 1, 0, 0), rng, false),
        n3_(width * expansion) {
    this->register_module("conv1", c1_);
    this->register_module("bn1", n1_);
    this->register_module("conv2", c2_);
    this->register_module("bn2", n2_);
    this->register_module("conv3", c3_);
    this->register_module("bn3", n3_);
    if (stride != 1 || in != width * expansion) {
      proj_ = std::make_unique<nn::Conv3d<T>>(in, width * expansion, ConvGeometry::cube(1, stride, 0, 0), rng, false, 1.0);
      pn_ = std::make_unique<nn::BatchNorm<T>>(width * expansion);
      this->register_module("proj", *proj_);
      this->register_module("proj_bn", *pn_);
    }
  }

  Var<T> forward(const Var<T>& x) {
    auto h = ops::relu(n1_.forward(c1_.forward(x)));
    h = ops::relu(n2_.forward(c2_.forward(h)));
    h = n3_.forward(c3_.forward(h));
    return ops::relu(ops::add(h, proj_ ? pn_->forward(proj_->forward(x)) : x));
  }

 private:
  nn::Conv3d<T> c1_;
  nn::BatchNorm<T> n1_;
  nn::Conv3d<T> c2_;
  nn::BatchNorm<T> n2_;
  nn::Conv3d<T> c3_;
  nn::BatchNorm<T> n3_;
  std::unique_ptr<nn::Conv3d<T>> proj_;
  std::unique_ptr<nn::BatchNorm<T>> pn_;
};

}  // namespace

template <typename T>
struct ResNet3d<T>::Impl {
  std::unique_ptr<nn::Conv3d<T>> stem;
  std::unique_ptr<nn::BatchNorm<T>> stem_bn;
  std::vector<std::unique_ptr<BasicBlock<T>>> basic;
  std::vector<std::unique_ptr<Bottleneck<T>>> bottleneck;
  std::unique_ptr<nn::Linear<T>> head;
};

template <typename T>
ResNet3d<T>::ResNet3d(const ClassifierConfig& cfg, Rng& rng) : impl_(std::make_unique<Impl>()) {
  cfg.validate();
  auto& m = *impl_;
  const int64_t b = cfg.base_channels;
  int64_t ch = b;
  if (cfg.preset == ClassifierPreset::toy) {
    m.stem = std::make_unique<nn::Conv3d<T>>(1, b, ConvGeometry::cube(3, 2, 1, 1), rng, false);
    const int64_t widths[3] = {b, 2 * b, 4 * b};
    for (int s = 0; s < 3; ++s) {
      m.basic.push_back(std::make_unique<BasicBlock<T>>(ch, widths[s], s == 0 ? 1 : 2, rng));
      ch = widths[s];
    }
  } else {
    // The stem's max-pool is folded into the first stage's stride.
    m.stem = std::make_unique<nn::Conv3d<T>>(1, b, ConvGeometry::cube(7, 2, 3, 3), rng, false);
    const int64_t depth[4] = {3, 4, 6, 3};
    for (int s = 0; s < 4; ++s) {
      const int64_t width = b << s;
      for (int64_t i = 0; i < depth[s]; ++i) {
        m.bottleneck.push_back(std::make_unique<Bottleneck<T>>(ch, width, i == 0 ? 2 : 1, rng));
        ch = width * Bottleneck<T>::expansion;
      }
    }
  }
  m.stem_bn = std::make_unique<nn::BatchNorm<T>>(b);
  m.head = std::make_unique<nn::Linear<T>>(ch, cfg.classes, rng);
  this->register_module("stem", *m.stem);
  this->register_module("stem_bn", *m.stem_bn);
  for (size_t i = 0; i < m.basic.size(); ++i) this->register_module("layer" + std::to_string(i), *m.basic[i]);
  for (size_t i = 0; i < m.bottleneck.size(); ++i) this->register_module("block" + std::to_string(i), *m.bottleneck[i]);
  this->register_module("head", *m.head);
}

template <typename T>
ResNet3d<T>::~ResNet3d() = default;

template <typename T>
Var<T> ResNet3d<T>::forward(const Var<T>& x) {
  auto& m = *impl_;
  auto h = ops::relu(m.stem_bn->forward(m.stem->forward(x)));
  for (auto& blk : m.basic) h = blk->forward(h);
  for (auto& blk : m.bottleneck) h = blk->forward(h);
  return m.head->forward(ops::global_avg_pool(h));
}

template class ResNet3d<float>;
template class ResNet3d<double>;

double train_classifier(ResNet3d<float>& model, const TrainSet& data, const ClassifierConfig& cfg, int64_t epochs,
                        double lr, uint64_t seed) {
  if (data.volumes.empty() || data.volumes.size() != data.labels.size())
    throw std::invalid_argument("train_classifier: need one label per volume and at least one volume");
  const auto w = class_weights(data.labels, static_cast<int>(cfg.classes), cfg.weights);
  const std::vector<float> alpha(w.begin(), w.end());
  nn::Adam<float> opt(model.parameters(), {.lr = lr});
  model.train();

  const int64_t n = static_cast<int64_t>(data.volumes.size());
  std::vector<int64_t> order(static_cast<size_t>(n));
  double epoch_loss = 0;
  for (int64_t epoch = 0; epoch < epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng rng = make_rng(seed, mix_seed(0xC1A5, static_cast<uint64_t>(epoch)));
    shuffle(order, rng);
    epoch_loss = 0;
    int64_t batches = 0;
    for (int64_t s = 0; s < n; s += cfg.batch) {
      const int64_t e = std::min(n, s + cfg.batch);
      std::vector<const Volume*> vols;
      std::vector<int64_t> labels;
      for (int64_t i = s; i < e; ++i) {
        vols.push_back(data.volumes[static_cast<size_t>(order[static_cast<size_t>(i)])]);
        labels.push_back(data.labels[static_cast<size_t>(order[static_cast<size_t>(i)])]);
      }
      Var<float> x(stack_volumes(vols));
      auto probs = ops::softmax(model.forward(x));
      auto loss = ops::focal_loss(probs, labels, static_cast<float>(cfg.focal_gamma), alpha);
      const double v = loss.item();
      if (!std::isfinite(v))
        throw std::runtime_error("classifier loss is not finite at epoch " + std::to_string(epoch));
      opt.zero_grad();
      loss.backward();
      opt.step();
      epoch_loss += v;
      ++batches;
    }
    epoch_loss /= static_cast<double>(batches);
  }
  return epoch_loss;
}

std::vector<double> predict_scores(ResNet3d<float>& model, const std::vector<const Volume*>& volumes, int64_t batch) {
  model.eval();
  ag::NoGradGuard guard;
  std::vector<double> out;
  const int64_t n = static_cast<int64_t>(volumes.size());
  for (int64_t s = 0; s < n; s += batch) {
    const int64_t e = std::min(n, s + batch);
    std::vector<const Volume*> vols(volumes.begin() + s, volumes.begin() + e);
    auto probs = ops::softmax(model.forward(Var<float>(stack_volumes(vols))));
    const int64_t K = probs.shape().back();
    for (int64_t i = 0; i < e - s; ++i) out.push_back(probs.value()[i * K + 1]);
  }
  return out;
}

// ---- metrics -------------------------------------------------------------------------

BinaryMetrics binary_metrics(const std::vector<double>& scores, const std::vector<int>& labels, double threshold) {
  if (scores.size() != labels.size()) throw std::invalid_argument("binary_metrics: one label per score");
  int64_t tp = 0, fp = 0, tn = 0, fn = 0;
  for (size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw std::invalid_argument("binary_metrics: labels must be 0 or 1");
    const bool pred = scores[i] >= threshold;
    if (labels[i] == 1) (pred ? tp : fn)++;
    else (pred ? fp : tn)++;
  }
  const int64_t pos = tp + fn, neg = tn + fp;
  if (pos == 0 || neg == 0) throw std::invalid_argument("binary_metrics: both classes must be present");

  // Mann-Whitney U from average ranks.
  std::vector<size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return scores[a] < scores[b]; });
  double pos_rank_sum = 0;
  for (size_t i = 0; i < idx.size();) {
    size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + 1 + j);
    for (size_t k = i; k < j; ++k)
      if (labels[idx[k]] == 1) pos_rank_sum += rank;
    i = j;
  }
  const double P = static_cast<double>(pos), N = static_cast<double>(neg);
  BinaryMetrics m;
  m.auc = (pos_rank_sum - P * (P + 1) / 2) / (P * N);
  m.accuracy = static_cast<double>(tp + tn) / (P + N);
  m.precision = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  m.recall = static_cast<double>(tp) / P;
  m.f1 = m.precision + m.recall > 0 ? 2 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
  return m;
}

namespace {

constexpr double BinaryMetrics::*kFields[] = {&BinaryMetrics::auc, &BinaryMetrics::f1, &BinaryMetrics::accuracy,
                                               &BinaryMetrics::precision, &BinaryMetrics::recall};
constexpr const char* kFieldNames[] = {"auc", "f1", "accuracy", "precision", "recall"};

nlohmann::json to_json(const BinaryMetrics& m) {
  nlohmann::json j;
  for (size_t i = 0; i < 5; ++i) j[kFieldNames[i]] = m.*kFields[i];
  return j;
}

}  // namespace

MetricSummary summarize(const std::vector<BinaryMetrics>& runs) {
  if (runs.empty()) throw std::invalid_argument("summarize: no runs");
  MetricSummary s;
  const double n = static_cast<double>(runs.size());
  for (auto f : kFields) {
    double mean = 0;
    for (const auto& r : runs) mean += r.*f;
    mean /= n;
    double var = 0;
    for (const auto& r : runs) var += (r.*f - mean) * (r.*f - mean);
    s.mean.*f = mean;
    s.sd.*f = std::sqrt(var / n);
  }
  return s;
}

// ---- protocols ---------------------------------------------------------------------

Protocol parse_protocol(const std::string& s) {
  if (s == "a") return Protocol::a;
  if (s == "b") return Protocol::b;
  if (s == "c") return Protocol::c;
  throw std::invalid_argument("unknown protocol '" + s + "' (a | b | c)");
}

std::string protocol_name(Protocol p) { return p == Protocol::a ? "a" : p == Protocol::b ? "b" : "c"; }

std::vector<std::vector<int64_t>> plan_validation(const std::vector<int>& labels, const TrialPlan& plan) {
  if (plan.trials < 1) throw std::invalid_argument("trial plan: need at least one trial");
  if (!(plan.train_fraction > 0 && plan.train_fraction < 1))
    throw std::invalid_argument("trial plan: train_fraction must lie in (0, 1)");
  std::vector<int64_t> by_class[2];
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw std::invalid_argument("trial plan: labels must be 0 or 1");
    by_class[labels[i]].push_back(static_cast<int64_t>(i));
  }
  const int64_t minority = static_cast<int64_t>(std::min(by_class[0].size(), by_class[1].size()));
  const int64_t per_class = std::llround((1.0 - plan.train_fraction) * static_cast<double>(minority));
  if (per_class < 1 || plan.trials * per_class >= minority)
    throw std::invalid_argument("trial plan infeasible: " + std::to_string(plan.trials) + " disjoint validation sets of " +
                                std::to_string(std::max<int64_t>(per_class, 1)) + " per class need more than " +
                                std::to_string(minority) + " minority-class samples");
  for (int c = 0; c < 2; ++c) {
    Rng rng = make_rng(plan.seed, mix_seed(0x7A1, static_cast<uint64_t>(c)));
    shuffle(by_class[c], rng);
  }
  std::vector<std::vector<int64_t>> out(static_cast<size_t>(plan.trials));
  for (int64_t t = 0; t < plan.trials; ++t) {
    auto& v = out[static_cast<size_t>(t)];
    for (int c = 0; c < 2; ++c)
      v.insert(v.end(), by_class[c].begin() + t * per_class, by_class[c].begin() + (t + 1) * per_class);
    std::sort(v.begin(), v.end());
  }
  return out;
}

namespace {

struct TrialSetup {
  std::vector<int64_t> train_idx[2];  // by class
  int minority = 1;
  int64_t pretrain_real = 0;  // protocol c: majority volumes used only for pretraining
};

void check_volumes(const std::vector<Volume>& vols, int64_t edge, const char* what) {
  for (const auto& v : vols)
    if (v.d != edge || v.h != edge || v.w != edge)
      throw std::invalid_argument(std::string(what) + " volume has shape " + v.shape_str() + ", expected " +
                                  std::to_string(edge) + "^3");
}

TrialResult run_trial(int64_t t, const TrialSetup& setup, const std::vector<int64_t>& val, const TrialPlan& plan,
                      const ClassifierConfig& cfg, const ClassifyData& data) {
  const uint64_t seed = mix_seed(plan.seed, static_cast<uint64_t>(t));
  Rng init = make_rng(seed, 0x1A17);
  ResNet3d<float> model(cfg, init);
  TrialResult r;
  r.trial = t;
  r.validation = val;

  const int mi = setup.minority, ma = 1 - setup.minority;
  TrainSet set;
  auto add = [&](const Volume* v, int label) {
    set.volumes.push_back(v);
    set.labels.push_back(label);
  };
  std::vector<Volume> extra;

  switch (plan.protocol) {
    case Protocol::a:
      for (int c = 0; c < 2; ++c)
        for (int64_t i : setup.train_idx[c]) add(&data.train[static_cast<size_t>(i)], c);
      break;
    case Protocol::b: {
      const auto& mins = setup.train_idx[mi];
      const size_t need = setup.train_idx[ma].size() - mins.size();
      Rng pick = make_rng(seed, 0xB0B);
      for (size_t k = 0; k < need; ++k) {
        const int64_t src = mins[static_cast<size_t>(uniform_index(pick, mins.size()))];
        extra.push_back(augment_traditional(data.train[static_cast<size_t>(src)], mix_seed(seed, 0xA000 + k), cfg.augment));
      }
      for (int c = 0; c < 2; ++c)
        for (int64_t i : setup.train_idx[c]) add(&data.train[static_cast<size_t>(i)], c);
      for (const auto& v : extra) add(&v, mi);
      break;
    }
    case Protocol::c: {
      auto majority = setup.train_idx[ma];
      Rng split = make_rng(seed, 0xC0C);
      shuffle(majority, split);
      const auto synth = sample_without_replacement(split, static_cast<int64_t>(data.synthetic.size()), setup.pretrain_real);
      TrainSet pre;
      for (int64_t k = 0; k < setup.pretrain_real; ++k) {
        pre.volumes.push_back(&data.train[static_cast<size_t>(majority[static_cast<size_t>(k)])]);
        pre.labels.push_back(ma);
        pre.volumes.push_back(&data.synthetic[static_cast<size_t>(synth[static_cast<size_t>(k)])]);
        pre.labels.push_back(mi);
      }
      train_classifier(model, pre, cfg, cfg.epochs, cfg.lr, mix_seed(seed, 1));
      r.pretrain_count = static_cast<int64_t>(pre.volumes.size());
      for (size_t k = static_cast<size_t>(setup.pretrain_real); k < majority.size(); ++k)
        add(&data.train[static_cast<size_t>(majority[k])], ma);
      for (int64_t i : setup.train_idx[mi]) add(&data.train[static_cast<size_t>(i)], mi);
      break;
    }
  }
  r.train_count = static_cast<int64_t>(set.volumes.size());
  if (plan.protocol == Protocol::c)
    r.final_loss = train_classifier(model, set, cfg, cfg.finetune_epochs, cfg.finetune_lr, mix_seed(seed, 2));
  else
    r.final_loss = train_classifier(model, set, cfg, cfg.epochs, cfg.lr, mix_seed(seed, 2));

  std::vector<const Volume*> vv;
  std::vector<int> vl;
  for (int64_t i : val) {
    vv.push_back(&data.train[static_cast<size_t>(i)]);
    vl.push_back(data.train_labels[static_cast<size_t>(i)]);
  }
  r.val = binary_metrics(predict_scores(model, vv), vl);
  std::vector<const Volume*> tv;
  for (const auto& v : data.test) tv.push_back(&v);
  r.test = binary_metrics(predict_scores(model, tv), data.test_labels);
  return r;
}

}  // namespace

ProtocolResult run_protocol(const TrialPlan& plan, const ClassifierConfig& cfg, const ClassifyData& data) {
  cfg.validate();
  if (cfg.classes != 2) throw std::invalid_argument("run_protocol: the harness is binary");
  if (data.train.size() != data.train_labels.size() || data.test.size() != data.test_labels.size())
    throw std::invalid_argument("run_protocol: one label per volume");
  check_volumes(data.train, cfg.in_edge, "training");
  check_volumes(data.test, cfg.in_edge, "test");
  check_volumes(data.synthetic, cfg.in_edge, "synthetic");
  int64_t test_count[2] = {0, 0};
  for (int l : data.test_labels) {
    if (l != 0 && l != 1) throw std::invalid_argument("run_protocol: test labels must be 0 or 1");
    ++test_count[l];
  }
  if (!test_count[0] || !test_count[1]) throw std::invalid_argument("run_protocol: test set needs both classes");

  const auto vals = plan_validation(data.train_labels, plan);
  int64_t counts[2] = {0, 0};
  for (int l : data.train_labels) ++counts[l];
  const int minority = counts[1] <= counts[0] ? 1 : 0;

  std::vector<TrialSetup> setups(vals.size());
  for (size_t t = 0; t < vals.size(); ++t) {
    auto& s = setups[t];
    s.minority = minority;
    std::vector<bool> held(data.train.size(), false);
    for (int64_t i : vals[t]) held[static_cast<size_t>(i)] = true;
    for (size_t i = 0; i < data.train.size(); ++i)
      if (!held[i]) s.train_idx[data.train_labels[i]].push_back(static_cast<int64_t>(i));
    if (plan.protocol == Protocol::c) {
      const auto n_min = static_cast<int64_t>(s.train_idx[minority].size());
      const auto n_maj = static_cast<int64_t>(s.train_idx[1 - minority].size());
      s.pretrain_real = n_maj - n_min;
      if (s.pretrain_real < 1)
        throw std::invalid_argument("protocol c infeasible: no majority-class volumes left for pretraining");
      if (static_cast<int64_t>(data.synthetic.size()) < s.pretrain_real)
        throw std::invalid_argument("protocol c infeasible: pretraining needs " + std::to_string(s.pretrain_real) +
                                    " synthetic volumes, have " + std::to_string(data.synthetic.size()));
    }
  }

  ProtocolResult out;
  out.protocol = plan.protocol;
  out.trials.resize(vals.size());
  std::vector<std::exception_ptr> errors(vals.size());
  std::vector<std::thread> workers;
  for (size_t t = 0; t < vals.size(); ++t)
    workers.emplace_back([&, t] {
      try {
        out.trials[t] = run_trial(static_cast<int64_t>(t), setups[t], vals[t], plan, cfg, data);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  for (auto& w : workers) w.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  std::vector<BinaryMetrics> test;
  for (const auto& r : out.trials) test.push_back(r.test);
  out.test = summarize(test);
  return out;
}

std::string ProtocolResult::jsonl() const {
  std::ostringstream os;
  for (const auto& r : trials) {
    nlohmann::json j;
    j["protocol"] = protocol_name(protocol);
    j["trial"] = r.trial;
    j["train_count"] = r.train_count;
    j["pretrain_count"] = r.pretrain_count;
    j["final_loss"] = r.final_loss;
    j["validation"] = r.validation;
    j["val"] = to_json(r.val);
    j["test"] = to_json(r.test);
    os << j.dump() << '\n';
  }
  nlohmann::json agg;
  agg["protocol"] = protocol_name(protocol);
  agg["trials"] = trials.size();
  agg["mean"] = to_json(test.mean);
  agg["sd"] = to_json(test.sd);
  os << agg.dump() << '\n';
  return os.str();
}

std::string ProtocolResult::table() const {
  std::ostringstream os;
  os << "protocol " << protocol_name(protocol) << ", " << trials.size() << " trials (test set, mean +/- sd)\n";
  os << std::fixed << std::setprecision(3);
  for (size_t i = 0; i < 5; ++i)
    os << "  " << std::left << std::setw(10) << kFieldNames[i] << test.mean.*kFields[i] << " +/- " << test.sd.*kFields[i]
       << '\n';
  return os.str();
}

}  // namespace vq3d
