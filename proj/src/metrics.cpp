#include "vq3d/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>

#include <Eigen/Eigenvalues>

#include "vq3d/ops.hpp"
#include "vq3d/random.hpp"
#include "vq3d/vqgan.hpp"

namespace vq3d {

MmdKernel parse_kernel(const std::string& s) {
  if (s == "linear") return MmdKernel::linear;
  if (s == "rbf") return MmdKernel::rbf;
  throw std::invalid_argument("unknown MMD kernel '" + s + "' (expected linear or rbf)");
}

std::string kernel_name(MmdKernel k) { return k == MmdKernel::linear ? "linear" : "rbf"; }

// ---- MMD ----------------------------------------------------------------------------

double mmd2_batch(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, MmdKernel kernel) {
  const int64_t B = x.rows();
  if (B < 2 || y.rows() != B || x.cols() != y.cols())
    throw std::invalid_argument("mmd2_batch: need two batches of equal size >= 2");
  Eigen::MatrixXd z(2 * B, x.cols());
  z << x, y;
  Eigen::MatrixXd g = z * z.transpose();
  Eigen::MatrixXd k = g;
  if (kernel == MmdKernel::rbf) {
    Eigen::MatrixXd d2(2 * B, 2 * B);
    std::vector<double> off;
    for (int64_t i = 0; i < 2 * B; ++i)
      for (int64_t j = 0; j < 2 * B; ++j) {
        d2(i, j) = std::max(0.0, g(i, i) + g(j, j) - 2 * g(i, j));
        if (i < j) off.push_back(d2(i, j));
      }
    std::nth_element(off.begin(), off.begin() + static_cast<int64_t>(off.size() / 2), off.end());
    double med = off[off.size() / 2];
    if (med <= 0) med = 1.0;
    k = (-d2 / (2 * med)).array().exp().matrix();
  }
  double s = 0;
  for (int64_t i = 0; i < B; ++i)
    for (int64_t j = 0; j < B; ++j)
      if (i != j) s += k(i, j) + k(B + i, B + j) - k(i, B + j) - k(j, B + i);
  return s / static_cast<double>(B * (B - 1));
}

double mmd2(const std::vector<Volume>& real, const std::vector<Volume>& gen, int64_t batch, int64_t tests, uint64_t seed,
            MmdKernel kernel) {
  if (batch < 2) throw std::invalid_argument("mmd2: batch size must be >= 2");
  if (static_cast<int64_t>(real.size()) < batch || static_cast<int64_t>(gen.size()) < batch)
    throw std::invalid_argument("mmd2: sets of size " + std::to_string(real.size()) + " and " +
                                std::to_string(gen.size()) + " are smaller than batch " + std::to_string(batch));
  if (tests < 1) throw std::invalid_argument("mmd2: tests must be positive");
  const int64_t n = real[0].size();
  auto rows = [&](const std::vector<Volume>& set, const std::vector<int64_t>& idx) {
    Eigen::MatrixXd m(static_cast<int64_t>(idx.size()), n);
    for (size_t r = 0; r < idx.size(); ++r) {
      const auto& v = set[static_cast<size_t>(idx[r])];
      if (v.size() != n) throw std::invalid_argument("mmd2: volumes differ in size");
      for (int64_t c = 0; c < n; ++c) m(static_cast<int64_t>(r), c) = v.data[static_cast<size_t>(c)];
    }
    return m;
  };
  double total = 0;
  for (int64_t t = 0; t < tests; ++t) {
    Rng ra = make_rng(seed, static_cast<uint64_t>(t));
    Rng rb = make_rng(seed, static_cast<uint64_t>(t));
    auto ia = sample_without_replacement(ra, static_cast<int64_t>(real.size()), batch);
    auto ib = sample_without_replacement(rb, static_cast<int64_t>(gen.size()), batch);
    total += mmd2_batch(rows(real, ia), rows(gen, ib), kernel);
  }
  return total / static_cast<double>(tests);
}

// ---- SSIM -----------------------------------------------------------------------------

namespace {

const double kMsWeights[5] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};

std::vector<double> gauss_kernel(int64_t size, double sigma) {
  std::vector<double> k(static_cast<size_t>(size));
  double s = 0;
  for (int64_t i = 0; i < size; ++i) {
    const double x = static_cast<double>(i) - static_cast<double>(size - 1) / 2;
    s += k[i] = std::exp(-x * x / (2 * sigma * sigma));
  }
  for (auto& v : k) v /= s;
  return k;
}

// Dense row-major array with up to three axes; valid filtering along one axis.
struct Grid {
  std::vector<int64_t> dims;
  std::vector<double> v;
};

Grid filter_axis(const Grid& g, int axis, const std::vector<double>& k) {
  const int64_t K = static_cast<int64_t>(k.size());
  Grid out;
  out.dims = g.dims;
  out.dims[axis] = g.dims[axis] - K + 1;
  int64_t inner = 1, outer = 1;
  for (size_t a = axis + 1; a < g.dims.size(); ++a) inner *= g.dims[a];
  for (int a = 0; a < axis; ++a) outer *= g.dims[a];
  const int64_t n_in = g.dims[axis], n_out = out.dims[axis];
  out.v.assign(static_cast<size_t>(outer * n_out * inner), 0.0);
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t i = 0; i < n_out; ++i) {
      double* dst = out.v.data() + (o * n_out + i) * inner;
      for (int64_t t = 0; t < K; ++t) {
        const double* src = g.v.data() + (o * n_in + i + t) * inner;
        for (int64_t j = 0; j < inner; ++j) dst[j] += k[t] * src[j];
      }
    }
  return out;
}

Grid filter_all(const Grid& g, const std::vector<double>& k) {
  Grid r = g;
  for (int a = 0; a < static_cast<int>(g.dims.size()); ++a) r = filter_axis(r, a, k);
  return r;
}

Grid product(const Grid& a, const Grid& b) {
  Grid r = a;
  for (size_t i = 0; i < r.v.size(); ++i) r.v[i] *= b.v[i];
  return r;
}

struct SsimParts {
  double ssim = 0;  // mean of l * cs
  double cs = 0;    // mean of cs
};

SsimParts ssim_parts(const Grid& a, const Grid& b, int64_t window, double sigma, double range) {
  for (size_t i = 0; i < a.dims.size(); ++i)
    if (a.dims[i] < window)
      throw std::invalid_argument("ssim: extent " + std::to_string(a.dims[i]) + " is smaller than the " +
                                  std::to_string(window) + "-wide window");
  const auto k = gauss_kernel(window, sigma);
  const double c1 = (0.01 * range) * (0.01 * range), c2 = (0.03 * range) * (0.03 * range);
  auto mu_a = filter_all(a, k), mu_b = filter_all(b, k);
  auto saa = filter_all(product(a, a), k), sbb = filter_all(product(b, b), k), sab = filter_all(product(a, b), k);
  SsimParts p;
  const size_t n = mu_a.v.size();
  for (size_t i = 0; i < n; ++i) {
    const double ma = mu_a.v[i], mb = mu_b.v[i];
    const double va = saa.v[i] - ma * ma, vb = sbb.v[i] - mb * mb, cov = sab.v[i] - ma * mb;
    const double cs = (2 * cov + c2) / (va + vb + c2);
    const double l = (2 * ma * mb + c1) / (ma * ma + mb * mb + c1);
    p.cs += cs;
    p.ssim += l * cs;
  }
  p.cs /= static_cast<double>(n);
  p.ssim /= static_cast<double>(n);
  return p;
}

Grid to_grid(const Slice2D& s) {
  Grid g;
  g.dims = {s.rows, s.cols};
  g.v.assign(s.data.begin(), s.data.end());
  return g;
}

Grid pool2(const Grid& g) {
  Grid r;
  r.dims = {g.dims[0] / 2, g.dims[1] / 2};
  r.v.resize(static_cast<size_t>(r.dims[0] * r.dims[1]));
  for (int64_t i = 0; i < r.dims[0]; ++i)
    for (int64_t j = 0; j < r.dims[1]; ++j) {
      const int64_t c = g.dims[1];
      r.v[i * r.dims[1] + j] = 0.25 * (g.v[(2 * i) * c + 2 * j] + g.v[(2 * i) * c + 2 * j + 1] +
                                       g.v[(2 * i + 1) * c + 2 * j] + g.v[(2 * i + 1) * c + 2 * j + 1]);
    }
  return r;
}

}  // namespace

int64_t ms_ssim_min_edge(const SsimOptions& o) { return o.window << (o.scales - 1); }

double ssim2d(const Slice2D& a, const Slice2D& b, const SsimOptions& o) {
  if (a.rows != b.rows || a.cols != b.cols) throw std::invalid_argument("ssim2d: image sizes differ");
  return ssim_parts(to_grid(a), to_grid(b), o.window, o.sigma, o.range).ssim;
}

double ms_ssim2d(const Slice2D& a, const Slice2D& b, const SsimOptions& o) {
  if (a.rows != b.rows || a.cols != b.cols) throw std::invalid_argument("ms_ssim2d: image sizes differ");
  if (o.scales < 1 || o.scales > 5) throw std::invalid_argument("ms_ssim2d: scales must lie in [1, 5]");
  const int64_t need = ms_ssim_min_edge(o);
  if (std::min(a.rows, a.cols) < need)
    throw std::invalid_argument("ms_ssim2d: images of " + std::to_string(a.rows) + "x" + std::to_string(a.cols) +
                                " are too small for " + std::to_string(o.scales) + " scales with window " +
                                std::to_string(o.window) + " (minimum edge " + std::to_string(need) + ")");
  double wsum = 0;
  for (int64_t s = 0; s < o.scales; ++s) wsum += kMsWeights[s];
  Grid ga = to_grid(a), gb = to_grid(b);
  double out = 1;
  for (int64_t s = 0; s < o.scales; ++s) {
    const auto p = ssim_parts(ga, gb, o.window, o.sigma, o.range);
    const double w = kMsWeights[s] / wsum;
    const double f = s + 1 == o.scales ? p.ssim : p.cs;
    out *= std::pow(std::max(f, 0.0), w);
    if (s + 1 < o.scales) {
      ga = pool2(ga);
      gb = pool2(gb);
    }
  }
  return out;
}

double ms_ssim_volume(const Volume& a, const Volume& b, const SsimOptions& o) {
  if (!a.same_shape(b)) throw std::invalid_argument("ms_ssim_volume: " + a.shape_str() + " vs " + b.shape_str());
  const int64_t n = slice_count(a, SlicePlane::axial);
  double s = 0;
  for (int64_t i = 0; i < n; ++i) s += ms_ssim2d(slice(a, SlicePlane::axial, i), slice(b, SlicePlane::axial, i), o);
  return s / static_cast<double>(n);
}

double ms_ssim_pairwise(const std::vector<Volume>& set, int64_t pairs, uint64_t seed, const SsimOptions& o) {
  const int64_t n = static_cast<int64_t>(set.size());
  if (n < 2) throw std::invalid_argument("ms_ssim_pairwise: need at least two volumes");
  if (pairs < 1) throw std::invalid_argument("ms_ssim_pairwise: pairs must be positive");
  double s = 0;
  for (int64_t p = 0; p < pairs; ++p) {
    Rng rng = make_rng(seed, static_cast<uint64_t>(p));
    auto ij = sample_without_replacement(rng, n, 2);
    s += ms_ssim_volume(set[ij[0]], set[ij[1]], o);
  }
  return s / static_cast<double>(pairs);
}

// ---- FID -------------------------------------------------------------------------------

GaussianStats gaussian_stats(const Eigen::MatrixXd& rows) {
  if (rows.rows() < 2) throw std::invalid_argument("gaussian_stats: need at least two samples");
  GaussianStats g;
  g.count = rows.rows();
  g.mean = rows.colwise().mean().transpose();
  Eigen::MatrixXd c = rows.rowwise() - g.mean.transpose();
  g.cov = (c.transpose() * c) / static_cast<double>(rows.rows() - 1);
  return g;
}

double frechet_distance(const GaussianStats& a, const GaussianStats& b, double eps) {
  if (a.mean.size() != b.mean.size()) throw std::invalid_argument("frechet_distance: dimensions differ");
  const int64_t d = a.mean.size();
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(d, d);
  const Eigen::MatrixXd s1 = a.cov + eps * I, s2 = b.cov + eps * I;
  // tr sqrt(S1 S2) = tr sqrt(S1^{1/2} S2 S1^{1/2}), which is symmetric.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> e1(s1);
  const Eigen::VectorXd l1 = e1.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  const Eigen::MatrixXd r1 = e1.eigenvectors() * l1.asDiagonal() * e1.eigenvectors().transpose();
  Eigen::MatrixXd m = r1 * s2 * r1;
  m = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> em(m, Eigen::EigenvaluesOnly);
  const double tr_sqrt = em.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  return (a.mean - b.mean).squaredNorm() + s1.trace() + s2.trace() - 2 * tr_sqrt;
}

std::string extractor_id(uint64_t extractor_seed) { return PerceptualExtractor<double>(extractor_seed).id(); }

Eigen::MatrixXd slice_features(const std::vector<Volume>& set, SlicePlane plane, uint64_t extractor_seed) {
  if (set.empty()) throw std::invalid_argument("slice_features: empty set");
  PerceptualExtractor<double> f(extractor_seed);
  const auto op = static_cast<ops::Plane>(static_cast<int>(plane));
  std::vector<Eigen::VectorXd> rows;
  for (const auto& v : set) {
    Tensor<double> t({1, 1, v.d, v.h, v.w});
    for (int64_t i = 0; i < v.size(); ++i) t[i] = v.data[static_cast<size_t>(i)];
    const int64_t n = slice_count(v, plane);
    std::vector<int64_t> idx(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) idx[i] = i;
    auto feats = f.pooled_features(ops::extract_slices(ag::Var<double>(t), op, {idx}, 3));
    const int64_t D = PerceptualExtractor<double>::kFeatureDim;
    for (int64_t i = 0; i < n; ++i) rows.push_back(Eigen::Map<const Eigen::VectorXd>(feats.data() + i * D, D));
  }
  Eigen::MatrixXd m(static_cast<int64_t>(rows.size()), rows[0].size());
  for (size_t i = 0; i < rows.size(); ++i) m.row(static_cast<int64_t>(i)) = rows[i].transpose();
  return m;
}

double fid_plane(const std::vector<Volume>& real, const std::vector<Volume>& gen, SlicePlane plane,
                 uint64_t extractor_seed) {
  if (real.empty() || gen.empty()) throw std::invalid_argument("fid_plane: both sets must be nonempty");
  return frechet_distance(gaussian_stats(slice_features(real, plane, extractor_seed)),
                          gaussian_stats(slice_features(gen, plane, extractor_seed)));
}

// ---- reconstruction ----------------------------------------------------------------------

double ssim3d(const Volume& a, const Volume& b, int64_t window, double sigma) {
  if (!a.same_shape(b)) throw std::invalid_argument("ssim3d: " + a.shape_str() + " vs " + b.shape_str());
  Grid ga{{a.d, a.h, a.w}, std::vector<double>(a.data.begin(), a.data.end())};
  Grid gb{{b.d, b.h, b.w}, std::vector<double>(b.data.begin(), b.data.end())};
  return ssim_parts(ga, gb, window, sigma, 2.0).ssim;
}

double psnr(const Volume& a, const Volume& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("psnr: " + a.shape_str() + " vs " + b.shape_str());
  double mse = 0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    const double d = static_cast<double>(a.data[i]) - static_cast<double>(b.data[i]);
    mse += d * d;
  }
  mse /= static_cast<double>(a.data.size());
  if (mse == 0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(4.0 / mse));
}

NearestMatch nearest_real(const Volume& gen, const std::vector<Volume>& real) {
  if (real.empty()) throw std::invalid_argument("nearest_real: empty real set");
  NearestMatch best;
  for (size_t i = 0; i < real.size(); ++i) {
    const double s = ssim3d(gen, real[i]);
    if (best.index < 0 || s > best.score) best = {static_cast<int64_t>(i), s};
  }
  return best;
}

// ---- report ----------------------------------------------------------------------------

void MetricsReport::add(std::string name, double value, nlohmann::json config, uint64_t seed) {
  records.push_back({std::move(name), value, std::move(config), seed});
}

std::string MetricsReport::jsonl() const {
  std::string out;
  for (const auto& r : records) {
    nlohmann::json j;
    j["metric"] = r.name;
    j["value"] = r.value;
    j["config"] = r.config;
    j["seed"] = r.seed;
    out += j.dump() + "\n";
  }
  return out;
}

std::string MetricsReport::table() const {
  size_t w = 6;
  for (const auto& r : records) w = std::max(w, r.name.size());
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(w)) << "metric" << "  " << std::right << std::setw(14) << "value"
     << "  config\n";
  for (const auto& r : records)
    os << std::left << std::setw(static_cast<int>(w)) << r.name << "  " << std::right << std::setw(14)
       << std::setprecision(6) << r.value << "  " << r.config.dump() << "\n";
  return os.str();
}

}  // namespace vq3d
