#include "vq3d/volume.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "vq3d/fileio.hpp"
#include "vq3d/random.hpp"

namespace vq3d {

Volume::Volume(int64_t d_, int64_t h_, int64_t w_, float fill) : d(d_), h(h_), w(w_) {
  if (d < 0 || h < 0 || w < 0) throw std::invalid_argument("negative volume extent");
  data.assign(static_cast<size_t>(d * h * w), fill);
}

std::string Volume::shape_str() const {
  return std::to_string(d) + "x" + std::to_string(h) + "x" + std::to_string(w);
}

SegmentationMask::SegmentationMask(int64_t d_, int64_t h_, int64_t w_, uint8_t fill) : d(d_), h(h_), w(w_) {
  data.assign(static_cast<size_t>(d * h * w), fill);
}

SegmentationMask SegmentationMask::from_volume(const Volume& v) {
  SegmentationMask m(v.d, v.h, v.w);
  for (size_t i = 0; i < v.data.size(); ++i) m.data[i] = v.data[i] != 0.f;
  return m;
}

SlicePlane parse_plane(const std::string& s) {
  if (s == "axial") return SlicePlane::axial;
  if (s == "coronal") return SlicePlane::coronal;
  if (s == "sagittal") return SlicePlane::sagittal;
  throw std::invalid_argument("unknown plane '" + s + "' (expected axial, coronal or sagittal)");
}

std::string plane_name(SlicePlane p) {
  switch (p) {
    case SlicePlane::axial: return "axial";
    case SlicePlane::coronal: return "coronal";
    case SlicePlane::sagittal: return "sagittal";
  }
  return "?";
}

Volume normalize(const Volume& raw) {
  if (raw.size() == 0) throw std::invalid_argument("normalize: empty volume");
  float lo = raw.data[0], hi = raw.data[0];
  for (float v : raw.data) {
    if (!std::isfinite(v)) throw std::invalid_argument("normalize: non-finite voxel in input");
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  Volume out = raw;
  if (hi <= lo) {
    std::fill(out.data.begin(), out.data.end(), -1.f);
    return out;
  }
  const double range = static_cast<double>(hi) - lo;
  for (float& v : out.data) v = static_cast<float>(2.0 * (static_cast<double>(v) - lo) / range - 1.0);
  return out;
}

Volume extract_roi(const Volume& brain, const SegmentationMask& mask, int64_t target) {
  if (brain.d != mask.d || brain.h != mask.h || brain.w != mask.w)
    throw std::invalid_argument("extract_roi: brain " + brain.shape_str() + " and mask shapes differ");
  if (target <= 0) throw std::invalid_argument("extract_roi: target edge must be positive");
  Volume prod(brain.d, brain.h, brain.w);
  bool any_mask = false;
  for (size_t i = 0; i < prod.data.size(); ++i) {
    any_mask |= mask.data[i] != 0;
    prod.data[i] = mask.data[i] ? brain.data[i] : 0.f;
  }
  if (!any_mask) throw std::invalid_argument("extract_roi: no ROI present (mask is empty)");

  std::vector<char> keep_d(brain.d, 0), keep_h(brain.h, 0), keep_w(brain.w, 0);
  for (int64_t z = 0; z < prod.d; ++z)
    for (int64_t y = 0; y < prod.h; ++y)
      for (int64_t x = 0; x < prod.w; ++x)
        if (prod.at(z, y, x) != 0.f) keep_d[z] = keep_h[y] = keep_w[x] = 1;
  auto kept = [](const std::vector<char>& k) {
    std::vector<int64_t> idx;
    for (size_t i = 0; i < k.size(); ++i)
      if (k[i]) idx.push_back(static_cast<int64_t>(i));
    return idx;
  };
  const auto kd = kept(keep_d), kh = kept(keep_h), kw = kept(keep_w);
  if (kd.empty()) throw std::invalid_argument("extract_roi: no ROI present (masked region is all zero)");

  // Offsets place the compacted region's centre on the target's centre.
  auto offset = [target](int64_t len) { return (target - len) / 2; };
  const int64_t od = offset(static_cast<int64_t>(kd.size()));
  const int64_t oh = offset(static_cast<int64_t>(kh.size()));
  const int64_t ow = offset(static_cast<int64_t>(kw.size()));

  Volume out(target, target, target);
  out.spacing = brain.spacing;
  for (int64_t z = 0; z < target; ++z) {
    const int64_t sz = z - od;
    if (sz < 0 || sz >= static_cast<int64_t>(kd.size())) continue;
    for (int64_t y = 0; y < target; ++y) {
      const int64_t sy = y - oh;
      if (sy < 0 || sy >= static_cast<int64_t>(kh.size())) continue;
      for (int64_t x = 0; x < target; ++x) {
        const int64_t sx = x - ow;
        if (sx < 0 || sx >= static_cast<int64_t>(kw.size())) continue;
        out.at(z, y, x) = prod.at(kd[sz], kh[sy], kw[sx]);
      }
    }
  }
  return out;
}

int64_t slice_count(const Volume& v, SlicePlane plane) {
  switch (plane) {
    case SlicePlane::axial: return v.w;
    case SlicePlane::coronal: return v.h;
    case SlicePlane::sagittal: return v.d;
  }
  return 0;
}

Slice2D slice(const Volume& v, SlicePlane plane, int64_t i) {
  const int64_t n = slice_count(v, plane);
  if (i < 0 || i >= n)
    throw std::out_of_range(plane_name(plane) + " slice " + std::to_string(i) + " outside [0, " + std::to_string(n) + ")");
  Slice2D s;
  switch (plane) {
    case SlicePlane::axial:
      s.rows = v.d, s.cols = v.h;
      for (int64_t z = 0; z < v.d; ++z)
        for (int64_t y = 0; y < v.h; ++y) s.data.push_back(v.at(z, y, i));
      break;
    case SlicePlane::coronal:
      s.rows = v.d, s.cols = v.w;
      for (int64_t z = 0; z < v.d; ++z)
        for (int64_t x = 0; x < v.w; ++x) s.data.push_back(v.at(z, i, x));
      break;
    case SlicePlane::sagittal:
      s.rows = v.h, s.cols = v.w;
      s.data.assign(v.data.begin() + i * v.h * v.w, v.data.begin() + (i + 1) * v.h * v.w);
      break;
  }
  return s;
}

Volume restack(const std::vector<Slice2D>& slices, SlicePlane plane) {
  if (slices.empty()) throw std::invalid_argument("restack: no slices");
  const int64_t n = static_cast<int64_t>(slices.size());
  const int64_t r = slices[0].rows, c = slices[0].cols;
  for (const auto& s : slices)
    if (s.rows != r || s.cols != c) throw std::invalid_argument("restack: slice shapes differ");
  Volume v;
  switch (plane) {
    case SlicePlane::axial: v = Volume(r, c, n); break;
    case SlicePlane::coronal: v = Volume(r, n, c); break;
    case SlicePlane::sagittal: v = Volume(n, r, c); break;
  }
  for (int64_t i = 0; i < n; ++i)
    for (int64_t a = 0; a < r; ++a)
      for (int64_t b = 0; b < c; ++b) {
        const float val = slices[i].at(a, b);
        switch (plane) {
          case SlicePlane::axial: v.at(a, b, i) = val; break;
          case SlicePlane::coronal: v.at(a, i, b) = val; break;
          case SlicePlane::sagittal: v.at(i, a, b) = val; break;
        }
      }
  return v;
}

namespace {

struct Blob {
  double c[3];
  double inv_r[3];
  double rot[3][3];
  double amp;
};

}  // namespace

Volume make_synthetic_roi(uint64_t seed, int64_t edge, int blobs) {
  if (edge < 16) throw std::invalid_argument("make_synthetic_roi: edge must be >= 16");
  if (blobs < 1) throw std::invalid_argument("make_synthetic_roi: need at least one blob");
  Rng rng = make_rng(seed, 0x5EED);
  const double e = static_cast<double>(edge);
  const double margin = std::max(2.0, e / 8);

  std::vector<Blob> bl(static_cast<size_t>(blobs));
  for (auto& b : bl) {
    double rmax = e;
    for (double& c : b.c) {
      c = uniform(rng, 0.35 * e, 0.65 * e);
      rmax = std::min({rmax, c - margin, e - 1 - margin - c});
    }
    for (double& ir : b.inv_r) ir = 1.0 / std::min(rmax, uniform(rng, 0.12 * e, 0.3 * e));
    // Rotation from two random angles (yaw about depth, pitch about height).
    const double a = uniform(rng, 0, M_PI), p = uniform(rng, 0, M_PI);
    const double ca = std::cos(a), sa = std::sin(a), cp = std::cos(p), sp = std::sin(p);
    const double r[3][3] = {{cp, 0, sp}, {sa * sp, ca, -sa * cp}, {-ca * sp, sa, ca * cp}};
    std::memcpy(b.rot, r, sizeof r);
    b.amp = uniform(rng, 0.5, 1.0);
  }

  struct Wave {
    double k[3], phase, amp;
  };
  std::vector<Wave> waves(4);
  for (auto& wv : waves) {
    const double f = uniform(rng, 1.0, 3.0) * 2 * M_PI / e;
    double dir[3] = {normal(rng), normal(rng), normal(rng)};
    const double n = std::sqrt(dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]) + 1e-12;
    for (int i = 0; i < 3; ++i) wv.k[i] = f * dir[i] / n;
    wv.phase = uniform(rng, 0, 2 * M_PI);
    wv.amp = uniform(rng, 0.05, 0.15);
  }

  Volume raw(edge, edge, edge);
  for (int64_t z = 0; z < edge; ++z)
    for (int64_t y = 0; y < edge; ++y)
      for (int64_t x = 0; x < edge; ++x) {
        const double p[3] = {static_cast<double>(z), static_cast<double>(y), static_cast<double>(x)};
        double val = 0;
        bool inside = false;
        for (const auto& b : bl) {
          const double dp[3] = {p[0] - b.c[0], p[1] - b.c[1], p[2] - b.c[2]};
          double q = 0;
          for (int i = 0; i < 3; ++i) {
            const double u = (b.rot[i][0] * dp[0] + b.rot[i][1] * dp[1] + b.rot[i][2] * dp[2]) * b.inv_r[i];
            q += u * u;
          }
          if (q < 1.0) {
            inside = true;
            val += b.amp * (0.5 + 0.5 * (1.0 - q));
          }
        }
        if (!inside) continue;
        double tex = 1.0;
        for (const auto& wv : waves) tex += wv.amp * std::sin(wv.k[0] * p[0] + wv.k[1] * p[1] + wv.k[2] * p[2] + wv.phase);
        raw.at(z, y, x) = static_cast<float>(val * tex);
      }
  return normalize(raw);
}

Volume preprocess_case(const Volume& brain, const SegmentationMask& mask, int64_t target) {
  return normalize(extract_roi(brain, mask, target));
}

SyntheticCase make_synthetic_case(uint64_t seed, int64_t roi_edge, int blobs) {
  const Volume roi = make_synthetic_roi(seed, roi_edge, blobs);
  const int64_t E = roi_edge * 3 / 2;
  Rng rng = make_rng(seed, 0xCA5E);
  int64_t off[3];
  for (auto& o : off) o = static_cast<int64_t>(uniform_index(rng, static_cast<uint64_t>(E - roi_edge + 1)));
  const double f = 2 * M_PI / static_cast<double>(E);
  SyntheticCase c{Volume(E, E, E), SegmentationMask(E, E, E)};
  for (int64_t z = 0; z < E; ++z)
    for (int64_t y = 0; y < E; ++y)
      for (int64_t x = 0; x < E; ++x)
        c.brain.at(z, y, x) = static_cast<float>(0.3 + 0.05 * std::sin(f * z) * std::cos(f * (x + y)));
  for (int64_t z = 0; z < roi_edge; ++z)
    for (int64_t y = 0; y < roi_edge; ++y)
      for (int64_t x = 0; x < roi_edge; ++x) {
        const float v = roi.at(z, y, x);
        if (v <= -1.f) continue;
        c.brain.at(z + off[0], y + off[1], x + off[2]) = 0.5f + 0.5f * (v + 1.f);
        c.mask.at(z + off[0], y + off[1], x + off[2]) = 1;
      }
  return c;
}

// ---- raw format ----------------------------------------------------------------

void write_raw(const Volume& v, const std::filesystem::path& path) {
  ByteWriter bw;
  bw.bytes("VQ3D", 4);
  bw.i32(static_cast<int32_t>(v.d));
  bw.i32(static_cast<int32_t>(v.h));
  bw.i32(static_cast<int32_t>(v.w));
  bw.bytes(v.data.data(), v.data.size() * sizeof(float));
  write_file_atomic(path, bw.buffer());
}

Volume read_raw(const std::filesystem::path& path) {
  const std::string buf = read_file(path);
  ByteReader br(buf, path.string());
  char magic[4];
  br.bytes(magic, 4);
  if (std::memcmp(magic, "VQ3D", 4) != 0) throw std::runtime_error(path.string() + ": bad magic (not a VQ3D volume)");
  const int32_t d = br.i32(), h = br.i32(), w = br.i32();
  if (d < 0 || h < 0 || w < 0) throw std::runtime_error(path.string() + ": negative dimension");
  Volume v(d, h, w);
  if (br.remaining() != v.data.size() * sizeof(float))
    throw std::runtime_error(path.string() + ": payload size does not match " + v.shape_str());
  br.bytes(v.data.data(), v.data.size() * sizeof(float));
  return v;
}

// ---- NIfTI-1 -------------------------------------------------------------------

namespace {

constexpr int kHdr = 348;

template <typename V>
V get(const std::string& b, size_t off, bool swap) {
  V v;
  std::memcpy(&v, b.data() + off, sizeof(V));
  if (swap) {
    auto* p = reinterpret_cast<unsigned char*>(&v);
    std::reverse(p, p + sizeof(V));
  }
  return v;
}

template <typename V>
void put(std::string& b, size_t off, V v) {
  std::memcpy(b.data() + off, &v, sizeof(V));
}

bool has_gz_suffix(const std::filesystem::path& p) {
  const std::string s = p.string();
  return s.size() > 3 && s.compare(s.size() - 3, 3, ".gz") == 0;
}

std::string gz_read_all(const std::filesystem::path& path) {
  gzFile f = gzopen(path.c_str(), "rb");
  if (!f) throw std::runtime_error("cannot open " + path.string());
  std::string out;
  char buf[1 << 16];
  int n;
  while ((n = gzread(f, buf, sizeof buf)) > 0) out.append(buf, static_cast<size_t>(n));
  const bool bad = n < 0;
  gzclose(f);
  if (bad) throw std::runtime_error(path.string() + ": decompression failed");
  return out;
}

}  // namespace

void write_nifti(const Volume& v, const std::filesystem::path& path) {
  std::string hdr(kHdr + 4, '\0');
  put<int32_t>(hdr, 0, kHdr);
  const int16_t dim[8] = {3, static_cast<int16_t>(v.d), static_cast<int16_t>(v.h), static_cast<int16_t>(v.w), 1, 1, 1, 1};
  if (v.d > 32767 || v.h > 32767 || v.w > 32767) throw std::invalid_argument("write_nifti: extent exceeds int16");
  std::memcpy(hdr.data() + 40, dim, sizeof dim);
  put<int16_t>(hdr, 70, 16);  // FLOAT32
  put<int16_t>(hdr, 72, 32);
  const float pixdim[8] = {1.f, v.spacing[0], v.spacing[1], v.spacing[2], 1.f, 0.f, 0.f, 0.f};
  std::memcpy(hdr.data() + 76, pixdim, sizeof pixdim);
  put<float>(hdr, 108, static_cast<float>(kHdr + 4));
  put<float>(hdr, 112, 1.f);
  put<char>(hdr, 123, 2);  // mm
  put<int16_t>(hdr, 254, 1);  // sform: scanner
  const float srow[3][4] = {{v.spacing[0], 0, 0, 0}, {0, v.spacing[1], 0, 0}, {0, 0, v.spacing[2], 0}};
  std::memcpy(hdr.data() + 280, srow, sizeof srow);
  std::memcpy(hdr.data() + 344, "n+1\0", 4);

  std::string payload = hdr;
  payload.resize(hdr.size() + v.data.size() * sizeof(float));
  float* dst = reinterpret_cast<float*>(payload.data() + hdr.size());
  // NIfTI stores i (our depth) fastest.
  for (int64_t z = 0; z < v.d; ++z)
    for (int64_t y = 0; y < v.h; ++y)
      for (int64_t x = 0; x < v.w; ++x) dst[(x * v.h + y) * v.d + z] = v.at(z, y, x);

  if (!has_gz_suffix(path)) {
    write_file_atomic(path, payload);
    return;
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  gzFile f = gzopen(tmp.c_str(), "wb6");
  if (!f) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
  const int wrote = gzwrite(f, payload.data(), static_cast<unsigned>(payload.size()));
  if (gzclose(f) != Z_OK || wrote != static_cast<int>(payload.size()))
    throw std::runtime_error("write failed: " + tmp.string());
  std::filesystem::rename(tmp, path);
}

Volume read_nifti(const std::filesystem::path& path) {
  const std::string b = gz_read_all(path);
  const std::string where = path.string();
  if (b.size() < kHdr) throw std::runtime_error(where + ": shorter than a NIfTI-1 header");
  bool swap = false;
  if (get<int32_t>(b, 0, false) != kHdr) {
    if (get<int32_t>(b, 0, true) != kHdr) throw std::runtime_error(where + ": not a NIfTI-1 file");
    swap = true;
  }
  if (std::memcmp(b.data() + 344, "n+1", 3) != 0) throw std::runtime_error(where + ": only single-file NIfTI (n+1) is supported");
  int16_t dim[8];
  for (int i = 0; i < 8; ++i) dim[i] = get<int16_t>(b, 40 + 2 * i, swap);
  if (dim[0] < 3) throw std::runtime_error(where + ": expected a 3D image");
  for (int i = 4; i <= dim[0] && i < 8; ++i)
    if (dim[i] > 1) throw std::runtime_error(where + ": 4D images are not supported");
  const int16_t dtype = get<int16_t>(b, 70, swap);
  const auto off = static_cast<size_t>(get<float>(b, 108, swap));
  float slope = get<float>(b, 112, swap);
  const float inter = get<float>(b, 116, swap);
  if (slope == 0.f || !std::isfinite(slope)) slope = 1.f;

  Volume v(dim[1], dim[2], dim[3]);
  for (int a = 0; a < 3; ++a) {
    const float px = get<float>(b, 80 + 4 * a, swap);
    v.spacing[a] = px > 0 ? px : 1.f;
  }
  const size_t n = static_cast<size_t>(v.size());
  size_t elem = 0;
  switch (dtype) {
    case 2: case 256: elem = 1; break;
    case 4: case 512: elem = 2; break;
    case 8: case 16: case 768: elem = 4; break;
    case 64: elem = 8; break;
    default: throw std::runtime_error(where + ": unsupported NIfTI datatype " + std::to_string(dtype));
  }
  if (b.size() < off + n * elem) throw std::runtime_error(where + ": truncated voxel data");
  auto voxel = [&](size_t i) -> double {
    const size_t o = off + i * elem;
    switch (dtype) {
      case 2: return static_cast<uint8_t>(b[o]);
      case 256: return static_cast<int8_t>(b[o]);
      case 4: return get<int16_t>(b, o, swap);
      case 512: return get<uint16_t>(b, o, swap);
      case 8: return get<int32_t>(b, o, swap);
      case 768: return get<uint32_t>(b, o, swap);
      case 16: return get<float>(b, o, swap);
      default: return get<double>(b, o, swap);
    }
  };
  for (int64_t x = 0; x < v.w; ++x)
    for (int64_t y = 0; y < v.h; ++y)
      for (int64_t z = 0; z < v.d; ++z)
        v.at(z, y, x) = static_cast<float>(voxel(static_cast<size_t>((x * v.h + y) * v.d + z)) * slope + inter);
  return v;
}

namespace {

enum class Fmt { raw, nifti };

Fmt format_of(const std::filesystem::path& p) {
  const std::string s = p.string();
  auto ends = [&](const char* suf) {
    const size_t n = std::strlen(suf);
    return s.size() >= n && s.compare(s.size() - n, n, suf) == 0;
  };
  if (ends(".vq3d")) return Fmt::raw;
  if (ends(".nii") || ends(".nii.gz")) return Fmt::nifti;
  throw std::invalid_argument("unrecognized volume extension: " + s + " (expected .vq3d, .nii or .nii.gz)");
}

}  // namespace

bool is_volume_file(const std::filesystem::path& path) {
  try {
    format_of(path);
    return true;
  } catch (const std::invalid_argument&) {
    return false;
  }
}

void write_volume(const Volume& v, const std::filesystem::path& path) {
  if (format_of(path) == Fmt::raw)
    write_raw(v, path);
  else
    write_nifti(v, path);
}

Volume read_volume(const std::filesystem::path& path) {
  return format_of(path) == Fmt::raw ? read_raw(path) : read_nifti(path);
}

// ---- manifest -----------------------------------------------------------------

std::filesystem::path DatasetManifest::resolve(const ManifestEntry& e) const {
  std::filesystem::path p(e.path);
  return p.is_absolute() ? p : base_dir / p;
}

std::vector<ManifestEntry> DatasetManifest::split(const std::string& tag) const {
  std::vector<ManifestEntry> out;
  for (const auto& e : entries)
    if (e.split == tag) out.push_back(e);
  return out;
}

void DatasetManifest::validate() const {
  std::set<std::string> seen;
  for (const auto& e : entries) {
    if (!seen.insert(e.path).second) throw std::invalid_argument("manifest: duplicate path " + e.path);
    if (e.split != "train" && e.split != "val" && e.split != "test")
      throw std::invalid_argument("manifest: split '" + e.split + "' for " + e.path + " is not train, val or test");
    if (e.label < 0) throw std::invalid_argument("manifest: negative label for " + e.path);
  }
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest " + path.string());
  DatasetManifest m;
  m.base_dir = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string tok;
    while (std::getline(ss, tok, '\t')) f.push_back(tok);
    if (f.size() != 3)
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": expected path<TAB>label<TAB>split");
    ManifestEntry e;
    e.path = f[0];
    try {
      size_t used = 0;
      e.label = std::stoi(f[1], &used);
      if (used != f[1].size()) throw std::invalid_argument("");
    } catch (const std::exception&) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": label '" + f[1] + "' is not an integer");
    }
    e.split = f[2];
    m.entries.push_back(std::move(e));
  }
  m.validate();
  return m;
}

void write_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
  m.validate();
  std::string out;
  for (const auto& e : m.entries) out += e.path + "\t" + std::to_string(e.label) + "\t" + e.split + "\n";
  write_file_atomic(path, out);
}

}  // namespace vq3d
