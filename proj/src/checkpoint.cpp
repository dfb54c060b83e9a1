#include "vq3d/checkpoint.hpp"

#include <cstring>
#include <stdexcept>

#include "vq3d/fileio.hpp"

namespace vq3d {

namespace {
constexpr char kMagic[4] = {'V', 'Q', 'C', 'K'};
constexpr uint32_t kVersion = 1;
constexpr uint8_t kF32 = 1, kI64 = 2;
}  // namespace

const std::string& Checkpoint::meta(const std::string& key) const {
  auto it = meta_.find(key);
  if (it == meta_.end()) throw std::runtime_error("checkpoint: missing metadata '" + key + "'");
  return it->second;
}

void Checkpoint::put(const std::string& name, const Tensor<float>& t) {
  ints_.erase(name);
  floats_[name] = t;
}

void Checkpoint::put_ints(const std::string& name, const std::vector<int64_t>& v) {
  floats_.erase(name);
  ints_[name] = v;
}

const Tensor<float>& Checkpoint::get(const std::string& name) const {
  auto it = floats_.find(name);
  if (it == floats_.end()) throw std::runtime_error("checkpoint: missing array '" + name + "'");
  return it->second;
}

const std::vector<int64_t>& Checkpoint::get_ints(const std::string& name) const {
  auto it = ints_.find(name);
  if (it == ints_.end()) throw std::runtime_error("checkpoint: missing integer array '" + name + "'");
  return it->second;
}

void Checkpoint::load_into(const std::string& name, Tensor<float>& dst) const {
  const auto& src = get(name);
  if (src.shape() != dst.shape())
    throw std::runtime_error("checkpoint: array '" + name + "' has shape " + shape_str(src.shape()) + ", expected " +
                             shape_str(dst.shape()));
  dst = src;
}

std::vector<std::string> Checkpoint::array_names() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : floats_) out.push_back(k);
  for (const auto& [k, v] : ints_) out.push_back(k);
  return out;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  ByteWriter w;
  w.bytes(kMagic, 4);
  w.u32(kVersion);
  w.u32(static_cast<uint32_t>(meta_.size()));
  for (const auto& [k, v] : meta_) {
    w.str(k);
    w.str(v);
  }
  w.u32(static_cast<uint32_t>(floats_.size() + ints_.size()));
  for (const auto& [name, t] : floats_) {
    w.str(name);
    w.bytes(&kF32, 1);
    w.u32(static_cast<uint32_t>(t.rank()));
    for (int64_t d : t.shape()) w.i64(d);
    w.bytes(t.data(), static_cast<size_t>(t.size()) * sizeof(float));
  }
  for (const auto& [name, v] : ints_) {
    w.str(name);
    w.bytes(&kI64, 1);
    w.u32(1);
    w.i64(static_cast<int64_t>(v.size()));
    w.bytes(v.data(), v.size() * sizeof(int64_t));
  }
  write_file_atomic(path, w.buffer());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  const std::string buf = read_file(path);
  ByteReader r(buf, path.string());
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw std::runtime_error(path.string() + ": not a checkpoint (bad magic)");
  const uint32_t version = r.u32();
  if (version != kVersion) throw std::runtime_error(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  Checkpoint ck;
  const uint32_t nm = r.u32();
  for (uint32_t i = 0; i < nm; ++i) {
    std::string k = r.str();
    ck.meta_[k] = r.str();
  }
  const uint32_t na = r.u32();
  for (uint32_t i = 0; i < na; ++i) {
    std::string name = r.str();
    uint8_t dtype;
    r.bytes(&dtype, 1);
    const uint32_t rank = r.u32();
    Shape shape(rank);
    for (auto& d : shape) {
      d = r.i64();
      if (d < 0) throw std::runtime_error(path.string() + ": negative extent in '" + name + "'");
    }
    if (dtype == kF32) {
      Tensor<float> t(shape);
      r.bytes(t.data(), static_cast<size_t>(t.size()) * sizeof(float));
      ck.floats_[name] = std::move(t);
    } else if (dtype == kI64) {
      std::vector<int64_t> v(static_cast<size_t>(shape_numel(shape)));
      r.bytes(v.data(), v.size() * sizeof(int64_t));
      ck.ints_[name] = std::move(v);
    } else {
      throw std::runtime_error(path.string() + ": unknown dtype for '" + name + "'");
    }
  }
  if (r.remaining() != 0) throw std::runtime_error(path.string() + ": trailing bytes");
  return ck;
}

uint64_t Checkpoint::hash_arrays(const std::string& prefix) const {
  uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const void* p, size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& [name, t] : floats_) {
    if (name.compare(0, prefix.size(), prefix) != 0) continue;
    mix(name.data(), name.size());
    mix(t.data(), static_cast<size_t>(t.size()) * sizeof(float));
  }
  return h;
}

}  // namespace vq3d
