#pragma once

// Named-array container used for every checkpoint. Layout documented in
// docs/checkpoint_format.md.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "vq3d/tensor.hpp"

namespace vq3d {

class Checkpoint {
 public:
  void set_meta(const std::string& key, const std::string& value) { meta_[key] = value; }
  bool has_meta(const std::string& key) const { return meta_.count(key) != 0; }
  const std::string& meta(const std::string& key) const;
  const std::map<std::string, std::string>& all_meta() const { return meta_; }

  void put(const std::string& name, const Tensor<float>& t);
  void put_ints(const std::string& name, const std::vector<int64_t>& v);
  bool has(const std::string& name) const { return floats_.count(name) || ints_.count(name); }
  const Tensor<float>& get(const std::string& name) const;
  const std::vector<int64_t>& get_ints(const std::string& name) const;
  /// Copies a stored array into `dst`, which must already have its shape.
  void load_into(const std::string& name, Tensor<float>& dst) const;

  std::vector<std::string> array_names() const;

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

  /// FNV-1a over the names and bytes of every float array whose name starts
  /// with `prefix`, in name order.
  uint64_t hash_arrays(const std::string& prefix = "") const;

 private:
  std::map<std::string, std::string> meta_;
  std::map<std::string, Tensor<float>> floats_;
  std::map<std::string, std::vector<int64_t>> ints_;
};

}  // namespace vq3d
