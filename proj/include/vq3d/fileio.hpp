#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace vq3d {

/// Writes to "<path>.tmp" and renames over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

/// Output directory: VQ3D_OUTPUT_DIR when set, otherwise `fallback`.
std::filesystem::path output_dir(const std::filesystem::path& fallback);

/// Little-endian append/extract helpers for binary containers.
class ByteWriter {
 public:
  void u32(uint32_t v);
  void i32(int32_t v) { u32(static_cast<uint32_t>(v)); }
  void u64(uint64_t v);
  void i64(int64_t v) { u64(static_cast<uint64_t>(v)); }
  void f32(float v);
  void f64(double v);
  void bytes(const void* p, size_t n);
  void str(const std::string& s);
  std::string& buffer() { return buf_; }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::string& buf, std::string what = "input") : buf_(buf), what_(std::move(what)) {}
  uint32_t u32();
  int32_t i32() { return static_cast<int32_t>(u32()); }
  uint64_t u64();
  int64_t i64() { return static_cast<int64_t>(u64()); }
  float f32();
  double f64();
  void bytes(void* p, size_t n);
  std::string str();
  size_t remaining() const { return buf_.size() - pos_; }

 private:
  void need(size_t n);
  const std::string& buf_;
  std::string what_;
  size_t pos_ = 0;
};

}  // namespace vq3d
