#include "vq3d/fileio.hpp"

#include <bit>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace vq3d {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::filesystem::path output_dir(const std::filesystem::path& fallback) {
  if (const char* env = std::getenv("VQ3D_OUTPUT_DIR"); env && *env) return env;
  return fallback;
}

void ByteWriter::u32(uint32_t v) { bytes(&v, 4); }
void ByteWriter::u64(uint64_t v) { bytes(&v, 8); }
void ByteWriter::f32(float v) { bytes(&v, 4); }
void ByteWriter::f64(double v) { bytes(&v, 8); }
void ByteWriter::bytes(const void* p, size_t n) { buf_.append(static_cast<const char*>(p), n); }
void ByteWriter::str(const std::string& s) {
  u32(static_cast<uint32_t>(s.size()));
  bytes(s.data(), s.size());
}

void ByteReader::need(size_t n) {
  if (pos_ + n > buf_.size()) throw std::runtime_error(what_ + ": truncated");
}
uint32_t ByteReader::u32() {
  uint32_t v;
  bytes(&v, 4);
  return v;
}
uint64_t ByteReader::u64() {
  uint64_t v;
  bytes(&v, 8);
  return v;
}
float ByteReader::f32() {
  float v;
  bytes(&v, 4);
  return v;
}
double ByteReader::f64() {
  double v;
  bytes(&v, 8);
  return v;
}
void ByteReader::bytes(void* p, size_t n) {
  need(n);
  std::memcpy(p, buf_.data() + pos_, n);
  pos_ += n;
}
std::string ByteReader::str() {
  const uint32_t n = u32();
  need(n);
  std::string s = buf_.substr(pos_, n);
  pos_ += n;
  return s;
}

}  // namespace vq3d
