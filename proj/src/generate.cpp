#include "vq3d/generate.hpp"

#include <cmath>
#include <stdexcept>

namespace vq3d {

Generator load_generator(const std::filesystem::path& stage1_ckpt, const std::filesystem::path& stage2_ckpt) {
  Generator g;
  g.stage1 = load_stage1(stage1_ckpt);
  g.stage2 = load_stage2(stage2_ckpt);
  const auto& a = g.stage1->config();
  const auto& b = g.stage2.cfg;
  const bool ok = a.codebook.codes == b.codebook.codes && a.net.n_z == b.net.n_z &&
                  a.net.latent_edge == b.net.latent_edge && g.stage1->frozen_hash() == g.stage2.stage1_hash;
  if (!ok)
    throw std::runtime_error("incompatible checkpoints: stage 1 [" + a.net.str() + " K=" +
                             std::to_string(a.codebook.codes) + " hash=" + std::to_string(g.stage1->frozen_hash()) +
                             "] vs stage 2 [" + b.net.str() + " K=" + std::to_string(b.codebook.codes) +
                             " hash=" + std::to_string(g.stage2.stage1_hash) + "]");
  return g;
}

Volume generate_volume(Generator& g, uint64_t seed, const SamplingOptions& opts) {
  const int64_t L = g.stage1->config().net.latent_edge;
  auto v = g.stage1->decode(sample_tokens(*g.stage2.model, L, seed, opts));
  for (float x : v.data)
    if (!std::isfinite(x) || x < -1.f || x > 1.f) throw std::logic_error("generated voxel outside [-1, 1]");
  return v;
}

GeneratedBatch generate_batch(Generator& g, int64_t n, uint64_t base_seed, const SamplingOptions& opts,
                              const std::filesystem::path& out_dir, const std::string& format, int label) {
  if (n < 1) throw std::invalid_argument("generate_batch: need at least one sample");
  std::filesystem::create_directories(out_dir);
  GeneratedBatch out;
  DatasetManifest m;
  m.base_dir = out_dir;
  for (int64_t i = 0; i < n; ++i) {
    const uint64_t seed = base_seed + static_cast<uint64_t>(i);
    auto v = generate_volume(g, seed, opts);
    const std::string name = "gen_" + std::to_string(seed) + "." + format;
    const auto path = out_dir / name;
    try {
      write_volume(v, path);
    } catch (const std::exception& e) {
      throw std::runtime_error("writing " + path.string() + ": " + e.what());
    }
    m.entries.push_back({name, label, "train"});
    out.files.push_back(path);
    out.volumes.push_back(std::move(v));
  }
  out.manifest = out_dir / "manifest.tsv";
  write_manifest(m, out.manifest);
  return out;
}

}  // namespace vq3d
