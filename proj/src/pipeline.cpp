#include "vq3d/pipeline.hpp"

#include <fstream>
#include <stdexcept>

#include "vq3d/fileio.hpp"

namespace vq3d::pipeline {

namespace {

std::string strip_extension(const std::string& name) {
  for (const char* ext : {".nii.gz", ".nii", ".vq3d"}) {
    const std::string e = ext;
    if (name.size() > e.size() && name.compare(name.size() - e.size(), e.size(), e) == 0)
      return name.substr(0, name.size() - e.size());
  }
  const auto dot = name.rfind('.');
  return dot == std::string::npos ? name : name.substr(0, dot);
}

std::string extension_of(const std::string& name) { return name.substr(strip_extension(name).size()); }

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  write_file_atomic(path, text);
}

std::vector<Volume> load_all(const DatasetManifest& m, int64_t edge) {
  std::vector<Volume> out;
  for (const auto& e : m.entries) {
    auto v = read_volume(m.resolve(e));
    if (v.d != edge || v.h != edge || v.w != edge)
      throw std::runtime_error(e.path + ": shape " + v.shape_str() + " does not match net.in_edge " + std::to_string(edge));
    out.push_back(std::move(v));
  }
  return out;
}

}  // namespace

fs::path mask_path(const fs::path& brain, const std::string& suffix) {
  const std::string name = brain.filename().string();
  return brain.parent_path() / (strip_extension(name) + suffix + extension_of(name));
}

fs::path preprocess(const RunConfig& cfg, const RunLayout& run, const PreprocessArgs& args) {
  if (args.synthetic < 0) throw std::invalid_argument("preprocess: --synthetic must be non-negative");
  if (args.synthetic > 0 && args.manifest) throw std::invalid_argument("preprocess: give either a manifest or --synthetic");
  if (args.synthetic == 0 && !args.manifest) throw std::invalid_argument("preprocess: need a manifest or --synthetic N");
  const int64_t E = cfg.net.in_edge;

  fs::path source;
  if (args.synthetic > 0) {
    fs::create_directories(run.raw());
    DatasetManifest raw;
    raw.base_dir = run.raw();
    for (int64_t i = 0; i < args.synthetic; ++i) {
      auto c = make_synthetic_case(mix_seed(cfg.seed, static_cast<uint64_t>(i)), E, 1 + static_cast<int>(i % 3));
      char name[32];
      std::snprintf(name, sizeof name, "case_%03lld", static_cast<long long>(i));
      Volume mask(c.mask.d, c.mask.h, c.mask.w);
      for (size_t k = 0; k < mask.data.size(); ++k) mask.data[k] = c.mask.data[k];
      write_volume(c.brain, run.raw() / (std::string(name) + ".nii.gz"));
      write_volume(mask, run.raw() / (std::string(name) + args.mask_suffix + ".nii.gz"));
      raw.entries.push_back({std::string(name) + ".nii.gz", 0, "train"});
    }
    source = run.raw() / "manifest.tsv";
    write_manifest(raw, source);
  } else {
    source = *args.manifest;
  }

  const auto in = read_manifest(source);
  if (in.entries.empty()) throw std::runtime_error("preprocess: manifest " + source.string() + " is empty");
  fs::create_directories(run.data());
  DatasetManifest out;
  out.base_dir = run.data();
  for (const auto& e : in.entries) {
    const auto brain_path = in.resolve(e);
    const auto mpath = mask_path(brain_path, args.mask_suffix);
    if (!fs::exists(mpath)) throw std::runtime_error("preprocess: no mask " + mpath.string() + " for " + e.path);
    try {
      const auto brain = read_volume(brain_path);
      const auto mask = SegmentationMask::from_volume(read_volume(mpath));
      const auto roi = preprocess_case(brain, mask, E);
      const std::string name = strip_extension(fs::path(e.path).filename().string()) + "." + cfg.volume_format;
      write_volume(roi, run.data() / name);
      out.entries.push_back({name, e.label, e.split});
    } catch (const std::exception& ex) {
      throw std::runtime_error("preprocess " + e.path + ": " + ex.what());
    }
  }
  write_manifest(out, run.data_manifest());
  return run.data_manifest();
}

Stage1Result train_vqgan(const RunConfig& cfg, const RunLayout& run, const fs::path& manifest,
                         const std::optional<fs::path>& resume, bool quiet) {
  const auto data = load_split(read_manifest(manifest), "train", cfg.net.in_edge);
  TrainOptions o;
  o.out_dir = run.stage1();
  o.quiet = quiet;
  if (resume) o.resume = *resume;
  return train_stage1(cfg, data, o);
}

Stage2Result train_transformer(const RunConfig& cfg, const RunLayout& run, const fs::path& manifest,
                               const fs::path& stage1_ckpt, bool quiet) {
  const auto data = load_split(read_manifest(manifest), "train", cfg.net.in_edge);
  TrainOptions o;
  o.out_dir = run.stage2();
  o.quiet = quiet;
  return train_stage2(cfg, stage1_ckpt, data, o);
}

GeneratedBatch generate(const RunConfig& cfg, const RunLayout& run, const fs::path& stage1_ckpt,
                        const fs::path& stage2_ckpt, int64_t count, int label) {
  auto g = load_generator(stage1_ckpt, stage2_ckpt);
  return generate_batch(g, count, cfg.seed, cfg.sampling, run.generated(), cfg.volume_format, label);
}

MetricsReport evaluate(const RunConfig& cfg, const RunLayout& run, const fs::path& real_manifest,
                       const fs::path& generated_manifest, const std::optional<fs::path>& stage1_ckpt) {
  const auto real = load_split(read_manifest(real_manifest), "train", cfg.net.in_edge);
  const auto gen = load_split(read_manifest(generated_manifest), "train", cfg.net.in_edge);
  auto rep = evaluate_generation(real, gen, cfg);
  if (stage1_ckpt) {
    auto model = load_stage1(*stage1_ckpt);
    for (auto& r : evaluate_reconstruction(*model, real, cfg).records) rep.records.push_back(r);
  }
  write_text(run.eval() / "metrics.jsonl", rep.jsonl());
  write_text(run.eval() / "metrics.txt", rep.table());
  return rep;
}

ProtocolResult classify(const RunConfig& cfg, const RunLayout& run, const fs::path& manifest,
                        const std::optional<fs::path>& synthetic_manifest, Protocol protocol) {
  const auto m = read_manifest(manifest);
  ClassifyData data;
  for (const auto& e : m.entries) {
    auto v = read_volume(m.resolve(e));
    if (e.split == "test") {
      data.test.push_back(std::move(v));
      data.test_labels.push_back(e.label);
    } else {
      data.train.push_back(std::move(v));
      data.train_labels.push_back(e.label);
    }
  }
  if (synthetic_manifest) data.synthetic = load_all(read_manifest(*synthetic_manifest), cfg.net.in_edge);
  if (protocol == Protocol::c && !synthetic_manifest)
    throw std::invalid_argument("protocol c needs a synthetic manifest");

  TrialPlan plan;
  plan.protocol = protocol;
  plan.trials = cfg.classify.trials;
  plan.train_fraction = cfg.classify.train_fraction;
  plan.seed = cfg.seed;
  auto res = run_protocol(plan, ClassifierConfig::from(cfg), data);
  const std::string stem = "protocol_" + protocol_name(protocol);
  write_text(run.classify() / (stem + ".jsonl"), res.jsonl());
  write_text(run.classify() / (stem + ".txt"), res.table());
  return res;
}

}  // namespace vq3d::pipeline
