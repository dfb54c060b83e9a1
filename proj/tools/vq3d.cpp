// vq3d: command-line front end for the two-stage ROI generator.

#include <CLI11.hpp>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "vq3d/fileio.hpp"
#include "vq3d/pipeline.hpp"

namespace {

using namespace vq3d;
namespace fs = std::filesystem;

struct Common {
  std::string config;
  std::optional<uint64_t> seed;
  std::vector<std::string> sets;
  std::string out;
  bool quiet = false;
};

void add_common(CLI::App* s, Common& c) {
  s->add_option("--config", c.config, "Run configuration (key = value lines); defaults apply when omitted");
  s->add_option("--seed", c.seed, "Global seed; overrides the config");
  s->add_option("--set", c.sets, "Override a config key, key=value (repeatable)");
  s->add_option("--out", c.out, "Run directory (default: $VQ3D_OUTPUT_DIR, else output_dir from the config)");
  s->add_flag("--quiet", c.quiet, "Suppress progress output");
}

RunConfig resolve_config(const Common& c) {
  RunConfig cfg;
  if (!c.config.empty()) cfg = RunConfig::load(c.config);
  for (const auto& kv : c.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (c.seed) cfg.seed = *c.seed;
  cfg.validate();
  return cfg;
}

pipeline::RunLayout layout(const Common& c, const RunConfig& cfg) {
  return {c.out.empty() ? output_dir(cfg.output_dir) : fs::path(c.out)};
}

template <typename T>
T or_default(const std::optional<T>& v, T fallback) {
  return v ? *v : fallback;
}

std::string one_line(std::string s) {
  for (char& ch : s)
    if (ch == '\n' || ch == '\r') ch = ' ';
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vq3d: 3D VQGAN + masked transformer for tumour ROI synthesis"};
  app.require_subcommand(1);
  Common common;

  auto* pre = app.add_subcommand("preprocess", "Extract, crop/pad and normalize tumour ROIs");
  add_common(pre, common);
  pipeline::PreprocessArgs pre_args;
  std::optional<std::string> pre_manifest;
  pre->add_option("--manifest", pre_manifest, "Manifest of raw brain volumes (masks beside them)");
  pre->add_option("--mask-suffix", pre_args.mask_suffix, "Mask file suffix before the extension")->capture_default_str();
  pre->add_option("--synthetic", pre_args.synthetic, "Write N synthetic brains + masks and preprocess them");

  auto* s1 = app.add_subcommand("train-vqgan", "Train stage 1 (encoder, decoder, codebook, discriminator)");
  add_common(s1, common);
  std::optional<std::string> s1_manifest, s1_resume;
  s1->add_option("--manifest", s1_manifest, "Preprocessed manifest (default: <run>/data/manifest.tsv)");
  s1->add_option("--resume", s1_resume, "Stage-1 checkpoint to resume from");

  auto* s2 = app.add_subcommand("train-transformer", "Train stage 2 (masked transformer over code indices)");
  add_common(s2, common);
  std::optional<std::string> s2_manifest, s2_stage1;
  s2->add_option("--manifest", s2_manifest, "Preprocessed manifest (default: <run>/data/manifest.tsv)");
  s2->add_option("--stage1", s2_stage1, "Stage-1 checkpoint (default: <run>/stage1/stage1.ckpt)");

  auto* gen = app.add_subcommand("generate", "Sample new ROIs");
  add_common(gen, common);
  std::optional<std::string> gen_stage1, gen_stage2;
  int64_t num_samples = 4;
  int label = 1;
  std::optional<double> temperature;
  std::optional<int64_t> top_k;
  gen->add_option("--stage1", gen_stage1, "Stage-1 checkpoint (default: <run>/stage1/stage1.ckpt)");
  gen->add_option("--stage2", gen_stage2, "Stage-2 checkpoint (default: <run>/stage2/stage2.ckpt)");
  gen->add_option("--num-samples", num_samples, "Number of volumes")->capture_default_str();
  gen->add_option("--temperature", temperature, "Softmax temperature (<= 0: greedy)");
  gen->add_option("--top-k", top_k, "Keep the k most likely codes (<= 0: all)");
  gen->add_option("--label", label, "Label written to the output manifest")->capture_default_str();

  auto* ev = app.add_subcommand("evaluate", "MMD, MS-SSIM, FID and reconstruction metrics");
  add_common(ev, common);
  std::optional<std::string> ev_real, ev_gen, ev_stage1;
  ev->add_option("--real", ev_real, "Real manifest (default: <run>/data/manifest.tsv)");
  ev->add_option("--generated", ev_gen, "Generated manifest (default: <run>/generated/manifest.tsv)");
  ev->add_option("--stage1", ev_stage1, "Also report reconstruction PSNR / 3D-SSIM of this checkpoint");

  auto* cl = app.add_subcommand("classify", "Train and evaluate the downstream classifier");
  add_common(cl, common);
  std::string protocol = "a";
  std::string cl_manifest;
  std::optional<std::string> cl_synth;
  cl->add_option("--protocol", protocol, "a | b | c")->capture_default_str();
  cl->add_option("--manifest", cl_manifest, "Labelled manifest with train/val and test splits")->required();
  cl->add_option("--synthetic-manifest", cl_synth, "Synthetic minority volumes (protocol c)");

  auto* rep = app.add_subcommand("report", "Aggregate a metrics log into mean +/- sd per metric");
  add_common(rep, common);
  std::string log_path;
  rep->add_option("--log", log_path, "Line-delimited metrics log")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      std::cout << app.help();
      return 0;
    }
    std::cerr << "vq3d: " << one_line(e.what()) << "\n\n" << app.help();
    return 2;
  }

  CLI::App* sub = app.get_subcommands().front();
  try {
    const auto cfg = resolve_config(common);
    const auto run = layout(common, cfg);
    if (sub == pre) {
      if (pre_manifest) pre_args.manifest = *pre_manifest;
      std::cout << pipeline::preprocess(cfg, run, pre_args).string() << "\n";
    } else if (sub == s1) {
      std::optional<fs::path> resume;
      if (s1_resume) resume = *s1_resume;
      auto r = pipeline::train_vqgan(cfg, run, or_default<std::string>(s1_manifest, run.data_manifest()), resume,
                                     common.quiet);
      std::cout << r.checkpoint.string() << "\n";
    } else if (sub == s2) {
      auto r = pipeline::train_transformer(cfg, run, or_default<std::string>(s2_manifest, run.data_manifest()),
                                           or_default<std::string>(s2_stage1, run.stage1_ckpt()), common.quiet);
      std::cout << r.checkpoint.string() << "\n";
    } else if (sub == gen) {
      auto c = cfg;
      if (temperature) c.sampling.temperature = *temperature;
      if (top_k) c.sampling.top_k = *top_k;
      auto b = pipeline::generate(c, run, or_default<std::string>(gen_stage1, run.stage1_ckpt()),
                                  or_default<std::string>(gen_stage2, run.stage2_ckpt()), num_samples, label);
      std::cout << b.manifest.string() << "\n";
    } else if (sub == ev) {
      std::optional<fs::path> s1ck;
      if (ev_stage1) s1ck = *ev_stage1;
      auto r = pipeline::evaluate(cfg, run, or_default<std::string>(ev_real, run.data_manifest()),
                                  or_default<std::string>(ev_gen, run.generated_manifest()), s1ck);
      std::cout << r.table();
    } else if (sub == cl) {
      std::optional<fs::path> synth;
      if (cl_synth) synth = *cl_synth;
      auto r = pipeline::classify(cfg, run, cl_manifest, synth, parse_protocol(protocol));
      std::cout << r.table();
    } else if (sub == rep) {
      std::cout << aggregate_table(aggregate_metrics(read_file(log_path)));
    }
  } catch (const std::exception& e) {
    std::cerr << "vq3d " << sub->get_name() << ": error: " << one_line(e.what()) << "\n";
    return 1;
  }
  return 0;
}
