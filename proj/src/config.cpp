#include "vq3d/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <variant>

namespace vq3d {

namespace {

using Slot = std::variant<int64_t*, uint64_t*, double*, bool*, std::string*>;

struct Field {
  const char* key;
  std::function<Slot(RunConfig&)> slot;
};

#define VQ3D_FIELD(name, member) \
  Field { name, [](RunConfig& c) -> Slot { return &c.member; } }

const std::vector<Field>& fields() {
  static const std::vector<Field> f = {
      VQ3D_FIELD("seed", seed),
      VQ3D_FIELD("output_dir", output_dir),
      VQ3D_FIELD("volume_format", volume_format),
      VQ3D_FIELD("net.in_edge", net.in_edge),
      VQ3D_FIELD("net.latent_edge", net.latent_edge),
      VQ3D_FIELD("net.base_channels", net.base_channels),
      VQ3D_FIELD("net.max_channels", net.max_channels),
      VQ3D_FIELD("net.n_z", net.n_z),
      VQ3D_FIELD("net.norm", net.norm),
      VQ3D_FIELD("net.leaky_slope", net.leaky_slope),
      VQ3D_FIELD("codebook.size", codebook.codes),
      VQ3D_FIELD("codebook.decay", codebook.decay),
      VQ3D_FIELD("codebook.epsilon", codebook.epsilon),
      VQ3D_FIELD("codebook.dead_after", codebook.dead_after),
      VQ3D_FIELD("codebook.beta", codebook_beta),
      VQ3D_FIELD("loss.l1", loss.l1),
      VQ3D_FIELD("loss.perceptual", loss.perceptual),
      VQ3D_FIELD("loss.match", loss.match),
      VQ3D_FIELD("loss.gradient", loss.gradient),
      VQ3D_FIELD("loss.codebook", loss.codebook),
      VQ3D_FIELD("loss.adv_weight", loss.adv_weight),
      VQ3D_FIELD("loss.adv_warmup_steps", loss.adv_warmup_steps),
      VQ3D_FIELD("stage1.epochs", stage1.epochs),
      VQ3D_FIELD("stage1.lr", stage1.lr),
      VQ3D_FIELD("stage1.lr_min", stage1.lr_min),
      VQ3D_FIELD("stage1.disc_lr", stage1.disc_lr),
      VQ3D_FIELD("stage1.batch", stage1.batch),
      VQ3D_FIELD("stage1.perceptual_slices", stage1.perceptual_slices),
      VQ3D_FIELD("stage1.checkpoint_every", stage1.checkpoint_every),
      VQ3D_FIELD("transformer.layers", tf_layers),
      VQ3D_FIELD("transformer.heads", tf_heads),
      VQ3D_FIELD("transformer.model_dim", tf_model_dim),
      VQ3D_FIELD("stage2.epochs", stage2.epochs),
      VQ3D_FIELD("stage2.lr", stage2.lr),
      VQ3D_FIELD("stage2.weight_decay", stage2.weight_decay),
      VQ3D_FIELD("stage2.batch", stage2.batch),
      VQ3D_FIELD("stage2.mask_ratio", stage2.mask_ratio),
      VQ3D_FIELD("stage2.checkpoint_every", stage2.checkpoint_every),
      VQ3D_FIELD("sample.temperature", sampling.temperature),
      VQ3D_FIELD("sample.top_k", sampling.top_k),
      VQ3D_FIELD("eval.mmd_kernel", eval.mmd_kernel),
      VQ3D_FIELD("eval.mmd_batch", eval.mmd_batch),
      VQ3D_FIELD("eval.mmd_tests", eval.mmd_tests),
      VQ3D_FIELD("eval.msssim_pairs", eval.msssim_pairs),
      VQ3D_FIELD("eval.msssim_scales", eval.msssim_scales),
      VQ3D_FIELD("eval.ssim_window", eval.ssim_window),
      VQ3D_FIELD("eval.extractor_seed", eval.extractor_seed),
      VQ3D_FIELD("classify.preset", classify.preset),
      VQ3D_FIELD("classify.base_channels", classify.base_channels),
      VQ3D_FIELD("classify.epochs", classify.epochs),
      VQ3D_FIELD("classify.finetune_epochs", classify.finetune_epochs),
      VQ3D_FIELD("classify.batch", classify.batch),
      VQ3D_FIELD("classify.lr", classify.lr),
      VQ3D_FIELD("classify.finetune_lr", classify.finetune_lr),
      VQ3D_FIELD("classify.focal_gamma", classify.focal_gamma),
      VQ3D_FIELD("classify.class_weights", classify.class_weights),
      VQ3D_FIELD("classify.trials", classify.trials),
      VQ3D_FIELD("classify.train_fraction", classify.train_fraction),
      VQ3D_FIELD("classify.elastic_sigma", classify.elastic_sigma),
      VQ3D_FIELD("classify.augment_prob", classify.augment_prob),
  };
  return f;
}

#undef VQ3D_FIELD

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

template <typename N>
N parse_number(const std::string& key, const std::string& v) {
  N out{};
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw std::invalid_argument("config: '" + key + "' expects a number, got '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw std::invalid_argument("config: '" + key + "' expects true/false, got '" + v + "'");
}

std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

}  // namespace

RunConfig RunConfig::toy() {
  RunConfig c;
  c.net.in_edge = 32;
  c.net.latent_edge = 8;
  c.net.base_channels = 16;
  c.net.max_channels = 64;
  c.net.n_z = 16;
  c.codebook.dead_after = 20;
  c.loss.adv_weight = 0.1;
  c.loss.adv_warmup_steps = 100;
  c.stage1.epochs = 250;
  c.stage1.lr = 1e-3;
  c.stage1.disc_lr = 1e-4;
  c.stage1.checkpoint_every = 50;
  c.tf_layers = 2;
  c.tf_heads = 4;
  c.tf_model_dim = 64;
  c.stage2.epochs = 300;
  c.stage2.lr = 1e-3;
  c.stage2.checkpoint_every = 100;
  c.eval.mmd_tests = 20;
  c.eval.msssim_pairs = 20;
  c.eval.msssim_scales = 3;
  c.classify.epochs = 20;
  c.classify.finetune_epochs = 10;
  return c;
}

TransformerConfig RunConfig::transformer() const {
  TransformerConfig t;
  t.layers = tf_layers;
  t.heads = tf_heads;
  t.model_dim = tf_model_dim;
  t.codes = codebook.codes;
  t.seq_len = net.latent_edge * net.latent_edge * net.latent_edge;
  return t;
}

void RunConfig::validate() const {
  net.validate();
  transformer().validate();
  auto positive = [](const char* key, double v) {
    if (!(v > 0)) throw std::invalid_argument(std::string("config: ") + key + " must be positive");
  };
  positive("codebook.size", static_cast<double>(codebook.codes));
  positive("stage1.epochs", static_cast<double>(stage1.epochs));
  positive("stage1.lr", stage1.lr);
  positive("stage1.batch", static_cast<double>(stage1.batch));
  positive("stage1.checkpoint_every", static_cast<double>(stage1.checkpoint_every));
  positive("stage2.epochs", static_cast<double>(stage2.epochs));
  positive("stage2.lr", stage2.lr);
  positive("stage2.batch", static_cast<double>(stage2.batch));
  positive("stage2.checkpoint_every", static_cast<double>(stage2.checkpoint_every));
  positive("eval.mmd_batch", static_cast<double>(eval.mmd_batch));
  positive("eval.mmd_tests", static_cast<double>(eval.mmd_tests));
  positive("classify.epochs", static_cast<double>(classify.epochs));
  positive("classify.batch", static_cast<double>(classify.batch));
  positive("classify.trials", static_cast<double>(classify.trials));
  if (!(codebook.decay > 0 && codebook.decay < 1)) throw std::invalid_argument("config: codebook.decay must lie in (0, 1)");
  if (!(stage2.mask_ratio >= 0 && stage2.mask_ratio <= 1))
    throw std::invalid_argument("config: stage2.mask_ratio must lie in [0, 1]");
  if (!(classify.train_fraction > 0 && classify.train_fraction < 1))
    throw std::invalid_argument("config: classify.train_fraction must lie in (0, 1)");
  if (stage1.perceptual_slices < 1 || stage1.perceptual_slices > net.in_edge)
    throw std::invalid_argument("config: stage1.perceptual_slices must lie in [1, net.in_edge]");
  if (eval.mmd_kernel != "linear" && eval.mmd_kernel != "rbf")
    throw std::invalid_argument("config: eval.mmd_kernel must be linear or rbf");
  if (classify.preset != "toy" && classify.preset != "resnet50")
    throw std::invalid_argument("config: classify.preset must be toy or resnet50");
  if (classify.class_weights != "paper" && classify.class_weights != "inverse" && classify.class_weights != "none")
    throw std::invalid_argument("config: classify.class_weights must be paper, inverse or none");
  if (volume_format != "vq3d" && volume_format != "nii" && volume_format != "nii.gz")
    throw std::invalid_argument("config: volume_format must be vq3d, nii or nii.gz");
}

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> out;
  for (const auto& f : fields()) out.emplace_back(f.key);
  return out;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  for (const auto& f : fields()) {
    if (key != f.key) continue;
    std::visit(
        [&](auto* p) {
          using P = std::remove_pointer_t<decltype(p)>;
          if constexpr (std::is_same_v<P, bool>)
            *p = parse_bool(key, value);
          else if constexpr (std::is_same_v<P, std::string>)
            *p = value;
          else
            *p = parse_number<P>(key, value);
        },
        f.slot(*this));
    return;
  }
  throw std::invalid_argument("config: unknown key '" + key + "'");
}

std::string RunConfig::echo() const {
  auto& self = const_cast<RunConfig&>(*this);
  std::ostringstream os;
  for (const auto& f : fields()) {
    os << f.key << " = ";
    std::visit(
        [&](auto* p) {
          using P = std::remove_pointer_t<decltype(p)>;
          if constexpr (std::is_same_v<P, bool>)
            os << (*p ? "true" : "false");
          else if constexpr (std::is_same_v<P, double>)
            os << format_double(*p);
          else
            os << *p;
        },
        f.slot(self));
    os << '\n';
  }
  return os.str();
}

RunConfig RunConfig::parse(const std::string& text, const RunConfig& base, const std::string& origin) {
  RunConfig c = base;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  const std::string where = origin.empty() ? "line " : origin + ":";
  while (std::getline(in, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config " + where + std::to_string(lineno) + ": expected key = value");
    try {
      c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(std::string(e.what()) + " (" + where + std::to_string(lineno) + ")");
    }
  }
  return c;
}

RunConfig RunConfig::parse(const std::string& text) { return parse(text, RunConfig{}); }

RunConfig RunConfig::load(const std::filesystem::path& path) { return load(path, RunConfig{}); }

RunConfig RunConfig::load(const std::filesystem::path& path, const RunConfig& base) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), base, path.string());
}

}  // namespace vq3d
