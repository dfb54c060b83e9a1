#include "vq3d/train.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <sstream>

#include "vq3d/fileio.hpp"
#include "vq3d/nn/optim.hpp"
#include "vq3d/ops.hpp"

namespace vq3d {

using ag::Var;
using json = nlohmann::json;

namespace {

constexpr uint64_t kInitStream = 0x51A6E1;
constexpr uint64_t kShuffleStream = 0x5F0F;
constexpr uint64_t kStepStream = 0x57E9;
constexpr uint64_t kPerceptualStream = 0xBE5C;
constexpr uint64_t kCodebookStream = 0xC0DE;
constexpr uint64_t kTransformerStream = 0x7F2;

template <typename M>
void put_module(Checkpoint& ck, const std::string& prefix, M& m) {
  for (auto& p : m.parameters(prefix)) ck.put(p.name, p.var->value());
  for (auto& b : m.buffers(prefix)) ck.put(b.name, *b.tensor);
}

template <typename M>
void load_module(const Checkpoint& ck, const std::string& prefix, M& m) {
  for (auto& p : m.parameters(prefix)) ck.load_into(p.name, p.var->mutable_value());
  for (auto& b : m.buffers(prefix)) ck.load_into(b.name, *b.tensor);
}

template <typename Opt>
void put_optimizer(Checkpoint& ck, const std::string& prefix, Opt& opt) {
  for (auto& [name, t] : opt.state()) ck.put(prefix + name, *t);
  ck.put_ints(prefix + "steps", {opt.steps()});
}

template <typename Opt>
void load_optimizer(const Checkpoint& ck, const std::string& prefix, Opt& opt) {
  for (auto& [name, t] : opt.state()) ck.load_into(prefix + name, *t);
  opt.set_steps(ck.get_ints(prefix + "steps").at(0));
}

// Keeps records with step < `first_step` so a resumed run appends cleanly.
void truncate_log(const std::filesystem::path& path, int64_t first_step) {
  std::ifstream in(path);
  if (!in) return;
  std::string kept, line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (json::parse(line).at("step").get<int64_t>() < first_step) kept += line + "\n";
  }
  in.close();
  write_file_atomic(path, kept);
}

class JsonlLog {
 public:
  JsonlLog(const std::filesystem::path& path, bool append) : out_(path, append ? std::ios::app : std::ios::trunc) {
    if (!out_) throw std::runtime_error("cannot open log " + path.string());
  }
  void record(int64_t step, const std::string& component, double value) {
    json j;
    j["step"] = step;
    j["component"] = component;
    j["value"] = std::isfinite(value) ? json(value) : json(std::to_string(value));
    out_ << j.dump() << '\n';
  }
  void flush() { out_.flush(); }

 private:
  std::ofstream out_;
};

void check_arch(const RunConfig& stored, const RunConfig& cfg, const std::string& what) {
  const bool same = stored.net.str() == cfg.net.str() && stored.codebook.codes == cfg.codebook.codes;
  if (!same)
    throw std::runtime_error(what + " was written for a different network (" + stored.net.str() +
                             " K=" + std::to_string(stored.codebook.codes) + ") than configured (" + cfg.net.str() +
                             " K=" + std::to_string(cfg.codebook.codes) + ")");
}

void default_warn(const std::string& msg) { std::cerr << "warning: " << msg << '\n'; }

}  // namespace

double cosine_lr(double lr, double lr_min, int64_t epoch, int64_t epochs) {
  if (epochs <= 0) return lr;
  const double t = static_cast<double>(epoch) / static_cast<double>(epochs);
  return lr_min + 0.5 * (lr - lr_min) * (1.0 + std::cos(M_PI * t));
}

Stage1Model::Stage1Model(const RunConfig& cfg)
    : cfg_(cfg),
      init_rng_(make_rng(cfg.seed, kInitStream)),
      enc_(cfg.net, init_rng_),
      dec_(cfg.net, init_rng_),
      dis_(cfg.net, init_rng_),
      perc_(mix_seed(cfg.seed, kPerceptualStream)),
      codebook_(cfg.codebook_options(), mix_seed(cfg.seed, kCodebookStream)) {}

void Stage1Model::set_training(bool on) {
  enc_.train(on);
  dec_.train(on);
  dis_.train(on);
}

Tensor<float> stack_volumes(const std::vector<const Volume*>& vols) {
  if (vols.empty()) throw std::invalid_argument("stack_volumes: no volumes");
  const auto& f = *vols[0];
  Tensor<float> t({static_cast<int64_t>(vols.size()), 1, f.d, f.h, f.w});
  const int64_t n = f.d * f.h * f.w;
  for (size_t i = 0; i < vols.size(); ++i) {
    if (!vols[i]->same_shape(f))
      throw std::invalid_argument("stack_volumes: " + vols[i]->shape_str() + " vs " + f.shape_str());
    std::copy(vols[i]->data.begin(), vols[i]->data.end(), t.data() + static_cast<int64_t>(i) * n);
  }
  return t;
}

std::vector<TokenGrid> Stage1Model::tokenize(const std::vector<Volume>& vols) {
  ag::NoGradGuard ng;
  enc_.eval();
  const int64_t L = cfg_.net.latent_edge;
  std::vector<TokenGrid> out;
  for (const auto& v : vols) {
    auto z = ops::to_channels_last(enc_.forward(Var<float>(stack_volumes({&v}))));
    out.push_back(TokenGrid{L, L, L, codebook_.quantize(z.value())});
  }
  return out;
}

Volume Stage1Model::decode(const TokenGrid& grid) {
  ag::NoGradGuard ng;
  dec_.eval();
  const int64_t L = cfg_.net.latent_edge;
  if (grid.d != L || grid.h != L || grid.w != L)
    throw std::invalid_argument("decode: token grid does not match latent_edge " + std::to_string(L));
  auto zq = codebook_.lookup(linearize(grid));
  auto x = dec_.forward(ops::from_channels_last(Var<float>(zq), 1, L, L, L));
  const int64_t E = cfg_.net.in_edge;
  Volume v(E, E, E);
  std::copy(x.value().data(), x.value().data() + x.size(), v.data.begin());
  return v;
}

std::vector<Volume> Stage1Model::reconstruct(const std::vector<Volume>& vols) {
  std::vector<Volume> out;
  for (const auto& g : tokenize(vols)) out.push_back(decode(g));
  return out;
}

void Stage1Model::save_to(Checkpoint& ck) const {
  auto& self = const_cast<Stage1Model&>(*this);
  put_module(ck, "enc.", self.enc_);
  put_module(ck, "dec.", self.dec_);
  put_module(ck, "dis.", self.dis_);
  codebook_.save(ck, "codebook.");
  ck.set_meta("config", cfg_.echo());
  ck.set_meta("perceptual_extractor", self.perc_.id());
}

void Stage1Model::load_from(const Checkpoint& ck) {
  load_module(ck, "enc.", enc_);
  load_module(ck, "dec.", dec_);
  load_module(ck, "dis.", dis_);
  codebook_.load(ck, "codebook.");
  if (codebook_.codes() != cfg_.codebook.codes || codebook_.dim() != cfg_.net.n_z)
    throw std::runtime_error("checkpoint codebook does not match the configured K / n_z");
}

uint64_t Stage1Model::frozen_hash() const {
  auto& self = const_cast<Stage1Model&>(*this);
  Checkpoint ck;
  put_module(ck, "enc.", self.enc_);
  put_module(ck, "dec.", self.dec_);
  codebook_.save(ck, "codebook.");
  return ck.hash_arrays();
}

std::unique_ptr<Stage1Model> load_stage1(const std::filesystem::path& path) {
  auto ck = Checkpoint::load(path);
  if (!ck.has_meta("kind") || ck.meta("kind") != "stage1")
    throw std::runtime_error(path.string() + " is not a stage-1 checkpoint");
  auto cfg = RunConfig::parse(ck.meta("config"));
  auto m = std::make_unique<Stage1Model>(cfg);
  m->load_from(ck);
  return m;
}

std::vector<Volume> load_split(const DatasetManifest& m, const std::string& split, int64_t edge) {
  std::vector<Volume> out;
  for (const auto& e : m.split(split)) {
    auto v = read_volume(m.resolve(e));
    if (v.d != edge || v.h != edge || v.w != edge)
      throw std::runtime_error(e.path + ": shape " + v.shape_str() + " does not match net.in_edge " +
                               std::to_string(edge) + " (run preprocess first)");
    out.push_back(std::move(v));
  }
  if (out.empty()) throw std::runtime_error("manifest has no '" + split + "' entries");
  return out;
}

// ---- stage 1 ----------------------------------------------------------------------

Stage1Result train_stage1(const RunConfig& cfg, const std::vector<Volume>& train, const TrainOptions& opts) {
  cfg.validate();
  if (train.empty()) throw std::invalid_argument("train_stage1: empty training set");
  const int64_t E = cfg.net.in_edge, L = cfg.net.latent_edge;
  for (const auto& v : train)
    if (v.d != E || v.h != E || v.w != E)
      throw std::invalid_argument("train_stage1: volume " + v.shape_str() + " does not match in_edge " +
                                  std::to_string(E));
  auto warn = opts.warn ? opts.warn : default_warn;

  Stage1Model model(cfg);
  auto gen_params = model.encoder().parameters("enc.");
  for (auto& p : model.decoder().parameters("dec.")) gen_params.push_back(p);
  nn::Adam<float> opt_g(gen_params, {.lr = cfg.stage1.lr});
  nn::Adam<float> opt_d(model.discriminator().parameters("dis."), {.lr = cfg.stage1.disc_lr});

  std::filesystem::create_directories(opts.out_dir);
  Stage1Result res;
  res.checkpoint = opts.out_dir / "stage1.ckpt";
  res.log = opts.out_dir / "stage1_log.jsonl";

  int64_t epoch0 = 0, step = 0;
  if (!opts.resume.empty()) {
    auto ck = Checkpoint::load(opts.resume);
    if (!ck.has_meta("kind") || ck.meta("kind") != "stage1")
      throw std::runtime_error(opts.resume.string() + " is not a stage-1 checkpoint");
    check_arch(RunConfig::parse(ck.meta("config")), cfg, opts.resume.string());
    model.load_from(ck);
    load_optimizer(ck, "opt_g.", opt_g);
    load_optimizer(ck, "opt_d.", opt_d);
    epoch0 = std::stoll(ck.meta("epoch"));
    step = std::stoll(ck.meta("step"));
    truncate_log(res.log, step);
  }
  JsonlLog log(res.log, !opts.resume.empty());

  auto save = [&](int64_t epochs_done) {
    Checkpoint ck;
    model.save_to(ck);
    put_optimizer(ck, "opt_g.", opt_g);
    put_optimizer(ck, "opt_d.", opt_d);
    ck.set_meta("kind", "stage1");
    ck.set_meta("epoch", std::to_string(epochs_done));
    ck.set_meta("step", std::to_string(step));
    ck.set_meta("rng", "streams derived from (seed, epoch, step); no hidden state");
    ck.save(res.checkpoint);
    log.flush();
  };

  const auto& w = cfg.loss;
  const int64_t N = static_cast<int64_t>(train.size());
  const int64_t last = opts.stop_after_epoch >= 0 ? std::min(opts.stop_after_epoch, cfg.stage1.epochs) : cfg.stage1.epochs;
  bool first = epoch0 == 0;
  model.set_training(true);
  for (int64_t epoch = epoch0; epoch < last; ++epoch) {
    const double lr = cosine_lr(cfg.stage1.lr, cfg.stage1.lr_min, epoch, cfg.stage1.epochs);
    opt_g.set_lr(lr);
    std::vector<int64_t> order(static_cast<size_t>(N));
    for (int64_t i = 0; i < N; ++i) order[i] = i;
    Rng sh = make_rng(cfg.seed, mix_seed(kShuffleStream, static_cast<uint64_t>(epoch)));
    shuffle(order, sh);
    double epoch_l1 = 0;
    int64_t batches = 0;
    for (int64_t b0 = 0; b0 < N; b0 += cfg.stage1.batch, ++step) {
      std::vector<const Volume*> bv;
      for (int64_t i = b0; i < std::min(N, b0 + cfg.stage1.batch); ++i) bv.push_back(&train[order[i]]);
      const int64_t B = static_cast<int64_t>(bv.size());
      Var<float> x(stack_volumes(bv));
      Rng srng = make_rng(cfg.seed, mix_seed(kStepStream, static_cast<uint64_t>(step)));

      // Generator pass.
      auto z = model.encoder().forward(x);
      auto zl = ops::to_channels_last(z);
      const int64_t rows = zl.shape()[0];
      if (!model.codebook().initialized()) model.codebook().init_from(zl.value().data(), rows, mix_seed(cfg.seed, 1));
      Tensor<float> zq;
      auto idx = model.codebook().quantize(zl.value(), &zq);
      auto zst = ops::straight_through(zl, zq);
      auto xhat = model.decoder().forward(ops::from_channels_last(zst, B, L, L, L));

      Stage1Components<float> c;
      c.l1 = l1_loss(x, xhat);
      if (w.perceptual != 0)
        c.perceptual = perceptual_loss(x, xhat, model.perceptual(), srng, static_cast<int>(cfg.stage1.perceptual_slices));
      if (w.gradient != 0) c.gradient = gradient_3d_loss(x, xhat);
      c.codebook = codebook_loss(zl, zq, static_cast<float>(cfg.codebook_beta));
      const bool adv_on = step >= w.adv_warmup_steps;
      if (adv_on) {
        std::vector<Var<float>> real_taps;
        {
          ag::NoGradGuard ng;
          real_taps = model.discriminator().forward(x).taps;
        }
        auto fake = model.discriminator().forward(xhat);
        if (w.match != 0) c.match = feature_matching_loss(real_taps, fake.taps);
        c.adv = generator_adv_loss(fake.scores, w, step);
      }
      auto total = total_stage1_loss(c, w);
      float tv = total.item();
      if (opts.loss_hook) opts.loss_hook(step, tv);
      if (!std::isfinite(tv)) {
        std::ostringstream os;
        os << "divergence at epoch " << epoch << " step " << step << ": total loss " << tv << " (l1 " << c.l1.item()
           << ")";
        throw DivergenceError(os.str());
      }
      opt_g.zero_grad();
      total.backward();
      opt_g.step();

      model.codebook().ema_update(zl.value().data(), rows, idx);

      double disc = 0;
      if (adv_on) {
        model.discriminator().zero_grad();
        auto dr = model.discriminator().forward(x);
        auto df = model.discriminator().forward(xhat.detach());
        auto dl = hinge_disc_loss(dr.scores, df.scores);
        disc = dl.item();
        dl.backward();
        opt_d.step();
      }

      const double l1v = c.l1.item();
      if (first) {
        res.first_l1 = l1v;
        first = false;
      }
      res.last_l1 = l1v;
      epoch_l1 += l1v;
      ++batches;
      log.record(step, "l1", l1v);
      if (c.perceptual.defined()) log.record(step, "perceptual", c.perceptual.item());
      if (c.gradient.defined()) log.record(step, "gradient", c.gradient.item());
      log.record(step, "codebook", c.codebook.item());
      if (c.match.defined()) log.record(step, "match", c.match.item());
      if (c.adv.defined()) log.record(step, "adv", c.adv.item());
      if (adv_on) log.record(step, "disc", disc);
      log.record(step, "total", tv);
      log.record(step, "perplexity", usage_stats(idx, cfg.codebook.codes).perplexity);
      log.record(step, "lr", lr);
    }
    const int64_t done = epoch + 1;
    if (!opts.quiet && (done % std::max<int64_t>(1, cfg.stage1.epochs / 20) == 0 || done == last))
      std::fprintf(stderr, "stage1 epoch %lld/%lld  l1 %.4f\n", static_cast<long long>(done),
                   static_cast<long long>(cfg.stage1.epochs), epoch_l1 / static_cast<double>(batches));
    if (done % cfg.stage1.checkpoint_every == 0 || done == last) save(done);
    res.epochs = done;
  }
  if (epoch0 >= last) warn("stage 1 already complete at epoch " + std::to_string(epoch0));
  res.steps = step;
  return res;
}

// ---- stage 2 ----------------------------------------------------------------------

Stage2Result train_stage2(const RunConfig& cfg, const std::filesystem::path& stage1_ckpt,
                          const std::vector<Volume>& train, const TrainOptions& opts) {
  cfg.validate();
  auto warn = opts.warn ? opts.warn : default_warn;
  auto s1 = load_stage1(stage1_ckpt);
  check_arch(s1->config(), cfg, stage1_ckpt.string());
  const uint64_t before = s1->frozen_hash();

  const auto tcfg = cfg.transformer();
  std::vector<std::vector<int64_t>> seqs;
  for (const auto& g : s1->tokenize(train)) seqs.push_back(linearize(g));
  if (cfg.stage2.mask_ratio == 0) warn("stage2.mask_ratio = 0: no position is masked and the loss is identically 0");

  Rng init = make_rng(cfg.seed, kTransformerStream);
  MaskedTransformer<float> model(tcfg, init);
  nn::Adam<float> opt(model.parameters("tf."), {.lr = cfg.stage2.lr, .weight_decay = cfg.stage2.weight_decay});

  std::filesystem::create_directories(opts.out_dir);
  Stage2Result res;
  res.checkpoint = opts.out_dir / "stage2.ckpt";
  res.log = opts.out_dir / "stage2_log.jsonl";
  res.stage1_hash = before;

  int64_t epoch0 = 0, step = 0;
  if (!opts.resume.empty()) {
    auto ck = Checkpoint::load(opts.resume);
    if (!ck.has_meta("kind") || ck.meta("kind") != "stage2")
      throw std::runtime_error(opts.resume.string() + " is not a stage-2 checkpoint");
    load_module(ck, "tf.", model);
    load_optimizer(ck, "opt.", opt);
    epoch0 = std::stoll(ck.meta("epoch"));
    step = std::stoll(ck.meta("step"));
    truncate_log(res.log, step);
  }
  JsonlLog log(res.log, !opts.resume.empty());

  auto save = [&](int64_t epochs_done) {
    Checkpoint ck;
    put_module(ck, "tf.", model);
    put_optimizer(ck, "opt.", opt);
    s1->codebook().save(ck, "codebook.");
    ck.set_meta("kind", "stage2");
    ck.set_meta("config", cfg.echo());
    ck.set_meta("stage1_checkpoint", std::filesystem::absolute(stage1_ckpt).string());
    ck.set_meta("stage1_hash", std::to_string(before));
    ck.set_meta("epoch", std::to_string(epochs_done));
    ck.set_meta("step", std::to_string(step));
    ck.save(res.checkpoint);
    log.flush();
  };

  const int64_t N = static_cast<int64_t>(seqs.size());
  const int64_t last = opts.stop_after_epoch >= 0 ? std::min(opts.stop_after_epoch, cfg.stage2.epochs) : cfg.stage2.epochs;
  bool first = epoch0 == 0;
  for (int64_t epoch = epoch0; epoch < last; ++epoch) {
    std::vector<int64_t> order(static_cast<size_t>(N));
    for (int64_t i = 0; i < N; ++i) order[i] = i;
    Rng sh = make_rng(cfg.seed, mix_seed(kShuffleStream ^ 2, static_cast<uint64_t>(epoch)));
    shuffle(order, sh);
    double sum = 0;
    int64_t batches = 0;
    for (int64_t b0 = 0; b0 < N; b0 += cfg.stage2.batch, ++step) {
      std::vector<std::vector<int64_t>> corrupted;
      std::vector<int64_t> targets;
      std::vector<uint8_t> keep;
      for (int64_t i = b0; i < std::min(N, b0 + cfg.stage2.batch); ++i) {
        const auto& s = seqs[order[i]];
        auto [c, m] = apply_mask(s, cfg.stage2.mask_ratio, mix_seed(cfg.seed, mix_seed(static_cast<uint64_t>(step), i)),
                                 tcfg.codes);
        corrupted.push_back(std::move(c));
        targets.insert(targets.end(), s.begin(), s.end());
        keep.insert(keep.end(), m.keep.begin(), m.keep.end());
      }
      auto loss = masked_ce_loss(model.forward_logits(corrupted), targets, keep);
      float lv = loss.item();
      if (opts.loss_hook) opts.loss_hook(step, lv);
      if (!std::isfinite(lv)) throw DivergenceError("divergence at stage-2 step " + std::to_string(step));
      opt.zero_grad();
      loss.backward();
      opt.step();
      if (first) {
        res.first_ce = lv;
        first = false;
      }
      res.last_ce = lv;
      sum += lv;
      ++batches;
      log.record(step, "masked_ce", lv);
    }
    res.last_epoch_ce = sum / static_cast<double>(batches);
    const int64_t done = epoch + 1;
    if (!opts.quiet && (done % std::max<int64_t>(1, cfg.stage2.epochs / 20) == 0 || done == last))
      std::fprintf(stderr, "stage2 epoch %lld/%lld  masked CE %.4f\n", static_cast<long long>(done),
                   static_cast<long long>(cfg.stage2.epochs), res.last_epoch_ce);
    if (done % cfg.stage2.checkpoint_every == 0 || done == last) save(done);
  }
  res.steps = step;

  if (s1->frozen_hash() != before) throw std::logic_error("stage-1 parameters changed during stage-2 training");
  return res;
}

Stage2Bundle load_stage2(const std::filesystem::path& path) {
  auto ck = Checkpoint::load(path);
  if (!ck.has_meta("kind") || ck.meta("kind") != "stage2")
    throw std::runtime_error(path.string() + " is not a stage-2 checkpoint");
  Stage2Bundle b;
  b.cfg = RunConfig::parse(ck.meta("config"));
  Rng init = make_rng(b.cfg.seed, kTransformerStream);
  b.model = std::make_unique<MaskedTransformer<float>>(b.cfg.transformer(), init);
  load_module(ck, "tf.", *b.model);
  b.stage1_hash = std::stoull(ck.meta("stage1_hash"));
  return b;
}

}  // namespace vq3d
