#include "vq3d/evaluate.hpp"

#include <cmath>
#include <iomanip>
#include <json.hpp>
#include <map>
#include <sstream>
#include <stdexcept>

namespace vq3d {

MetricsReport evaluate_generation(const std::vector<Volume>& real, const std::vector<Volume>& gen,
                                  const RunConfig& cfg) {
  if (real.size() < 2 || gen.size() < 2) throw std::invalid_argument("evaluate: need at least two real and two generated volumes");
  const auto& e = cfg.eval;
  MetricsReport rep;
  const uint64_t seed = cfg.seed;

  const auto kernel = parse_kernel(e.mmd_kernel);
  const int64_t batch = std::min<int64_t>({e.mmd_batch, static_cast<int64_t>(real.size()), static_cast<int64_t>(gen.size())});
  rep.add("mmd2", mmd2(real, gen, batch, e.mmd_tests, seed, kernel),
          {{"kernel", kernel_name(kernel)}, {"batch", batch}, {"tests", e.mmd_tests}}, seed);

  SsimOptions so;
  so.window = e.ssim_window;
  so.scales = e.msssim_scales;
  const nlohmann::json ms_cfg = {{"pairs", e.msssim_pairs}, {"scales", so.scales}, {"window", so.window}, {"plane", "axial"}};
  rep.add("ms_ssim_generated", ms_ssim_pairwise(gen, e.msssim_pairs, seed, so), ms_cfg, seed);
  rep.add("ms_ssim_real", ms_ssim_pairwise(real, e.msssim_pairs, seed, so), ms_cfg, seed);

  const auto ext = static_cast<uint64_t>(e.extractor_seed);
  for (auto plane : {SlicePlane::axial, SlicePlane::coronal, SlicePlane::sagittal})
    rep.add("fid_" + plane_name(plane), fid_plane(real, gen, plane, ext),
            {{"extractor", extractor_id(ext)}, {"slices", "all"}}, seed);

  double nn = 0;
  for (const auto& g : gen) nn += nearest_real(g, real).score;
  rep.add("nearest_real_ssim3d", nn / static_cast<double>(gen.size()), {{"window", 7}, {"sigma", 1.5}}, seed);
  return rep;
}

MetricsReport evaluate_reconstruction(Stage1Model& model, const std::vector<Volume>& vols, const RunConfig& cfg) {
  if (vols.empty()) throw std::invalid_argument("evaluate_reconstruction: no volumes");
  const auto rec = model.reconstruct(vols);
  double p = 0, s = 0;
  for (size_t i = 0; i < vols.size(); ++i) {
    p += psnr(vols[i], rec[i]);
    s += ssim3d(vols[i], rec[i]);
  }
  const double n = static_cast<double>(vols.size());
  MetricsReport rep;
  const nlohmann::json c = {{"volumes", vols.size()}, {"lambda_gradient", cfg.loss.gradient}};
  rep.add("recon_psnr", p / n, c, cfg.seed);
  rep.add("recon_ssim3d", s / n, c, cfg.seed);
  return rep;
}

std::vector<MetricAggregate> aggregate_metrics(const std::string& jsonl) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<double>> values;
  std::istringstream in(jsonl);
  std::string line;
  int64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
      throw std::runtime_error("metrics log line " + std::to_string(lineno) + ": not valid JSON");
    }
    if (!j.is_object() || !j.contains("metric") || !j["metric"].is_string() || !j.contains("value") ||
        !j["value"].is_number())
      throw std::runtime_error("metrics log line " + std::to_string(lineno) + ": need string 'metric' and numeric 'value'");
    const auto name = j["metric"].get<std::string>();
    if (!values.count(name)) order.push_back(name);
    values[name].push_back(j["value"].get<double>());
  }
  std::vector<MetricAggregate> out;
  for (const auto& name : order) {
    const auto& v = values[name];
    MetricAggregate a;
    a.metric = name;
    a.count = static_cast<int64_t>(v.size());
    for (double x : v) a.mean += x;
    a.mean /= static_cast<double>(v.size());
    for (double x : v) a.sd += (x - a.mean) * (x - a.mean);
    a.sd = std::sqrt(a.sd / static_cast<double>(v.size()));
    out.push_back(a);
  }
  return out;
}

std::string aggregate_table(const std::vector<MetricAggregate>& rows) {
  size_t w = 6;
  for (const auto& r : rows) w = std::max(w, r.metric.size());
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(w)) << "metric" << "  " << std::right << std::setw(3) << "n"
     << "  mean +/- sd\n";
  for (const auto& r : rows)
    os << std::left << std::setw(static_cast<int>(w)) << r.metric << "  " << std::right << std::setw(3) << r.count
       << "  " << std::setprecision(6) << r.mean << " +/- " << r.sd << "\n";
  return os.str();
}

}  // namespace vq3d
