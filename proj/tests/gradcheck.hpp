#pragma once

// Central finite-difference oracle for scalar functions built from ops.
// Test-only: it evaluates the function repeatedly under NoGradGuard and never
// consults the recorded backward closures.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "vq3d/autograd.hpp"
#include "vq3d/random.hpp"

namespace vq3d::testing {

struct GradCheckResult {
  double rel_error = 0;   // ||analytic - numeric|| / max(||analytic||, ||numeric||)
  double analytic_norm = 0;
  double numeric_norm = 0;
  int probes = 0;
};

/// Compares the backpropagated gradient of f() with respect to each input
/// against central differences at up to `max_probes` randomly chosen
/// coordinates per input.
inline GradCheckResult grad_check(const std::function<ag::Var<double>()>& f, const std::vector<ag::Var<double>*>& inputs,
                                  double h = 1e-6, int max_probes = 40, uint64_t seed = 1) {
  for (auto* v : inputs) v->zero_grad();
  f().backward();

  Rng rng = make_rng(seed);
  double diff2 = 0, an2 = 0, nu2 = 0;
  GradCheckResult r;
  for (auto* v : inputs) {
    const int64_t n = v->size();
    std::vector<int64_t> idx;
    if (n <= max_probes) {
      for (int64_t i = 0; i < n; ++i) idx.push_back(i);
    } else {
      idx = sample_without_replacement(rng, n, max_probes);
    }
    for (int64_t i : idx) {
      const double analytic = v->grad().empty() ? 0.0 : v->grad()[i];
      auto& x = v->mutable_value();
      const double orig = x[i];
      double fp, fm;
      {
        ag::NoGradGuard ng;
        x[i] = orig + h;
        fp = f().item();
        x[i] = orig - h;
        fm = f().item();
        x[i] = orig;
      }
      const double numeric = (fp - fm) / (2 * h);
      diff2 += (analytic - numeric) * (analytic - numeric);
      an2 += analytic * analytic;
      nu2 += numeric * numeric;
      ++r.probes;
    }
  }
  r.analytic_norm = std::sqrt(an2);
  r.numeric_norm = std::sqrt(nu2);
  const double denom = std::max({r.analytic_norm, r.numeric_norm, 1e-12});
  r.rel_error = std::sqrt(diff2) / denom;
  return r;
}

inline ag::Var<double> random_var(Shape shape, Rng& rng, double lo = -1, double hi = 1, bool requires_grad = true) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.values()) v = uniform(rng, lo, hi);
  return ag::Var<double>(std::move(t), requires_grad);
}

}  // namespace vq3d::testing
