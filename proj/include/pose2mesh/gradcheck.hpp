#pragma once

// Central-difference gradient checking, always in 64-bit.

#include "pose2mesh/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

namespace p2m {

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::size_t worst_index = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  std::size_t num_checked = 0;
  std::size_t num_kinks_skipped = 0;
};

struct GradCheckOptions {
  double epsilon = 1e-6;
  std::size_t max_coords = 0; ///< 0 checks every coordinate; otherwise a seeded random subset
  std::uint64_t seed = 0;
  /// Skip coordinates whose one-sided slopes disagree (a ReLU or |.| kink
  /// between x - eps and x + eps); they are counted, not compared.
  bool skip_kinks = false;
  double kink_rtol = 1e-4;
  double kink_atol = 1e-5;
  /// Further step sizes tried per coordinate; the best agreement is kept.
  /// A wrong gradient disagrees at every step, while roundoff and kinks do not.
  std::vector<double> extra_epsilons;
  double accept_below = 0.0; ///< stop trying further steps once rel err is at most this
};

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

/// Checks d f() / d x where f closes over `x` (typically a model parameter).
/// `x` is perturbed in place and restored; its requires_grad flag is restored too.
inline GradCheckReport gradient_check(const std::function<Tensor<double>()>& f, Tensor<double>& x,
                                      const GradCheckOptions& opts = {}) {
  const bool had_requires_grad = x.requires_grad();
  x.set_requires_grad(true);
  x.clear_grad();
  Tape<double>::local().clear();

  const Tensor<double> y = f();
  if (!std::isfinite(y.item())) throw ValueError("gradient_check: non-finite function value at x");
  backward(y);
  std::vector<double> analytic(x.numel(), 0.0);
  if (x.has_grad()) std::copy(x.grad().begin(), x.grad().end(), analytic.begin());

  std::vector<std::size_t> coords(x.numel());
  std::iota(coords.begin(), coords.end(), std::size_t{0});
  if (opts.max_coords > 0 && opts.max_coords < coords.size()) {
    std::mt19937_64 rng(opts.seed);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(opts.max_coords);
    std::sort(coords.begin(), coords.end());
  }

  GradCheckReport report;
  {
    NoGradGuard no_grad;
    const double f0 = opts.skip_kinks ? f().item() : 0.0;
    std::vector<double> steps{opts.epsilon};
    steps.insert(steps.end(), opts.extra_epsilons.begin(), opts.extra_epsilons.end());
    for (auto i : coords) {
      const double v = x[i];
      double best_rel = 0.0, best_numeric = 0.0;
      bool resolved = false;
      for (double eps : steps) {
        x[i] = v + eps;
        const double fp = f().item();
        x[i] = v - eps;
        const double fm = f().item();
        x[i] = v;
        if (!std::isfinite(fp) || !std::isfinite(fm))
          throw ValueError("gradient_check: non-finite value when perturbing coordinate " + std::to_string(i));
        if (opts.skip_kinks) {
          const double fwd = (fp - f0) / eps, bwd = (f0 - fm) / eps;
          if (std::abs(fwd - bwd) > opts.kink_rtol * std::max(std::abs(fwd), std::abs(bwd)) + opts.kink_atol)
            continue;
        }
        const double numeric = (fp - fm) / (2.0 * eps);
        const double rel = relative_error(analytic[i], numeric);
        if (!resolved || rel < best_rel) {
          best_rel = rel;
          best_numeric = numeric;
        }
        resolved = true;
        if (best_rel <= opts.accept_below) break;
      }
      if (!resolved) {
        ++report.num_kinks_skipped;
        continue;
      }
      if (best_rel > report.max_rel_err || report.num_checked == 0) {
        report.max_rel_err = best_rel;
        report.worst_index = i;
        report.analytic_at_worst = analytic[i];
        report.numeric_at_worst = best_numeric;
      }
      ++report.num_checked;
    }
  }
  x.set_requires_grad(had_requires_grad);
  return report;
}

/// Checks d f(x) / d x for a function of a single input tensor.
inline GradCheckReport gradient_check(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                                      const Tensor<double>& x, double epsilon) {
  Tensor<double> probe = x.clone();
  GradCheckOptions opts;
  opts.epsilon = epsilon;
  return gradient_check([&] { return f(probe); }, probe, opts);
}

} // namespace p2m
