#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "embrenorm/error.hpp"
#include "embrenorm/parallel.hpp"
#include "embrenorm/rng.hpp"

// Monte-Carlo check of how an error in the estimated bias propagates
// through R1 and R2. A trial builds e = signal + mu with known parts, feeds
// both methods the estimate mu + eps, and measures how far each residual is
// from its error-free counterpart.

namespace embrenorm::sim {

enum class Orthogonality {
  Exact,    // signal _|_ mu_hat and eps_perp _|_ signal, enforced by Gram-Schmidt
  Relaxed,  // signal and eps_perp drawn without orthogonalizing against each other
};

struct SimConfig {
  std::size_t dim = 512;
  double mu_norm = 0.8;
  double eps_norm = 0.01;
  double eps_parallel_fraction = 0.7;
  double signal_norm = 0.6;
  std::uint64_t trials = 1000;
  std::uint64_t seed = 42;
  Orthogonality mode = Orthogonality::Exact;

  void validate() const {
    if (dim < 8) fail(ErrorCode::InvalidConfig, "dim must be >= 8");
    if (!(mu_norm > 0.0 && mu_norm <= 1.0)) fail(ErrorCode::InvalidConfig, "mu_norm must lie in (0, 1]");
    if (!(eps_norm > 0.0)) fail(ErrorCode::InvalidConfig, "eps_norm must be positive");
    if (!(eps_norm < mu_norm)) fail(ErrorCode::InvalidConfig, "eps_norm must be below mu_norm");
    if (!(eps_parallel_fraction >= 0.0 && eps_parallel_fraction <= 1.0))
      fail(ErrorCode::InvalidConfig, "eps_parallel_fraction must lie in [0, 1]");
    if (!(signal_norm > 0.0)) fail(ErrorCode::InvalidConfig, "signal_norm must be positive");
    if (trials < 1) fail(ErrorCode::InvalidConfig, "trials must be >= 1");
  }
};

struct TrialResult {
  double gap_r1 = 0.0;
  double gap_r2 = 0.0;
  double angle_r1 = 0.0;
  double angle_r2 = 0.0;
};

struct SimResult {
  double mean_gap_r1 = 0.0;
  double mean_gap_r2 = 0.0;
  double mean_angle_r1 = 0.0;
  double mean_angle_r2 = 0.0;
  double max_gap_r1 = 0.0;
  /// Standard error of the per-trial difference angle_r1 - angle_r2.
  double angle_gap_stderr = 0.0;
  std::uint64_t trials = 0;
};

namespace detail {

using Vec = std::vector<double>;

inline double vdot(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double vnorm(const Vec& a) { return std::sqrt(vdot(a, a)); }

inline void remove_component(Vec& v, const Vec& unit) {
  const double c = vdot(v, unit);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] -= c * unit[i];
}

inline void scale_to(Vec& v, double target) {
  const double s = target / vnorm(v);
  for (double& x : v) x *= s;
}

/// Angle between the directions of a and b; stable for tiny angles.
inline double angle_between(const Vec& a, const Vec& b) {
  const double na = vnorm(a), nb = vnorm(b);
  double diff = 0.0, sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double x = a[i] / na, y = b[i] / nb;
    diff += (x - y) * (x - y);
    sum += (x + y) * (x + y);
  }
  return 2.0 * std::atan2(std::sqrt(diff), std::sqrt(sum));
}

inline Vec gaussian_orthogonal_to(CounterRng& rng, std::size_t dim, std::span<const Vec* const> basis) {
  Vec v(dim);
  for (;;) {
    fill_normal(rng, v);
    for (const Vec* u : basis) remove_component(v, *u);
    // Gram-Schmidt twice is enough for double precision.
    for (const Vec* u : basis) remove_component(v, *u);
    if (vnorm(v) > 1e-6) return v;
  }
}

}  // namespace detail

/// One trial, keyed by (cfg.seed, trial_index).
inline TrialResult run_trial(const SimConfig& cfg, std::uint64_t trial_index) {
  using detail::Vec;
  cfg.validate();
  CounterRng rng(derive_seed(cfg.seed, trial_index));
  const std::size_t d = cfg.dim;

  const Vec mu_hat = random_unit(rng, d);

  Vec signal;
  if (cfg.mode == Orthogonality::Exact) {
    const Vec* basis[] = {&mu_hat};
    signal = detail::gaussian_orthogonal_to(rng, d, basis);
  } else {
    signal = random_unit(rng, d);
  }
  detail::scale_to(signal, cfg.signal_norm);

  const double f = cfg.eps_parallel_fraction;
  const double perp_norm = std::sqrt(std::max(0.0, 1.0 - f * f)) * cfg.eps_norm;
  Vec eps_perp(d, 0.0);
  if (perp_norm > 0.0) {
    Vec signal_dir = signal;
    detail::scale_to(signal_dir, 1.0);
    if (cfg.mode == Orthogonality::Exact) {
      const Vec* basis[] = {&mu_hat, &signal_dir};
      eps_perp = detail::gaussian_orthogonal_to(rng, d, basis);
    } else {
      const Vec* basis[] = {&mu_hat};
      eps_perp = detail::gaussian_orthogonal_to(rng, d, basis);
    }
    detail::scale_to(eps_perp, perp_norm);
  }

  Vec mu(d), estimate(d), eps(d), e(d);
  for (std::size_t i = 0; i < d; ++i) {
    mu[i] = cfg.mu_norm * mu_hat[i];
    eps[i] = f * cfg.eps_norm * mu_hat[i] + eps_perp[i];
    estimate[i] = mu[i] + eps[i];
    e[i] = signal[i] + mu[i];
  }

  // Error-free references: R1 with the true mean recovers the signal, R2 with
  // the true direction recovers the signal's part orthogonal to mu_hat.
  const Vec& ref_r1 = signal;
  Vec ref_r2 = signal;
  detail::remove_component(ref_r2, mu_hat);

  Vec r1(d), r2(d), expect_r1(d), expect_r2(d);
  const double est_norm2 = detail::vdot(estimate, estimate);
  const double coeff = detail::vdot(e, estimate) / est_norm2;
  for (std::size_t i = 0; i < d; ++i) {
    r1[i] = e[i] - estimate[i];
    r2[i] = e[i] - coeff * estimate[i];
    expect_r1[i] = ref_r1[i] - eps[i];
    expect_r2[i] = ref_r2[i] - eps_perp[i];
  }

  TrialResult out;
  double g1 = 0.0, g2 = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    g1 += (r1[i] - expect_r1[i]) * (r1[i] - expect_r1[i]);
    g2 += (r2[i] - expect_r2[i]) * (r2[i] - expect_r2[i]);
  }
  out.gap_r1 = std::sqrt(g1);
  out.gap_r2 = std::sqrt(g2);
  out.angle_r1 = detail::angle_between(r1, ref_r1);
  out.angle_r2 = detail::angle_between(r2, ref_r2);
  return out;
}

/// Averages run_trial over cfg.trials. Trials run in parallel; the
/// reduction walks them in index order, so the result is thread-count free.
inline SimResult run_sim(const SimConfig& cfg, Parallelism par = {}) {
  cfg.validate();
  std::vector<TrialResult> trials(cfg.trials);
  parallel_for(trials.size(), par, [&](std::size_t t) { trials[t] = run_trial(cfg, t); });

  SimResult r;
  r.trials = cfg.trials;
  double diff_sum = 0.0;
  for (const auto& t : trials) {
    r.mean_gap_r1 += t.gap_r1;
    r.mean_gap_r2 += t.gap_r2;
    r.mean_angle_r1 += t.angle_r1;
    r.mean_angle_r2 += t.angle_r2;
    r.max_gap_r1 = std::max(r.max_gap_r1, t.gap_r1);
    diff_sum += t.angle_r1 - t.angle_r2;
  }
  const double n = static_cast<double>(cfg.trials);
  r.mean_gap_r1 /= n;
  r.mean_gap_r2 /= n;
  r.mean_angle_r1 /= n;
  r.mean_angle_r2 /= n;
  if (cfg.trials > 1) {
    const double mean_diff = diff_sum / n;
    double ss = 0.0;
    for (const auto& t : trials) {
      const double dd = (t.angle_r1 - t.angle_r2) - mean_diff;
      ss += dd * dd;
    }
    r.angle_gap_stderr = std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
  }
  return r;
}

struct SweepPoint {
  double eps_norm = 0.0;
  SimResult result;
};

/// run_sim at each eps_norm, everything else from `base`.
inline std::vector<SweepPoint> sweep_eps(const SimConfig& base, std::span<const double> eps_norms,
                                         Parallelism par = {}) {
  std::vector<SweepPoint> out;
  out.reserve(eps_norms.size());
  for (double eps : eps_norms) {
    SimConfig cfg = base;
    cfg.eps_norm = eps;
    out.push_back({eps, run_sim(cfg, par)});
  }
  return out;
}

/// Least-squares slope of log(y) against log(x).
inline double loglog_slope(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) fail(ErrorCode::DegenerateInput, "slope needs >= 2 matched points");
  double mx = 0.0, my = 0.0;
  const double n = static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0.0 && y[i] > 0.0)) fail(ErrorCode::DegenerateInput, "log-log slope needs positive values");
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  if (sxx == 0.0) fail(ErrorCode::DegenerateInput, "x values are all equal");
  return sxy / sxx;
}

}  // namespace embrenorm::sim
