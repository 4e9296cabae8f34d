#pragma once
// Annealed and quenched Lyapunov exponents from window solves, and the
// right derivative of the annealed exponent in a uniform potential shift.

#include <cmath>
#include <cstdint>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "crossing/annealed1d.hpp"
#include "crossing/potential.hpp"
#include "crossing/stats.hpp"

namespace crossing {

namespace detail {
inline void require_slope_size(std::int64_t y, const char* who) {
  if (y < 32) throw std::invalid_argument(std::string(who) + ": y must be >= 32");
}
}  // namespace detail

/// beta ~ -log(mean_omega z) / y, stderr by delete-one jackknife of the log.
inline McEstimate beta_slope(const PotentialDistribution& dist, std::int64_t y,
                             const WindowPolicy& policy, std::uint64_t n_envs,
                             std::uint64_t master_seed, unsigned workers = 1,
                             SiteSampling sampling = {}) {
  detail::require_slope_size(y, "beta_slope");
  if (n_envs < 2) throw std::invalid_argument("beta_slope: need at least two environments");
  const auto s = sample_windows(dist, y, n_envs, master_seed, policy, workers, sampling);
  const double scale = -1.0 / static_cast<double>(y);
  double top = -std::numeric_limits<double>::infinity();
  for (double v : s.log_weighted) top = std::max(top, v);
  if (!std::isfinite(top)) throw NoEstimate("beta_slope: mean z is 0");
  const auto jk = jackknife_log_mean(s.log_weighted, scale);
  return {jk.mean, jk.stderr_, n_envs, master_seed};
}

struct QuenchedExponent {
  McEstimate estimate;
  std::uint64_t excluded = 0;  // environments with z = 0
  double excluded_fraction = 0.0;
};

/// alpha ~ mean over environments with z > 0 of -log(z) / y.
inline QuenchedExponent alpha_quenched(const PotentialDistribution& dist, std::int64_t y,
                                       const WindowPolicy& policy, std::uint64_t n_envs,
                                       std::uint64_t master_seed, unsigned workers = 1) {
  detail::require_slope_size(y, "alpha_quenched");
  if (n_envs < 2) throw std::invalid_argument("alpha_quenched: need at least two environments");
  const auto s = sample_windows(dist, y, n_envs, master_seed, policy, workers);
  std::vector<double> vals;
  vals.reserve(n_envs);
  QuenchedExponent out;
  for (double lz : s.log_z) {
    if (std::isfinite(lz))
      vals.push_back(-lz / static_cast<double>(y));
    else
      ++out.excluded;
  }
  if (vals.empty()) throw NoEstimate("alpha_quenched: every sampled z is 0");
  const auto ms = mean_stderr(vals);
  out.estimate = {ms.mean, ms.stderr_, static_cast<std::uint64_t>(vals.size()), master_seed};
  out.excluded_fraction = static_cast<double>(out.excluded) / static_cast<double>(n_envs);
  return out;
}

struct ExponentCurve {
  std::vector<double> lambdas;
  std::vector<McEstimate> betas;
  std::int64_t y_used = 0;
  /// Richardson-refined right derivative at 0 and its jackknife stderr.
  double right_derivative_at_zero = 0.0;
  double derivative_stderr = 0.0;
  /// Plain one-sided difference (beta(h0) - beta(0)) / h0.
  double one_sided = 0.0;
  bool monotone = true;
  bool concave = true;
};

namespace detail {
// Leave-one-out values of log(mean exp(v)) for every index, O(n).
inline std::vector<double> loo_log_mean(const std::vector<double>& log_values, double& full) {
  const auto n = log_values.size();
  double top = -std::numeric_limits<double>::infinity();
  for (double v : log_values) top = std::max(top, v);
  CompensatedSum s;
  std::vector<double> scaled(n);
  for (std::size_t i = 0; i < n; ++i) {
    scaled[i] = std::exp(log_values[i] - top);
    s.add(scaled[i]);
  }
  const double total = s.value();
  full = top + std::log(total / static_cast<double>(n));
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double rest = total - scaled[i];
    out[i] = rest > 0.0 ? top + std::log(rest / static_cast<double>(n - 1))
                        : -std::numeric_limits<double>::infinity();
  }
  return out;
}
}  // namespace detail

/// beta along a lambda grid on common environments (every lambda reuses the
/// same site uniforms), with the right derivative at the smallest positive
/// grid point refined by Richardson extrapolation against the next one.
inline ExponentCurve derivative_at_zero(const PotentialDistribution& dist,
                                        const std::vector<double>& lambda_grid, std::int64_t y,
                                        const WindowPolicy& policy, std::uint64_t n_envs,
                                        std::uint64_t master_seed, unsigned workers = 1,
                                        SiteSampling sampling = {}) {
  detail::require_slope_size(y, "derivative_at_zero");
  if (lambda_grid.size() < 4 || lambda_grid.front() != 0.0)
    throw std::invalid_argument("derivative_at_zero: grid must start at 0 with >= 3 positive points");
  for (std::size_t i = 1; i < lambda_grid.size(); ++i)
    if (!(lambda_grid[i] > lambda_grid[i - 1]))
      throw std::invalid_argument("derivative_at_zero: grid must be strictly increasing");
  if (lambda_grid[1] > 0.01) throw std::invalid_argument("derivative_at_zero: smallest step must be <= 0.01");
  if (n_envs < 2) throw std::invalid_argument("derivative_at_zero: need at least two environments");

  ExponentCurve curve;
  curve.lambdas = lambda_grid;
  curve.y_used = y;
  const double scale = -1.0 / static_cast<double>(y);
  std::vector<double> full(lambda_grid.size());
  std::vector<std::vector<double>> loo(lambda_grid.size());
  for (std::size_t k = 0; k < lambda_grid.size(); ++k) {
    const auto s =
        sample_windows(dist.shifted(lambda_grid[k]), y, n_envs, master_seed, policy, workers, sampling);
    const auto jk = jackknife_log_mean(s.log_weighted, scale);
    curve.betas.push_back({jk.mean, jk.stderr_, n_envs, master_seed});
    double lm = 0.0;
    loo[k] = detail::loo_log_mean(s.log_weighted, lm);
    full[k] = scale * lm;
    for (auto& v : loo[k]) v *= scale;
  }

  const double h0 = lambda_grid[1], h1 = lambda_grid[2];
  auto refined = [&](double b0, double b1, double b2) {
    const double d0 = (b1 - b0) / h0;
    const double d1 = (b2 - b0) / h1;
    return (h1 * d0 - h0 * d1) / (h1 - h0);
  };
  curve.one_sided = (full[1] - full[0]) / h0;
  curve.right_derivative_at_zero = refined(full[0], full[1], full[2]);
  std::vector<double> pseudo(n_envs);
  CompensatedSum pm;
  for (std::size_t i = 0; i < n_envs; ++i) {
    pseudo[i] = refined(loo[0][i], loo[1][i], loo[2][i]);
    pm.add(pseudo[i]);
  }
  const double mean = pm.value() / static_cast<double>(n_envs);
  CompensatedSum ss;
  for (double p : pseudo) ss.add((p - mean) * (p - mean));
  curve.derivative_stderr =
      std::sqrt(static_cast<double>(n_envs - 1) / static_cast<double>(n_envs) * ss.value());

  for (std::size_t k = 1; k < curve.betas.size(); ++k) {
    const double tol = 2.0 * std::hypot(curve.betas[k].stderr_, curve.betas[k - 1].stderr_);
    if (curve.betas[k].mean < curve.betas[k - 1].mean - tol) curve.monotone = false;
  }
  // Concavity on a nonuniform grid via the weighted second difference.
  for (std::size_t k = 1; k + 1 < curve.betas.size(); ++k) {
    const double a = lambda_grid[k] - lambda_grid[k - 1];
    const double b = lambda_grid[k + 1] - lambda_grid[k];
    const double w0 = b, w1 = a + b, w2 = a;
    const double second = w2 * curve.betas[k + 1].mean - w1 * curve.betas[k].mean + w0 * curve.betas[k - 1].mean;
    const double noise = std::sqrt(std::pow(w2 * curve.betas[k + 1].stderr_, 2) +
                                   std::pow(w1 * curve.betas[k].stderr_, 2) +
                                   std::pow(w0 * curve.betas[k - 1].stderr_, 2));
    if (second > 2.0 * noise + 1e-12 * w1) curve.concave = false;
  }
  return curve;
}

inline void write_curve_csv(std::ostream& out, const ExponentCurve& curve) {
  out.precision(17);
  out << "lambda,beta,stderr\n";
  for (std::size_t k = 0; k < curve.lambdas.size(); ++k)
    out << curve.lambdas[k] << ',' << curve.betas[k].mean << ',' << curve.betas[k].stderr_ << '\n';
}

}  // namespace crossing
