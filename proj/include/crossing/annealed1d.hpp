#pragma once
// Annealed (environment-averaged) quantities in d = 1.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "crossing/parallel.hpp"
#include "crossing/potential.hpp"
#include "crossing/quenched1d.hpp"
#include "crossing/stats.hpp"

namespace crossing {

enum class TableMode { mc, exact };

inline std::string to_string(TableMode m) { return m == TableMode::mc ? "mc" : "exact"; }

/// Annealed block weights Z_{0,r} and time-weighted numerators
/// A(r) = E E^0(tau_r e^{-sum V}; tau_r < tau_0^{(2)}), r = 0..R, with the
/// conventions Z_{0,0} = 1 and A(0) = 0.
struct BlockTable {
  std::int64_t R = 0;
  TableMode mode = TableMode::exact;
  std::vector<double> z0;
  std::vector<double> z0_stderr;
  std::vector<double> a;
  std::vector<double> a_stderr;
  /// Floating-point error bound per entry (exact mode; zero for mc).
  std::vector<double> z0_rounding;
  std::vector<double> a_rounding;
  std::uint64_t n_envs = 0;
  std::uint64_t master_seed = 0;

  /// Error scale used by downstream deconvolution.
  double z0_error(std::int64_t r) const {
    const auto i = static_cast<std::size_t>(r);
    return std::max(z0_stderr[i], z0_rounding[i]);
  }
  double a_error(std::int64_t r) const {
    const auto i = static_cast<std::size_t>(r);
    return std::max(a_stderr[i], a_rounding[i]);
  }
};

namespace detail {
inline BlockTable empty_table(std::int64_t R, TableMode mode) {
  BlockTable t;
  t.R = R;
  t.mode = mode;
  const auto n = static_cast<std::size_t>(R + 1);
  t.z0.assign(n, 0.0);
  t.z0_stderr.assign(n, 0.0);
  t.a.assign(n, 0.0);
  t.a_stderr.assign(n, 0.0);
  t.z0_rounding.assign(n, 0.0);
  t.a_rounding.assign(n, 0.0);
  t.z0[0] = 1.0;
  return t;
}
}  // namespace detail

/// Monte Carlo block table. Environment i supplies sites 0..R-1 once and
/// every column r reads its prefix (common random numbers across r).
inline BlockTable block_table_mc(const PotentialDistribution& dist, std::int64_t R,
                                 std::uint64_t n_envs, std::uint64_t master_seed,
                                 unsigned workers = 1) {
  if (R < 1) throw std::invalid_argument("block_table_mc: R must be >= 1");
  if (n_envs < 2) throw std::invalid_argument("block_table_mc: need at least two environments");
  const auto cols = static_cast<std::size_t>(R);
  std::vector<double> zs(n_envs * cols), ts(n_envs * cols);
  parallel_for(n_envs, workers, [&](std::size_t i) {
    BlockPrefix block;
    for (std::int64_t x = 0; x < R; ++x) {
      block.push(site_value(dist, master_seed, i, x));
      const auto k = i * cols + static_cast<std::size_t>(x);
      zs[k] = block.z();
      ts[k] = block.t0();
    }
  });
  BlockTable table = detail::empty_table(R, TableMode::mc);
  table.n_envs = n_envs;
  table.master_seed = master_seed;
  std::vector<double> column_z(n_envs), column_t(n_envs);
  for (std::size_t c = 0; c < cols; ++c) {
    for (std::size_t i = 0; i < n_envs; ++i) {
      column_z[i] = zs[i * cols + c];
      column_t[i] = ts[i * cols + c];
    }
    const auto mz = mean_stderr(column_z);
    const auto mt = mean_stderr(column_t);
    table.z0[c + 1] = mz.mean;
    table.z0_stderr[c + 1] = mz.stderr_;
    table.a[c + 1] = mt.mean;
    table.a_stderr[c + 1] = mt.stderr_;
  }
  return table;
}

class EnumerationBudgetExceeded : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kDefaultEnumerationBudget = 1e7;

/// Exact annealed block table: weighted sum over all k^R environments on
/// [0, R-1]. Depth-first over site values so that every prefix (= every
/// shorter block) is visited once.
inline BlockTable block_table_exact(const PotentialDistribution& dist, std::int64_t R,
                                    double budget = kDefaultEnumerationBudget) {
  if (R < 1) throw std::invalid_argument("block_table_exact: R must be >= 1");
  const double k = static_cast<double>(dist.size());
  if (std::pow(k, static_cast<double>(R)) > budget)
    throw EnumerationBudgetExceeded("block_table_exact: k^R = " + std::to_string(std::pow(k, R)) +
                                    " exceeds the enumeration budget");
  const auto n = static_cast<std::size_t>(R + 1);
  std::vector<CompensatedSum> zsum(n), tsum(n);
  const auto& atoms = dist.atoms();

  std::function<void(const BlockPrefix&, double, std::int64_t)> visit =
      [&](const BlockPrefix& prefix, double weight, std::int64_t depth) {
        for (const auto& atom : atoms) {
          BlockPrefix next = prefix;
          next.push(atom.value);
          const double w = weight * atom.prob;
          const auto r = static_cast<std::size_t>(depth + 1);
          zsum[r].add(w * next.z());
          tsum[r].add(w * next.t0());
          if (depth + 1 < R) visit(next, w, depth + 1);
        }
      };
  visit(BlockPrefix{}, 1.0, 0);

  BlockTable table = detail::empty_table(R, TableMode::exact);
  constexpr double eps = std::numeric_limits<double>::epsilon();
  for (std::size_t r = 1; r < n; ++r) {
    table.z0[r] = zsum[r].value();
    table.a[r] = tsum[r].value();
    // Each summand carries O(r) relative rounding from the recursion.
    table.z0_rounding[r] = 4.0 * static_cast<double>(r + 4) * eps * table.z0[r];
    table.a_rounding[r] = 4.0 * static_cast<double>(2 * r + 4) * eps * table.a[r];
  }
  return table;
}

inline void write_block_table_csv(std::ostream& out, const BlockTable& table) {
  out.precision(17);
  out << "r,z0,z0_stderr,a,a_stderr\n";
  for (std::int64_t r = 1; r <= table.R; ++r) {
    const auto i = static_cast<std::size_t>(r);
    out << r << ',' << table.z0[i] << ',' << table.z0_stderr[i] << ',' << table.a[i] << ','
        << table.a_stderr[i] << '\n';
  }
}

struct CrossingEstimate {
  McEstimate z;    // Z_y
  McEstimate tau;  // E_{Q_y} tau_y
  std::uint64_t n_positive = 0;
  std::int64_t max_window = 0;
  double worst_window_tol = 0.0;
  bool windows_converged = true;
  /// Sites [0, y) were drawn from a reweighted law (see SiteSampling).
  bool open_conditioned = false;
  double tilt = 0.0;
  /// (sum w)^2 / sum w^2 over the weights w_i z_i.
  double effective_sample_size = 0.0;
};

/// Per-environment window solves for environments 0..n_envs-1.
struct WindowSamples {
  std::vector<double> z;
  std::vector<double> log_z;
  /// log z plus the sampling log-likelihood ratio: the summand of every
  /// annealed mean.
  std::vector<double> log_weighted;
  std::vector<double> t0;
  std::vector<double> conditioned_mean;  // NaN where z = 0
  std::vector<std::int64_t> window;
  std::vector<double> achieved_tol;
  std::vector<char> converged;
};

inline WindowSamples sample_windows(const PotentialDistribution& dist, std::int64_t y,
                                    std::uint64_t n_envs, std::uint64_t master_seed,
                                    const WindowPolicy& policy, unsigned workers,
                                    SiteSampling sampling = {}) {
  WindowSamples s;
  s.z.resize(n_envs);
  s.log_z.resize(n_envs);
  s.log_weighted.resize(n_envs);
  s.t0.resize(n_envs);
  s.conditioned_mean.resize(n_envs);
  s.window.resize(n_envs);
  s.achieved_tol.resize(n_envs);
  s.converged.resize(n_envs);
  parallel_for(n_envs, workers, [&](std::size_t i) {
    const QuenchedSolve q = solve_window_adaptive(dist, y, master_seed, i, policy, sampling);
    s.z[i] = q.z;
    s.log_z[i] = q.log_z;
    s.log_weighted[i] = q.log_z + q.log_weight;
    s.t0[i] = q.t0;
    s.conditioned_mean[i] = q.conditioned_mean.value_or(std::numeric_limits<double>::quiet_NaN());
    s.window[i] = q.window;
    s.achieved_tol[i] = q.achieved_tol;
    s.converged[i] = q.window_converged ? 1 : 0;
  });
  return s;
}

class NoEstimate : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Ratio estimator of E_{Q_y} tau_y from log-scaled window solves:
/// sum_i w_i t0_i / sum_i w_i z_i, with a common scale factor removed first.
inline MeanStderr crossing_ratio(const WindowSamples& s) {
  double top = -std::numeric_limits<double>::infinity();
  for (double lz : s.log_weighted) top = std::max(top, lz);
  if (!std::isfinite(top)) throw NoEstimate("crossing ratio: every sampled z is 0");
  const auto n = s.log_weighted.size();
  std::vector<double> num(n, 0.0), den(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(s.log_weighted[i])) continue;
    den[i] = std::exp(s.log_weighted[i] - top);
    num[i] = den[i] * s.conditioned_mean[i];
  }
  return ratio_of_means(num, den);
}

inline CrossingEstimate crossing_time_mc(const PotentialDistribution& dist, std::int64_t y,
                                         const WindowPolicy& policy, std::uint64_t n_envs,
                                         std::uint64_t master_seed, unsigned workers = 1,
                                         SiteSampling sampling = {}) {
  if (y < 1) throw std::invalid_argument("crossing_time_mc: y must be >= 1");
  if (n_envs < 2) throw std::invalid_argument("crossing_time_mc: need at least two environments");
  const WindowSamples s = sample_windows(dist, y, n_envs, master_seed, policy, workers, sampling);
  CrossingEstimate est;
  est.open_conditioned = sampling.open;
  est.tilt = sampling.tilt;
  for (std::size_t i = 0; i < n_envs; ++i) {
    if (s.z[i] > 0.0 || std::isfinite(s.log_z[i])) ++est.n_positive;
    est.max_window = std::max(est.max_window, s.window[i]);
    if (std::isfinite(s.log_z[i]))
      est.worst_window_tol = std::max(est.worst_window_tol, s.achieved_tol[i]);
    if (!s.converged[i]) est.windows_converged = false;
  }
  if (est.n_positive == 0) throw NoEstimate("crossing_time_mc: all sampled z are 0");
  std::vector<double> zw(n_envs);
  for (std::size_t i = 0; i < n_envs; ++i) zw[i] = std::exp(s.log_weighted[i]);
  const auto zs = mean_stderr(zw);
  est.z = {zs.mean, zs.stderr_, n_envs, master_seed};
  est.effective_sample_size = effective_sample_size(s.log_weighted);
  const auto tau = crossing_ratio(s);
  est.tau = {tau.mean, tau.stderr_, n_envs, master_seed};
  return est;
}

struct TiltChoice {
  double tilt = 0.0;
  /// Tilt after each cross-entropy round.
  std::vector<double> path;
  /// Kish effective sample size of w z in the last pilot round.
  double pilot_ess = 0.0;
};

namespace detail {
// Mean of the finite part of the site law tilted by t.
inline double tilted_mean(const PotentialDistribution& dist, double t) {
  const double base = dist.atoms().front().value;
  double num = 0.0, den = 0.0;
  for (const auto& a : dist.atoms()) {
    if (std::isinf(a.value)) continue;
    const double w = a.prob * std::exp(-t * (a.value - base));
    num += w * a.value;
    den += w;
  }
  return num / den;
}
}  // namespace detail

/// Cross-entropy choice of the exponential tilt: each round draws pilot
/// environments under the current tilt and moves to the tilt whose mean
/// site value matches the mean under the weights w z. The pilot uses its own
/// seed, so the production run stays independent of it.
inline TiltChoice choose_tilt(const PotentialDistribution& dist, std::int64_t y,
                              const WindowPolicy& policy, std::uint64_t pilot_envs,
                              std::uint64_t master_seed, unsigned workers = 1, bool open = false,
                              int rounds = 8, double max_tilt = 20.0) {
  if (pilot_envs < 2) throw std::invalid_argument("choose_tilt: need at least two pilot environments");
  if (y < 1) throw std::invalid_argument("choose_tilt: y must be >= 1");
  const std::uint64_t pilot_seed = master_seed ^ 0x9e3779b97f4a7c15ULL;
  TiltChoice out;
  double lo_mean = detail::tilted_mean(dist, max_tilt), hi_mean = detail::tilted_mean(dist, 0.0);
  for (int round = 0; round < rounds; ++round) {
    const SiteSampling sampling{open, out.tilt};
    const std::uint64_t seed = pilot_seed + static_cast<std::uint64_t>(round);
    std::vector<double> lw(pilot_envs), site_mean(pilot_envs);
    parallel_for(pilot_envs, workers, [&](std::size_t i) {
      const auto q = solve_window_adaptive(dist, y, seed, i, policy, sampling);
      double unused = 0.0;
      const auto v = detail::draw_inner_sites(dist, y, seed, i, sampling, unused);
      double m = 0.0;
      for (double x : v) m += std::isfinite(x) ? x : 0.0;
      site_mean[i] = m / static_cast<double>(y);
      lw[i] = q.log_z + q.log_weight;
    });
    out.pilot_ess = effective_sample_size(lw);
    double top = -std::numeric_limits<double>::infinity();
    for (double v : lw) top = std::max(top, v);
    if (!std::isfinite(top)) break;  // no weight anywhere: keep the current tilt
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < pilot_envs; ++i) {
      if (!std::isfinite(lw[i])) continue;
      const double w = std::exp(lw[i] - top);
      num += w * site_mean[i];
      den += w;
    }
    const double target = num / den;
    // The tilted mean decreases in t; bisect for the matching tilt.
    double t;
    if (target >= hi_mean) {
      t = 0.0;
    } else if (target <= lo_mean) {
      t = max_tilt;
    } else {
      double a = 0.0, b = max_tilt;
      for (int it = 0; it < 100; ++it) {
        const double mid = 0.5 * (a + b);
        (detail::tilted_mean(dist, mid) > target ? a : b) = mid;
      }
      t = 0.5 * (a + b);
    }
    out.tilt = t;
    out.path.push_back(t);
  }
  return out;
}

/// Annealed weight of a fixed path: E_omega exp(-sum_{n<tau} V(S_n))
/// = exp(-sum_x Lambda_V(l(x))) by independence across sites.
inline double localtime_weight(const std::vector<std::int64_t>& sites,
                               const PotentialDistribution& dist) {
  if (sites.size() <= 1) return 1.0;
  const auto stats = path_statistics(sites);
  double total = 0.0;
  for (const auto& [site, count] : stats.local_times) total += log_mgf(dist, static_cast<double>(count));
  return std::exp(-total);
}

inline double localtime_weight(const PathSample& path, const PotentialDistribution& dist) {
  return localtime_weight(path.sites, dist);
}

}  // namespace crossing
