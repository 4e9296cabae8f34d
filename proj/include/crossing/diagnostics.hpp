#pragma once
// Pass/fail checks of standalone inequalities and scaling trends.
//
// Inequalities get a uniform 4 sigma allowance; anything beyond that is a
// failure, not a footnote.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "crossing/annealed1d.hpp"
#include "crossing/lyapunov.hpp"
#include "crossing/parallel.hpp"
#include "crossing/quenched1d.hpp"
#include "crossing/renewal.hpp"
#include "crossing/rng.hpp"
#include "crossing/stats.hpp"

namespace crossing {

struct CheckReport {
  std::string name;
  double statistic = 0.0;
  double threshold = 0.0;
  bool pass = false;
  nlohmann::json details = nlohmann::json::object();
};

inline nlohmann::json to_json(const CheckReport& r) {
  nlohmann::json j;
  j["name"] = r.name;
  j["statistic"] = r.statistic;
  j["threshold"] = r.threshold;
  j["pass"] = r.pass;
  j["details"] = r.details;
  return j;
}

/// Simple walk from 0: P(local time at z before hitting x exceeds m), z <= x.
inline double srw_localtime_tail(std::int64_t x, std::int64_t z, std::int64_t m) {
  if (z > x) throw std::invalid_argument("srw_localtime_tail: need z <= x");
  if (x < 1 && z < x) throw std::invalid_argument("srw_localtime_tail: need x >= 1");
  if (z == x) return 0.0;
  const double gap = static_cast<double>(x - z);
  const double hit = z >= 0 ? 1.0 : static_cast<double>(x) / gap;
  return hit * std::pow(1.0 - 1.0 / (2.0 * gap), static_cast<double>(m));
}

/// Quenched local-time tails under Q_y against the simple-walk tail for every
/// m <= m_max. Each environment is tested separately with paths drawn from
/// the h-transform and stopped at the first hit of x.
inline CheckReport check_bias_domination(const PotentialDistribution& dist, std::int64_t y,
                                         std::int64_t z, std::int64_t x, std::int64_t m_max,
                                         std::uint64_t n_envs, std::uint64_t paths_per_env,
                                         std::uint64_t master_seed, const WindowPolicy& policy,
                                         unsigned workers = 1, SiteSampling sampling = {}) {
  if (!(z <= x && x <= y) || x < 1) throw std::invalid_argument("check_bias_domination: need z <= x <= y, x >= 1");
  if (paths_per_env < 2 || n_envs < 1) throw std::invalid_argument("check_bias_domination: sample sizes too small");
  const auto M = static_cast<std::size_t>(m_max + 1);
  std::vector<std::vector<double>> freq(n_envs);
  std::vector<char> usable(n_envs, 0);
  parallel_for(n_envs, workers, [&](std::size_t i) {
    const auto solve = solve_window_adaptive(dist, y, master_seed, i, policy, sampling);
    if (!std::isfinite(solve.log_z)) return;
    usable[i] = 1;
    std::vector<double> counts(M, 0.0);
    for (std::uint64_t k = 0; k < paths_per_env; ++k) {
      SamplerOptions opts;
      opts.path_id = i * paths_per_env + k;
      opts.stop_at = x;
      opts.compute_statistics = false;
      const auto path = sample_conditioned_path(solve, 0, master_seed, opts);
      const auto lt = local_time_before(path.sites, z, x);
      for (std::int64_t m = 0; m < std::min<std::int64_t>(lt, m_max + 1); ++m) counts[static_cast<std::size_t>(m)] += 1.0;
    }
    for (auto& c : counts) c /= static_cast<double>(paths_per_env);
    freq[i] = std::move(counts);
  });

  CheckReport rep;
  rep.name = "bias_domination";
  rep.threshold = 4.0;
  double worst = -std::numeric_limits<double>::infinity();
  std::uint64_t used = 0;
  std::vector<double> pooled(M, 0.0), srw(M);
  for (std::size_t m = 0; m < M; ++m) srw[m] = srw_localtime_tail(x, z, static_cast<std::int64_t>(m));
  bool exact_violation = false;
  for (std::size_t i = 0; i < n_envs; ++i) {
    if (!usable[i]) continue;
    ++used;
    for (std::size_t m = 0; m < M; ++m) {
      pooled[m] += freq[i][m];
      const double p = srw[m];
      const double sigma = std::sqrt(p * (1.0 - p) / static_cast<double>(paths_per_env));
      if (sigma > 0.0) {
        worst = std::max(worst, (freq[i][m] - p) / sigma);
      } else if (freq[i][m] > p) {
        exact_violation = true;
      }
    }
  }
  if (used == 0) throw NoEstimate("check_bias_domination: no environment with positive weight");
  for (auto& p : pooled) p /= static_cast<double>(used);
  rep.statistic = std::isfinite(worst) ? worst : 0.0;
  rep.pass = !exact_violation && rep.statistic <= rep.threshold;
  rep.details = {{"y", y},
                 {"z", z},
                 {"x", x},
                 {"m_max", m_max},
                 {"n_envs", n_envs},
                 {"envs_used", used},
                 {"paths_per_env", paths_per_env},
                 {"master_seed", master_seed},
                 {"statistic_meaning", "max over environments and m of (quenched - srw) / sigma"},
                 {"pooled_quenched_tail", pooled},
                 {"srw_tail", srw}};
  return rep;
}

/// Q_y(V(-1) = largest atom) against 2 y P(V(-1) = largest atom). Site -1
/// lies outside [0, y), whose law is the only one SiteSampling changes.
inline CheckReport check_prefactor_bound(const PotentialDistribution& dist, std::int64_t y,
                                         std::uint64_t n_envs, std::uint64_t master_seed,
                                         const WindowPolicy& policy, unsigned workers = 1,
                                         SiteSampling sampling = {}) {
  const auto s = sample_windows(dist, y, n_envs, master_seed, policy, workers, sampling);
  const double top_value = dist.largest_atom().value;
  const double p = dist.largest_atom().prob;
  double top = -std::numeric_limits<double>::infinity();
  for (double lz : s.log_weighted) top = std::max(top, lz);
  if (!std::isfinite(top)) throw NoEstimate("check_prefactor_bound: every sampled z is 0");
  std::vector<double> num(n_envs), den(n_envs);
  for (std::size_t i = 0; i < n_envs; ++i) {
    den[i] = std::isfinite(s.log_weighted[i]) ? std::exp(s.log_weighted[i] - top) : 0.0;
    num[i] = site_value(dist, master_seed, i, -1) == top_value ? den[i] : 0.0;
  }
  const auto q = ratio_of_means(num, den);
  const double bound = 2.0 * static_cast<double>(y) * p;
  CheckReport rep;
  rep.name = "prefactor_bound";
  rep.statistic = q.mean;
  rep.threshold = bound + 4.0 * q.stderr_;
  rep.pass = q.mean <= rep.threshold;
  rep.details = {{"y", y},
                 {"event", "V(-1) equals the largest atom"},
                 {"p", p},
                 {"q_event", q.mean},
                 {"q_event_stderr", q.stderr_},
                 {"effective_sample_size", effective_sample_size(s.log_weighted)},
                 {"bound", bound},
                 {"looseness", q.mean / bound},
                 {"n_envs", n_envs},
                 {"master_seed", master_seed}};
  return rep;
}

namespace detail {
// P_start(hit a before b) for the simple walk, by a tridiagonal solve of the
// harmonic equations on (a, b) with f(a) = 1, f(b) = 0.
inline double srw_hit_before(std::int64_t start, std::int64_t a, std::int64_t b) {
  if (start == a) return 1.0;
  if (start == b) return 0.0;
  const auto n = static_cast<std::size_t>(b - a - 1);
  // f(k) - (f(k-1) + f(k+1)) / 2 = 0; Thomas algorithm.
  std::vector<double> cp(n), dp(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double lower = i == 0 ? 0.0 : -0.5;
    const double rhs = i == 0 ? 0.5 : 0.0;
    const double denom = 1.0 - lower * (i == 0 ? 0.0 : cp[i - 1]);
    cp[i] = -0.5 / denom;
    dp[i] = (rhs - lower * (i == 0 ? 0.0 : dp[i - 1])) / denom;
  }
  std::vector<double> f(n);
  f[n - 1] = dp[n - 1];
  for (std::size_t i = n - 1; i-- > 0;) f[i] = dp[i] - cp[i] * f[i + 1];
  return f[static_cast<std::size_t>(start - a - 1)];
}
}  // namespace detail

/// P^0(l_y(z) >= m) for the simple walk, z < 0 < y: first-passage
/// decomposition with numerically solved hitting probabilities, against
/// y/(y+|z|) (1 - 1/(2(y+|z|)))^{m-1}.
inline CheckReport check_localtime_geometric(std::int64_t y, std::int64_t z, std::int64_t m_max) {
  if (!(z < 0 && y > 0)) throw std::invalid_argument("check_localtime_geometric: need z < 0 < y");
  if (m_max < 1) throw std::invalid_argument("check_localtime_geometric: need m_max >= 1");
  const double first = detail::srw_hit_before(0, z, y);
  // Return to z before y: the left step always returns (recurrence), the
  // right step returns with the hitting probability from z + 1.
  const double back = 0.5 + 0.5 * detail::srw_hit_before(z + 1, z, y);
  const double span = static_cast<double>(y - z);
  double worst = 0.0, ratio_err = 0.0;
  std::vector<double> numeric, closed;
  for (std::int64_t m = 1; m <= m_max; ++m) {
    const double a = first * std::pow(back, static_cast<double>(m - 1));
    const double b = static_cast<double>(y) / span * std::pow(1.0 - 1.0 / (2.0 * span), static_cast<double>(m - 1));
    numeric.push_back(a);
    closed.push_back(b);
    worst = std::max(worst, std::abs(a - b));
  }
  ratio_err = std::abs(back - (1.0 - 1.0 / (2.0 * span)));
  CheckReport rep;
  rep.name = "localtime_geometric";
  rep.statistic = std::max(worst, ratio_err);
  rep.threshold = 1e-12;
  rep.pass = rep.statistic < rep.threshold;
  rep.details = {{"y", y}, {"z", z}, {"m_max", m_max}, {"numeric", numeric}, {"closed_form", closed}};
  return rep;
}

struct XyTailOptions {
  WindowPolicy policy{};
  SiteSampling sampling{};
  /// Environments in the pool that paths are resampled from.
  std::uint64_t pool = 2000;
};

/// Annealed sample of the smallest renewal site X_y: environments are drawn
/// from the pool with probability proportional to z, then a conditioned path
/// is drawn in the chosen environment.
inline CheckReport check_xy_tail(const PotentialDistribution& dist, std::int64_t y, std::uint64_t n_paths,
                                 std::uint64_t master_seed, const XyTailOptions& opt = {},
                                 unsigned workers = 1) {
  if (y < 1 || n_paths < 10) throw std::invalid_argument("check_xy_tail: need y >= 1 and >= 10 paths");
  const auto s = sample_windows(dist, y, opt.pool, master_seed, opt.policy, workers, opt.sampling);
  double top = -std::numeric_limits<double>::infinity();
  for (double lz : s.log_weighted) top = std::max(top, lz);
  if (!std::isfinite(top)) throw NoEstimate("check_xy_tail: too few samples with positive weight");
  std::vector<double> cumulative(opt.pool);
  double acc = 0.0, acc2 = 0.0;
  for (std::size_t i = 0; i < opt.pool; ++i) {
    const double w = std::isfinite(s.log_weighted[i]) ? std::exp(s.log_weighted[i] - top) : 0.0;
    acc += w;
    acc2 += w * w;
    cumulative[i] = acc;
  }
  const double ess = acc * acc / acc2;

  std::vector<std::size_t> chosen(n_paths);
  for (std::uint64_t k = 0; k < n_paths; ++k) {
    const double u = keyed_uniform(master_seed, Stream::resample, k, 0) * acc;
    chosen[k] = static_cast<std::size_t>(std::upper_bound(cumulative.begin(), cumulative.end(), u) - cumulative.begin());
    chosen[k] = std::min<std::size_t>(chosen[k], opt.pool - 1);
  }
  std::vector<std::size_t> unique = chosen;
  std::sort(unique.begin(), unique.end());
  unique.erase(std::unique(unique.begin(), unique.end()), unique.end());
  std::vector<QuenchedSolve> solves(unique.size());
  parallel_for(unique.size(), workers, [&](std::size_t j) {
    solves[j] = solve_window_adaptive(dist, y, master_seed, unique[j], opt.policy, opt.sampling);
  });

  std::vector<std::int64_t> xs(n_paths);
  std::vector<double> tau_x(n_paths);
  parallel_for(n_paths, workers, [&](std::size_t k) {
    const auto j = static_cast<std::size_t>(std::lower_bound(unique.begin(), unique.end(), chosen[k]) - unique.begin());
    SamplerOptions so;
    so.path_id = k;
    const auto path = sample_conditioned_path(solves[j], 0, master_seed, so);
    xs[k] = path.x_y;
    tau_x[k] = static_cast<double>(hitting_time(path.sites, path.x_y));
  });

  // Survival S(r) = P(X_y > r).
  std::vector<double> survival(static_cast<std::size_t>(y + 1), 0.0);
  for (auto x : xs)
    for (std::int64_t r = 0; r < x; ++r) survival[static_cast<std::size_t>(r)] += 1.0;
  std::vector<double> fx, fy;
  for (std::int64_t r = 0; r <= y; ++r) {
    const double count = survival[static_cast<std::size_t>(r)];
    survival[static_cast<std::size_t>(r)] = count / static_cast<double>(n_paths);
    if (count >= 5.0) {
      fx.push_back(static_cast<double>(r));
      fy.push_back(std::log(survival[static_cast<std::size_t>(r)]));
    }
  }
  double slope = std::numeric_limits<double>::quiet_NaN();
  if (fx.size() >= 2) slope = fit_line(fx, fy).slope;
  const double s_half = survival[static_cast<std::size_t>(y / 2)];
  const auto tau_stats = mean_stderr(tau_x);

  // Reasonable sites V in [kappa, K] among [0, y) of the chosen environments.
  const double kappa = dist.kappa(), big_k = dist.largest_finite();
  double reasonable = 0.0, total_sites = 0.0;
  for (const auto& sv : solves) {
    for (std::int64_t x = 0; x < y; ++x) {
      const double w = sv.survival[sv.index(x)];
      const double v = w > 0.0 ? -std::log(w) : kInfinity;
      if (kappa > 0.0 && v >= kappa * (1 - 1e-12) && v <= big_k * (1 + 1e-12)) reasonable += 1.0;
      total_sites += 1.0;
    }
  }

  CheckReport rep;
  rep.name = "xy_tail";
  rep.statistic = s_half;
  rep.threshold = 0.01;
  rep.pass = std::isfinite(slope) && slope < 0.0 && s_half < 0.01;
  rep.details = {{"y", y},
                 {"n_paths", n_paths},
                 {"pool", opt.pool},
                 {"effective_pool_size", ess},
                 {"distinct_environments", unique.size()},
                 {"tail_slope", std::isfinite(slope) ? nlohmann::json(slope) : nlohmann::json(nullptr)},
                 {"survival_at_half", s_half},
                 {"mean_tau_to_xy_over_y", tau_stats.mean / static_cast<double>(y)},
                 {"mean_tau_to_xy_over_y_stderr", tau_stats.stderr_ / static_cast<double>(y)},
                 {"reasonable_site_density", total_sites > 0 ? reasonable / total_sites : 0.0},
                 {"kappa", kappa},
                 {"K", big_k},
                 {"open_path_conditioning", opt.sampling.open},
                 {"tilt", opt.sampling.tilt},
                 {"master_seed", master_seed}};
  return rep;
}

/// Log-log slope of E_{Q_y} tau_y over a grid of y, pass iff inside [lo, hi].
inline CheckReport scaling_exponent(const PotentialDistribution& dist, const std::vector<std::int64_t>& ys,
                                    std::uint64_t n_envs, std::uint64_t master_seed, double lo, double hi,
                                    const WindowPolicy& policy, SiteSampling sampling,
                                    unsigned workers = 1) {
  if (ys.size() < 2) throw std::invalid_argument("scaling_exponent: need at least two y values");
  std::vector<double> lx, ly, means, errs;
  bool lower_bound_ok = true;
  for (std::size_t k = 0; k < ys.size(); ++k) {
    const auto est = crossing_time_mc(dist, ys[k], policy, n_envs, master_seed + k, workers, sampling);
    lx.push_back(std::log(static_cast<double>(ys[k])));
    ly.push_back(std::log(est.tau.mean));
    means.push_back(est.tau.mean);
    errs.push_back(est.tau.stderr_);
    if (est.tau.mean < static_cast<double>(ys[k])) lower_bound_ok = false;
  }
  const auto fit = fit_line(lx, ly);
  CheckReport rep;
  rep.name = "scaling_exponent";
  rep.statistic = fit.slope;
  rep.threshold = hi;
  rep.pass = fit.slope >= lo && fit.slope <= hi && lower_bound_ok;
  rep.details = {{"ys", ys},
                 {"mean_tau", means},
                 {"mean_tau_stderr", errs},
                 {"interval", {lo, hi}},
                 {"residual_rms", fit.residual_rms},
                 {"tau_at_least_y", lower_bound_ok},
                 {"n_envs", n_envs},
                 {"master_seed", master_seed},
                 {"open_path_conditioning", sampling.open},
                 {"tilt", sampling.tilt}};
  return rep;
}

/// {0 w.p. p0, inf w.p. 1 - p0}: E tau_y should scale like y^2.
inline CheckReport counterexample_scaling(double p_zero, const std::vector<std::int64_t>& ys,
                                          std::uint64_t n_envs, std::uint64_t master_seed,
                                          unsigned workers = 1) {
  if (!(p_zero > 0.0 && p_zero < 1.0)) throw std::invalid_argument("counterexample_scaling: need 0 < p0 < 1");
  const auto dist = make_distribution({{0.0, p_zero}, {kInfinity, 1.0 - p_zero}}, 0.0);
  auto rep = scaling_exponent(dist, ys, n_envs, master_seed, 1.8, 2.2, WindowPolicy{}, {true}, workers);
  rep.name = "counterexample_scaling";
  rep.details["p_zero"] = p_zero;
  return rep;
}

/// a[r] >= r z0[r] on every row (up to 4 sigma in Monte Carlo mode).
inline CheckReport check_block_time_bound(const BlockTable& t) {
  CheckReport rep;
  rep.name = "block_time_bound";
  rep.threshold = 0.0;
  double worst = -std::numeric_limits<double>::infinity();
  for (std::int64_t r = 1; r <= t.R; ++r) {
    const auto i = static_cast<std::size_t>(r);
    const double slack = 4.0 * std::hypot(t.a_error(r), static_cast<double>(r) * t.z0_error(r));
    worst = std::max(worst, static_cast<double>(r) * t.z0[i] - t.a[i] - slack);
  }
  rep.statistic = worst;
  rep.pass = worst <= 0.0;
  rep.details = {{"R", t.R}, {"mode", to_string(t.mode)}};
  return rep;
}

/// g(r) >= r wherever q(r) > 0.
inline CheckReport check_g_lower_bound(const RenewalKernel& k) {
  CheckReport rep;
  rep.name = "g_lower_bound";
  double worst = std::numeric_limits<double>::infinity();
  for (std::int64_t r = 1; r <= k.R; ++r) {
    const auto i = static_cast<std::size_t>(r);
    if (k.g[i] && k.q[i] > 0.0) worst = std::min(worst, *k.g[i] / static_cast<double>(r));
  }
  rep.statistic = worst;
  rep.threshold = 1.0 - 1e-9;
  rep.pass = worst >= rep.threshold;
  rep.details = {{"R", k.R}, {"statistic_meaning", "min over r of g(r) / r"}};
  return rep;
}

/// beta <= alpha + 3 sigma.
inline CheckReport check_jensen(const McEstimate& beta, const QuenchedExponent& alpha) {
  CheckReport rep;
  rep.name = "jensen_beta_le_alpha";
  const double sigma = std::hypot(beta.stderr_, alpha.estimate.stderr_);
  rep.statistic = beta.mean - alpha.estimate.mean;
  rep.threshold = 3.0 * sigma;
  rep.pass = rep.statistic <= rep.threshold;
  // z = 0 with positive probability makes E log z = -inf: alpha is infinite
  // and the inequality holds whatever the conditioned average says.
  const bool alpha_infinite = alpha.excluded > 0;
  if (alpha_infinite) rep.pass = true;
  rep.details = {{"alpha_infinite", alpha_infinite},
                 {"beta", beta.mean},
                 {"beta_stderr", beta.stderr_},
                 {"alpha", alpha.estimate.mean},
                 {"alpha_stderr", alpha.estimate.stderr_},
                 {"alpha_excluded", alpha.excluded}};
  return rep;
}

}  // namespace crossing
