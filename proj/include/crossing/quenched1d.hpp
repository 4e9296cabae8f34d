#pragma once
// Exact per-environment computations for the killed walk on Z.
//
// Everything here reduces to one left-to-right elimination. With an
// absorbing left boundary h(lo) = 0 and h(target) = 1, the survival-weight
// function satisfies h(x) = ratio(x) * h(x+1) where
//
//     ratio(x) = 1 / (2 e^{V(x)} - ratio(x-1)),   ratio(lo) = 0,
//
// and the conditioned expected time to step from x to x+1 is
//
//     excursion(x) = 1 + ratio(x-1) ratio(x) (1 + excursion(x-1)).
//
// Both quantities are scale free, so h and the time-weighted vector t are
// obtained without overflow and a site with V = inf simply decouples the
// segments on either side of it (ratio = 0).

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <vector>

#include "crossing/potential.hpp"
#include "crossing/rng.hpp"

namespace crossing {

enum class SolveKind {
  /// Block on [0, r]: first return to 0 forbidden, first step forced right.
  block,
  /// Walk started at 0 on [lo, target] with absorbing site lo.
  window,
};

struct QuenchedSolve {
  SolveKind kind = SolveKind::window;
  std::int64_t lo = 0;
  std::int64_t hi = 0;  // == target
  std::int64_t target = 0;
  std::vector<double> h;  // indexed by x - lo
  std::vector<double> t;
  double z = 0.0;
  double t0 = 0.0;
  double log_z = -std::numeric_limits<double>::infinity();
  /// E[tau | conditioned], absent when z = 0. Computed from the scale-free
  /// excursion sums, so it stays accurate when z underflows.
  std::optional<double> conditioned_mean;
  // Per-site data for the h-transform sampler.
  std::vector<double> survival;  // e^{-V(x)}
  std::vector<double> ratio;     // h(x) / h(x+1)
  std::vector<double> excursion; // conditioned E[time to step x -> x+1]
  // Window bookkeeping (window kind only).
  std::int64_t window = 0;
  double achieved_tol = 0.0;
  bool window_converged = true;
  /// Likelihood ratio of the site law against the sampling law (0 unless
  /// the window was drawn with SiteSampling).
  double log_weight = 0.0;

  std::size_t index(std::int64_t x) const { return static_cast<std::size_t>(x - lo); }
  double h_at(std::int64_t x) const { return h.at(index(x)); }
  double t_at(std::int64_t x) const { return t.at(index(x)); }

  /// Total weight of admissible paths from x (for a block, z at its start).
  double weight_from(std::int64_t x) const {
    if (kind == SolveKind::block && x == lo) return z;
    return h_at(x);
  }
};

namespace detail {

// Elimination on [lo, hi] for potential values V(lo..hi-1); V(hi) unused.
inline QuenchedSolve eliminate(std::int64_t lo, const std::vector<double>& potential,
                               std::int64_t hi) {
  const auto n = static_cast<std::size_t>(hi - lo + 1);
  QuenchedSolve s;
  s.lo = lo;
  s.hi = hi;
  s.target = hi;
  s.h.assign(n, 0.0);
  s.t.assign(n, 0.0);
  s.survival.assign(n, 1.0);
  s.ratio.assign(n, 0.0);
  s.excursion.assign(n, 0.0);
  for (std::size_t i = 0; i + 1 < n; ++i) s.survival[i] = survival_factor(potential[i]);
  for (std::size_t i = 1; i + 1 < n; ++i) {
    const double prev = s.ratio[i - 1];
    if (!std::isinf(potential[i]))
      s.ratio[i] = std::exp(-potential[i] - std::log(2.0 - prev * s.survival[i]));
    s.excursion[i] = 1.0 + prev * s.ratio[i] * (1.0 + s.excursion[i - 1]);
  }
  // Back substitution from h(hi) = 1, t(hi) = 0.
  s.h[n - 1] = 1.0;
  double remaining = 0.0;  // conditioned time from x to hi
  for (std::size_t i = n - 1; i-- > 1;) {
    s.h[i] = s.ratio[i] * s.h[i + 1];
    remaining += s.excursion[i];
    s.t[i] = s.h[i] * remaining;
  }
  return s;
}

inline double suffix_log_h(const QuenchedSolve& s, std::int64_t from) {
  double acc = 0.0;
  for (std::int64_t x = from; x < s.hi; ++x) {
    const double r = s.ratio[s.index(x)];
    if (r == 0.0) return -std::numeric_limits<double>::infinity();
    acc += std::log(r);
  }
  return acc;
}

inline double suffix_excursion(const QuenchedSolve& s, std::int64_t from) {
  double acc = 0.0;
  for (std::int64_t x = from; x < s.hi; ++x) acc += s.excursion[s.index(x)];
  return acc;
}

}  // namespace detail

/// Block solve on [0, r]. `env` must cover sites 0..r-1 (V(r) is never
/// counted before tau_r).
inline QuenchedSolve solve_block(const Environment& env, std::int64_t r) {
  if (r < 1) throw std::invalid_argument("solve_block: r must be >= 1");
  if (!env.covers(0, r - 1)) throw std::invalid_argument("solve_block: environment does not cover [0, r-1]");
  std::vector<double> v(static_cast<std::size_t>(r + 1), 0.0);
  for (std::int64_t x = 0; x < r; ++x) v[static_cast<std::size_t>(x)] = env.at(x);
  QuenchedSolve s = detail::eliminate(0, v, r);
  s.kind = SolveKind::block;
  const double w0 = s.survival[0];
  const double h1 = s.h[1];
  const double t1 = s.t[1];
  s.z = 0.5 * w0 * h1;
  s.t0 = 0.5 * w0 * (t1 + h1);
  if (w0 == 0.0) {
    s.log_z = -std::numeric_limits<double>::infinity();
  } else {
    s.log_z = -v[0] - std::numbers::ln2 + detail::suffix_log_h(s, 1);
  }
  if (std::isfinite(s.log_z)) s.conditioned_mean = 1.0 + detail::suffix_excursion(s, 1);
  return s;
}

/// Window solve on [lo, y] with lo = env.lo = -W, absorbing at -W.
inline QuenchedSolve solve_window(const Environment& env, std::int64_t y) {
  if (y < 1) throw std::invalid_argument("solve_window: y must be >= 1");
  if (env.lo > -1) throw std::invalid_argument("solve_window: window width W must be >= 1");
  if (env.hi() < y - 1) throw std::invalid_argument("solve_window: environment does not reach y-1");
  std::vector<double> v(static_cast<std::size_t>(y - env.lo + 1), 0.0);
  for (std::int64_t x = env.lo; x < y; ++x) v[static_cast<std::size_t>(x - env.lo)] = env.at(x);
  QuenchedSolve s = detail::eliminate(env.lo, v, y);
  s.kind = SolveKind::window;
  s.window = -env.lo;
  s.z = s.h_at(0);
  s.t0 = s.t_at(0);
  s.log_z = detail::suffix_log_h(s, 0);
  if (std::isfinite(s.log_z)) s.conditioned_mean = detail::suffix_excursion(s, 0);
  return s;
}

struct WindowPolicy {
  std::int64_t initial = 16;
  double tol = 1e-10;
  std::int64_t cap = std::int64_t{1} << 20;
  /// false: solve once at W = initial.
  bool adaptive = true;
};

/// Law of the sites [0, y) in sampled windows. `open` conditions them on
/// V < inf: any environment with an infinite site in [0, y) has z = 0, so
/// this changes no Q_y functional. `tilt` draws them from
/// p(v) e^{-tilt v} / E e^{-tilt V} instead (importance sampling of the
/// annealed mean). QuenchedSolve::log_weight carries log dP/dP~ over [0, y),
/// so z e^{log_weight} is unbiased for the unconditioned mean.
struct SiteSampling {
  bool open = false;
  double tilt = 0.0;

  bool plain() const noexcept { return !open && tilt == 0.0; }
};

namespace detail {

// Inverse-CDF table for the reweighted site law, with per-atom log ratios.
class SiteLaw {
 public:
  SiteLaw(const PotentialDistribution& dist, SiteSampling sampling) {
    if (!(sampling.tilt >= 0.0)) throw std::invalid_argument("site sampling: tilt must be nonnegative");
    const auto& atoms = dist.atoms();
    const double base = atoms.front().value;  // shift-free exponent reference
    std::vector<double> w(atoms.size());
    double total = 0.0;
    for (std::size_t i = 0; i < atoms.size(); ++i) {
      const bool drop = std::isinf(atoms[i].value) && (sampling.open || sampling.tilt > 0.0);
      w[i] = drop ? 0.0 : atoms[i].prob * std::exp(-sampling.tilt * (atoms[i].value - base));
      total += w[i];
    }
    if (!(total > 0.0)) throw std::invalid_argument("site sampling: reweighted law has no mass");
    double acc = 0.0;
    for (std::size_t i = 0; i < atoms.size(); ++i) {
      acc += w[i] / total;
      cumulative_.push_back(acc);
      values_.push_back(atoms[i].value);
      log_ratio_.push_back(w[i] > 0.0 ? std::log(atoms[i].prob * total / w[i]) : 0.0);
    }
    last_ = atoms.size() - 1;
    while (last_ > 0 && w[last_] == 0.0) --last_;
  }

  std::size_t index_for(double u) const noexcept {
    for (std::size_t i = 0; i < last_; ++i)
      if (u < cumulative_[i]) return i;
    return last_;
  }
  double value(std::size_t i) const noexcept { return values_[i]; }
  double log_ratio(std::size_t i) const noexcept { return log_ratio_[i]; }

 private:
  std::vector<double> cumulative_, values_, log_ratio_;
  std::size_t last_ = 0;
};

// V(0..y-1) of environment env_index under `sampling`; accumulates the
// log-likelihood ratio into log_weight.
inline std::vector<double> draw_inner_sites(const PotentialDistribution& dist, std::int64_t y,
                                            std::uint64_t master_seed, std::uint64_t env_index,
                                            SiteSampling sampling, double& log_weight) {
  std::vector<double> inner(static_cast<std::size_t>(std::max<std::int64_t>(y, 0)));
  if (sampling.plain()) {
    for (std::int64_t x = 0; x < y; ++x) inner[static_cast<std::size_t>(x)] = site_value(dist, master_seed, env_index, x);
    return inner;
  }
  const SiteLaw law(dist, sampling);
  for (std::int64_t x = 0; x < y; ++x) {
    const auto k = law.index_for(keyed_uniform(master_seed, Stream::environment_1d, env_index,
                                               static_cast<std::uint64_t>(x)));
    inner[static_cast<std::size_t>(x)] = law.value(k);
    log_weight += law.log_ratio(k);
  }
  return inner;
}

}  // namespace detail

/// Window solve with the environment generated site by site from
/// (master_seed, env_index), doubling W until z changes by less than
/// policy.tol (relative) or W reaches policy.cap.
inline QuenchedSolve solve_window_adaptive(const PotentialDistribution& dist, std::int64_t y,
                                           std::uint64_t master_seed, std::uint64_t env_index,
                                           const WindowPolicy& policy = {},
                                           SiteSampling sampling = {}) {
  if (policy.initial < 1) throw std::invalid_argument("window policy: initial W must be >= 1");
  // Sites [0, y) are fixed across window sizes; only the left part grows.
  double log_weight = 0.0;
  const auto inner = detail::draw_inner_sites(dist, y, master_seed, env_index, sampling, log_weight);
  auto value_at = [&](std::int64_t x) {
    if (x >= 0 && x < y) return inner[static_cast<std::size_t>(x)];
    return site_value(dist, master_seed, env_index, x);
  };
  auto build = [&](std::int64_t w) {
    Environment env;
    env.lo = -w;
    env.seed_id = env_index;
    env.values.resize(static_cast<std::size_t>(y + w + 1));
    for (std::int64_t x = -w; x <= y; ++x) env.values[static_cast<std::size_t>(x + w)] = value_at(x);
    QuenchedSolve s = solve_window(env, y);
    s.log_weight = log_weight;
    return s;
  };

  std::int64_t w = policy.initial;
  QuenchedSolve current = build(w);
  if (!policy.adaptive) {
    current.achieved_tol = std::numeric_limits<double>::quiet_NaN();
    current.window_converged = false;
    return current;
  }
  for (;;) {
    if (2 * w > policy.cap) {
      current.window_converged = false;
      if (current.achieved_tol == 0.0) current.achieved_tol = std::numeric_limits<double>::infinity();
      return current;
    }
    QuenchedSolve next = build(2 * w);
    double change;
    if (!std::isfinite(next.log_z) && !std::isfinite(current.log_z))
      change = 0.0;
    else
      change = std::abs(std::expm1(current.log_z - next.log_z));
    next.achieved_tol = change;
    w *= 2;
    current = std::move(next);
    if (change < policy.tol) {
      current.window_converged = true;
      return current;
    }
  }
}

/// Incremental block data for all r at once: after pushing V(0..r-1) the
/// current values equal solve_block on [0, r]. Used by the annealed tables.
class BlockPrefix {
 public:
  void push(double v) {
    if (count_ == 0) {
      log_w0_ = -v;
      w0_ = survival_factor(v);
      ratio_ = 0.0;
      excursion_ = 0.0;
      product_ = 1.0;
      log_product_ = 0.0;
      time_ = 0.0;
    } else {
      double c = 0.0;
      double log_c = -std::numeric_limits<double>::infinity();
      if (!std::isinf(v)) {
        log_c = -v - std::log(2.0 - ratio_ * survival_factor(v));
        c = std::exp(log_c);
      }
      const double e = 1.0 + ratio_ * c * (1.0 + excursion_);
      ratio_ = c;
      excursion_ = e;
      product_ *= c;
      log_product_ += log_c;
      time_ += e;
    }
    ++count_;
  }
  std::int64_t r() const noexcept { return count_; }
  double z() const noexcept { return 0.5 * w0_ * product_; }
  double log_z() const noexcept { return log_w0_ - std::numbers::ln2 + log_product_; }
  /// Conditioned E[tau_r] on the current block.
  double conditioned_mean() const noexcept { return 1.0 + time_; }
  double t0() const noexcept { return z() * conditioned_mean(); }

 private:
  std::int64_t count_ = 0;
  double w0_ = 1.0;
  double log_w0_ = 0.0;
  double ratio_ = 0.0;
  double excursion_ = 0.0;
  double product_ = 1.0;
  double log_product_ = 0.0;
  double time_ = 0.0;
};

struct PathSample {
  std::vector<std::int64_t> sites;  // S_0 .. S_tau
  std::int64_t tau = 0;
  std::map<std::int64_t, std::int64_t> local_times;
  std::vector<std::int64_t> renewal_sites;
  std::int64_t x_y = 0;
};

struct PathStatistics {
  std::map<std::int64_t, std::int64_t> local_times;
  std::vector<std::int64_t> renewal_sites;
  std::int64_t x_y = 0;
};

/// Local times strictly before tau (the last site is the target), renewal
/// sites x in [0, y] with local time <= 1, and their minimum.
inline PathStatistics path_statistics(const std::vector<std::int64_t>& sites) {
  if (sites.empty()) throw std::invalid_argument("path_statistics: empty path");
  for (std::size_t n = 1; n < sites.size(); ++n)
    if (std::abs(sites[n] - sites[n - 1]) != 1)
      throw std::invalid_argument("path_statistics: not a nearest-neighbour path");
  PathStatistics out;
  for (std::size_t n = 0; n + 1 < sites.size(); ++n) ++out.local_times[sites[n]];
  const std::int64_t y = sites.back();
  for (std::int64_t x = 0; x <= y; ++x) {
    auto it = out.local_times.find(x);
    const std::int64_t lt = it == out.local_times.end() ? 0 : it->second;
    if (lt <= 1) out.renewal_sites.push_back(x);
  }
  out.x_y = out.renewal_sites.empty() ? y : out.renewal_sites.front();
  return out;
}

inline PathStatistics path_statistics(const PathSample& path) { return path_statistics(path.sites); }

/// Number of visits to `site` strictly before the first hit of `until`.
inline std::int64_t local_time_before(const std::vector<std::int64_t>& sites, std::int64_t site,
                                      std::int64_t until) {
  std::int64_t count = 0;
  for (std::int64_t s : sites) {
    if (s == until) break;
    if (s == site) ++count;
  }
  return count;
}

/// Index of the first visit to `site`, or -1.
inline std::int64_t hitting_time(const std::vector<std::int64_t>& sites, std::int64_t site) {
  for (std::size_t n = 0; n < sites.size(); ++n)
    if (sites[n] == site) return static_cast<std::int64_t>(n);
  return -1;
}

struct SamplerOptions {
  std::uint64_t path_id = 0;
  /// Stop at the first hit of this site instead of the target.
  std::optional<std::int64_t> stop_at;
  std::int64_t max_steps = std::int64_t{1} << 32;
  bool compute_statistics = true;
};

/// Exact draw from the conditioned path law via the h-transform
///   P(x -> x+-1) = e^{-V(x)} h(x+-1) / (2 h(x)),
/// evaluated through the ratio recursion so that it never absorbs.
inline PathSample sample_conditioned_path(const QuenchedSolve& solve, std::int64_t start,
                                          std::uint64_t seed, const SamplerOptions& opts = {}) {
  if (start < solve.lo || start > solve.hi)
    throw std::invalid_argument("sample_conditioned_path: start outside the solved window");
  if (!(solve.weight_from(start) > 0.0))
    throw std::domain_error("sample_conditioned_path: no conditioned law (zero weight at start)");
  PhiloxEngine rng(seed, Stream::path, opts.path_id);
  const std::int64_t stop = opts.stop_at.value_or(solve.target);
  PathSample path;
  std::int64_t x = start;
  path.sites.push_back(x);
  while (x != solve.target && x != stop) {
    if (static_cast<std::int64_t>(path.sites.size()) > opts.max_steps)
      throw std::runtime_error("sample_conditioned_path: step cap exceeded");
    if (solve.kind == SolveKind::block && x == solve.lo) {
      x += 1;
    } else {
      const double down = 0.5 * solve.survival[solve.index(x)] * solve.ratio[solve.index(x - 1)];
      x += rng.uniform() < down ? -1 : 1;
    }
    path.sites.push_back(x);
  }
  path.tau = static_cast<std::int64_t>(path.sites.size()) - 1;
  if (opts.compute_statistics && x == solve.target) {
    auto st = path_statistics(path.sites);
    path.local_times = std::move(st.local_times);
    path.renewal_sites = std::move(st.renewal_sites);
    path.x_y = st.x_y;
  }
  return path;
}

inline void write_path_csv(std::ostream& out, const PathSample& path) {
  out << "step,site\n";
  for (std::size_t n = 0; n < path.sites.size(); ++n) out << n << ',' << path.sites[n] << '\n';
}

}  // namespace crossing
