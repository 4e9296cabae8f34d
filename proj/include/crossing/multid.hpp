#pragma once
// Killed walk on boxes of Z^d, crossing-time scans, and the decomposition
// of space into occupied and empty L-cubes.

#include <Eigen/IterativeLinearSolvers>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <queue>
#include <stdexcept>
#include <vector>

#include "crossing/parallel.hpp"
#include "crossing/potential.hpp"
#include "crossing/rng.hpp"
#include "crossing/stats.hpp"

namespace crossing {

template <int D>
using Site = std::array<std::int64_t, D>;

/// Closed integer box [lo, hi] in each coordinate.
template <int D>
struct Box {
  Site<D> lo{};
  Site<D> hi{};

  std::int64_t extent(int k) const { return hi[k] - lo[k] + 1; }
  std::size_t volume() const {
    std::size_t v = 1;
    for (int k = 0; k < D; ++k) v *= static_cast<std::size_t>(extent(k));
    return v;
  }
  bool contains(const Site<D>& x) const {
    for (int k = 0; k < D; ++k)
      if (x[k] < lo[k] || x[k] > hi[k]) return false;
    return true;
  }
  std::size_t index(const Site<D>& x) const {
    std::size_t idx = 0;
    for (int k = D - 1; k >= 0; --k) idx = idx * static_cast<std::size_t>(extent(k)) + static_cast<std::size_t>(x[k] - lo[k]);
    return idx;
  }
  Site<D> site(std::size_t idx) const {
    Site<D> x{};
    for (int k = 0; k < D; ++k) {
      const auto e = static_cast<std::size_t>(extent(k));
      x[k] = lo[k] + static_cast<std::int64_t>(idx % e);
      idx /= e;
    }
    return x;
  }
};

template <int D>
std::int64_t l1_norm(const Site<D>& x) {
  std::int64_t n = 0;
  for (int k = 0; k < D; ++k) n += std::abs(x[k]);
  return n;
}

/// Counter word for a lattice site: 21 bits per coordinate, offset 2^20.
template <int D>
std::uint64_t pack_site(const Site<D>& x) {
  static_assert(D >= 1 && D <= 3, "pack_site supports d <= 3");
  std::uint64_t w = 0;
  for (int k = 0; k < D; ++k) {
    const std::int64_t shifted = x[k] + (std::int64_t{1} << 20);
    if (shifted < 0 || shifted >= (std::int64_t{1} << 21)) throw std::out_of_range("pack_site: coordinate out of range");
    w |= static_cast<std::uint64_t>(shifted) << (21 * k);
  }
  return w;
}

template <int D>
struct BoxEnvironment {
  Box<D> box;
  std::vector<double> values;  // indexed by box.index
  std::uint64_t seed_id = 0;

  double at(const Site<D>& x) const { return values.at(box.index(x)); }
};

template <int D>
BoxEnvironment<D> sample_box_environment(const PotentialDistribution& dist, const Box<D>& box,
                                         std::uint64_t master_seed, std::uint64_t env_index) {
  BoxEnvironment<D> env;
  env.box = box;
  env.seed_id = env_index;
  env.values.resize(box.volume());
  for (std::size_t i = 0; i < env.values.size(); ++i)
    env.values[i] = dist.value_for(keyed_uniform(master_seed, Stream::environment_nd, env_index, pack_site<D>(box.site(i))));
  return env;
}

enum class BoxSolver { direct, conjugate_gradient };

struct BoxSolveOptions {
  BoxSolver solver = BoxSolver::direct;
  double cg_tolerance = 1e-10;
  int cg_max_iterations = 100000;
};

template <int D>
struct BoxSolve {
  Box<D> box;
  Site<D> target{};
  std::vector<double> h;  // indexed by box.index; outside sites are 0
  std::vector<double> t;
  double z = 0.0;
  double t0 = 0.0;
  std::optional<double> conditioned_mean;
  /// Largest relative residual of the h equations over free sites.
  double max_relative_residual = 0.0;
  int iterations = 0;
};

namespace detail {
template <int D>
std::array<Site<D>, 2 * D> neighbours(const Site<D>& x) {
  std::array<Site<D>, 2 * D> out{};
  for (int k = 0; k < D; ++k) {
    out[2 * k] = x;
    out[2 * k][k] -= 1;
    out[2 * k + 1] = x;
    out[2 * k + 1][k] += 1;
  }
  return out;
}
}  // namespace detail

/// h(x) = e^{-V(x)} (1/2d) sum_nbrs h, h(target) = 1, h = 0 outside the box.
/// Multiplying row x by e^{V(x)} makes the system symmetric positive
/// definite; infinite sites are fixed at 0 and dropped. t solves the same
/// operator with source (1/2d) sum_nbrs h.
template <int D>
BoxSolve<D> box_solve(const BoxEnvironment<D>& env, const Site<D>& target, const BoxSolveOptions& opt = {}) {
  const Box<D>& box = env.box;
  Site<D> origin{};
  if (!box.contains(origin) || !box.contains(target)) throw std::invalid_argument("box_solve: 0 and y must lie in the box");
  if (target == origin) throw std::invalid_argument("box_solve: target must differ from 0");
  const std::size_t n = box.volume();
  const std::size_t target_idx = box.index(target);
  std::vector<std::int64_t> unknown(n, -1);
  std::vector<std::size_t> sites;
  for (std::size_t i = 0; i < n; ++i) {
    if (i == target_idx || std::isinf(env.values[i])) continue;
    unknown[i] = static_cast<std::int64_t>(sites.size());
    sites.push_back(i);
  }
  const double inv2d = 1.0 / (2.0 * D);
  const auto m = static_cast<Eigen::Index>(sites.size());
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(sites.size() * (2 * D + 1));
  Eigen::VectorXd rhs_h = Eigen::VectorXd::Zero(m);
  for (std::size_t r = 0; r < sites.size(); ++r) {
    const auto i = sites[r];
    const auto x = box.site(i);
    const auto row = static_cast<Eigen::Index>(r);
    trip.emplace_back(row, row, std::exp(env.values[i]));
    for (const auto& nb : detail::neighbours<D>(x)) {
      if (!box.contains(nb)) continue;
      const auto j = box.index(nb);
      if (j == target_idx) {
        rhs_h[row] += inv2d;
      } else if (unknown[j] >= 0) {
        trip.emplace_back(row, static_cast<Eigen::Index>(unknown[j]), -inv2d);
      }
    }
  }
  Eigen::SparseMatrix<double> A(m, m);
  A.setFromTriplets(trip.begin(), trip.end());

  BoxSolve<D> out;
  out.box = box;
  out.target = target;
  out.h.assign(n, 0.0);
  out.t.assign(n, 0.0);
  out.h[target_idx] = 1.0;

  Eigen::VectorXd hv, tv;
  auto source_t = [&](const Eigen::VectorXd& h) {
    Eigen::VectorXd b = Eigen::VectorXd::Zero(m);
    for (std::size_t r = 0; r < sites.size(); ++r) {
      const auto x = box.site(sites[r]);
      double acc = 0.0;
      for (const auto& nb : detail::neighbours<D>(x)) {
        if (!box.contains(nb)) continue;
        const auto j = box.index(nb);
        if (j == target_idx) acc += 1.0;
        else if (unknown[j] >= 0) acc += h[unknown[j]];
      }
      b[static_cast<Eigen::Index>(r)] = inv2d * acc;
    }
    return b;
  };
  if (m > 0) {
    if (opt.solver == BoxSolver::direct) {
      Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(A);
      if (ldlt.info() != Eigen::Success) throw std::runtime_error("box_solve: factorization failed");
      hv = ldlt.solve(rhs_h);
      tv = ldlt.solve(source_t(hv));
    } else {
      Eigen::ConjugateGradient<Eigen::SparseMatrix<double>, Eigen::Lower | Eigen::Upper,
                               Eigen::DiagonalPreconditioner<double>> cg;
      cg.setTolerance(opt.cg_tolerance);
      cg.setMaxIterations(opt.cg_max_iterations);
      cg.compute(A);
      hv = cg.solve(rhs_h);
      out.iterations = static_cast<int>(cg.iterations());
      if (cg.info() != Eigen::Success) throw std::runtime_error("box_solve: conjugate gradient did not converge");
      tv = cg.solve(source_t(hv));
      out.iterations += static_cast<int>(cg.iterations());
    }
    for (std::size_t r = 0; r < sites.size(); ++r) {
      out.h[sites[r]] = std::max(0.0, hv[static_cast<Eigen::Index>(r)]);
      out.t[sites[r]] = std::max(0.0, tv[static_cast<Eigen::Index>(r)]);
    }
  }
  // Residuals measured against the local scale of each equation.
  for (std::size_t i : sites) {
    const auto x = box.site(i);
    double nb_sum = 0.0;
    for (const auto& nb : detail::neighbours<D>(x))
      if (box.contains(nb)) nb_sum += out.h[box.index(nb)];
    const double rhs = std::exp(-env.values[i]) * inv2d * nb_sum;
    const double scale = std::max(out.h[i] + rhs, std::numeric_limits<double>::min());
    out.max_relative_residual = std::max(out.max_relative_residual, std::abs(out.h[i] - rhs) / scale);
  }
  const auto o = box.index(origin);
  out.z = out.h[o];
  out.t0 = out.t[o];
  if (out.z > 0.0) out.conditioned_mean = out.t0 / out.z;
  return out;
}

template <int D>
Box<D> scan_box(const Site<D>& y, double margin_factor) {
  const auto margin = static_cast<std::int64_t>(std::ceil(margin_factor * static_cast<double>(l1_norm<D>(y))));
  Box<D> b;
  for (int k = 0; k < D; ++k) {
    b.lo[k] = std::min<std::int64_t>(0, y[k]) - margin;
    b.hi[k] = std::max<std::int64_t>(0, y[k]) + margin;
  }
  return b;
}

struct ScanRow {
  std::int64_t k = 0;       // y = k * direction
  std::int64_t norm = 0;    // ||y||_1
  double ratio = 0.0;       // E_{Q_y} tau_y / ||y||_1
  double ratio_stderr = 0.0;
  std::uint64_t n_envs = 0;
  std::uint64_t n_positive = 0;
  double worst_residual = 0.0;
};

struct BallisticityScan {
  std::vector<ScanRow> rows;
  /// ratio(y_max) / ratio(y at half of y_max) - 1, when both are on the grid.
  std::optional<double> top_octave_increase;
  std::uint64_t master_seed = 0;
  double margin_factor = 2.0;
};

template <int D>
BallisticityScan ballisticity_scan(const PotentialDistribution& dist, const Site<D>& direction,
                                   const std::vector<std::int64_t>& ks, double margin_factor,
                                   std::uint64_t n_envs, std::uint64_t master_seed, unsigned workers = 1,
                                   const BoxSolveOptions& opt = {}) {
  if (ks.empty() || n_envs < 2) throw std::invalid_argument("ballisticity_scan: empty grid or too few environments");
  BallisticityScan scan;
  scan.master_seed = master_seed;
  scan.margin_factor = margin_factor;
  for (std::size_t g = 0; g < ks.size(); ++g) {
    Site<D> y{};
    for (int c = 0; c < D; ++c) y[c] = ks[g] * direction[c];
    const Box<D> box = scan_box<D>(y, margin_factor);
    std::vector<double> log_z(n_envs, -std::numeric_limits<double>::infinity()), mean(n_envs, 0.0), resid(n_envs, 0.0);
    parallel_for(n_envs, workers, [&](std::size_t i) {
      const auto env = sample_box_environment<D>(dist, box, master_seed, i);
      const auto s = box_solve<D>(env, y, opt);
      resid[i] = s.max_relative_residual;
      if (s.z > 0.0) {
        log_z[i] = std::log(s.z);
        mean[i] = *s.conditioned_mean;
      }
    });
    double top = -std::numeric_limits<double>::infinity();
    for (double v : log_z) top = std::max(top, v);
    ScanRow row;
    row.k = ks[g];
    row.norm = l1_norm<D>(y);
    row.n_envs = n_envs;
    if (std::isfinite(top)) {
      std::vector<double> num(n_envs), den(n_envs);
      for (std::size_t i = 0; i < n_envs; ++i) {
        den[i] = std::isfinite(log_z[i]) ? std::exp(log_z[i] - top) : 0.0;
        num[i] = den[i] * mean[i];
        if (std::isfinite(log_z[i])) ++row.n_positive;
      }
      const auto r = ratio_of_means(num, den);
      row.ratio = r.mean / static_cast<double>(row.norm);
      row.ratio_stderr = r.stderr_ / static_cast<double>(row.norm);
    } else {
      row.ratio = std::numeric_limits<double>::quiet_NaN();
    }
    row.worst_residual = *std::max_element(resid.begin(), resid.end());
    scan.rows.push_back(row);
  }
  const auto& last = scan.rows.back();
  for (const auto& row : scan.rows)
    if (2 * row.k == last.k) scan.top_octave_increase = last.ratio / row.ratio - 1.0;
  return scan;
}

inline void write_scan_csv(std::ostream& out, const BallisticityScan& scan) {
  out.precision(17);
  out << "k,norm,ratio,ratio_stderr,n_envs,n_positive\n";
  for (const auto& r : scan.rows)
    out << r.k << ',' << r.norm << ',' << r.ratio << ',' << r.ratio_stderr << ',' << r.n_envs << ','
        << r.n_positive << '\n';
}

template <int D>
struct CubeComponent {
  std::vector<Site<D>> cubes;
  /// Touches the edge of the sampled region, so the true size may be larger.
  bool censored = false;
};

template <int D>
struct CubeDecomposition {
  std::int64_t L = 0;
  double kappa = 0.0;
  Site<D> q_lo{};  // cube index range
  Site<D> q_hi{};
  std::vector<Site<D>> occupied;
  std::vector<CubeComponent<D>> components;
  std::size_t n_cubes = 0;
};

/// Cubes B(q) = L q + [-L/2, L/2)^d. A cube is occupied iff some site other
/// than `target` has V >= kappa; empty cubes are grouped into components by
/// face adjacency.
template <int D>
CubeDecomposition<D> cube_decompose(const BoxEnvironment<D>& env, std::int64_t L, double kappa,
                                    const std::optional<Site<D>>& target = std::nullopt) {
  if (L < 2 || L % 2 != 0) throw std::invalid_argument("cube_decompose: L must be even and >= 2");
  CubeDecomposition<D> out;
  out.L = L;
  out.kappa = kappa;
  const std::int64_t half = L / 2;
  Box<D> qbox;
  for (int k = 0; k < D; ++k) {
    if ((env.box.lo[k] + half) % L != 0 || env.box.extent(k) % L != 0)
      throw std::invalid_argument("cube_decompose: environment must cover whole cubes");
    qbox.lo[k] = (env.box.lo[k] + half) / L;
    qbox.hi[k] = qbox.lo[k] + env.box.extent(k) / L - 1;
  }
  out.q_lo = qbox.lo;
  out.q_hi = qbox.hi;
  out.n_cubes = qbox.volume();
  std::vector<char> occupied(out.n_cubes, 0);
  for (std::size_t i = 0; i < env.values.size(); ++i) {
    const auto x = env.box.site(i);
    if (target && x == *target) continue;
    if (env.values[i] >= kappa) {
      Site<D> q{};
      for (int k = 0; k < D; ++k) {
        const std::int64_t shifted = x[k] + half;
        q[k] = (shifted >= 0 ? shifted : shifted - L + 1) / L;
      }
      occupied[qbox.index(q)] = 1;
    }
  }
  std::vector<char> seen(out.n_cubes, 0);
  for (std::size_t c = 0; c < out.n_cubes; ++c) {
    if (occupied[c]) {
      out.occupied.push_back(qbox.site(c));
      continue;
    }
    if (seen[c]) continue;
    CubeComponent<D> comp;
    std::queue<std::size_t> frontier;
    frontier.push(c);
    seen[c] = 1;
    while (!frontier.empty()) {
      const auto cur = frontier.front();
      frontier.pop();
      const auto q = qbox.site(cur);
      comp.cubes.push_back(q);
      for (int k = 0; k < D; ++k)
        if (q[k] == qbox.lo[k] || q[k] == qbox.hi[k]) comp.censored = true;
      for (const auto& nb : detail::neighbours<D>(q)) {
        if (!qbox.contains(nb)) continue;
        const auto j = qbox.index(nb);
        if (!occupied[j] && !seen[j]) {
          seen[j] = 1;
          frontier.push(j);
        }
      }
    }
    out.components.push_back(std::move(comp));
  }
  return out;
}

struct SizeHistogram {
  std::map<std::size_t, std::uint64_t> all;
  std::map<std::size_t, std::uint64_t> uncensored;
};

template <int D>
void accumulate_histogram(SizeHistogram& hist, const CubeDecomposition<D>& dec) {
  for (const auto& c : dec.components) {
    ++hist.all[c.cubes.size()];
    if (!c.censored) ++hist.uncensored[c.cubes.size()];
  }
}

/// Component-size histogram over n_envs environments of `cubes_per_side`^d cubes.
template <int D>
SizeHistogram cube_statistics(const PotentialDistribution& dist, std::int64_t L, double kappa,
                              std::int64_t cubes_per_side, std::uint64_t n_envs, std::uint64_t master_seed,
                              unsigned workers = 1) {
  Box<D> box;
  for (int k = 0; k < D; ++k) {
    box.lo[k] = -(cubes_per_side / 2) * L - L / 2;
    box.hi[k] = box.lo[k] + cubes_per_side * L - 1;
  }
  std::vector<SizeHistogram> parts(n_envs);
  parallel_for(n_envs, workers, [&](std::size_t i) {
    const auto env = sample_box_environment<D>(dist, box, master_seed, i);
    accumulate_histogram<D>(parts[i], cube_decompose<D>(env, L, kappa));
  });
  SizeHistogram total;
  for (const auto& p : parts) {
    for (const auto& [k, v] : p.all) total.all[k] += v;
    for (const auto& [k, v] : p.uncensored) total.uncensored[k] += v;
  }
  return total;
}

/// Log-frequency strictly decreasing over sizes with at least `min_count`
/// observations (sizes below the cut are ignored).
inline bool histogram_decreasing(const std::map<std::size_t, std::uint64_t>& h, std::uint64_t min_count = 1) {
  std::optional<std::uint64_t> prev;
  for (const auto& [size, count] : h) {
    if (count < min_count) continue;
    if (prev && count >= *prev) return false;
    prev = count;
  }
  return true;
}

inline void write_histogram_csv(std::ostream& out, const SizeHistogram& h) {
  out << "size,count,uncensored\n";
  for (const auto& [size, count] : h.all) {
    const auto it = h.uncensored.find(size);
    out << size << ',' << count << ',' << (it == h.uncensored.end() ? 0 : it->second) << '\n';
  }
}

}  // namespace crossing
