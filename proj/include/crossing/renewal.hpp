#pragma once
// Renewal structure of annealed block weights.
//
// Splitting an admissible block path at its first interior renewal point s
// (a site of [1, r] visited exactly once before tau_r) factors the annealed
// weight, because the two pieces see disjoint sites:
//
//     Z_{0,r} = sum_{s=1}^{r} Zbar(s) Z_{0,r-s},                  Z_{0,0} = 1,
//     A(r)    = sum_{s=1}^{r} [Nbar(s) Z_{0,r-s} + Zbar(s) A(r-s)], A(0) = 0.
//
// Inverting these triangular systems gives the renewal-free block weights
// Zbar and their time-weighted counterparts Nbar, from which the kernel
// q(r) = e^{beta r} Zbar(r) and the crossing speed follow.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "crossing/annealed1d.hpp"
#include "crossing/stats.hpp"

namespace crossing {

class DeconvolutionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Deconvolution {
  std::int64_t R = 0;
  std::vector<double> zbar;  // index 1..R, zbar[0] = 0
  std::vector<double> nbar;
  std::vector<double> zbar_err;
  std::vector<double> nbar_err;
  /// Block lengths where a negative value inside the noise floor was set to 0.
  std::vector<std::int64_t> clamped;
};

namespace detail {
inline double clamp_or_throw(double value, double err, std::int64_t r, const char* what,
                             std::vector<std::int64_t>& clamped) {
  if (value >= 0.0) return value;
  if (std::abs(value) < 10.0 * err) {
    if (clamped.empty() || clamped.back() != r) clamped.push_back(r);
    return 0.0;
  }
  throw DeconvolutionError(std::string("deconvolution produced a significantly negative ") + what +
                           " at r = " + std::to_string(r));
}
}  // namespace detail

inline Deconvolution deconvolve_blocks(const BlockTable& table) {
  if (table.R < 1) throw std::invalid_argument("deconvolve_blocks: empty table");
  const auto R = table.R;
  const auto n = static_cast<std::size_t>(R + 1);
  constexpr double eps = std::numeric_limits<double>::epsilon();
  Deconvolution d;
  d.R = R;
  d.zbar.assign(n, 0.0);
  d.nbar.assign(n, 0.0);
  d.zbar_err.assign(n, 0.0);
  d.nbar_err.assign(n, 0.0);
  const auto& Z = table.z0;
  const auto& A = table.a;
  for (std::int64_t r = 1; r <= R; ++r) {
    const auto ir = static_cast<std::size_t>(r);
    CompensatedSum zsum, nsum;
    double zabs = Z[ir], nabs = A[ir];
    double zerr = table.z0_error(r), nerr = table.a_error(r);
    zsum.add(Z[ir]);
    nsum.add(A[ir]);
    for (std::int64_t s = 1; s < r; ++s) {
      const auto is = static_cast<std::size_t>(s);
      const auto rest = static_cast<std::size_t>(r - s);
      const double zterm = d.zbar[is] * Z[rest];
      zsum.add(-zterm);
      zabs += std::abs(zterm);
      zerr += d.zbar_err[is] * Z[rest] + std::abs(d.zbar[is]) * table.z0_error(r - s);

      const double nterm = d.nbar[is] * Z[rest] + d.zbar[is] * A[rest];
      nsum.add(-nterm);
      nabs += std::abs(nterm);
      nerr += d.nbar_err[is] * Z[rest] + std::abs(d.nbar[is]) * table.z0_error(r - s) +
              d.zbar_err[is] * A[rest] + std::abs(d.zbar[is]) * table.a_error(r - s);
    }
    zerr += 4.0 * eps * zabs;
    nerr += 4.0 * eps * nabs;
    d.zbar_err[ir] = zerr;
    d.nbar_err[ir] = nerr;
    d.zbar[ir] = detail::clamp_or_throw(zsum.value(), zerr, r, "Zbar", d.clamped);
    d.nbar[ir] = detail::clamp_or_throw(nsum.value(), nerr, r, "Nbar", d.clamped);
  }
  return d;
}

/// Forward renewal convolution; inverse of deconvolve_blocks.
inline std::pair<std::vector<double>, std::vector<double>> convolve_blocks(
    const std::vector<double>& zbar, const std::vector<double>& nbar) {
  if (zbar.size() != nbar.size() || zbar.empty())
    throw std::invalid_argument("convolve_blocks: size mismatch");
  const auto n = zbar.size();
  std::vector<double> Z(n, 0.0), A(n, 0.0);
  Z[0] = 1.0;
  for (std::size_t r = 1; r < n; ++r) {
    CompensatedSum zs, as;
    for (std::size_t s = 1; s <= r; ++s) {
      zs.add(zbar[s] * Z[r - s]);
      as.add(nbar[s] * Z[r - s] + zbar[s] * A[r - s]);
    }
    Z[r] = zs.value();
    A[r] = as.value();
  }
  return {Z, A};
}

class BetaRootError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// F(beta) = sum_{r<=R} e^{beta r} zbar(r).
inline double kernel_mass(const std::vector<double>& zbar, std::int64_t R, double beta) {
  CompensatedSum s;
  for (std::int64_t r = 1; r <= R; ++r) s.add(std::exp(beta * static_cast<double>(r)) * zbar[static_cast<std::size_t>(r)]);
  return s.value();
}

struct BetaRoot {
  double beta = 0.0;
  double residual = 0.0;  // F(beta) - 1
  int iterations = 0;
  /// F(0) >= 1, so the nonnegative root is pinned at 0.
  bool at_lower_bound = false;
};

namespace detail {
// Root of the increasing function f on [lo, hi] with f(lo) <= 0 <= f(hi);
// Newton steps with bisection safeguard.
template <class F, class DF>
BetaRoot increasing_root(F&& f, DF&& df, double lo, double hi) {
  BetaRoot out;
  double x = 0.5 * (lo + hi);
  for (int it = 0; it < 400; ++it) {
    out.iterations = it + 1;
    const double fx = f(x);
    if (fx == 0.0) break;
    if (fx < 0.0) lo = x; else hi = x;
    if (std::abs(fx) < 1e-15 || hi - lo <= 4.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(x)))
      break;
    const double d = df(x);
    double nx = d > 0.0 ? x - fx / d : 0.5 * (lo + hi);
    if (!(nx > lo && nx < hi)) nx = 0.5 * (lo + hi);
    x = nx;
  }
  out.beta = x;
  out.residual = f(x);
  return out;
}
}  // namespace detail

/// Unique beta >= 0 with F(beta) = 1 for the truncated kernel.
inline BetaRoot solve_beta(const std::vector<double>& zbar, std::int64_t R) {
  if (R < 1 || static_cast<std::int64_t>(zbar.size()) <= R)
    throw std::invalid_argument("solve_beta: zbar shorter than R");
  if (!(zbar[1] > 0.0)) throw BetaRootError("solve_beta: zbar(1) must be positive");
  auto f = [&](double b) { return kernel_mass(zbar, R, b) - 1.0; };
  auto df = [&](double b) {
    CompensatedSum s;
    for (std::int64_t r = 1; r <= R; ++r)
      s.add(static_cast<double>(r) * std::exp(b * static_cast<double>(r)) * zbar[static_cast<std::size_t>(r)]);
    return s.value();
  };
  if (f(0.0) >= 0.0) {
    BetaRoot pinned;
    pinned.beta = 0.0;
    pinned.residual = f(0.0);
    pinned.at_lower_bound = true;
    return pinned;
  }
  // e^{beta} zbar(1) alone reaches 1 at beta = -log zbar(1).
  double hi = std::max(1e-12, -std::log(zbar[1]));
  if (!(f(hi) >= 0.0)) {
    hi *= 1.0 + 1e-12;
    if (!(f(hi) >= 0.0)) throw BetaRootError("solve_beta: F stays below 1 at the bracket cap; R too small");
  }
  BetaRoot root = detail::increasing_root(f, df, 0.0, hi);
  if (!(std::abs(root.residual) < 1e-12))
    throw BetaRootError("solve_beta: failed to reach |F(beta) - 1| < 1e-12");
  return root;
}

/// Root of F(beta) + (geometric tail with decay rate `zbar_decay`) = 1:
/// zbar(R + j) is extrapolated as zbar(R) e^{-zbar_decay j}. Requires
/// zbar_decay > beta over the bracket; returns nullopt otherwise.
inline std::optional<double> extrapolated_beta(const std::vector<double>& zbar, std::int64_t R,
                                               double zbar_decay, double beta_truncated) {
  if (!(zbar_decay > beta_truncated) || !(zbar[static_cast<std::size_t>(R)] > 0.0)) return std::nullopt;
  const double tail_scale = zbar[static_cast<std::size_t>(R)];
  auto tail = [&](double b) {
    const double ratio = std::exp(b - zbar_decay);
    return std::exp(b * static_cast<double>(R)) * tail_scale * ratio / (1.0 - ratio);
  };
  auto f = [&](double b) { return kernel_mass(zbar, R, b) + tail(b) - 1.0; };
  if (f(0.0) >= 0.0) return 0.0;
  auto df = [&](double b) { return (f(b + 1e-7) - f(b - 1e-7)) / 2e-7; };
  return detail::increasing_root(f, df, 0.0, beta_truncated).beta;
}

struct RenewalKernel {
  std::int64_t R = 0;
  double beta = 0.0;
  std::vector<double> zbar;
  std::vector<double> nbar;
  std::vector<double> q;                  // index 1..R
  std::vector<std::optional<double>> g;   // absent where zbar = 0
  double mass_defect = 0.0;
  double sum_rq = 0.0;
  double sum_gq = 0.0;
  double v = 0.0;
  /// Tail decay of q fitted over the upper half of the range (positive = decaying).
  double epsilon_hat = 0.0;
  /// Extrapolated share of the infinite sums that lies beyond R.
  double gq_tail_fraction = 0.0;
  double rq_tail_fraction = 0.0;
  /// 1/v with both sums completed by the fitted tails (NaN if no fit).
  double inv_v_extrapolated = std::numeric_limits<double>::quiet_NaN();
  bool v_reliable = false;
  /// beta solved with the fitted geometric tail appended (if defined).
  std::optional<double> beta_extrapolated;
};

struct TailCheck {
  double epsilon_hat = 0.0;
  double slope = 0.0;
  double residual_rms = 0.0;
  std::int64_t fit_from = 0;
  std::int64_t fit_to = 0;
  bool pass = false;
};

class TailFitError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Least-squares fit of log series(r) against r over [from, to], skipping zeros.
inline LineFit fit_log_tail(const std::vector<double>& series, std::int64_t from, std::int64_t to) {
  std::vector<double> xs, ys;
  for (std::int64_t r = from; r <= to; ++r) {
    const double v = series[static_cast<std::size_t>(r)];
    if (v > 0.0) {
      xs.push_back(static_cast<double>(r));
      ys.push_back(std::log(v));
    }
  }
  if (xs.size() < 2) throw TailFitError("tail fit: fewer than two positive entries in range");
  return fit_line(xs, ys);
}

/// Exponential tail check on q over the upper half of [1, R]: pass iff the
/// fitted log-slope is below -0.01 with bounded residuals.
inline TailCheck kernel_tail_check(const RenewalKernel& kernel) {
  if (kernel.R < 8) throw std::invalid_argument("kernel_tail_check: need R >= 8");
  TailCheck out;
  out.fit_from = (kernel.R + 1) / 2;
  out.fit_to = kernel.R;
  const LineFit fit = fit_log_tail(kernel.q, out.fit_from, out.fit_to);
  out.slope = fit.slope;
  out.epsilon_hat = -fit.slope;
  out.residual_rms = fit.residual_rms;
  out.pass = fit.slope < -0.01 && fit.residual_rms < 0.5;
  return out;
}

/// Fitted exponent p in g(r) ~ r^p over r in [4, R].
inline double g_growth_exponent(const RenewalKernel& kernel) {
  std::vector<double> xs, ys;
  for (std::int64_t r = 4; r <= kernel.R; ++r) {
    const auto& g = kernel.g[static_cast<std::size_t>(r)];
    if (g && *g > 0.0) {
      xs.push_back(std::log(static_cast<double>(r)));
      ys.push_back(std::log(*g));
    }
  }
  if (xs.size() < 2) throw TailFitError("g growth: fewer than two defined entries in [4, R]");
  return fit_line(xs, ys).slope;
}

inline RenewalKernel build_kernel(const Deconvolution& dec, double beta, std::int64_t R) {
  if (R < 1 || R > dec.R) throw std::invalid_argument("build_kernel: R out of range");
  RenewalKernel k;
  k.R = R;
  k.beta = beta;
  const auto n = static_cast<std::size_t>(R + 1);
  k.zbar.assign(dec.zbar.begin(), dec.zbar.begin() + static_cast<std::ptrdiff_t>(n));
  k.nbar.assign(dec.nbar.begin(), dec.nbar.begin() + static_cast<std::ptrdiff_t>(n));
  k.q.assign(n, 0.0);
  k.g.assign(n, std::nullopt);
  CompensatedSum mass, rq, gq;
  for (std::int64_t r = 1; r <= R; ++r) {
    const auto i = static_cast<std::size_t>(r);
    k.q[i] = std::exp(beta * static_cast<double>(r)) * k.zbar[i];
    mass.add(k.q[i]);
    rq.add(static_cast<double>(r) * k.q[i]);
    if (k.zbar[i] > 0.0) {
      k.g[i] = k.nbar[i] / k.zbar[i];
      gq.add(*k.g[i] * k.q[i]);
    }
  }
  k.mass_defect = 1.0 - mass.value();
  k.sum_rq = rq.value();
  k.sum_gq = gq.value();
  k.v = k.sum_gq > 0.0 ? k.sum_rq / k.sum_gq : 0.0;

  // Truncation diagnostics from a geometric tail q(R+j) ~ q(R) e^{-eps j}
  // and a power-law g(R+j) ~ g(R) ((R+j)/R)^p.
  k.v_reliable = false;
  k.gq_tail_fraction = 1.0;
  k.rq_tail_fraction = 1.0;
  if (R >= 8) {
    try {
      const TailCheck tail = kernel_tail_check(k);
      k.epsilon_hat = tail.epsilon_hat;
      const double p = g_growth_exponent(k);
      const auto iR = static_cast<std::size_t>(R);
      const double decay_zbar = tail.epsilon_hat + beta;
      k.beta_extrapolated = extrapolated_beta(k.zbar, R, decay_zbar, beta);
      if (tail.epsilon_hat > 0.0 && k.g[iR] && k.q[iR] > 0.0) {
        double gq_tail = 0.0, rq_tail = 0.0;
        for (std::int64_t j = 1; j < 200000; ++j) {
          const double qj = k.q[iR] * std::exp(-tail.epsilon_hat * static_cast<double>(j));
          const double rr = static_cast<double>(R + j);
          const double gj = *k.g[iR] * std::pow(rr / static_cast<double>(R), std::max(p, 1.0));
          gq_tail += gj * qj;
          rq_tail += rr * qj;
          if (gj * qj < 1e-17 * std::max(k.sum_gq, 1e-300)) break;
        }
        k.gq_tail_fraction = gq_tail / (gq_tail + k.sum_gq);
        k.rq_tail_fraction = rq_tail / (rq_tail + k.sum_rq);
        k.inv_v_extrapolated = (k.sum_gq + gq_tail) / (k.sum_rq + rq_tail);
        k.v_reliable = tail.pass && k.gq_tail_fraction < 0.05 && k.rq_tail_fraction < 0.05;
      }
    } catch (const TailFitError&) {
      k.v_reliable = false;
    }
  }
  return k;
}

inline void write_kernel_csv(std::ostream& out, const RenewalKernel& k) {
  out.precision(17);
  out << "r,zbar,nbar,q,g\n";
  for (std::int64_t r = 1; r <= k.R; ++r) {
    const auto i = static_cast<std::size_t>(r);
    out << r << ',' << k.zbar[i] << ',' << k.nbar[i] << ',' << k.q[i] << ',';
    if (k.g[i]) out << *k.g[i];
    out << '\n';
  }
}

}  // namespace crossing
