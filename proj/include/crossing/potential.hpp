#pragma once
// I.i.d. atomic potential laws and realized environments on Z.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "crossing/rng.hpp"

namespace crossing {

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

/// Survival factor e^{-v}; e^{-inf} is exactly 0.
inline double survival_factor(double v) noexcept { return std::exp(-v); }

class InvalidDistribution : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Atom {
  double value;
  double prob;
};

/// Law of V(0) + lambda for a finitely supported V(0) in [0, inf].
///
/// Atoms are stored sorted by (shifted) value with zero-probability atoms
/// dropped and duplicate values merged, so the atom list is also the
/// inverse-CDF table used for sampling.
class PotentialDistribution {
 public:
  const std::vector<Atom>& atoms() const noexcept { return atoms_; }
  double lambda_shift() const noexcept { return lambda_; }

  /// P(V=0) < 1 and P(V=inf) < 1.
  bool satisfies_V() const noexcept { return prob_of(0.0) < 1.0 && prob_infinite() < 1.0; }
  /// P(V in (0, inf)) > 0.
  bool satisfies_d1() const noexcept {
    return std::any_of(atoms_.begin(), atoms_.end(), [](const Atom& a) {
      return a.value > 0.0 && std::isfinite(a.value);
    });
  }
  /// Informational: essential infimum of the unshifted law is 0.
  bool essinf_zero() const noexcept { return base_essinf_zero_; }

  double prob_of(double value) const noexcept {
    for (const auto& a : atoms_)
      if (a.value == value) return a.prob;
    return 0.0;
  }
  double prob_infinite() const noexcept { return prob_of(kInfinity); }
  double prob_finite() const noexcept { return 1.0 - prob_infinite(); }

  /// Smallest finite positive atom (0 when there is none).
  double kappa() const noexcept {
    for (const auto& a : atoms_)
      if (a.value > 0.0 && std::isfinite(a.value)) return a.value;
    return 0.0;
  }
  /// Largest finite atom.
  double largest_finite() const noexcept {
    double best = 0.0;
    for (const auto& a : atoms_)
      if (std::isfinite(a.value)) best = std::max(best, a.value);
    return best;
  }
  const Atom& largest_atom() const noexcept { return atoms_.back(); }
  double min_value() const noexcept { return atoms_.front().value; }

  /// Inverse CDF at u in [0,1).
  double value_for(double u) const noexcept {
    for (std::size_t i = 0; i + 1 < cumulative_.size(); ++i)
      if (u < cumulative_[i]) return atoms_[i].value;
    return atoms_.back().value;
  }

  /// Same law with every finite value raised by `extra` (inf stays inf).
  /// Probabilities and the sampling table are unchanged, so draws with the
  /// same uniforms are common random numbers across shifts.
  PotentialDistribution shifted(double extra) const {
    if (!(extra >= 0.0)) throw InvalidDistribution("lambda shift must be nonnegative");
    PotentialDistribution out = *this;
    out.lambda_ += extra;
    for (auto& a : out.atoms_) a.value += extra;
    return out;
  }

  /// Unshifted atoms, e.g. for serialization.
  std::vector<Atom> base_atoms() const {
    std::vector<Atom> out = atoms_;
    for (auto& a : out) a.value -= lambda_;
    return out;
  }

  std::size_t size() const noexcept { return atoms_.size(); }

 private:
  friend PotentialDistribution make_distribution(std::vector<Atom> atoms, double lambda_shift);

  std::vector<Atom> atoms_;
  std::vector<double> cumulative_;
  double lambda_ = 0.0;
  bool base_essinf_zero_ = false;
};

inline PotentialDistribution make_distribution(std::vector<Atom> atoms, double lambda_shift) {
  if (atoms.empty()) throw InvalidDistribution("empty atom list");
  if (!(lambda_shift >= 0.0) || !std::isfinite(lambda_shift))
    throw InvalidDistribution("lambda shift must be a finite nonnegative number");
  double total = 0.0;
  for (const auto& a : atoms) {
    if (!(a.prob >= 0.0) || !std::isfinite(a.prob))
      throw InvalidDistribution("atom probability must be finite and nonnegative");
    if (!(a.value >= 0.0)) throw InvalidDistribution("atom value must be nonnegative");
    total += a.prob;
  }
  if (!(total > 0.0)) throw InvalidDistribution("atom probabilities sum to zero");

  std::sort(atoms.begin(), atoms.end(), [](const Atom& a, const Atom& b) { return a.value < b.value; });
  std::vector<Atom> merged;
  for (const auto& a : atoms) {
    if (a.prob == 0.0) continue;
    if (!merged.empty() && merged.back().value == a.value)
      merged.back().prob += a.prob;
    else
      merged.push_back(a);
  }
  for (auto& a : merged) a.prob /= total;

  PotentialDistribution d;
  d.base_essinf_zero_ = merged.front().value == 0.0;
  d.lambda_ = lambda_shift;
  for (auto& a : merged) a.value += lambda_shift;
  d.atoms_ = std::move(merged);
  d.cumulative_.resize(d.atoms_.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < d.atoms_.size(); ++i) {
    acc += d.atoms_[i].prob;
    d.cumulative_[i] = acc;
  }
  d.cumulative_.back() = 1.0;
  return d;
}

/// Lambda_V(t) = -log E exp(-t V(0)). Atoms at +inf carry weight 0 for t > 0.
inline double log_mgf(const PotentialDistribution& dist, double t) {
  if (!(t >= 0.0)) throw std::domain_error("log_mgf requires t >= 0");
  if (t == 0.0) return 0.0;
  double shift = kInfinity;
  for (const auto& a : dist.atoms()) shift = std::min(shift, t * a.value);
  if (!std::isfinite(shift)) return kInfinity;  // V = inf almost surely
  double acc = 0.0;
  for (const auto& a : dist.atoms())
    if (std::isfinite(a.value)) acc += a.prob * std::exp(-(t * a.value - shift));
  return shift - std::log(acc);
}

/// Value of V at `site` in environment `env_index`. Pure function of its
/// arguments; every 1-d environment in the library is built from it.
inline double site_value(const PotentialDistribution& dist, std::uint64_t master_seed,
                         std::uint64_t env_index, std::int64_t site) noexcept {
  return dist.value_for(keyed_uniform(master_seed, Stream::environment_1d, env_index,
                                      static_cast<std::uint64_t>(site)));
}

/// Realized potential on the integer window [lo, hi].
struct Environment {
  std::int64_t lo = 0;
  std::vector<double> values;
  std::uint64_t seed_id = 0;

  std::int64_t hi() const noexcept { return lo + static_cast<std::int64_t>(values.size()) - 1; }
  bool covers(std::int64_t a, std::int64_t b) const noexcept { return a >= lo && b <= hi(); }
  double at(std::int64_t x) const { return values.at(static_cast<std::size_t>(x - lo)); }
};

inline Environment sample_environment(const PotentialDistribution& dist, std::int64_t lo,
                                      std::int64_t hi, std::uint64_t master_seed,
                                      std::uint64_t env_index) {
  if (lo > hi) throw std::invalid_argument("sample_environment: lo > hi");
  Environment env;
  env.lo = lo;
  env.seed_id = env_index;
  env.values.resize(static_cast<std::size_t>(hi - lo + 1));
  for (std::int64_t x = lo; x <= hi; ++x)
    env.values[static_cast<std::size_t>(x - lo)] = site_value(dist, master_seed, env_index, x);
  return env;
}

/// Environment from explicit values starting at `lo`.
inline Environment make_environment(std::int64_t lo, std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("make_environment: no sites");
  for (double v : values)
    if (!(v >= 0.0)) throw std::invalid_argument("make_environment: negative potential");
  return Environment{lo, std::move(values), 0};
}

}  // namespace crossing
