#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <vector>

#include "crossing/potential.hpp"
#include "crossing/quenched1d.hpp"

using namespace crossing;
using Catch::Approx;

namespace {

// Brute-force oracle: propagate the killed walk's sub-probability mass step
// by step. Returns (sum of weights arriving at target, sum of n * weight).
// For a block, the first step is forced right and 0 absorbs afterwards.
struct SeriesOracle {
  double z = 0.0;
  double t = 0.0;
};

SeriesOracle length_series(std::int64_t lo, const std::vector<double>& v, std::int64_t target,
                           bool block, int max_steps = 200000) {
  const auto n = static_cast<std::size_t>(target - lo + 1);
  std::vector<double> mass(n, 0.0), next(n);
  SeriesOracle out;
  mass[static_cast<std::size_t>(-lo)] = 1.0;
  for (int step = 1; step <= max_steps; ++step) {
    std::fill(next.begin(), next.end(), 0.0);
    for (std::size_t i = 0; i + 1 < n; ++i) {
      if (mass[i] == 0.0) continue;
      const std::int64_t x = lo + static_cast<std::int64_t>(i);
      const double w = mass[i] * std::exp(-v[i]) / 2.0;
      next[i + 1] += w;
      // Left moves into the absorbing site (lo, or 0 inside a block) die.
      const bool killed = block ? x - 1 <= 0 : i == 1;
      if (i > 0 && !killed) next[i - 1] += w;
    }
    out.z += next[n - 1];
    out.t += static_cast<double>(step) * next[n - 1];
    next[n - 1] = 0.0;
    double alive = 0.0;
    for (double m : next) alive += m;
    mass.swap(next);
    if (alive < 1e-22) break;
  }
  return out;
}

double constant_block_z(double lambda, std::int64_t r) {
  const double c = std::exp(lambda);
  const double s = std::sqrt(c * c - 1.0);
  const double rp = c + s, rm = c - s;
  return std::exp(-lambda) * (rp - rm) / (2.0 * (std::pow(rp, r) - std::pow(rm, r)));
}

void check_residuals(const QuenchedSolve& s, const std::vector<double>& v_by_index) {
  // Interior sites: strictly between lo and target, excluding 0 for blocks.
  for (std::int64_t x = s.lo + 1; x < s.target; ++x) {
    const auto i = s.index(x);
    const double w = std::exp(-v_by_index[i]);
    const double h_rhs = w * (s.h[i - 1] + s.h[i + 1]) / 2.0;
    const double t_rhs = w * ((s.t[i - 1] + s.t[i + 1]) / 2.0 + (s.h[i - 1] + s.h[i + 1]) / 2.0);
    CHECK(std::abs(s.h[i] - h_rhs) <= 1e-10 * std::max(s.h[i], 1e-300));
    CHECK(std::abs(s.t[i] - t_rhs) <= 1e-10 * std::max(s.t[i], 1e-300));
    CHECK(s.h[i] >= 0.0);
    CHECK(s.h[i] <= 1.0);
  }
}

}  // namespace

TEST_CASE("block solve on the free walk", "[quenched][block]") {
  auto env = make_environment(0, {0.0, 0.0});
  const auto s = solve_block(env, 2);
  CHECK(s.z == Approx(0.25).epsilon(1e-14));
  REQUIRE(s.conditioned_mean);
  CHECK(*s.conditioned_mean == Approx(2.0).epsilon(1e-14));
  CHECK(s.t0 / s.z == Approx(2.0).epsilon(1e-14));
  for (std::int64_t r = 1; r <= 40; ++r) {
    auto e = make_environment(0, std::vector<double>(static_cast<std::size_t>(r), 0.0));
    CHECK(solve_block(e, r).z == Approx(1.0 / (2.0 * static_cast<double>(r))).epsilon(1e-13));
  }
}

TEST_CASE("block with an infinite interior site has no weight", "[quenched][block]") {
  auto env = make_environment(0, {0.0, kInfinity});
  const auto s = solve_block(env, 2);
  CHECK(s.z == 0.0);
  CHECK_FALSE(s.conditioned_mean.has_value());
  CHECK_THROWS_AS(sample_conditioned_path(s, 0, 1), std::domain_error);
}

TEST_CASE("degenerate r = 1 block", "[quenched][block]") {
  for (double v0 : {0.0, 0.3, 2.0}) {
    const auto s = solve_block(make_environment(0, {v0}), 1);
    CHECK(s.z == Approx(std::exp(-v0) / 2.0).epsilon(1e-15));
    CHECK(s.t0 == Approx(std::exp(-v0) / 2.0).epsilon(1e-15));
  }
}

TEST_CASE("constant potential block matches the recurrence closed form", "[quenched][block]") {
  for (double lam : {0.01, 0.25, 0.5, 1.0, 3.0}) {
    for (std::int64_t r : {1, 2, 3, 7, 20, 60}) {
      auto env = make_environment(0, std::vector<double>(static_cast<std::size_t>(r), lam));
      const auto s = solve_block(env, r);
      CHECK(s.z == Approx(constant_block_z(lam, r)).epsilon(1e-11));
    }
  }
}

TEST_CASE("block conditioned mean equals the lambda-derivative of -log z", "[quenched][block]") {
  // Uniform shift V -> V + d multiplies each path by e^{-d tau}, so
  // E[tau] = -d log z / d lambda; oracle is a central difference.
  for (double lam : {0.1, 0.5, 1.5}) {
    for (std::int64_t r : {3, 10, 25}) {
      auto env = make_environment(0, std::vector<double>(static_cast<std::size_t>(r), lam));
      const double h = 1e-5;
      const double deriv =
          -(std::log(constant_block_z(lam + h, r)) - std::log(constant_block_z(lam - h, r))) / (2 * h);
      const auto s = solve_block(env, r);
      CHECK(*s.conditioned_mean == Approx(deriv).epsilon(1e-7));
    }
  }
}

TEST_CASE("block and window agree with the path-length series", "[quenched][oracle]") {
  std::mt19937_64 gen(5);
  std::uniform_real_distribution<double> u(0.0, 1.5);
  for (int trial = 0; trial < 20; ++trial) {
    const std::int64_t r = 1 + trial % 6;
    std::vector<double> v(static_cast<std::size_t>(r));
    for (auto& x : v) x = 0.2 + u(gen);
    const auto s = solve_block(make_environment(0, v), r);
    std::vector<double> vv = v;
    vv.push_back(0.0);
    const auto oracle = length_series(0, vv, r, true);
    CHECK(s.z == Approx(oracle.z).epsilon(1e-10));
    CHECK(s.t0 == Approx(oracle.t).epsilon(1e-10));

    const std::int64_t W = 1 + trial % 4;
    const std::int64_t y = 1 + trial % 3;
    std::vector<double> w(static_cast<std::size_t>(y + W + 1), 0.0);
    for (std::int64_t x = -W; x < y; ++x) w[static_cast<std::size_t>(x + W)] = 0.2 + u(gen);
    std::vector<double> wv(w.begin(), w.end() - 1);
    const auto ws = solve_window(make_environment(-W, wv), y);
    const auto wo = length_series(-W, w, y, false);
    CHECK(ws.z == Approx(wo.z).epsilon(1e-10));
    CHECK(ws.t0 == Approx(wo.t).epsilon(1e-10));
  }
}

TEST_CASE("solves satisfy both recursions at every interior site", "[quenched][property]") {
  std::mt19937_64 gen(17);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 40; ++trial) {
    const std::int64_t r = 2 + trial * 7 % 80;
    std::vector<double> v(static_cast<std::size_t>(r));
    for (auto& x : v) x = u(gen) < 0.5 ? 0.0 : (trial % 3 == 0 ? 600.0 * u(gen) : 2.0 * u(gen));
    const auto s = solve_block(make_environment(0, v), r);
    std::vector<double> padded = v;
    padded.push_back(0.0);
    check_residuals(s, padded);
    const std::int64_t W = 8 + trial;
    std::vector<double> wv(static_cast<std::size_t>(W + r));
    for (auto& x : wv) x = u(gen) < 0.4 ? 0.0 : 1.5 * u(gen);
    const auto ws = solve_window(make_environment(-W, wv), r);
    std::vector<double> wp = wv;
    wp.push_back(0.0);
    check_residuals(ws, wp);
  }
}

TEST_CASE("large potentials stay finite in log space", "[quenched]") {
  std::vector<double> v(50, 700.0);
  const auto s = solve_block(make_environment(0, v), 50);
  CHECK(s.z == 0.0);  // underflows
  CHECK(std::isfinite(s.log_z));
  CHECK(s.log_z < -700.0 * 50);
  REQUIRE(s.conditioned_mean);
  CHECK(*s.conditioned_mean == Approx(50.0).epsilon(1e-12));
}

TEST_CASE("window solve on the free walk", "[quenched][window]") {
  for (std::int64_t W : {1, 2, 5, 16, 100}) {
    auto env = make_environment(-W, std::vector<double>(static_cast<std::size_t>(W + 1), 0.0));
    const auto s = solve_window(env, 1);
    CHECK(s.z == Approx(static_cast<double>(W) / static_cast<double>(W + 1)).epsilon(1e-13));
  }
}

TEST_CASE("window with an infinite left half is exact at any width", "[quenched][window]") {
  const std::vector<double> right{0.3, 1.0, 0.0, 0.7};
  double first = -1.0;
  for (std::int64_t W : {1, 3, 10}) {
    std::vector<double> v(static_cast<std::size_t>(W), kInfinity);
    v.insert(v.end(), right.begin(), right.end());
    const auto s = solve_window(make_environment(-W, v), 4);
    if (first < 0) first = s.z;
    CHECK(s.z == first);
  }
}

TEST_CASE("window z is nondecreasing in W", "[quenched][window][property]") {
  auto dist = make_distribution({{0.0, 0.5}, {1.0, 0.5}}, 0.0);
  for (std::uint64_t idx = 0; idx < 10; ++idx) {
    double prev = 0.0;
    for (std::int64_t W : {1, 2, 4, 8, 16, 32, 64}) {
      auto env = sample_environment(dist, -W, 9, 123, idx);
      const auto s = solve_window(env, 10);
      CHECK(s.z >= prev * (1 - 1e-14));
      prev = s.z;
    }
  }
}

TEST_CASE("adaptive window reaches its tolerance", "[quenched][window]") {
  auto dist = make_distribution({{0.0, 0.5}, {1.0, 0.5}}, 0.0);
  for (std::uint64_t idx = 0; idx < 20; ++idx) {
    const auto s = solve_window_adaptive(dist, 30, 7, idx);
    CHECK(s.window_converged);
    CHECK(s.achieved_tol < 1e-10);
    CHECK(s.window >= 16);
  }
  // Same draws as sample_environment for the final window.
  const auto s = solve_window_adaptive(dist, 30, 7, 3);
  const auto direct = solve_window(sample_environment(dist, -s.window, 29, 7, 3), 30);
  CHECK(direct.z == s.z);
}

TEST_CASE("constant potential window converges to rho_plus^{-y}", "[quenched][window]") {
  auto dist = make_distribution({{0.5, 1.0}}, 0.0);
  const double c = std::exp(0.5), rp = c + std::sqrt(c * c - 1);
  for (std::int64_t y : {1, 5, 40}) {
    const auto s = solve_window_adaptive(dist, y, 1, 0);
    CHECK(s.z == Approx(std::pow(rp, -static_cast<double>(y))).epsilon(1e-9));
    CHECK(*s.conditioned_mean == Approx(static_cast<double>(y) * c / std::sqrt(c * c - 1)).epsilon(1e-8));
  }
}

TEST_CASE("path statistics", "[quenched][paths]") {
  auto a = path_statistics({0, 1, 2});
  CHECK(a.local_times.at(0) == 1);
  CHECK(a.local_times.at(1) == 1);
  CHECK(a.x_y == 0);
  auto b = path_statistics({0, 1, 0, 1, 2});
  CHECK(b.local_times.at(0) == 2);
  CHECK(b.local_times.at(1) == 2);
  CHECK(b.x_y == 2);
  CHECK(b.renewal_sites == std::vector<std::int64_t>{2});
  auto c = path_statistics({0, -1, 0, 1, 2, 1, 2, 3});
  CHECK(c.renewal_sites.back() == 3);
  CHECK_THROWS(path_statistics({0, 2}));
}

TEST_CASE("sampler on the r = 2 free block is deterministic", "[quenched][sampler]") {
  const auto s = solve_block(make_environment(0, {0.0, 0.0}), 2);
  for (std::uint64_t id = 0; id < 50; ++id) {
    SamplerOptions opts;
    opts.path_id = id;
    const auto p = sample_conditioned_path(s, 0, 9, opts);
    CHECK(p.sites == std::vector<std::int64_t>{0, 1, 2});
  }
}

TEST_CASE("sampler transition probabilities sum to one", "[quenched][sampler]") {
  auto dist = make_distribution({{0.0, 0.4}, {0.8, 0.6}}, 0.0);
  const auto s = solve_window_adaptive(dist, 12, 3, 0);
  for (std::int64_t x = s.lo + 1; x < s.target; ++x) {
    if (!(s.h_at(x) > 0)) continue;
    const auto i = s.index(x);
    const double w = s.survival[i];
    const double up = w * s.h[i + 1] / (2 * s.h[i]);
    const double down = w * s.h[i - 1] / (2 * s.h[i]);
    CHECK(up + down == Approx(1.0).margin(1e-12));
    CHECK(down == Approx(0.5 * w * s.ratio[i - 1]).margin(1e-12));
  }
}

TEST_CASE("sampled path frequencies match exact path weights", "[quenched][sampler]") {
  // Block r = 3 and a small window: every path's probability is
  // prod e^{-V} 2^{-len} / z, enumerated up to length 12.
  struct Case {
    std::int64_t lo;
    std::vector<double> v;  // V(lo..target-1)
    std::int64_t target;
    bool block;
  };
  const std::vector<Case> cases{{0, {0.2, 0.0, 0.7}, 3, true},
                                {0, {0.0, 0.3, 0.0, 0.1}, 4, true},
                                {-2, {0.4, 0.0, 0.3, 0.9}, 2, false}};
  for (const auto& cs : cases) {
    const auto env = make_environment(cs.lo, cs.v);
    const auto s = cs.block ? solve_block(env, cs.target) : solve_window(env, cs.target);
    // Exact probabilities by DFS.
    std::map<std::vector<std::int64_t>, double> exact;
    std::vector<std::int64_t> path{0};
    std::function<void(double)> dfs = [&](double w) {
      const std::int64_t x = path.back();
      if (x == cs.target) {
        exact[path] = w / s.z;
        return;
      }
      if (path.size() > 12) return;
      const double step = w * std::exp(-cs.v[static_cast<std::size_t>(x - cs.lo)]);
      if (cs.block && x == 0) {
        if (path.size() > 1) return;
        path.push_back(1);
        dfs(step / 2);
        path.pop_back();
        return;
      }
      for (int d : {-1, 1}) {
        const std::int64_t nx = x + d;
        if (nx <= cs.lo || (cs.block && nx == 0)) continue;
        path.push_back(nx);
        dfs(step / 2);
        path.pop_back();
      }
    };
    dfs(1.0);
    const int n = 100000;
    std::map<std::vector<std::int64_t>, int> counts;
    double tau_sum = 0.0, tau_sq = 0.0;
    for (int i = 0; i < n; ++i) {
      SamplerOptions opts;
      opts.path_id = static_cast<std::uint64_t>(i);
      const auto p = sample_conditioned_path(s, 0, 2718, opts);
      for (auto site : p.sites) CHECK((site >= s.lo && site <= s.target));
      if (cs.block) CHECK(std::count(p.sites.begin(), p.sites.end(), 0) == 1);
      ++counts[p.sites];
      tau_sum += static_cast<double>(p.tau);
      tau_sq += static_cast<double>(p.tau * p.tau);
    }
    for (const auto& [sites, prob] : exact) {
      if (prob < 1e-3) continue;
      const double freq = counts[sites] / static_cast<double>(n);
      const double sigma = std::sqrt(prob * (1 - prob) / n);
      CHECK(std::abs(freq - prob) < 4 * sigma);
    }
    const double mean = tau_sum / n;
    const double sd = std::sqrt((tau_sq / n - mean * mean) / n);
    CHECK(std::abs(mean - s.t0 / s.z) < 4 * sd);
  }
}

TEST_CASE("sampler stops at an intermediate site", "[quenched][sampler]") {
  auto env = make_environment(-20, std::vector<double>(40, 0.1));
  const auto s = solve_window(env, 20);
  SamplerOptions opts;
  opts.stop_at = 5;
  const auto p = sample_conditioned_path(s, 0, 1, opts);
  CHECK(p.sites.back() == 5);
  CHECK(hitting_time(p.sites, 5) == p.tau);
}
