#include <catch_amalgamated.hpp>

#include <cmath>
#include <functional>
#include <sstream>
#include <vector>

#include "crossing/annealed1d.hpp"

using namespace crossing;
using Catch::Approx;

namespace {

double constant_block_z(double lambda, std::int64_t r) {
  const double c = std::exp(lambda);
  const double s = std::sqrt(c * c - 1.0);
  const double rp = c + s, rm = c - s;
  return std::exp(-lambda) * (rp - rm) / (2.0 * (std::pow(rp, r) - std::pow(rm, r)));
}

double mean_survival(const PotentialDistribution& d) {
  double m = 0.0;
  for (const auto& a : d.atoms()) m += a.prob * std::exp(-a.value);
  return m;
}

std::vector<PotentialDistribution> fixtures() {
  return {make_distribution({{0.0, 0.5}, {1.0, 0.5}}, 0.0),
          make_distribution({{0.0, 0.3}, {0.5, 0.3}, {2.0, 0.4}}, 0.0),
          make_distribution({{0.0, 0.6}, {1.0, 0.3}, {kInfinity, 0.1}}, 0.0),
          make_distribution({{0.2, 0.5}, {1.2, 0.5}}, 0.1)};
}

}  // namespace

TEST_CASE("free walk block table is 1/(2r)", "[annealed][exact]") {
  auto zero = make_distribution({{0.0, 1.0}}, 0.0);
  const auto exact = block_table_exact(zero, 14);
  const auto mc = block_table_mc(zero, 14, 16, 1);
  CHECK(exact.z0[0] == 1.0);
  CHECK(exact.a[0] == 0.0);
  for (std::int64_t r = 1; r <= 14; ++r) {
    const auto i = static_cast<std::size_t>(r);
    CHECK(std::abs(exact.z0[i] - 1.0 / (2.0 * r)) < 1e-12);
    CHECK(std::abs(mc.z0[i] - 1.0 / (2.0 * r)) < 1e-12);
    CHECK(mc.z0_stderr[i] == 0.0);
  }
}

TEST_CASE("point mass law reproduces the constant closed form", "[annealed]") {
  for (double lam : {0.25, 1.0}) {
    auto d = make_distribution({{lam, 1.0}}, 0.0);
    const auto exact = block_table_exact(d, 20);
    const auto mc = block_table_mc(d, 20, 4, 9);
    for (std::int64_t r = 1; r <= 20; ++r) {
      const auto i = static_cast<std::size_t>(r);
      CHECK(exact.z0[i] == Approx(constant_block_z(lam, r)).epsilon(1e-11));
      CHECK(mc.z0[i] == Approx(constant_block_z(lam, r)).epsilon(1e-11));
    }
  }
}

TEST_CASE("short blocks have closed forms", "[annealed][exact]") {
  for (const auto& d : fixtures()) {
    const auto t = block_table_exact(d, 3);
    const double m = mean_survival(d);
    CHECK(t.z0[1] == Approx(m / 2).epsilon(1e-14));
    CHECK(t.a[1] == Approx(m / 2).epsilon(1e-14));
    CHECK(t.z0[2] == Approx(m * m / 4).epsilon(1e-14));
    CHECK(t.a[2] == Approx(m * m / 2).epsilon(1e-14));
  }
}

TEST_CASE("r = 1 Monte Carlo is within 4 sigma of the analytic mean", "[annealed][mc]") {
  auto d = make_distribution({{0.0, 0.3}, {2.0, 0.7}}, 0.0);
  const auto t = block_table_mc(d, 1, 40000, 77);
  const double exact = mean_survival(d) / 2;
  CHECK(t.z0_stderr[1] > 0.0);
  CHECK(std::abs(t.z0[1] - exact) < 4 * t.z0_stderr[1]);
}

TEST_CASE("Monte Carlo agrees with exact enumeration for r <= 8", "[annealed][mc][oracle]") {
  std::uint64_t seed = 100;
  for (const auto& d : fixtures()) {
    const auto exact = block_table_exact(d, 8);
    const auto mc = block_table_mc(d, 8, 20000, seed++, 4);
    for (std::int64_t r = 1; r <= 8; ++r) {
      const auto i = static_cast<std::size_t>(r);
      CHECK(std::abs(mc.z0[i] - exact.z0[i]) <= 4 * mc.z0_stderr[i] + 1e-15);
      CHECK(std::abs(mc.a[i] - exact.a[i]) <= 4 * mc.a_stderr[i] + 1e-15);
    }
  }
}

TEST_CASE("an infinite atom scales the table by (1-p)^r", "[annealed][exact]") {
  auto with_inf = make_distribution({{0.0, 0.45}, {1.0, 0.45}, {kInfinity, 0.1}}, 0.0);
  auto finite = make_distribution({{0.0, 0.5}, {1.0, 0.5}}, 0.0);
  const auto a = block_table_exact(with_inf, 9);
  const auto b = block_table_exact(finite, 9);
  for (std::int64_t r = 1; r <= 9; ++r) {
    const auto i = static_cast<std::size_t>(r);
    CHECK(a.z0[i] == Approx(std::pow(0.9, r) * b.z0[i]).epsilon(1e-12));
    CHECK(a.a[i] == Approx(std::pow(0.9, r) * b.a[i]).epsilon(1e-12));
  }
}

TEST_CASE("table invariants", "[annealed][property]") {
  for (const auto& d : fixtures()) {
    const auto t = block_table_exact(d, 10);
    for (std::int64_t r = 1; r <= 10; ++r) {
      const auto i = static_cast<std::size_t>(r);
      CHECK(t.z0[i] >= 0.0);
      CHECK(t.z0[i] <= 1.0);
      CHECK(t.a[i] >= static_cast<double>(r) * t.z0[i] * (1 - 1e-14));
    }
  }
}

TEST_CASE("block weight is dominated by the window weight", "[annealed][property]") {
  for (const auto& d : fixtures()) {
    for (std::int64_t r : {1, 3, 8}) {
      double block_sum = 0.0, window_sum = 0.0;
      for (std::uint64_t i = 0; i < 200; ++i) {
        const auto env = sample_environment(d, -64, r, 4242, i);
        const auto w = solve_window(env, r);
        const auto b = solve_block(env, r);
        CHECK(b.z <= w.z * (1 + 1e-12));
        CHECK(w.z <= 1.0);
        block_sum += b.z;
        window_sum += w.z;
      }
      CHECK(block_sum <= window_sum);
    }
  }
}

TEST_CASE("enumeration budget guard", "[annealed][exact]") {
  auto d = make_distribution({{0.0, 0.5}, {1.0, 0.5}}, 0.0);
  CHECK_THROWS_AS(block_table_exact(d, 24), EnumerationBudgetExceeded);
  CHECK_NOTHROW(block_table_exact(d, 10));
}

TEST_CASE("Monte Carlo tables do not depend on the worker count", "[annealed][mc]") {
  auto d = fixtures()[1];
  const auto a = block_table_mc(d, 12, 999, 5, 1);
  const auto b = block_table_mc(d, 12, 999, 5, 7);
  CHECK(a.z0 == b.z0);
  CHECK(a.a == b.a);
  CHECK(a.z0_stderr == b.z0_stderr);
}

TEST_CASE("block table csv", "[annealed]") {
  auto d = make_distribution({{0.0, 1.0}}, 0.0);
  std::ostringstream out;
  write_block_table_csv(out, block_table_exact(d, 2));
  CHECK(out.str() == "r,z0,z0_stderr,a,a_stderr\n1,0.5,0,0.5,0\n2,0.25,0,0.5,0\n");
}

TEST_CASE("local-time weight", "[annealed][localtime]") {
  auto lam = make_distribution({{0.4, 1.0}}, 0.0);
  CHECK(localtime_weight(std::vector<std::int64_t>{0, 1, 2}, lam) == Approx(std::exp(-0.8)).epsilon(1e-15));
  CHECK(localtime_weight(std::vector<std::int64_t>{0}, lam) == 1.0);

  // Per-path oracle: average prod_n e^{-V(S_n)} over every environment on the
  // visited sites.
  const std::vector<std::vector<std::int64_t>> paths{
      {0, 1, 0, -1, 0, 1, 2}, {0, 1, 2, 1, 2, 3}, {0, -1, -2, -1, 0, 1}, {0, 1, 0, 1, 0, 1}};
  for (const auto& d : fixtures()) {
    for (const auto& path : paths) {
      std::vector<std::int64_t> sites;
      for (std::size_t n = 0; n + 1 < path.size(); ++n)
        if (std::find(sites.begin(), sites.end(), path[n]) == sites.end()) sites.push_back(path[n]);
      std::vector<double> assigned(sites.size());
      double total = 0.0;
      std::function<void(std::size_t, double)> rec = [&](std::size_t k, double prob) {
        if (k == sites.size()) {
          double sum_v = 0.0;
          for (std::size_t n = 0; n + 1 < path.size(); ++n) {
            const auto it = std::find(sites.begin(), sites.end(), path[n]);
            sum_v += assigned[static_cast<std::size_t>(it - sites.begin())];
          }
          total += prob * std::exp(-sum_v);
          return;
        }
        for (const auto& a : d.atoms()) {
          assigned[k] = a.value;
          rec(k + 1, prob * a.prob);
        }
      };
      rec(0, 1.0);
      CHECK(std::abs(localtime_weight(path, d) - total) < 1e-12);
    }
  }
}

TEST_CASE("crossing time under a constant potential", "[annealed][window]") {
  for (double lam : {0.2, 0.7}) {
    auto d = make_distribution({{lam, 1.0}}, 0.0);
    const std::int64_t y = 20;
    const auto est = crossing_time_mc(d, y, WindowPolicy{}, 8, 3);
    // -d/dlambda log(rho_plus^{-y}) by central difference on the closed form.
    auto log_z = [&](double l) {
      const double c = std::exp(l);
      return -static_cast<double>(y) * std::log(c + std::sqrt(c * c - 1));
    };
    const double h = 1e-6;
    const double oracle = -(log_z(lam + h) - log_z(lam - h)) / (2 * h);
    CHECK(est.tau.mean == Approx(oracle).epsilon(1e-6));
    CHECK(est.tau.stderr_ < 1e-9 * oracle);
    CHECK(est.windows_converged);
  }
}

TEST_CASE("crossing time lower bound at y = 1", "[annealed][window]") {
  for (const auto& d : fixtures()) {
    const auto est = crossing_time_mc(d, 1, WindowPolicy{}, 200, 8);
    CHECK(est.tau.mean >= 1.0);
  }
}

TEST_CASE("crossing time grows superlinearly for the {0, inf} law", "[annealed][window]") {
  auto d = make_distribution({{0.0, 0.5}, {kInfinity, 0.5}}, 0.0);
  double prev = 0.0;
  for (std::int64_t y : {4, 8, 16, 32}) {
    const auto est = crossing_time_mc(d, y, WindowPolicy{}, 2000, 21, 4, SiteSampling{true});
    const double per_step = est.tau.mean / static_cast<double>(y);
    CHECK(per_step > prev);
    prev = per_step;
    CHECK(est.open_conditioned);
  }
}

TEST_CASE("open-path conditioning only rescales Z", "[annealed][window]") {
  auto d = make_distribution({{0.0, 0.7}, {0.5, 0.2}, {kInfinity, 0.1}}, 0.0);
  const std::int64_t y = 6;
  const auto plain = crossing_time_mc(d, y, WindowPolicy{}, 60000, 5, 4);
  const auto open = crossing_time_mc(d, y, WindowPolicy{}, 60000, 6, 4, SiteSampling{true});
  const double sz = std::hypot(plain.z.stderr_, open.z.stderr_);
  const double st = std::hypot(plain.tau.stderr_, open.tau.stderr_);
  CHECK(std::abs(plain.z.mean - open.z.mean) < 4 * sz);
  CHECK(std::abs(plain.tau.mean - open.tau.mean) < 4 * st);
}

TEST_CASE("crossing ratio rejects all-zero samples", "[annealed][window]") {
  auto d = make_distribution({{0.0, 0.01}, {kInfinity, 0.99}}, 0.0);
  CHECK_THROWS_AS(crossing_time_mc(d, 50, WindowPolicy{}, 10, 1), NoEstimate);
}

TEST_CASE("tilted sampling is unbiased against full enumeration", "[annealed][window][tilt]") {
  // Fixed window [-W, y]: enumerate every environment on it exactly.
  auto d = make_distribution({{0.0, 0.5}, {1.0, 0.3}, {kInfinity, 0.2}}, 0.0);
  const std::int64_t y = 5, W = 3;
  const auto n_sites = static_cast<std::size_t>(y + W + 1);
  double ez = 0.0, et0 = 0.0;
  std::vector<double> vals(n_sites);
  std::function<void(std::size_t, double)> rec = [&](std::size_t i, double p) {
    if (i == n_sites) {
      const auto s = solve_window(make_environment(-W, vals), y);
      ez += p * s.z;
      et0 += p * s.t0;
      return;
    }
    for (const auto& a : d.atoms()) {
      vals[i] = a.value;
      rec(i + 1, p * a.prob);
    }
  };
  rec(0, 1.0);

  WindowPolicy fixed;
  fixed.initial = W;
  fixed.adaptive = false;
  for (double tilt : {0.0, 1.5, 4.0}) {
    const auto est = crossing_time_mc(d, y, fixed, 40000, 17, 2, SiteSampling{false, tilt});
    INFO("tilt " << tilt);
    CHECK(std::abs(est.z.mean - ez) < 4 * est.z.stderr_);
    CHECK(std::abs(est.tau.mean - et0 / ez) < 4 * est.tau.stderr_);
    CHECK(est.tilt == tilt);
    CHECK(est.effective_sample_size > 1.0);
  }
}

TEST_CASE("tilting a point mass changes nothing", "[annealed][window][tilt]") {
  auto d = make_distribution({{0.4, 1.0}}, 0.0);
  const auto a = sample_windows(d, 30, 6, 2, WindowPolicy{}, 1);
  const auto b = sample_windows(d, 30, 6, 2, WindowPolicy{}, 1, SiteSampling{false, 3.0});
  CHECK(a.log_weighted == b.log_weighted);
  CHECK(a.t0 == b.t0);
}

TEST_CASE("pilot tilt improves the effective sample size", "[annealed][window][tilt]") {
  auto d = make_distribution({{0.0, 0.5}, {1.0, 0.5}}, 0.0);
  const auto pick = choose_tilt(d, 100, WindowPolicy{}, 200, 5, 2);
  CHECK(pick.path.size() == 8);
  CHECK(pick.tilt > 0.0);
  CHECK(choose_tilt(d, 100, WindowPolicy{}, 200, 5, 1).tilt == pick.tilt);
  const auto plain = sample_windows(d, 100, 2000, 8, WindowPolicy{}, 2);
  const auto tilted = sample_windows(d, 100, 2000, 8, WindowPolicy{}, 2, SiteSampling{false, pick.tilt});
  CHECK(effective_sample_size(tilted.log_weighted) > 5 * effective_sample_size(plain.log_weighted));
  // Nothing to gain on a point mass.
  CHECK(choose_tilt(make_distribution({{0.3, 1.0}}, 0.0), 50, WindowPolicy{}, 20, 5).tilt == 0.0);
  CHECK_THROWS_AS(sample_windows(d, 10, 2, 1, WindowPolicy{}, 1, SiteSampling{false, -1.0}), std::invalid_argument);
}
