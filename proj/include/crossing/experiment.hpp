#pragma once
// Batch experiments: config -> artifacts (CSV + summary.json) -> report.
//
// Everything is computed in memory first; files are only written once the
// whole experiment succeeded, so a failing run leaves no partial output.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "crossing/annealed1d.hpp"
#include "crossing/config.hpp"
#include "crossing/diagnostics.hpp"
#include "crossing/lyapunov.hpp"
#include "crossing/multid.hpp"
#include "crossing/renewal.hpp"

namespace crossing {

inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr int kSummarySchema = 1;

using ojson = nlohmann::ordered_json;

class ArtifactError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

// JSON has no infinity; keep it readable instead of silently writing null.
inline ojson num(double v) {
  if (std::isnan(v)) return nullptr;
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

inline ojson sanitize(const ojson& j) {
  if (j.is_number_float()) return num(j.get<double>());
  if (j.is_array()) {
    ojson out = ojson::array();
    for (const auto& e : j) out.push_back(sanitize(e));
    return out;
  }
  if (j.is_object()) {
    ojson out = ojson::object();
    for (const auto& [k, v] : j.items()) out[k] = sanitize(v);
    return out;
  }
  return j;
}

inline ojson check_json(const CheckReport& r, bool expected_failure = false) {
  ojson j;
  j["name"] = r.name;
  j["statistic"] = num(r.statistic);
  j["threshold"] = num(r.threshold);
  j["pass"] = r.pass;
  j["expected_failure"] = expected_failure;
  j["ok"] = expected_failure ? !r.pass : r.pass;
  j["details"] = sanitize(ojson::parse(r.details.dump()));
  return j;
}

inline ojson estimate_json(const McEstimate& e) {
  return {{"mean", num(e.mean)}, {"stderr", num(e.stderr_)}, {"n", e.n_samples}};
}

inline double rel_diff(double a, double b) { return std::abs(a - b) / std::abs(b); }

inline CheckReport agreement(const std::string& name, double a, double b, double tol) {
  CheckReport r;
  r.name = name;
  r.statistic = rel_diff(a, b);
  r.threshold = tol;
  r.pass = r.statistic < tol;
  r.details = {{"a", a}, {"b", b}};
  return r;
}

struct RenewalRun {
  BlockTable table;
  Deconvolution dec;
  BetaRoot root;
  RenewalKernel kernel;
};

inline RenewalRun run_renewal(const ExperimentConfig& c, const PotentialDistribution& dist, unsigned workers) {
  RenewalRun r;
  r.table = c.mode == "exact" ? block_table_exact(dist, c.R, c.enumeration_budget)
                              : block_table_mc(dist, c.R, c.n_envs, c.master_seed, workers);
  r.dec = deconvolve_blocks(r.table);
  r.root = solve_beta(r.dec.zbar, c.R);
  r.kernel = build_kernel(r.dec, r.root.beta, c.R);
  return r;
}

inline ojson renewal_json(const RenewalRun& r) {
  const auto& k = r.kernel;
  ojson j;
  j["R"] = k.R;
  j["mode"] = to_string(r.table.mode);
  j["beta_root"] = num(k.beta);
  j["beta_extrapolated"] = k.beta_extrapolated ? num(*k.beta_extrapolated) : ojson(nullptr);
  j["kernel_mass"] = num(1.0 - k.mass_defect);
  j["mass_defect"] = num(k.mass_defect);
  if (k.R >= 3) j["mass_defect_two_shorter"] = num(build_kernel(r.dec, k.beta, k.R - 2).mass_defect);
  j["v"] = num(k.v);
  j["inv_v"] = num(1.0 / k.v);
  j["inv_v_tail_completed"] = num(k.inv_v_extrapolated);
  j["v_reliable"] = k.v_reliable;
  j["gq_tail_fraction"] = num(k.gq_tail_fraction);
  j["rq_tail_fraction"] = num(k.rq_tail_fraction);
  j["clamped_rows"] = r.dec.clamped;
  if (k.R >= 8) {
    try {
      const auto tail = kernel_tail_check(k);
      j["tail"] = {{"slope", num(tail.slope)},
                   {"epsilon_hat", num(tail.epsilon_hat)},
                   {"residual_rms", num(tail.residual_rms)},
                   {"fit_from", tail.fit_from},
                   {"fit_to", tail.fit_to},
                   {"exponential", tail.pass}};
    } catch (const TailFitError& e) {
      j["tail"] = {{"error", e.what()}};
    }
    try {
      j["g_growth_exponent"] = num(g_growth_exponent(k));
    } catch (const TailFitError&) {
      j["g_growth_exponent"] = nullptr;
    }
  }
  return j;
}

inline std::string csv_of(const auto& writer) {
  std::ostringstream out;
  writer(out);
  return out.str();
}

}  // namespace detail

struct ExperimentResult {
  ojson summary;
  /// (file name, contents); summary.json is added by write_artifacts.
  std::vector<std::pair<std::string, std::string>> files;
  int exit_code = 0;
};

/// Runs the experiment without touching the filesystem.
inline ExperimentResult compute_experiment(const ExperimentConfig& c, unsigned workers) {
  using namespace detail;
  ExperimentResult res;
  ojson results = ojson::object();
  ojson checks = ojson::array();
  const WindowPolicy policy = c.window_policy();
  const bool has_dist = !c.atoms.empty();
  const PotentialDistribution dist = has_dist ? c.distribution() : make_distribution({{0.0, 1.0}}, 0.0);
  SiteSampling open{c.open_paths, std::isnan(c.tilt) ? 0.0 : c.tilt};
  const bool uses_windows = c.kind == ExperimentKind::speed || c.kind == ExperimentKind::lyapunov ||
                            c.kind == ExperimentKind::derivative || c.kind == ExperimentKind::diagnostics;
  if (uses_windows) {
    ojson sm = {{"open_paths", open.open}, {"auto", std::isnan(c.tilt)}};
    if (std::isnan(c.tilt)) {
      const auto pick = choose_tilt(dist, c.y, policy, c.pilot_envs, c.master_seed, workers, open.open);
      open.tilt = pick.tilt;
      sm["pilot_envs"] = c.pilot_envs;
      sm["pilot_ess"] = num(pick.pilot_ess);
    }
    sm["tilt"] = num(open.tilt);
    results["sampling"] = sm;
  }
  const bool has_R = c.raw.contains("R");

  switch (c.kind) {
    case ExperimentKind::block_table: {
      const auto table = c.mode == "exact" ? block_table_exact(dist, c.R, c.enumeration_budget)
                                           : block_table_mc(dist, c.R, c.n_envs, c.master_seed, workers);
      res.files.emplace_back("block_table.csv", csv_of([&](std::ostream& o) { write_block_table_csv(o, table); }));
      results["R"] = c.R;
      results["mode"] = c.mode;
      ojson z0 = ojson::array(), a = ojson::array();
      for (std::int64_t r = 1; r <= table.R; ++r) {
        z0.push_back(num(table.z0[static_cast<std::size_t>(r)]));
        a.push_back(num(table.a[static_cast<std::size_t>(r)]));
      }
      results["z0"] = z0;
      results["a"] = a;
      checks.push_back(check_json(check_block_time_bound(table)));
      break;
    }
    case ExperimentKind::renewal:
    case ExperimentKind::speed: {
      const auto r = run_renewal(c, dist, workers);
      res.files.emplace_back("block_table.csv", csv_of([&](std::ostream& o) { write_block_table_csv(o, r.table); }));
      res.files.emplace_back("kernel.csv", csv_of([&](std::ostream& o) { write_kernel_csv(o, r.kernel); }));
      results["renewal"] = renewal_json(r);
      checks.push_back(check_json(check_block_time_bound(r.table)));
      checks.push_back(check_json(check_g_lower_bound(r.kernel)));
      if (c.kind == ExperimentKind::speed) {
        const auto est = crossing_time_mc(dist, c.y, policy, c.n_envs, c.master_seed, workers, open);
        const double tau_y = est.tau.mean / static_cast<double>(c.y);
        results["direct"] = {{"y", c.y},
                             {"tau_over_y", num(tau_y)},
                             {"tau_over_y_stderr", num(est.tau.stderr_ / static_cast<double>(c.y))},
                             {"z", estimate_json(est.z)},
                             {"n_positive", est.n_positive},
                             {"effective_sample_size", num(est.effective_sample_size)},
                             {"max_window", est.max_window},
                             {"windows_converged", est.windows_converged}};
        checks.push_back(check_json(agreement("speed_formula", tau_y, 1.0 / r.kernel.v, 0.03)));
      }
      break;
    }
    case ExperimentKind::lyapunov: {
      const auto b = beta_slope(dist, c.y, policy, c.n_envs, c.master_seed, workers, open);
      results["beta_slope"] = estimate_json(b);
      results["y"] = c.y;
      try {
        const auto a = alpha_quenched(dist, c.y, policy, c.n_envs, c.master_seed, workers);
        results["alpha"] = estimate_json(a.estimate);
        results["alpha_excluded_fraction"] = num(a.excluded_fraction);
        checks.push_back(check_json(check_jensen(b, a)));
      } catch (const NoEstimate& e) {
        results["alpha"] = {{"skipped", e.what()}};
      }
      if (has_R) {
        const auto r = run_renewal(c, dist, workers);
        results["renewal"] = renewal_json(r);
        checks.push_back(check_json(agreement("beta_agreement", b.mean, r.kernel.beta, 0.02)));
      }
      break;
    }
    case ExperimentKind::derivative: {
      const auto curve = derivative_at_zero(dist, c.lambdas, c.y, policy, c.n_envs, c.master_seed, workers, open);
      res.files.emplace_back("curve.csv", csv_of([&](std::ostream& o) { write_curve_csv(o, curve); }));
      results["y"] = c.y;
      results["derivative_at_zero"] = num(curve.right_derivative_at_zero);
      results["derivative_stderr"] = num(curve.derivative_stderr);
      results["one_sided_difference"] = num(curve.one_sided);
      results["monotone"] = curve.monotone;
      results["concave"] = curve.concave;
      if (has_R) {
        const auto r = run_renewal(c, dist, workers);
        results["renewal"] = renewal_json(r);
        checks.push_back(
            check_json(agreement("derivative_identity", curve.right_derivative_at_zero, 1.0 / r.kernel.v, 0.05)));
      }
      break;
    }
    case ExperimentKind::diagnostics: {
      const bool negative_control = !dist.satisfies_d1();
      results["negative_control"] = negative_control;
      checks.push_back(check_json(check_localtime_geometric(c.geometric_y, c.geometric_z, c.m_max)));
      checks.push_back(check_json(
          check_bias_domination(dist, c.y, c.z, c.x, c.m_max, c.bias_envs, c.paths_per_env, c.master_seed, policy, workers, open)));
      checks.push_back(check_json(check_prefactor_bound(dist, c.y, c.n_envs, c.master_seed, policy, workers, open)));
      XyTailOptions xo{policy, open, c.pool};
      checks.push_back(check_json(check_xy_tail(dist, c.y, c.n_paths, c.master_seed, xo, workers), negative_control));
      if (!c.ys.empty()) {
        ojson rows = ojson::array();
        std::vector<double> means;
        for (auto yy : c.ys) {
          const auto rep = check_xy_tail(dist, yy, c.n_paths, c.master_seed, xo, workers);
          const double m = rep.details["mean_tau_to_xy_over_y"].get<double>();
          means.push_back(m);
          rows.push_back({{"y", yy},
                          {"mean_tau_to_xy_over_y", num(m)},
                          {"stderr", num(rep.details["mean_tau_to_xy_over_y_stderr"].get<double>())}});
        }
        results["xy_prefix"] = rows;
        CheckReport trend;
        trend.name = "xy_prefix_decreasing";
        trend.pass = true;
        for (std::size_t k = 1; k < means.size(); ++k)
          if (!(means[k] < means[k - 1])) trend.pass = false;
        trend.statistic = means.size() > 1 ? means.back() / means.front() : 0.0;
        trend.threshold = 1.0;
        checks.push_back(check_json(trend, negative_control));
      }
      try {
        const auto r = run_renewal(c, dist, workers);
        checks.push_back(check_json(check_block_time_bound(r.table)));
        checks.push_back(check_json(check_g_lower_bound(r.kernel)));
      } catch (const std::exception& e) {
        results["renewal_skipped"] = e.what();
      }
      if (c.y >= 32) {
        try {
          const auto b = beta_slope(dist, c.y, policy, c.n_envs, c.master_seed, workers, open);
          const auto a = alpha_quenched(dist, c.y, policy, c.n_envs, c.master_seed, workers);
          checks.push_back(check_json(check_jensen(b, a)));
        } catch (const NoEstimate& e) {
          results["jensen_skipped"] = e.what();
        }
      }
      break;
    }
    case ExperimentKind::counterexample: {
      if (c.ys.size() < 2) throw ConfigError("counterexample needs at least two ys");
      const auto walled = counterexample_scaling(c.p_zero, c.ys, c.n_envs, c.master_seed, workers);
      auto table = [](const CheckReport& rep) {
        std::ostringstream o;
        o.precision(17);
        o << "y,mean_tau,stderr\n";
        const auto& ys = rep.details["ys"];
        for (std::size_t k = 0; k < ys.size(); ++k)
          o << ys[k].get<std::int64_t>() << ',' << rep.details["mean_tau"][k].get<double>() << ','
            << rep.details["mean_tau_stderr"][k].get<double>() << '\n';
        return o.str();
      };
      res.files.emplace_back("scaling.csv", table(walled));
      checks.push_back(check_json(walled));
      if (has_dist) {
        auto ballistic = scaling_exponent(dist, c.ys, c.n_envs, c.master_seed, 0.9, 1.1, policy, open, workers);
        ballistic.name = "ballistic_scaling";
        res.files.emplace_back("scaling_ballistic.csv", table(ballistic));
        checks.push_back(check_json(ballistic));
      }
      break;
    }
    case ExperimentKind::multid_scan: {
      if (c.ks.empty()) throw ConfigError("multid_scan needs ks");
      const Site<2> dir{c.direction[0], c.direction[1]};
      const auto scan = ballisticity_scan<2>(dist, dir, c.ks, c.margin, c.n_envs, c.master_seed, workers);
      res.files.emplace_back("scan.csv", csv_of([&](std::ostream& o) { write_scan_csv(o, scan); }));
      double worst = 0.0;
      for (const auto& row : scan.rows) worst = std::max(worst, row.worst_residual);
      results["margin_factor"] = num(c.margin);
      results["worst_relative_residual"] = num(worst);
      CheckReport rep;
      rep.name = "ratio_top_octave_increase";
      rep.threshold = 0.15;
      if (scan.top_octave_increase) {
        rep.statistic = *scan.top_octave_increase;
        rep.pass = rep.statistic < rep.threshold;
      } else {
        rep.statistic = std::numeric_limits<double>::quiet_NaN();
        rep.details = {{"error", "grid has no k with 2k = max k"}};
      }
      checks.push_back(check_json(rep));
      break;
    }
    case ExperimentKind::cube_stats: {
      const auto h = cube_statistics<2>(dist, c.L, c.kappa, c.cubes_per_side, c.n_envs, c.master_seed, workers);
      res.files.emplace_back("histogram.csv", csv_of([&](std::ostream& o) { write_histogram_csv(o, h); }));
      std::uint64_t comps = 0, censored = 0;
      for (const auto& [s, n] : h.all) comps += n;
      for (const auto& [s, n] : h.uncensored) censored += n;
      censored = comps - censored;
      results["L"] = c.L;
      results["kappa"] = num(c.kappa);
      results["components"] = comps;
      results["censored_components"] = censored;
      CheckReport rep;
      rep.name = "component_sizes_decreasing";
      rep.pass = !h.all.empty() && histogram_decreasing(h.all, c.min_count);
      std::size_t considered = 0;
      for (const auto& [size, n] : h.all) considered += n >= c.min_count ? 1 : 0;
      // statistic: sizes entering the comparison; no numeric threshold.
      rep.statistic = static_cast<double>(considered);
      rep.threshold = std::numeric_limits<double>::quiet_NaN();
      rep.details = {{"min_count", c.min_count}, {"distinct_sizes", h.all.size()}};
      checks.push_back(check_json(rep));
      break;
    }
  }

  bool all_ok = true;
  for (const auto& ch : checks) all_ok = all_ok && ch["ok"].get<bool>();
  res.exit_code = all_ok ? 0 : 2;

  ojson s;
  s["schema"] = kSummarySchema;
  s["kind"] = to_string(c.kind);
  s["provenance"] = {{"tool", "crossing-lab"},
                     {"version", kToolVersion},
                     {"master_seed", c.master_seed},
                     {"workers", workers},
                     {"compiler", __VERSION__},
                     {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                   std::to_string(EIGEN_MINOR_VERSION)},
                     {"config", sanitize(c.raw)}};
  if (has_dist) {
    ojson atoms = ojson::array();
    for (const auto& a : dist.atoms()) atoms.push_back({num(a.value), num(a.prob)});
    s["distribution"] = {{"atoms", atoms},
                         {"lambda", num(dist.lambda_shift())},
                         {"satisfies_V", dist.satisfies_V()},
                         {"satisfies_d1", dist.satisfies_d1()}};
  }
  s["results"] = results;
  s["checks"] = checks;
  s["all_ok"] = all_ok;
  std::vector<std::string> names;
  for (const auto& [name, _] : res.files) names.push_back(name);
  s["artifacts"] = names;
  res.summary = std::move(s);
  return res;
}

/// Writes each file through a temporary name, summary.json last.
inline void write_artifacts(const ExperimentResult& res, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  auto put = [&](const std::string& name, const std::string& body) {
    const auto tmp = dir / (name + ".tmp");
    {
      std::ofstream out(tmp, std::ios::binary);
      if (!out) throw ArtifactError("cannot write " + tmp.string());
      out << body;
      if (!out) throw ArtifactError("write failed for " + tmp.string());
    }
    fs::rename(tmp, dir / name);
  };
  for (const auto& [name, body] : res.files) put(name, body);
  put("summary.json", res.summary.dump(2) + "\n");
}

inline int run_experiment(const ExperimentConfig& c, const std::filesystem::path& out_dir, unsigned workers) {
  const auto res = compute_experiment(c, workers);
  write_artifacts(res, out_dir);
  return res.exit_code;
}

namespace detail {

inline std::string fmt(const ojson& v) {
  if (v.is_null()) return "n/a";
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "yes" : "no";
  if (v.is_number_integer()) return std::to_string(v.get<std::int64_t>());
  if (v.is_number()) {
    std::ostringstream o;
    o.precision(6);
    o << v.get<double>();
    return o.str();
  }
  return v.dump();
}

// Looks up a JSON pointer, returning null when absent.
inline ojson at(const ojson& j, const std::string& ptr) {
  const ojson::json_pointer p(ptr);
  return j.contains(p) ? j.at(p) : ojson(nullptr);
}

}  // namespace detail

/// Markdown report over an artifact directory. Every number is followed by
/// the file and JSON pointer it was read from.
inline std::string emit_report(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  using detail::at;
  using detail::fmt;
  if (!fs::is_directory(dir)) throw ArtifactError("not a directory: " + dir.string());
  const auto path = dir / "summary.json";
  if (!fs::exists(path)) throw ArtifactError("no summary.json in " + dir.string());
  std::ifstream in(path);
  ojson s;
  try {
    s = ojson::parse(in);
  } catch (const std::exception& e) {
    throw ArtifactError(std::string("unreadable summary.json: ") + e.what());
  }
  for (const auto& name : s.value("artifacts", ojson::array()))
    if (!fs::exists(dir / name.get<std::string>())) throw ArtifactError("missing artifact " + name.get<std::string>());

  std::ostringstream o;
  auto row = [&](const std::string& label, const std::string& ptr) {
    const auto v = at(s, ptr);
    if (!v.is_null()) o << "| " << label << " | " << fmt(v) << " | summary.json `" << ptr << "` |\n";
  };
  o << "# crossing-lab report: " << fmt(at(s, "/kind")) << "\n\n";
  o << "master_seed " << fmt(at(s, "/provenance/master_seed")) << ", workers " << fmt(at(s, "/provenance/workers"))
    << ", version " << fmt(at(s, "/provenance/version")) << " (summary.json `/provenance`)\n\n";

  o << "## Estimates\n\n| quantity | value | source |\n|---|---|---|\n";
  row("beta (renewal root)", "/results/renewal/beta_root");
  row("beta (root, geometric tail appended)", "/results/renewal/beta_extrapolated");
  row("beta (slope of log Z)", "/results/beta_slope/mean");
  row("beta (slope) stderr", "/results/beta_slope/stderr");
  row("alpha (quenched)", "/results/alpha/mean");
  row("sum of q", "/results/renewal/kernel_mass");
  row("mass defect", "/results/renewal/mass_defect");
  row("mass defect, R - 2 at the same beta", "/results/renewal/mass_defect_two_shorter");
  row("tail slope of q", "/results/renewal/tail/slope");
  row("tail epsilon", "/results/renewal/tail/epsilon_hat");
  row("v", "/results/renewal/v");
  row("1/v", "/results/renewal/inv_v");
  row("1/v with fitted tails", "/results/renewal/inv_v_tail_completed");
  row("v reliable", "/results/renewal/v_reliable");
  row("E tau_y / y (direct)", "/results/direct/tau_over_y");
  row("E tau_y / y stderr", "/results/direct/tau_over_y_stderr");
  row("E tau_y / y effective sample size", "/results/direct/effective_sample_size");
  row("site-law tilt", "/results/sampling/tilt");
  row("derivative at 0+", "/results/derivative_at_zero");
  row("derivative stderr", "/results/derivative_stderr");
  row("components", "/results/components");
  row("censored components", "/results/censored_components");

  o << "\n## Comparisons\n\n";
  auto pair = [&](const std::string& label, const std::string& a, const std::string& b) {
    const auto va = at(s, a), vb = at(s, b);
    if (va.is_number() && vb.is_number())
      o << "- " << label << ": " << fmt(va) << " vs " << fmt(vb) << " (summary.json `" << a << "`, `" << b << "`)\n";
  };
  pair("beta slope vs beta root", "/results/beta_slope/mean", "/results/renewal/beta_root");
  pair("1/v vs derivative at 0+", "/results/renewal/inv_v", "/results/derivative_at_zero");
  pair("1/v vs E tau_y / y", "/results/renewal/inv_v", "/results/direct/tau_over_y");
  if (at(s, "/results/renewal/kernel_mass").is_number())
    o << "- sum of q vs 1: " << fmt(at(s, "/results/renewal/kernel_mass")) << " (summary.json `/results/renewal/kernel_mass`)\n";

  o << "\n## Checks\n\n| check | statistic | threshold | result | source |\n|---|---|---|---|---|\n";
  const auto checks = s.value("checks", ojson::array());
  for (std::size_t i = 0; i < checks.size(); ++i) {
    const auto& c = checks[i];
    std::string verdict;
    if (c["expected_failure"].get<bool>())
      verdict = c["pass"].get<bool>() ? "**FAIL** (negative control passed)" : "ok (expected failure)";
    else
      verdict = c["pass"].get<bool>() ? "pass" : "**FAIL**";
    o << "| " << fmt(c["name"]) << " | " << fmt(c["statistic"]) << " | " << fmt(c["threshold"]) << " | " << verdict
      << " | summary.json `/checks/" << i << "` |\n";
  }
  o << "\nOverall: " << (at(s, "/all_ok").get<bool>() ? "all checks ok" : "**FAILURES PRESENT**") << "\n";

  const auto arts = s.value("artifacts", ojson::array());
  if (!arts.empty()) {
    o << "\n## Artifacts\n\n";
    for (const auto& a : arts) o << "- " << a.get<std::string>() << "\n";
  }
  return o.str();
}

}  // namespace crossing
