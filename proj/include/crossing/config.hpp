#pragma once
// Experiment configuration files.
//
// Grammar (schema 1), one assignment per line:
//
//   file    := { line }
//   line    := [ key "=" value ] [ "#" comment ]
//   key     := [A-Za-z_][A-Za-z0-9_.]*
//   value   := number | "inf" | "true" | "false" | string | array
//   string  := '"' { any character except '"' } '"'
//   array   := "[" [ value { "," value } ] "]"      (may nest, single line)
//
// Every file must contain `schema = 1`. Unknown keys are rejected so that a
// typo cannot silently fall back to a default.

#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "crossing/potential.hpp"

namespace crossing {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

class ValueParser {
 public:
  ValueParser(const std::string& text, int line) : s_(text), line_(line) {}

  nlohmann::ordered_json parse() {
    auto v = value();
    skip_ws();
    if (pos_ != s_.size()) fail("trailing characters after value");
    return v;
  }

 private:
  [[noreturn]] void fail(const std::string& what) const {
    throw ConfigError("line " + std::to_string(line_) + ": " + what);
  }
  void skip_ws() {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
  }
  nlohmann::ordered_json value() {
    skip_ws();
    if (pos_ >= s_.size()) fail("missing value");
    const char c = s_[pos_];
    if (c == '[') return array();
    if (c == '"') {
      const auto end = s_.find('"', pos_ + 1);
      if (end == std::string::npos) fail("unterminated string");
      std::string out = s_.substr(pos_ + 1, end - pos_ - 1);
      pos_ = end + 1;
      return out;
    }
    std::size_t end = pos_;
    while (end < s_.size() && s_[end] != ',' && s_[end] != ']' && !std::isspace(static_cast<unsigned char>(s_[end])))
      ++end;
    const std::string word = s_.substr(pos_, end - pos_);
    pos_ = end;
    if (word == "inf" || word == "+inf") return std::numeric_limits<double>::infinity();
    if (word == "true") return true;
    if (word == "false") return false;
    try {
      std::size_t used = 0;
      if (word.find_first_of(".eE") == std::string::npos) {
        const long long iv = std::stoll(word, &used);
        if (used == word.size()) return iv;
      }
      const double dv = std::stod(word, &used);
      if (used == word.size() && std::isfinite(dv)) return dv;
    } catch (const std::exception&) {
    }
    fail("cannot parse value '" + word + "'");
  }
  nlohmann::ordered_json array() {
    ++pos_;  // '['
    auto out = nlohmann::ordered_json::array();
    skip_ws();
    if (pos_ < s_.size() && s_[pos_] == ']') {
      ++pos_;
      return out;
    }
    for (;;) {
      out.push_back(value());
      skip_ws();
      if (pos_ >= s_.size()) fail("unterminated array");
      if (s_[pos_] == ',') {
        ++pos_;
        continue;
      }
      if (s_[pos_] == ']') {
        ++pos_;
        return out;
      }
      fail("expected ',' or ']' in array");
    }
  }

  const std::string& s_;
  std::size_t pos_ = 0;
  int line_;
};

inline std::string strip_comment(const std::string& line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') quoted = !quoted;
    if (line[i] == '#' && !quoted) return line.substr(0, i);
  }
  return line;
}

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace detail

/// Parses the key/value text into an ordered JSON object (infinity is kept
/// as a double and must not be serialized directly).
inline nlohmann::ordered_json parse_config_text(const std::string& text) {
  nlohmann::ordered_json out = nlohmann::ordered_json::object();
  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = detail::trim(detail::strip_comment(raw));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    if (key.empty() || !(std::isalpha(static_cast<unsigned char>(key[0])) || key[0] == '_'))
      throw ConfigError("line " + std::to_string(line_no) + ": invalid key '" + key + "'");
    for (char c : key)
      if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.'))
        throw ConfigError("line " + std::to_string(line_no) + ": invalid key '" + key + "'");
    if (out.contains(key)) throw ConfigError("line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
    const std::string value = line.substr(eq + 1);
    out[key] = detail::ValueParser(value, line_no).parse();
  }
  return out;
}

enum class ExperimentKind {
  block_table,
  renewal,
  speed,
  lyapunov,
  derivative,
  diagnostics,
  counterexample,
  multid_scan,
  cube_stats,
};

inline std::string to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::block_table: return "block_table";
    case ExperimentKind::renewal: return "renewal";
    case ExperimentKind::speed: return "speed";
    case ExperimentKind::lyapunov: return "lyapunov";
    case ExperimentKind::derivative: return "derivative";
    case ExperimentKind::diagnostics: return "diagnostics";
    case ExperimentKind::counterexample: return "counterexample";
    case ExperimentKind::multid_scan: return "multid_scan";
    case ExperimentKind::cube_stats: return "cube_stats";
  }
  return "unknown";
}

inline ExperimentKind parse_kind(const std::string& s) {
  for (auto k : {ExperimentKind::block_table, ExperimentKind::renewal, ExperimentKind::speed,
                 ExperimentKind::lyapunov, ExperimentKind::derivative, ExperimentKind::diagnostics,
                 ExperimentKind::counterexample, ExperimentKind::multid_scan, ExperimentKind::cube_stats})
    if (to_string(k) == s) return k;
  throw ConfigError("unknown experiment kind '" + s + "'");
}

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::renewal;
  std::vector<Atom> atoms;
  double lambda = 0.0;
  std::uint64_t master_seed = 0;
  std::uint64_t n_envs = 1000;
  unsigned workers = 1;
  std::string out_dir;

  // Block tables and the renewal kernel.
  std::int64_t R = 14;
  std::string mode = "exact";  // exact | mc
  /// Cap on k^R for exact enumeration.
  double enumeration_budget = 1e7;

  // Window solves.
  std::int64_t y = 200;
  std::vector<std::int64_t> ys;
  std::int64_t window = 16;
  double window_tol = 1e-10;
  bool window_adaptive = true;
  bool open_paths = false;
  /// Exponential tilt of the site law inside the window; NaN means "auto"
  /// (pilot search over a grid, see choose_tilt).
  double tilt = 0.0;
  std::uint64_t pilot_envs = 200;

  // Exponent curve.
  std::vector<double> lambdas;

  // Diagnostics.
  std::int64_t z = 5;
  std::int64_t x = 10;
  std::int64_t m_max = 8;
  std::uint64_t bias_envs = 20;
  std::uint64_t paths_per_env = 2000;
  std::uint64_t n_paths = 2000;
  std::uint64_t pool = 2000;
  std::int64_t geometric_y = 5;
  std::int64_t geometric_z = -3;
  double p_zero = 0.9;

  // d = 2.
  std::vector<std::int64_t> direction{1, 0};
  std::vector<std::int64_t> ks;
  double margin = 2.0;
  std::int64_t L = 4;
  double kappa = 1.0;
  std::int64_t cubes_per_side = 32;
  std::uint64_t min_count = 1;

  /// Parsed text, echoed into the summary for provenance.
  nlohmann::ordered_json raw;

  PotentialDistribution distribution() const { return make_distribution(atoms, lambda); }
  WindowPolicy window_policy() const;
};

}  // namespace crossing

#include "crossing/quenched1d.hpp"

namespace crossing {

inline WindowPolicy ExperimentConfig::window_policy() const {
  WindowPolicy p;
  p.initial = window;
  p.tol = window_tol;
  p.adaptive = window_adaptive;
  return p;
}

namespace detail {

inline double as_number(const nlohmann::ordered_json& v, const std::string& key) {
  if (!v.is_number()) throw ConfigError("'" + key + "' must be a number");
  return v.get<double>();
}

inline std::int64_t as_int(const nlohmann::ordered_json& v, const std::string& key) {
  if (!v.is_number_integer()) throw ConfigError("'" + key + "' must be an integer");
  return v.get<std::int64_t>();
}

inline std::uint64_t as_count(const nlohmann::ordered_json& v, const std::string& key) {
  const auto i = as_int(v, key);
  if (i < 0) throw ConfigError("'" + key + "' must be nonnegative");
  return static_cast<std::uint64_t>(i);
}

inline std::vector<std::int64_t> as_int_list(const nlohmann::ordered_json& v, const std::string& key) {
  if (!v.is_array()) throw ConfigError("'" + key + "' must be an array");
  std::vector<std::int64_t> out;
  for (const auto& e : v) out.push_back(as_int(e, key));
  return out;
}

}  // namespace detail

inline ExperimentConfig config_from_json(const nlohmann::ordered_json& j) {
  using namespace detail;
  static const std::set<std::string> known{
      "schema", "kind", "atoms", "lambda", "master_seed", "n_envs", "workers", "out", "R", "mode", "enumeration_budget", "y", "ys",
      "window", "window_tol", "window_adaptive", "open_paths", "tilt", "pilot_envs", "lambdas", "z", "x", "m_max", "bias_envs", "paths_per_env",
      "n_paths", "pool", "geometric_y", "geometric_z", "p_zero", "direction", "ks", "margin", "L", "kappa",
      "cubes_per_side", "min_count"};
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) throw ConfigError("unknown key '" + key + "'");
  if (!j.contains("schema") || !j["schema"].is_number_integer() || j["schema"].get<int>() != 1)
    throw ConfigError("config must declare schema = 1");
  if (!j.contains("kind") || !j["kind"].is_string()) throw ConfigError("missing experiment kind");
  if (!j.contains("master_seed")) throw ConfigError("master_seed is required (seeds are never defaulted)");

  ExperimentConfig c;
  c.raw = j;
  c.kind = parse_kind(j["kind"].get<std::string>());
  c.master_seed = as_count(j["master_seed"], "master_seed");
  if (c.kind != ExperimentKind::counterexample || j.contains("atoms")) {
    if (!j.contains("atoms") || !j["atoms"].is_array()) throw ConfigError("'atoms' must be an array of [value, prob]");
    for (const auto& a : j["atoms"]) {
      if (!a.is_array() || a.size() != 2) throw ConfigError("each atom must be [value, prob]");
      c.atoms.push_back({as_number(a[0], "atoms"), as_number(a[1], "atoms")});
    }
  }
  if (j.contains("lambda")) c.lambda = as_number(j["lambda"], "lambda");
  if (j.contains("n_envs")) c.n_envs = as_count(j["n_envs"], "n_envs");
  if (j.contains("workers")) c.workers = static_cast<unsigned>(std::max<std::uint64_t>(1, as_count(j["workers"], "workers")));
  if (j.contains("out")) {
    if (!j["out"].is_string()) throw ConfigError("'out' must be a string");
    c.out_dir = j["out"].get<std::string>();
  }
  if (j.contains("R")) c.R = as_int(j["R"], "R");
  if (j.contains("mode")) {
    if (!j["mode"].is_string()) throw ConfigError("'mode' must be a string");
    c.mode = j["mode"].get<std::string>();
    if (c.mode != "exact" && c.mode != "mc") throw ConfigError("mode must be \"exact\" or \"mc\"");
  }
  if (!j.contains("R") && c.mode == "mc") c.R = 64;
  if (j.contains("enumeration_budget")) c.enumeration_budget = as_number(j["enumeration_budget"], "enumeration_budget");
  if (j.contains("y")) c.y = as_int(j["y"], "y");
  if (j.contains("ys")) c.ys = as_int_list(j["ys"], "ys");
  if (j.contains("window")) c.window = as_int(j["window"], "window");
  if (j.contains("window_tol")) c.window_tol = as_number(j["window_tol"], "window_tol");
  if (j.contains("window_adaptive")) {
    if (!j["window_adaptive"].is_boolean()) throw ConfigError("'window_adaptive' must be true or false");
    c.window_adaptive = j["window_adaptive"].get<bool>();
  }
  if (j.contains("open_paths")) {
    if (!j["open_paths"].is_boolean()) throw ConfigError("'open_paths' must be true or false");
    c.open_paths = j["open_paths"].get<bool>();
  }
  if (j.contains("tilt")) {
    const auto& t = j["tilt"];
    if (t.is_string() && t.get<std::string>() == "auto")
      c.tilt = std::numeric_limits<double>::quiet_NaN();
    else if (t.is_number() && t.get<double>() >= 0.0 && std::isfinite(t.get<double>()))
      c.tilt = t.get<double>();
    else
      throw ConfigError("'tilt' must be a finite nonnegative number or \"auto\"");
  }
  if (j.contains("pilot_envs")) c.pilot_envs = as_count(j["pilot_envs"], "pilot_envs");
  if (j.contains("lambdas")) {
    if (!j["lambdas"].is_array()) throw ConfigError("'lambdas' must be an array");
    for (const auto& v : j["lambdas"]) c.lambdas.push_back(as_number(v, "lambdas"));
  }
  if (j.contains("z")) c.z = as_int(j["z"], "z");
  if (j.contains("x")) c.x = as_int(j["x"], "x");
  if (j.contains("m_max")) c.m_max = as_int(j["m_max"], "m_max");
  if (j.contains("bias_envs")) c.bias_envs = as_count(j["bias_envs"], "bias_envs");
  if (j.contains("paths_per_env")) c.paths_per_env = as_count(j["paths_per_env"], "paths_per_env");
  if (j.contains("n_paths")) c.n_paths = as_count(j["n_paths"], "n_paths");
  if (j.contains("pool")) c.pool = as_count(j["pool"], "pool");
  if (j.contains("geometric_y")) c.geometric_y = as_int(j["geometric_y"], "geometric_y");
  if (j.contains("geometric_z")) c.geometric_z = as_int(j["geometric_z"], "geometric_z");
  if (j.contains("p_zero")) c.p_zero = as_number(j["p_zero"], "p_zero");
  if (j.contains("direction")) c.direction = as_int_list(j["direction"], "direction");
  if (j.contains("ks")) c.ks = as_int_list(j["ks"], "ks");
  if (j.contains("margin")) c.margin = as_number(j["margin"], "margin");
  if (j.contains("L")) c.L = as_int(j["L"], "L");
  if (j.contains("kappa")) c.kappa = as_number(j["kappa"], "kappa");
  if (j.contains("cubes_per_side")) c.cubes_per_side = as_int(j["cubes_per_side"], "cubes_per_side");
  if (j.contains("min_count")) c.min_count = as_count(j["min_count"], "min_count");

  // Guards.
  if (!c.atoms.empty()) {
    (void)c.distribution();  // throws InvalidDistribution
    // The library renormalizes; a literal in a file must already be a law.
    double total = 0.0;
    for (const auto& a : c.atoms) total += a.prob;
    if (std::abs(total - 1.0) > 1e-12)
      throw InvalidDistribution("atom probabilities in a config must sum to 1 (got " + std::to_string(total) + ")");
  }
  if (c.R < 1) throw ConfigError("R must be >= 1");
  if (c.n_envs < 2) throw ConfigError("n_envs must be >= 2");
  if (c.y < 1) throw ConfigError("y must be >= 1");
  if (c.window < 1) throw ConfigError("window must be >= 1");
  if (!(c.enumeration_budget >= 1.0)) throw ConfigError("enumeration_budget must be >= 1");
  if (c.pilot_envs < 2) throw ConfigError("pilot_envs must be >= 2");
  if (!(c.window_tol > 0.0)) throw ConfigError("window_tol must be positive");
  for (auto v : c.ys)
    if (v < 1) throw ConfigError("ys entries must be >= 1");
  if (c.direction.size() != 2) throw ConfigError("direction must have two components");
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return config_from_json(parse_config_text(buf.str()));
}

}  // namespace crossing
