#pragma once
// Summation, Monte Carlo estimators and small fits shared by the modules.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

namespace crossing {

/// Neumaier compensated sum.
class CompensatedSum {
 public:
  void add(double x) noexcept {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x))
      comp_ += (sum_ - t) + x;
    else
      comp_ += (x - t) + sum_;
    sum_ = t;
  }
  double value() const noexcept { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

struct McEstimate {
  double mean = 0.0;
  double stderr_ = 0.0;
  std::uint64_t n_samples = 0;
  std::uint64_t master_seed = 0;
};

struct MeanStderr {
  double mean;
  double stderr_;
};

inline MeanStderr mean_stderr(std::span<const double> xs) {
  const auto n = xs.size();
  if (n == 0) throw std::invalid_argument("mean_stderr: no samples");
  CompensatedSum s;
  for (double x : xs) s.add(x);
  const double mean = s.value() / static_cast<double>(n);
  if (n == 1) return {mean, 0.0};
  CompensatedSum ss;
  for (double x : xs) ss.add((x - mean) * (x - mean));
  const double var = ss.value() / static_cast<double>(n - 1);
  return {mean, std::sqrt(var / static_cast<double>(n))};
}

/// Ratio of means sum(num)/sum(den) with first-order delta-method stderr.
inline MeanStderr ratio_of_means(std::span<const double> num, std::span<const double> den) {
  if (num.size() != den.size() || num.empty())
    throw std::invalid_argument("ratio_of_means: size mismatch");
  const auto n = num.size();
  CompensatedSum sn, sd;
  for (std::size_t i = 0; i < n; ++i) {
    sn.add(num[i]);
    sd.add(den[i]);
  }
  const double mean_den = sd.value() / static_cast<double>(n);
  if (!(mean_den > 0.0)) throw std::domain_error("ratio_of_means: zero denominator");
  const double ratio = sn.value() / sd.value();
  if (n == 1) return {ratio, 0.0};
  CompensatedSum ss;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = num[i] - ratio * den[i];
    ss.add(d * d);
  }
  const double var = ss.value() / static_cast<double>(n - 1);
  return {ratio, std::sqrt(var / static_cast<double>(n)) / mean_den};
}

/// log(mean(exp(log_values))) without overflow; -inf entries are zeros.
inline double log_mean_exp(std::span<const double> log_values) {
  if (log_values.empty()) throw std::invalid_argument("log_mean_exp: no samples");
  double top = -std::numeric_limits<double>::infinity();
  for (double v : log_values) top = std::max(top, v);
  if (!std::isfinite(top)) return top;
  CompensatedSum s;
  for (double v : log_values) s.add(std::exp(v - top));
  return top + std::log(s.value() / static_cast<double>(log_values.size()));
}

/// Kish effective sample size of weights given in log space.
inline double effective_sample_size(std::span<const double> log_weights) {
  double top = -std::numeric_limits<double>::infinity();
  for (double v : log_weights) top = std::max(top, v);
  if (!std::isfinite(top)) return 0.0;
  CompensatedSum s1, s2;
  for (double v : log_weights) {
    const double w = std::exp(v - top);
    s1.add(w);
    s2.add(w * w);
  }
  return s1.value() * s1.value() / s2.value();
}

/// Delete-one jackknife of f(log mean exp) where the statistic is
/// theta = scale * log(mean(exp(log_values))).
inline MeanStderr jackknife_log_mean(std::span<const double> log_values, double scale) {
  const auto n = log_values.size();
  if (n < 2) throw std::invalid_argument("jackknife_log_mean: need at least two samples");
  double top = -std::numeric_limits<double>::infinity();
  for (double v : log_values) top = std::max(top, v);
  if (!std::isfinite(top)) throw std::domain_error("jackknife_log_mean: all samples are zero");
  std::vector<double> scaled(n);
  CompensatedSum s;
  for (std::size_t i = 0; i < n; ++i) {
    scaled[i] = std::exp(log_values[i] - top);
    s.add(scaled[i]);
  }
  const double total = s.value();
  const double full = scale * (top + std::log(total / static_cast<double>(n)));
  std::vector<double> loo(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double rest = total - scaled[i];
    loo[i] = rest > 0.0 ? scale * (top + std::log(rest / static_cast<double>(n - 1)))
                        : std::numeric_limits<double>::infinity();
  }
  CompensatedSum lm;
  for (double v : loo) lm.add(v);
  const double loo_mean = lm.value() / static_cast<double>(n);
  CompensatedSum ss;
  for (double v : loo) ss.add((v - loo_mean) * (v - loo_mean));
  const double se = std::sqrt(static_cast<double>(n - 1) / static_cast<double>(n) * ss.value());
  return {full, se};
}

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double residual_rms = 0.0;
  std::size_t n = 0;
};

/// Ordinary least squares y = intercept + slope * x.
inline LineFit fit_line(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("fit_line: need >= 2 points");
  const auto n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (!(sxx > 0.0)) throw std::invalid_argument("fit_line: degenerate abscissae");
  LineFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  double rss = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = y[i] - (fit.intercept + fit.slope * x[i]);
    rss += r * r;
  }
  fit.residual_rms = std::sqrt(rss / n);
  fit.n = x.size();
  return fit;
}

}  // namespace crossing
