#pragma once

// Censoring-aware statistics over output-length data.

#include <algorithm>
#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "compressbench/error.hpp"
#include "compressbench/rng.hpp"
#include "compressbench/trial_engine.hpp"

namespace compressbench {

struct CellSummary {
  CellKey cell;
  std::size_t n_obs = 0;
  double mean_tout = 0.0;
  double sd = 0.0;  // n-1 denominator
  double cv = 0.0;
  double ceiling_fraction = 0.0;
  std::optional<double> pass1_rate;
  double mean_tin = 0.0;
};

// Throws kEmptyCell for no records, kInvalidArgument for mixed cells.
CellSummary summarize_cell(std::span<const TrialRecord> records);
// One summary per cell, ordered by CellKey.
std::vector<CellSummary> summarize_cells(std::span<const TrialRecord> records);

double sample_mean(std::span<const double> values);
// n-1 denominator; 0 for a single value.
double sample_sd(std::span<const double> values);

struct WelchResult {
  double t_statistic = 0.0;
  double degrees_of_freedom = 0.0;
  double p_value = 1.0;  // two-sided
  bool degenerate = false;
};

// Welch's unequal-variance t-test. Both samples need >= 2 observations
// (kInsufficientData). Zero variance on both sides is reported with the
// degenerate flag: t = 0, p = 1 for equal means, t = +-inf, p = 0 otherwise.
WelchResult welch_t(std::span<const double> a, std::span<const double> b);

struct BootstrapOptions {
  std::size_t resamples = 10000;
  double level = 0.95;
  std::uint64_t seed = 0;
  // 0 = hardware concurrency. Results don't depend on the thread count.
  std::size_t threads = 0;
};

struct BootstrapCI {
  double statistic = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  double level = 0.95;
  std::size_t resamples = 0;
  std::uint64_t seed = 0;
  double bias_correction = 0.0;  // z0
  double acceleration = 0.0;     // a
  // Every resample gave the same value; the interval collapsed to a point.
  bool degenerate = false;
};

// Type-7 (linear interpolation) quantile of sorted values.
double sorted_quantile(std::span<const double> sorted, double q);
// Jackknife acceleration from leave-one-out statistics.
double jackknife_acceleration(std::span<const double> leave_one_out);
// BCa bounds for sorted bootstrap replicates; z0 = a = 0 gives the
// percentile interval.
std::array<double, 2> bca_bounds(std::span<const double> sorted_replicates, double z0,
                                 double acceleration, double level);
std::array<double, 2> percentile_bounds(std::span<const double> sorted_replicates,
                                        double level);
// z0 from the share of replicates below the point estimate (ties count half).
double bias_correction(std::span<const double> replicates, double statistic);

namespace detail {
void check_bootstrap_inputs(std::size_t n, const BootstrapOptions& options);
BootstrapCI finish_bca(double statistic, std::vector<double> replicates,
                       std::span<const double> leave_one_out,
                       const BootstrapOptions& options);
}  // namespace detail

// Bias-corrected and accelerated bootstrap interval. Resample b draws from
// its own substream substream_seed(seed, b), so results are identical for
// any thread count.
template <typename T, typename Statistic>
BootstrapCI bootstrap_bca(std::span<const T> sample, Statistic&& statistic,
                          const BootstrapOptions& options = {}) {
  detail::check_bootstrap_inputs(sample.size(), options);
  const std::size_t n = sample.size();
  const double estimate = statistic(sample);

  std::vector<double> replicates(options.resamples);
  auto fill = [&](std::size_t begin, std::size_t end) {
    std::vector<T> resample(n);
    for (std::size_t b = begin; b < end; ++b) {
      Rng rng(substream_seed(options.seed, b));
      std::uniform_int_distribution<std::size_t> pick(0, n - 1);
      for (auto& x : resample) x = sample[pick(rng)];
      replicates[b] = statistic(std::span<const T>(resample));
    }
  };
  std::size_t threads = options.threads != 0 ? options.threads
                                             : std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, std::max<std::size_t>(1, options.resamples / 256));
  if (threads <= 1) {
    fill(0, options.resamples);
  } else {
    std::vector<std::jthread> pool;
    const std::size_t chunk = (options.resamples + threads - 1) / threads;
    for (std::size_t t = 0; t < threads; ++t) {
      const std::size_t begin = t * chunk;
      const std::size_t end = std::min(options.resamples, begin + chunk);
      if (begin < end) pool.emplace_back(fill, begin, end);
    }
  }

  std::vector<double> leave_one_out(n);
  std::vector<T> reduced(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy(sample.begin(), sample.begin() + static_cast<std::ptrdiff_t>(i), reduced.begin());
    std::copy(sample.begin() + static_cast<std::ptrdiff_t>(i) + 1, sample.end(),
              reduced.begin() + static_cast<std::ptrdiff_t>(i));
    leave_one_out[i] = statistic(std::span<const T>(reduced));
  }
  return detail::finish_bca(estimate, std::move(replicates), leave_one_out, options);
}

BootstrapCI bootstrap_mean_bca(std::span<const double> sample,
                               const BootstrapOptions& options = {});

struct TobitFit {
  double mu = 0.0;
  double sigma = 0.0;
  double ceiling = 0.0;
  double censored_fraction = 0.0;
  double log_likelihood = 0.0;
  double standardized_bound = 0.0;  // (ceiling - mu) / sigma
  std::size_t iterations = 0;
  // No censored points: closed-form normal MLE was returned.
  bool uncensored_fallback = false;
};

struct TobitOptions {
  // On the per-observation gradient in (sigma * d/dmu, d/dlog sigma).
  double gradient_tolerance = 1e-8;
  std::size_t max_iterations = 500;
};

class TobitConvergenceError : public Error {
 public:
  TobitConvergenceError(const std::string& message, std::vector<std::string> trace)
      : Error(ErrorCode::kConvergenceFailure, message), trace_(std::move(trace)) {}
  const std::vector<std::string>& trace() const noexcept { return trace_; }

 private:
  std::vector<std::string> trace_;
};

// Right-censored normal log-likelihood; observations equal to the ceiling
// count as censored.
double tobit_log_likelihood(std::span<const double> y, double ceiling, double mu,
                            double sigma);
// Gradient of the log-likelihood with respect to (mu, log sigma).
std::array<double, 2> tobit_gradient(std::span<const double> y, double ceiling, double mu,
                                     double sigma);

// Maximum-likelihood censored-normal fit. Needs >= 5 uncensored points
// (kInsufficientData); all-censored input is kUnidentifiable; values above
// the ceiling are kInvalidArgument.
TobitFit tobit_fit(std::span<const double> y, double ceiling, const TobitOptions& options = {});

// E[T | T < c] for T ~ N(mu, sigma^2): mu - sigma * phi(a) / Phi(a) with
// a = (c - mu) / sigma. c = +inf gives mu.
double truncated_mean(double mu, double sigma, double ceiling);

struct ThresholdPoint {
  double psi = 0.0;
  double mean_tout = 0.0;
};

// Continuous two-piece linear fit with a break at tau:
//   y = intercept + slope_low * x                             (x <= tau)
//   y = intercept + slope_low * tau + slope_high * (x - tau)  (x >  tau)
struct ThresholdFit {
  double tau = 0.0;
  double intercept = 0.0;
  double slope_low = 0.0;
  double slope_high = 0.0;
  double rss = 0.0;
  bool degenerate_break = false;  // both slopes equal
  std::size_t candidates = 0;

  double predict(double psi) const noexcept;
};

// Grid search over observed Psi values and midpoints between neighbours,
// keeping candidates in (0, 1) with >= 2 distinct Psi values on each side
// (counting tau itself). Least squares per candidate, minimal RSS wins, ties
// go to the smaller tau. Needs >= 4 points (kInsufficientData); no valid
// candidate is kNoBreakpoint.
ThresholdFit fit_threshold_model(std::span<const ThresholdPoint> points);

}  // namespace compressbench
