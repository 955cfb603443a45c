#include "compressbench/stats.hpp"

#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <set>

#include <Eigen/Dense>
#include <boost/math/distributions/students_t.hpp>
#include <fmt/format.h>

#include "compressbench/normal.hpp"

namespace compressbench {

// ---------------------------------------------------------------------------
// Cell summaries

double sample_mean(std::span<const double> values) {
  if (values.empty()) throw Error(ErrorCode::kInsufficientData, "mean of empty sample");
  return std::accumulate(values.begin(), values.end(), 0.0) /
         static_cast<double>(values.size());
}

double sample_sd(std::span<const double> values) {
  if (values.size() < 2) return 0.0;
  const double mean = sample_mean(values);
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / static_cast<double>(values.size() - 1));
}

CellSummary summarize_cell(std::span<const TrialRecord> records) {
  if (records.empty()) throw Error(ErrorCode::kEmptyCell, "no records for cell");
  CellSummary summary;
  summary.cell = records.front().cell();
  std::vector<double> outputs;
  outputs.reserve(records.size());
  double tin = 0.0;
  std::size_t ceiling = 0;
  std::size_t graded = 0;
  std::size_t passed = 0;
  for (const auto& r : records) {
    if (!(r.cell() == summary.cell)) {
      throw Error(ErrorCode::kInvalidArgument, "summarize_cell got records from several cells");
    }
    outputs.push_back(r.output_tokens);
    tin += r.input_tokens;
    ceiling += r.hit_ceiling ? 1 : 0;
    if (r.pass1) {
      ++graded;
      passed += *r.pass1 ? 1 : 0;
    }
  }
  const double n = static_cast<double>(records.size());
  summary.n_obs = records.size();
  summary.mean_tout = sample_mean(outputs);
  summary.sd = sample_sd(outputs);
  if (summary.mean_tout > 0.0) {
    summary.cv = summary.sd / summary.mean_tout;
  } else {
    summary.cv = summary.sd == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  }
  summary.ceiling_fraction = static_cast<double>(ceiling) / n;
  if (graded > 0) summary.pass1_rate = static_cast<double>(passed) / static_cast<double>(graded);
  summary.mean_tin = tin / n;
  return summary;
}

std::vector<CellSummary> summarize_cells(std::span<const TrialRecord> records) {
  std::map<CellKey, std::vector<TrialRecord>> groups;
  for (const auto& r : records) groups[r.cell()].push_back(r);
  std::vector<CellSummary> out;
  out.reserve(groups.size());
  for (const auto& [key, group] : groups) out.push_back(summarize_cell(group));
  return out;
}

// ---------------------------------------------------------------------------
// Welch

WelchResult welch_t(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) {
    throw Error(ErrorCode::kInsufficientData, "Welch's t-test needs >= 2 observations per sample");
  }
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  const double mean_a = sample_mean(a);
  const double mean_b = sample_mean(b);
  const double sd_a = sample_sd(a);
  const double sd_b = sample_sd(b);
  const double va = sd_a * sd_a / na;
  const double vb = sd_b * sd_b / nb;
  const double se2 = va + vb;

  WelchResult result;
  if (se2 == 0.0) {
    result.degenerate = true;
    result.degrees_of_freedom = na + nb - 2.0;
    if (mean_a == mean_b) {
      result.t_statistic = 0.0;
      result.p_value = 1.0;
    } else {
      result.t_statistic = mean_a > mean_b ? std::numeric_limits<double>::infinity()
                                           : -std::numeric_limits<double>::infinity();
      result.p_value = 0.0;
    }
    return result;
  }
  result.t_statistic = (mean_a - mean_b) / std::sqrt(se2);
  result.degrees_of_freedom = se2 * se2 / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
  const boost::math::students_t dist(result.degrees_of_freedom);
  result.p_value = std::min(
      1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(result.t_statistic))));
  return result;
}

// ---------------------------------------------------------------------------
// Bootstrap

double sorted_quantile(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw Error(ErrorCode::kInsufficientData, "quantile of empty sample");
  q = std::clamp(q, 0.0, 1.0);
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

double jackknife_acceleration(std::span<const double> leave_one_out) {
  if (leave_one_out.empty()) return 0.0;
  const double mean = sample_mean(leave_one_out);
  double s2 = 0.0;
  double s3 = 0.0;
  for (double v : leave_one_out) {
    const double d = mean - v;
    s2 += d * d;
    s3 += d * d * d;
  }
  if (s2 == 0.0) return 0.0;
  return s3 / (6.0 * std::pow(s2, 1.5));
}

std::array<double, 2> bca_bounds(std::span<const double> sorted_replicates, double z0,
                                 double acceleration, double level) {
  const double z_lo = normal::quantile((1.0 - level) / 2.0);
  const double z_hi = normal::quantile((1.0 + level) / 2.0);
  auto adjust = [&](double z) {
    const double shifted = z0 + z;
    return normal::cdf(z0 + shifted / (1.0 - acceleration * shifted));
  };
  double lower = sorted_quantile(sorted_replicates, adjust(z_lo));
  double upper = sorted_quantile(sorted_replicates, adjust(z_hi));
  if (lower > upper) std::swap(lower, upper);
  return {lower, upper};
}

std::array<double, 2> percentile_bounds(std::span<const double> sorted_replicates,
                                        double level) {
  return {sorted_quantile(sorted_replicates, (1.0 - level) / 2.0),
          sorted_quantile(sorted_replicates, (1.0 + level) / 2.0)};
}

double bias_correction(std::span<const double> replicates, double statistic) {
  double below = 0.0;
  for (double v : replicates) {
    if (v < statistic) {
      below += 1.0;
    } else if (v == statistic) {
      below += 0.5;
    }
  }
  const double b = static_cast<double>(replicates.size());
  const double share = std::clamp(below / b, 0.5 / b, 1.0 - 0.5 / b);
  return normal::quantile(share);
}

namespace detail {

void check_bootstrap_inputs(std::size_t n, const BootstrapOptions& options) {
  if (n < 2) throw Error(ErrorCode::kInsufficientData, "bootstrap needs >= 2 observations");
  if (options.resamples < 100) {
    throw Error(ErrorCode::kInvalidArgument, "bootstrap needs >= 100 resamples");
  }
  if (!(options.level > 0.0 && options.level < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "confidence level must lie in (0, 1)");
  }
}

BootstrapCI finish_bca(double statistic, std::vector<double> replicates,
                       std::span<const double> leave_one_out,
                       const BootstrapOptions& options) {
  BootstrapCI ci;
  ci.statistic = statistic;
  ci.level = options.level;
  ci.resamples = options.resamples;
  ci.seed = options.seed;
  const auto [min_it, max_it] = std::minmax_element(replicates.begin(), replicates.end());
  if (*min_it == *max_it) {
    ci.degenerate = true;
    ci.lower = ci.upper = statistic;
    return ci;
  }
  ci.bias_correction = bias_correction(replicates, statistic);
  ci.acceleration = jackknife_acceleration(leave_one_out);
  std::sort(replicates.begin(), replicates.end());
  const auto bounds = bca_bounds(replicates, ci.bias_correction, ci.acceleration, options.level);
  ci.lower = bounds[0];
  ci.upper = bounds[1];
  return ci;
}

}  // namespace detail

BootstrapCI bootstrap_mean_bca(std::span<const double> sample, const BootstrapOptions& options) {
  return bootstrap_bca(sample, [](std::span<const double> s) { return sample_mean(s); },
                       options);
}

// ---------------------------------------------------------------------------
// Tobit

namespace {

struct CensoredSample {
  std::vector<double> uncensored;
  std::size_t censored = 0;
};

CensoredSample split_censored(std::span<const double> y, double ceiling) {
  CensoredSample out;
  for (double v : y) {
    if (!std::isfinite(v)) throw Error(ErrorCode::kInvalidArgument, "non-finite observation");
    if (v > ceiling) {
      throw Error(ErrorCode::kInvalidArgument,
                  fmt::format("observation {} exceeds the ceiling {}", v, ceiling));
    }
    if (v == ceiling) {
      ++out.censored;
    } else {
      out.uncensored.push_back(v);
    }
  }
  return out;
}

struct TobitEval {
  double loglik = 0.0;
  std::array<double, 2> grad{};                  // d/dmu, d/ds  (s = log sigma)
  std::array<std::array<double, 2>, 2> hess{};
};

TobitEval tobit_eval(const CensoredSample& data, double ceiling, double mu, double sigma) {
  constexpr double kLogSqrt2Pi = 0.91893853320467274178;
  TobitEval e;
  const double inv_sigma = 1.0 / sigma;
  const double log_sigma = std::log(sigma);
  for (double v : data.uncensored) {
    const double z = (v - mu) * inv_sigma;
    e.loglik += -log_sigma - kLogSqrt2Pi - 0.5 * z * z;
    e.grad[0] += z * inv_sigma;
    e.grad[1] += z * z - 1.0;
    e.hess[0][0] += -inv_sigma * inv_sigma;
    e.hess[0][1] += -2.0 * z * inv_sigma;
    e.hess[1][1] += -2.0 * z * z;
  }
  if (data.censored > 0) {
    const double n_c = static_cast<double>(data.censored);
    const double alpha = (ceiling - mu) * inv_sigma;
    // hazard phi(alpha) / (1 - Phi(alpha)) = inverse Mills ratio at -alpha
    const double lambda = normal::inverse_mills(-alpha);
    const double dlambda = lambda * (lambda - alpha);
    e.loglik += n_c * normal::log_cdf(-alpha);
    e.grad[0] += n_c * lambda * inv_sigma;
    e.grad[1] += n_c * lambda * alpha;
    e.hess[0][0] += -n_c * dlambda * inv_sigma * inv_sigma;
    e.hess[0][1] += -n_c * (dlambda * alpha + lambda) * inv_sigma;
    e.hess[1][1] += -n_c * alpha * (dlambda * alpha + lambda);
  }
  e.hess[1][0] = e.hess[0][1];
  return e;
}

double scaled_gradient_norm(const TobitEval& e, double sigma, double n) {
  const double g_mu = e.grad[0] * sigma / n;
  const double g_s = e.grad[1] / n;
  return std::hypot(g_mu, g_s);
}

}  // namespace

double tobit_log_likelihood(std::span<const double> y, double ceiling, double mu,
                            double sigma) {
  if (!(sigma > 0.0)) throw Error(ErrorCode::kInvalidArgument, "sigma must be > 0");
  return tobit_eval(split_censored(y, ceiling), ceiling, mu, sigma).loglik;
}

std::array<double, 2> tobit_gradient(std::span<const double> y, double ceiling, double mu,
                                     double sigma) {
  if (!(sigma > 0.0)) throw Error(ErrorCode::kInvalidArgument, "sigma must be > 0");
  return tobit_eval(split_censored(y, ceiling), ceiling, mu, sigma).grad;
}

TobitFit tobit_fit(std::span<const double> y, double ceiling, const TobitOptions& options) {
  const CensoredSample data = split_censored(y, ceiling);
  if (data.uncensored.empty() && data.censored > 0) {
    throw Error(ErrorCode::kUnidentifiable, "every observation sits at the ceiling");
  }
  if (data.uncensored.size() < 5) {
    throw Error(ErrorCode::kInsufficientData, "Tobit fit needs >= 5 uncensored observations");
  }
  const double n = static_cast<double>(y.size());
  TobitFit fit;
  fit.ceiling = ceiling;
  fit.censored_fraction = static_cast<double>(data.censored) / n;

  const double mean_u = sample_mean(data.uncensored);
  double ss = 0.0;
  for (double v : data.uncensored) ss += (v - mean_u) * (v - mean_u);
  const double mle_sd = std::sqrt(ss / static_cast<double>(data.uncensored.size()));

  if (data.censored == 0) {
    if (!(mle_sd > 0.0)) {
      throw Error(ErrorCode::kUnidentifiable, "uncensored sample has zero variance");
    }
    fit.mu = mean_u;
    fit.sigma = mle_sd;
    fit.uncensored_fallback = true;
    fit.log_likelihood = tobit_eval(data, ceiling, fit.mu, fit.sigma).loglik;
    fit.standardized_bound = (ceiling - fit.mu) / fit.sigma;
    return fit;
  }

  // Start above the uncensored mean in proportion to the censored share.
  double mu = mean_u * (1.0 + fit.censored_fraction);
  double log_sigma = std::log(mle_sd > 0.0 ? mle_sd : std::max(1.0, std::abs(ceiling - mean_u)));
  std::vector<std::string> trace;

  TobitEval current = tobit_eval(data, ceiling, mu, std::exp(log_sigma));
  for (std::size_t iter = 0; iter < options.max_iterations; ++iter) {
    const double sigma = std::exp(log_sigma);
    const double gnorm = scaled_gradient_norm(current, sigma, n);
    trace.push_back(fmt::format("iter={} mu={:.10g} sigma={:.10g} loglik={:.12g} grad={:.3e}",
                                iter, mu, sigma, current.loglik, gnorm));
    if (gnorm < options.gradient_tolerance) {
      fit.mu = mu;
      fit.sigma = sigma;
      fit.log_likelihood = current.loglik;
      fit.standardized_bound = (ceiling - mu) / sigma;
      fit.iterations = iter;
      return fit;
    }

    // Newton direction when the Hessian is negative definite, else steepest
    // ascent in standardized coordinates.
    const auto& h = current.hess;
    const double det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
    std::array<double, 2> step{};
    if (h[0][0] < 0.0 && det > 0.0) {
      step[0] = -(h[1][1] * current.grad[0] - h[0][1] * current.grad[1]) / det;
      step[1] = -(-h[1][0] * current.grad[0] + h[0][0] * current.grad[1]) / det;
    } else {
      step[0] = current.grad[0] * sigma * sigma / n;
      step[1] = current.grad[1] / n;
    }
    // Keep each step within a sane range of the current scale.
    const double limit = std::max(std::abs(step[0]) / (10.0 * sigma), std::abs(step[1]) / 2.0);
    if (limit > 1.0) {
      step[0] /= limit;
      step[1] /= limit;
    }

    bool accepted = false;
    double scale = 1.0;
    for (int halving = 0; halving < 60; ++halving, scale *= 0.5) {
      const double mu_next = mu + scale * step[0];
      const double ls_next = log_sigma + scale * step[1];
      const TobitEval next = tobit_eval(data, ceiling, mu_next, std::exp(ls_next));
      if (std::isfinite(next.loglik) &&
          next.loglik >= current.loglik - 1e-12 * std::abs(current.loglik)) {
        mu = mu_next;
        log_sigma = ls_next;
        current = next;
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      throw TobitConvergenceError(
          fmt::format("Tobit line search stalled at mu={} sigma={} (gradient {:.3e})", mu,
                      std::exp(log_sigma), gnorm),
          std::move(trace));
    }
  }
  throw TobitConvergenceError(
      fmt::format("Tobit fit did not converge in {} iterations", options.max_iterations),
      std::move(trace));
}

double truncated_mean(double mu, double sigma, double ceiling) {
  if (!(sigma > 0.0)) throw Error(ErrorCode::kInvalidArgument, "sigma must be > 0");
  if (std::isnan(ceiling) || ceiling == -std::numeric_limits<double>::infinity()) {
    throw Error(ErrorCode::kInvalidArgument, "ceiling must be > -inf");
  }
  if (ceiling == std::numeric_limits<double>::infinity()) return mu;
  const double alpha = (ceiling - mu) / sigma;
  return mu - sigma * normal::inverse_mills(alpha);
}

// ---------------------------------------------------------------------------
// Threshold model

double ThresholdFit::predict(double psi) const noexcept {
  if (psi <= tau) return intercept + slope_low * psi;
  return intercept + slope_low * tau + slope_high * (psi - tau);
}

namespace {

struct HingeSolution {
  double intercept, slope_low, slope_high, rss;
};

HingeSolution fit_hinge(std::span<const ThresholdPoint> points, double tau) {
  const auto n = static_cast<Eigen::Index>(points.size());
  Eigen::MatrixXd design(n, 3);
  Eigen::VectorXd target(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double x = points[static_cast<std::size_t>(i)].psi;
    design(i, 0) = 1.0;
    design(i, 1) = x;
    design(i, 2) = std::max(0.0, x - tau);
    target(i) = points[static_cast<std::size_t>(i)].mean_tout;
  }
  const Eigen::Vector3d beta = design.colPivHouseholderQr().solve(target);
  const double rss = (design * beta - target).squaredNorm();
  return {beta(0), beta(1), beta(1) + beta(2), rss};
}

}  // namespace

ThresholdFit fit_threshold_model(std::span<const ThresholdPoint> points) {
  if (points.size() < 4) {
    throw Error(ErrorCode::kInsufficientData, "threshold fit needs >= 4 points");
  }
  std::set<double> distinct;
  double mean_y = 0.0;
  for (const auto& p : points) {
    if (!std::isfinite(p.psi) || !std::isfinite(p.mean_tout)) {
      throw Error(ErrorCode::kInvalidArgument, "threshold points must be finite");
    }
    distinct.insert(p.psi);
    mean_y += p.mean_tout;
  }
  mean_y /= static_cast<double>(points.size());
  double tss = 0.0;
  for (const auto& p : points) tss += (p.mean_tout - mean_y) * (p.mean_tout - mean_y);

  const std::vector<double> xs(distinct.begin(), distinct.end());
  std::vector<double> candidates;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    candidates.push_back(xs[i]);
    if (i + 1 < xs.size()) candidates.push_back(0.5 * (xs[i] + xs[i + 1]));
  }

  auto count_le = [&](double tau) {
    return static_cast<std::size_t>(std::upper_bound(xs.begin(), xs.end(), tau) - xs.begin());
  };
  auto count_ge = [&](double tau) {
    return static_cast<std::size_t>(xs.end() - std::lower_bound(xs.begin(), xs.end(), tau));
  };

  const double tie_tolerance = 1e-12 * std::max(1.0, tss);
  std::optional<ThresholdFit> best;
  std::size_t evaluated = 0;
  for (double tau : candidates) {
    if (!(tau > 0.0 && tau < 1.0)) continue;
    if (count_le(tau) < 2 || count_ge(tau) < 2) continue;
    const HingeSolution s = fit_hinge(points, tau);
    ++evaluated;
    if (!best || s.rss < best->rss - tie_tolerance) {
      best = ThresholdFit{tau, s.intercept, s.slope_low, s.slope_high, s.rss, false, 0};
    }
  }
  if (!best) {
    throw Error(ErrorCode::kNoBreakpoint,
                "no candidate break leaves >= 2 distinct Psi values on each side");
  }
  best->candidates = evaluated;
  best->rss = std::max(0.0, best->rss);
  const double slope_scale =
      std::max({1.0, std::abs(best->slope_low), std::abs(best->slope_high)});
  best->degenerate_break = std::abs(best->slope_high - best->slope_low) <= 1e-9 * slope_scale;
  return *best;
}

}  // namespace compressbench
