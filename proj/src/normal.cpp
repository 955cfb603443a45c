#include "compressbench/normal.hpp"

#include <cmath>
#include <numbers>

#include <boost/math/distributions/normal.hpp>

#include "compressbench/error.hpp"

namespace compressbench::normal {
namespace {

constexpr double kLogSqrt2Pi = 0.91893853320467274178;  // log(sqrt(2*pi))
constexpr double kAsymptoticCut = -20.0;

// log Phi(z) for z <= -20 from the Mills-ratio asymptotic series.
double log_cdf_lower_tail(double z) noexcept {
  const double inv_z2 = 1.0 / (z * z);
  double term = 1.0;
  double sum = 1.0;
  for (int k = 1; k <= 8; ++k) {
    term *= -static_cast<double>(2 * k - 1) * inv_z2;
    sum += term;
  }
  return -0.5 * z * z - std::log(-z) - kLogSqrt2Pi + std::log(sum);
}

}  // namespace

double pdf(double z) noexcept { return std::exp(log_pdf(z)); }

double log_pdf(double z) noexcept { return -0.5 * z * z - kLogSqrt2Pi; }

double cdf(double z) noexcept {
  return 0.5 * std::erfc(-z / std::numbers::sqrt2);
}

double log_cdf(double z) noexcept {
  if (z == -INFINITY) return -INFINITY;
  if (z < kAsymptoticCut) return log_cdf_lower_tail(z);
  if (z > 5.0) return std::log1p(-0.5 * std::erfc(z / std::numbers::sqrt2));
  return std::log(cdf(z));
}

double inverse_mills(double z) noexcept {
  if (z == INFINITY) return 0.0;
  if (z < kAsymptoticCut) {
    // phi/Phi = -z / (1 - 1/z^2 + 3/z^4 - ...) without forming either tail.
    const double inv_z2 = 1.0 / (z * z);
    double term = 1.0;
    double sum = 1.0;
    for (int k = 1; k <= 8; ++k) {
      term *= -static_cast<double>(2 * k - 1) * inv_z2;
      sum += term;
    }
    return -z / sum;
  }
  return std::exp(log_pdf(z) - log_cdf(z));
}

double quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "normal quantile needs 0 < p < 1");
  }
  return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

}  // namespace compressbench::normal
