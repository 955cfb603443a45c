#pragma once

// Deployment metrics derived from cell summaries: energy, explosion ratio,
// weighted benchmark mixtures and the Compression Robustness Index (CRI).

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "compressbench/error.hpp"

namespace compressbench {

struct EnergyModel {
  double eps_in_mj = 0.15;   // per input token
  double eps_out_mj = 0.45;  // per output token

  void validate() const;
};

// eps_in * t_in + eps_out * t_out, in millijoules.
double energy(double t_in, double t_out, const EnergyModel& model = {});

// compressed / baseline; kDivisionByZero when baseline is 0.
double explosion_ratio(double baseline_mean_tout, double compressed_mean_tout);

// Weights must be >= 0 and sum to 1 within 1e-9 (kInvalidWeights).
double weighted_mixture(std::span<const double> values, std::span<const double> weights);
std::vector<double> balanced_weights(std::size_t n);

struct BenchmarkOutcome {
  std::string benchmark;
  double q0 = 0.0;  // baseline pass@1
  double qr = 0.0;  // compressed pass@1
  double t0 = 0.0;  // baseline mean output tokens
  double tr = 0.0;  // compressed mean output tokens
  double tmax = 1024.0;
};

struct CriTerm {
  std::string benchmark;
  double quality_retention = 0.0;  // qr / q0
  double length_factor = 0.0;      // 1 - max(0, tr - t0) / tmax
  double term = 0.0;
  double weight = 0.0;  // after renormalisation; 0 when excluded
  bool excluded = false;     // q0 == 0
  bool exceeds_one = false;  // qr > q0, left unclamped
};

struct CriReport {
  std::string model;
  double ratio = 0.0;
  std::vector<CriTerm> terms;
  double cri = 0.0;
  std::vector<std::string> flags;
};

// Weighted mean of the per-benchmark terms (uniform by default). A benchmark
// with q0 == 0 is excluded and flagged; the remaining weights are
// renormalised. Every benchmark excluded is kUndefinedQualityRatio; outcomes
// with different tmax are kInvalidArgument.
CriReport cri(std::span<const BenchmarkOutcome> outcomes,
              std::optional<std::span<const double>> weights = std::nullopt,
              std::string model = {}, double ratio = 0.0);

}  // namespace compressbench
