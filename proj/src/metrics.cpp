#include "compressbench/metrics.hpp"

#include <cmath>
#include <numeric>

#include <fmt/format.h>

namespace compressbench {

namespace {

void check_weights(std::span<const double> weights, std::size_t expected) {
  if (weights.size() != expected) {
    throw Error(ErrorCode::kInvalidWeights,
                fmt::format("expected {} weights, got {}", expected, weights.size()));
  }
  double sum = 0.0;
  for (double w : weights) {
    if (!std::isfinite(w) || w < 0.0) {
      throw Error(ErrorCode::kInvalidWeights, "weights must be finite and >= 0");
    }
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw Error(ErrorCode::kInvalidWeights, fmt::format("weights sum to {}, not 1", sum));
  }
}

}  // namespace

void EnergyModel::validate() const {
  if (!(eps_in_mj > 0.0) || !(eps_out_mj > 0.0) || !std::isfinite(eps_in_mj) ||
      !std::isfinite(eps_out_mj)) {
    throw Error(ErrorCode::kInvalidArgument, "energy coefficients must be finite and > 0");
  }
}

double energy(double t_in, double t_out, const EnergyModel& model) {
  model.validate();
  if (!(t_in >= 0.0) || !(t_out >= 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "token counts must be >= 0");
  }
  return model.eps_in_mj * t_in + model.eps_out_mj * t_out;
}

double explosion_ratio(double baseline_mean_tout, double compressed_mean_tout) {
  if (baseline_mean_tout == 0.0) {
    throw Error(ErrorCode::kDivisionByZero, "baseline mean output is 0");
  }
  if (baseline_mean_tout < 0.0 || compressed_mean_tout < 0.0) {
    throw Error(ErrorCode::kInvalidArgument, "mean output tokens must be >= 0");
  }
  return compressed_mean_tout / baseline_mean_tout;
}

double weighted_mixture(std::span<const double> values, std::span<const double> weights) {
  if (values.empty()) throw Error(ErrorCode::kInvalidArgument, "no values to mix");
  check_weights(weights, values.size());
  double total = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) total += weights[i] * values[i];
  return total;
}

std::vector<double> balanced_weights(std::size_t n) {
  if (n == 0) throw Error(ErrorCode::kInvalidArgument, "balanced weights need n >= 1");
  return std::vector<double>(n, 1.0 / static_cast<double>(n));
}

CriReport cri(std::span<const BenchmarkOutcome> outcomes,
              std::optional<std::span<const double>> weights, std::string model,
              double ratio) {
  if (outcomes.empty()) throw Error(ErrorCode::kInvalidArgument, "CRI needs >= 1 outcome");
  std::vector<double> w = weights ? std::vector<double>(weights->begin(), weights->end())
                                  : balanced_weights(outcomes.size());
  check_weights(w, outcomes.size());

  CriReport report;
  report.model = std::move(model);
  report.ratio = ratio;
  const double tmax = outcomes.front().tmax;
  double kept_weight = 0.0;
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    const auto& o = outcomes[i];
    if (o.tmax != tmax) {
      throw Error(ErrorCode::kInvalidArgument,
                  fmt::format("benchmark {} has Tmax {} but {} was expected", o.benchmark,
                              o.tmax, tmax));
    }
    if (!(o.tmax > 0.0)) throw Error(ErrorCode::kInvalidArgument, "Tmax must be > 0");
    if (!(o.q0 >= 0.0 && o.q0 <= 1.0) || !(o.qr >= 0.0 && o.qr <= 1.0)) {
      throw Error(ErrorCode::kInvalidArgument,
                  fmt::format("pass@1 for {} must lie in [0, 1]", o.benchmark));
    }
    if (!(o.t0 >= 0.0) || !(o.tr >= 0.0)) {
      throw Error(ErrorCode::kInvalidArgument,
                  fmt::format("mean output tokens for {} must be >= 0", o.benchmark));
    }
    CriTerm term;
    term.benchmark = o.benchmark;
    term.length_factor = 1.0 - std::max(0.0, o.tr - o.t0) / o.tmax;
    if (o.q0 == 0.0) {
      term.excluded = true;
      report.flags.push_back(
          fmt::format("{}: baseline pass@1 is 0, quality ratio undefined; excluded",
                      o.benchmark));
    } else {
      term.quality_retention = o.qr / o.q0;
      term.term = term.quality_retention * term.length_factor;
      term.weight = w[i];
      kept_weight += w[i];
      if (o.qr > o.q0) {
        term.exceeds_one = true;
        report.flags.push_back(
            fmt::format("{}: compressed pass@1 exceeds baseline (retention {:.3f})", o.benchmark,
                        term.quality_retention));
      }
    }
    report.terms.push_back(std::move(term));
  }
  if (kept_weight <= 0.0) {
    throw Error(ErrorCode::kUndefinedQualityRatio,
                "every benchmark has baseline pass@1 of 0 (or zero weight)");
  }
  double total = 0.0;
  for (auto& t : report.terms) {
    if (t.excluded) continue;
    t.weight /= kept_weight;
    total += t.weight * t.term;
  }
  report.cri = total;
  return report;
}

}  // namespace compressbench
