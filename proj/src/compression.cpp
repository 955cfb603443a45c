#include "compressbench/compression.hpp"

#include <string>

#include "compressbench/error.hpp"

namespace compressbench {

CompressionRatio::CompressionRatio(double value) : value_(value) {
  check_ratio(value);
}

RatioSweep::RatioSweep(std::vector<CompressionRatio> ratios)
    : ratios_(std::move(ratios)) {
  if (ratios_.empty() || ratios_.front().value() != 1.0) {
    throw Error(ErrorCode::kInvalidArgument, "ratio sweep must start at 1.0");
  }
  for (std::size_t i = 1; i < ratios_.size(); ++i) {
    if (!(ratios_[i] < ratios_[i - 1])) {
      throw Error(ErrorCode::kInvalidArgument, "ratio sweep must be strictly decreasing");
    }
  }
}

namespace {
std::vector<CompressionRatio> to_ratios(std::initializer_list<double> values) {
  std::vector<CompressionRatio> out;
  out.reserve(values.size());
  for (double v : values) out.emplace_back(v);
  return out;
}
}  // namespace

RatioSweep::RatioSweep(std::initializer_list<double> ratios)
    : RatioSweep(to_ratios(ratios)) {}

RatioSweep RatioSweep::standard() { return RatioSweep{1.0, 0.7, 0.5, 0.3}; }

Prompt compress_first_n(const Prompt& prompt, CompressionRatio ratio,
                        Rounding rounding) {
  if (ratio.value() == 1.0) return prompt;
  const std::size_t kept = retained_count(prompt.size(), ratio.value(), rounding);
  const auto tokens = prompt.tokens();
  return Prompt(std::vector<std::string>(tokens.begin(), tokens.begin() + kept),
                prompt.source_benchmark());
}

std::vector<std::pair<CompressionRatio, Prompt>> sweep(const Prompt& prompt,
                                                       const RatioSweep& ratios,
                                                       Rounding rounding) {
  std::vector<std::pair<CompressionRatio, Prompt>> out;
  out.reserve(ratios.size());
  for (const auto& r : ratios.ratios()) {
    out.emplace_back(r, compress_first_n(prompt, r, rounding));
  }
  return out;
}

}  // namespace compressbench
