#pragma once

#include <initializer_list>
#include <span>
#include <utility>
#include <vector>

#include "compressbench/prompt.hpp"

namespace compressbench {

// Fraction of prompt tokens kept, in (0, 1].
class CompressionRatio {
 public:
  explicit CompressionRatio(double value);
  double value() const noexcept { return value_; }
  friend auto operator<=>(const CompressionRatio&, const CompressionRatio&) = default;

 private:
  double value_;
};

// Strictly decreasing ratios starting at the 1.0 baseline.
class RatioSweep {
 public:
  explicit RatioSweep(std::vector<CompressionRatio> ratios);
  RatioSweep(std::initializer_list<double> ratios);

  // {1.0, 0.7, 0.5, 0.3}
  static RatioSweep standard();

  std::span<const CompressionRatio> ratios() const noexcept { return ratios_; }
  std::size_t size() const noexcept { return ratios_.size(); }

 private:
  std::vector<CompressionRatio> ratios_;
};

// First retained_count(n, r) tokens. r = 1 returns the prompt unchanged.
Prompt compress_first_n(const Prompt& prompt, CompressionRatio ratio,
                        Rounding rounding = Rounding::kFloor);

std::vector<std::pair<CompressionRatio, Prompt>> sweep(
    const Prompt& prompt, const RatioSweep& ratios,
    Rounding rounding = Rounding::kFloor);

}  // namespace compressbench
