#pragma once

// Prompts as word-token sequences, instruction segments, and instruction
// survival under first-N-words truncation.

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace compressbench {

class Prompt {
 public:
  // Throws kInvalidArgument if tokens is empty or any token holds whitespace.
  explicit Prompt(std::vector<std::string> tokens,
                  std::optional<std::string> source_benchmark = std::nullopt);

  std::span<const std::string> tokens() const noexcept { return tokens_; }
  std::size_t size() const noexcept { return tokens_.size(); }
  const std::optional<std::string>& source_benchmark() const noexcept {
    return source_benchmark_;
  }

  // Tokens re-joined with single spaces.
  std::string text() const;

  friend bool operator==(const Prompt&, const Prompt&) = default;

 private:
  std::vector<std::string> tokens_;
  std::optional<std::string> source_benchmark_;
};

// Splits on maximal whitespace runs. Throws kEmptyPrompt for blank input.
Prompt tokenize(std::string_view text,
                std::optional<std::string> source_benchmark = std::nullopt);

// Number of whitespace-delimited words; 0 for blank text.
std::size_t count_words(std::string_view text) noexcept;

enum class Rounding { kFloor, kNearest };

// max(1, floor(r*n)) by default. Throws kInvalidRatio unless 0 < r <= 1.
std::size_t retained_count(std::size_t n, double ratio,
                           Rounding rounding = Rounding::kFloor);

void check_ratio(double ratio);

struct SegmentSpan {
  std::size_t a = 1;  // 1-based, inclusive
  std::size_t b = 1;  // 1-based, inclusive
  double weight = 0.0;
  std::string label;

  std::size_t length() const noexcept { return b - a + 1; }
};

struct SurvivalMode {
  enum class Kind { kStrict, kFractional };

  Kind kind = Kind::kStrict;
  // Coverage at or above this counts as full survival (fractional only).
  double threshold = 0.75;

  static SurvivalMode strict() { return {}; }
  static SurvivalMode fractional(double threshold = 0.75);
};

// Weighted instruction segments of one prompt. Spans are kept sorted by
// start index; overlap is allowed.
class SegmentAnnotation {
 public:
  // Throws kInvalidAnnotation when weights don't sum to 1 (1e-9), a weight
  // is outside [0,1], or a span has a > b / a == 0; kSpanOutOfRange when a
  // span ends past prompt_length.
  SegmentAnnotation(std::vector<SegmentSpan> spans, std::size_t prompt_length);

  std::span<const SegmentSpan> spans() const noexcept { return spans_; }
  std::size_t prompt_length() const noexcept { return prompt_length_; }

 private:
  std::vector<SegmentSpan> spans_;
  std::size_t prompt_length_;
};

struct SegmentSurvival {
  std::string label;
  double psi = 0.0;
};

struct SurvivalResult {
  std::vector<SegmentSurvival> per_segment;
  double weighted = 0.0;
};

double segment_survival(const SegmentSpan& span, std::size_t n, double ratio,
                        SurvivalMode mode = SurvivalMode::strict(),
                        Rounding rounding = Rounding::kFloor);

SurvivalResult weighted_survival(const SegmentAnnotation& annotation,
                                 double ratio,
                                 SurvivalMode mode = SurvivalMode::strict(),
                                 Rounding rounding = Rounding::kFloor);

struct BenchmarkProfile {
  std::string name;
  double mean_tokens = 0.0;
  std::vector<SegmentSpan> template_spans;
  // ratio -> Psi, matched within 1e-9.
  std::map<double, double> psi_table;
  SurvivalMode survival_mode;
  Rounding rounding = Rounding::kFloor;

  // Template prompt length used with template_spans.
  std::size_t template_length() const;
  void validate() const;
};

// Table entry if present, otherwise the template computation at mean length.
SurvivalResult profile_survival_detail(const BenchmarkProfile& profile,
                                       double ratio);
double profile_survival(const BenchmarkProfile& profile, double ratio);

BenchmarkProfile parse_profile(std::string_view json_text);
BenchmarkProfile load_profile(const std::filesystem::path& path);

}  // namespace compressbench
