#include "compressbench/prompt.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "compressbench/error.hpp"
#include "io_util.hpp"

namespace compressbench {
namespace {

bool is_space(char c) noexcept {
  return std::isspace(static_cast<unsigned char>(c)) != 0;
}

constexpr double kWeightTolerance = 1e-9;
constexpr double kRatioMatchTolerance = 1e-9;
// Absorbs representation error of decimal ratios (0.3 * 30 -> 8.999...).
constexpr double kFloorGuard = 1e-9;

}  // namespace

Prompt::Prompt(std::vector<std::string> tokens,
               std::optional<std::string> source_benchmark)
    : tokens_(std::move(tokens)), source_benchmark_(std::move(source_benchmark)) {
  if (tokens_.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "prompt must hold at least one token");
  }
  for (const auto& token : tokens_) {
    if (token.empty() || std::any_of(token.begin(), token.end(), is_space)) {
      throw Error(ErrorCode::kInvalidArgument,
                  "token must be non-empty and free of whitespace: '" + token + "'");
    }
  }
}

std::string Prompt::text() const {
  std::string out;
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (i != 0) out.push_back(' ');
    out += tokens_[i];
  }
  return out;
}

Prompt tokenize(std::string_view text, std::optional<std::string> source_benchmark) {
  std::vector<std::string> tokens;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    const std::size_t start = i;
    while (i < text.size() && !is_space(text[i])) ++i;
    if (i > start) tokens.emplace_back(text.substr(start, i - start));
  }
  if (tokens.empty()) {
    throw Error(ErrorCode::kEmptyPrompt, "prompt text is empty");
  }
  return Prompt(std::move(tokens), std::move(source_benchmark));
}

std::size_t count_words(std::string_view text) noexcept {
  std::size_t count = 0;
  bool in_word = false;
  for (char c : text) {
    const bool space = is_space(c);
    if (!space && !in_word) ++count;
    in_word = !space;
  }
  return count;
}

void check_ratio(double ratio) {
  if (!(ratio > 0.0 && ratio <= 1.0)) {
    throw Error(ErrorCode::kInvalidRatio,
                "compression ratio must lie in (0, 1], got " + std::to_string(ratio));
  }
}

std::size_t retained_count(std::size_t n, double ratio, Rounding rounding) {
  check_ratio(ratio);
  if (n == 0) {
    throw Error(ErrorCode::kInvalidArgument, "token count must be >= 1");
  }
  const double scaled = ratio * static_cast<double>(n);
  const double kept = rounding == Rounding::kFloor ? std::floor(scaled + kFloorGuard)
                                                   : std::floor(scaled + 0.5);
  const auto count = static_cast<std::size_t>(kept);
  return std::clamp<std::size_t>(count, 1, n);
}

SurvivalMode SurvivalMode::fractional(double threshold) {
  if (!(threshold > 0.0 && threshold <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument,
                "fractional survival threshold must lie in (0, 1]");
  }
  return {Kind::kFractional, threshold};
}

SegmentAnnotation::SegmentAnnotation(std::vector<SegmentSpan> spans,
                                     std::size_t prompt_length)
    : spans_(std::move(spans)), prompt_length_(prompt_length) {
  if (spans_.empty()) {
    throw Error(ErrorCode::kInvalidAnnotation, "annotation has no segments");
  }
  double total = 0.0;
  for (const auto& span : spans_) {
    if (span.a == 0 || span.a > span.b) {
      throw Error(ErrorCode::kInvalidAnnotation,
                  "segment '" + span.label + "' needs 1 <= a <= b");
    }
    if (!(span.weight >= 0.0 && span.weight <= 1.0)) {
      throw Error(ErrorCode::kInvalidAnnotation,
                  "segment '" + span.label + "' weight outside [0, 1]");
    }
    if (span.b > prompt_length_) {
      throw Error(ErrorCode::kSpanOutOfRange,
                  "segment '" + span.label + "' ends at " + std::to_string(span.b) +
                      " past prompt length " + std::to_string(prompt_length_));
    }
    total += span.weight;
  }
  if (std::abs(total - 1.0) > kWeightTolerance) {
    throw Error(ErrorCode::kInvalidAnnotation,
                "segment weights sum to " + std::to_string(total) + ", expected 1");
  }
  std::stable_sort(spans_.begin(), spans_.end(),
                   [](const SegmentSpan& l, const SegmentSpan& r) { return l.a < r.a; });
}

double segment_survival(const SegmentSpan& span, std::size_t n, double ratio,
                        SurvivalMode mode, Rounding rounding) {
  if (span.a == 0 || span.a > span.b) {
    throw Error(ErrorCode::kInvalidAnnotation, "segment needs 1 <= a <= b");
  }
  if (span.b > n) {
    throw Error(ErrorCode::kSpanOutOfRange,
                "segment ends at " + std::to_string(span.b) + " past prompt length " +
                    std::to_string(n));
  }
  const std::size_t kept = retained_count(n, ratio, rounding);
  if (mode.kind == SurvivalMode::Kind::kStrict) {
    return span.b <= kept ? 1.0 : 0.0;
  }
  const std::size_t last = std::min(span.b, kept);
  const std::size_t covered = last >= span.a ? last - span.a + 1 : 0;
  const double coverage =
      static_cast<double>(covered) / static_cast<double>(span.length());
  return coverage >= mode.threshold ? 1.0 : coverage;
}

SurvivalResult weighted_survival(const SegmentAnnotation& annotation, double ratio,
                                 SurvivalMode mode, Rounding rounding) {
  SurvivalResult result;
  result.per_segment.reserve(annotation.spans().size());
  for (const auto& span : annotation.spans()) {
    const double psi =
        segment_survival(span, annotation.prompt_length(), ratio, mode, rounding);
    result.per_segment.push_back({span.label, psi});
    result.weighted += span.weight * psi;
  }
  return result;
}

std::size_t BenchmarkProfile::template_length() const {
  return static_cast<std::size_t>(std::max(1.0, std::round(mean_tokens)));
}

void BenchmarkProfile::validate() const {
  if (name.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "profile needs a name");
  }
  if (!(mean_tokens >= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument,
                "profile '" + name + "' mean_tokens must be >= 1");
  }
  if (template_spans.empty() && psi_table.empty()) {
    throw Error(ErrorCode::kProfileIncomplete,
                "profile '" + name + "' has neither spans nor psi_table");
  }
  for (const auto& [ratio, psi] : psi_table) {
    check_ratio(ratio);
    if (!(psi >= 0.0 && psi <= 1.0)) {
      throw Error(ErrorCode::kInvalidArgument,
                  "profile '" + name + "' psi_table value outside [0, 1]");
    }
  }
  if (!template_spans.empty()) {
    SegmentAnnotation check(template_spans, template_length());
  }
}

SurvivalResult profile_survival_detail(const BenchmarkProfile& profile, double ratio) {
  check_ratio(ratio);
  for (const auto& [key, psi] : profile.psi_table) {
    if (std::abs(key - ratio) <= kRatioMatchTolerance) {
      return SurvivalResult{{}, psi};
    }
  }
  if (profile.template_spans.empty()) {
    throw Error(ErrorCode::kProfileIncomplete,
                "profile '" + profile.name + "' has no psi_table entry for r=" +
                    std::to_string(ratio) + " and no template spans");
  }
  const SegmentAnnotation annotation(profile.template_spans, profile.template_length());
  return weighted_survival(annotation, ratio, profile.survival_mode, profile.rounding);
}

double profile_survival(const BenchmarkProfile& profile, double ratio) {
  return profile_survival_detail(profile, ratio).weighted;
}

namespace {

Rounding parse_rounding(const std::string& text, std::string_view context) {
  if (text == "floor") return Rounding::kFloor;
  if (text == "nearest") return Rounding::kNearest;
  throw Error(ErrorCode::kParse,
              std::string(context) + ": rounding must be 'floor' or 'nearest'");
}

}  // namespace

BenchmarkProfile parse_profile(std::string_view json_text) {
  using detail::get_field;
  using detail::get_field_or;
  const auto doc = detail::parse_json(json_text, "profile");
  if (!doc.is_object()) {
    throw Error(ErrorCode::kParse, "profile: expected a JSON object");
  }
  BenchmarkProfile profile;
  profile.name = get_field<std::string>(doc, "name", "profile");
  profile.mean_tokens = get_field<double>(doc, "mean_tokens", "profile");

  const auto mode = get_field_or<std::string>(doc, "survival_mode", "strict", "profile");
  if (mode == "strict") {
    profile.survival_mode = SurvivalMode::strict();
  } else if (mode == "fractional") {
    profile.survival_mode = SurvivalMode::fractional(
        get_field_or<double>(doc, "fractional_threshold", 0.75, "profile"));
  } else {
    throw Error(ErrorCode::kParse,
                "profile: survival_mode must be 'strict' or 'fractional'");
  }
  profile.rounding = parse_rounding(
      get_field_or<std::string>(doc, "rounding", "floor", "profile"), "profile");

  if (auto it = doc.find("spans"); it != doc.end() && !it->is_null()) {
    for (const auto& item : *it) {
      SegmentSpan span;
      span.label = get_field_or<std::string>(item, "label", "", "profile span");
      span.a = get_field<std::size_t>(item, "a", "profile span");
      span.b = get_field<std::size_t>(item, "b", "profile span");
      span.weight = get_field<double>(item, "weight", "profile span");
      profile.template_spans.push_back(std::move(span));
    }
  }
  if (auto it = doc.find("psi_table"); it != doc.end() && !it->is_null()) {
    for (const auto& [key, value] : it->items()) {
      profile.psi_table[detail::parse_double(key, "psi_table key")] =
          value.get<double>();
    }
  }
  profile.validate();
  return profile;
}

BenchmarkProfile load_profile(const std::filesystem::path& path) {
  try {
    return parse_profile(detail::read_text_file(path));
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

}  // namespace compressbench
