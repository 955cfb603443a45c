#pragma once

// Report tables built from cell summaries (fixture or records) and rendered
// as aligned text, CSV or Markdown. All number formatting is
// locale-independent.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "compressbench/metrics.hpp"
#include "compressbench/prompt.hpp"
#include "compressbench/stats.hpp"
#include "compressbench/trial_engine.hpp"

namespace compressbench {

// Fixed-point with a '.' decimal separator; never prints "-0.0".
std::string format_fixed(double value, int decimals);

enum class ReportSection {
  kCells = 1,
  kReconciliation = 2,
  kProvider = 4,
  kCri = 8,
  kThreshold = 16,
  kThresholdPoints = 32,
};
inline constexpr unsigned kAllSections = 63;

class ReportTable {
 public:
  ReportTable(std::string title, std::vector<std::string> headers,
              ReportSection section = ReportSection::kCells);

  // Throws kInvalidArgument unless the row matches the header width.
  void add_row(std::vector<std::string> row);
  void add_footnote(std::string note) { footnotes_.push_back(std::move(note)); }

  const std::string& title() const noexcept { return title_; }
  ReportSection section() const noexcept { return section_; }
  const std::vector<std::string>& headers() const noexcept { return headers_; }
  const std::vector<std::vector<std::string>>& rows() const noexcept { return rows_; }
  const std::vector<std::string>& footnotes() const noexcept { return footnotes_; }

 private:
  std::string title_;
  std::vector<std::string> headers_;
  ReportSection section_;
  std::vector<std::vector<std::string>> rows_;
  std::vector<std::string> footnotes_;
};

enum class ReportFormat { kTable, kCsv, kMarkdown };

ReportFormat parse_report_format(std::string_view name);
std::string render(const ReportTable& table, ReportFormat format);
std::string render_all(const std::vector<ReportTable>& tables, ReportFormat format);

// Cell summaries read from a CSV with columns
// model,benchmark,ratio,mean_tout,sd,ceiling_pct,pass1,energy_mj.
struct FixtureData {
  std::vector<CellSummary> cells;
  std::map<CellKey, double> recorded_energy_mj;
};

// mean_tokens maps benchmark name to its mean prompt length; the cell's
// input tokens are mean_tokens * ratio. Unknown benchmarks are kConfig.
FixtureData parse_fixture(std::string_view csv_text,
                          const std::map<std::string, double>& mean_tokens,
                          std::string_view source = "fixture");
FixtureData load_fixture(const std::filesystem::path& path,
                         const std::map<std::string, double>& mean_tokens);

// Every *.json profile in a directory, keyed by benchmark name.
std::map<std::string, BenchmarkProfile> load_profiles(const std::filesystem::path& dir);
std::map<std::string, double> profile_mean_tokens(
    const std::map<std::string, BenchmarkProfile>& profiles);

struct ReportInput {
  std::vector<CellSummary> cells;
  std::map<CellKey, double> recorded_energy_mj;
  // Trial-level records; enables bootstrap intervals.
  std::vector<TrialRecord> records;
  std::map<std::string, BenchmarkProfile> profiles;
};

struct ReportOptions {
  double ratio = 0.3;
  double tmax = 1024.0;
  EnergyModel energy;
  // Extra reconciliation row weighted per benchmark (weights sum to 1).
  std::map<std::string, double> custom_weights;
  std::string custom_weights_label = "Custom weighted";
  BootstrapOptions bootstrap{2000, 0.95, 0, 0};
  // Bitmask of ReportSection values.
  unsigned sections = kAllSections;
};

struct Report {
  std::vector<ReportTable> tables;
  std::vector<std::string> warnings;
};

// Tables: cell summary; per-model reconciliation at options.ratio; provider
// comparison; CRI; threshold fit; threshold points.
Report build_report(const ReportInput& input, const ReportOptions& options = {});

// Report input from record files: cells summarised from the records, which
// are kept for intervals. Line errors become warnings.
ReportInput report_input_from_records(std::span<const std::filesystem::path> paths,
                                      std::vector<std::string>& warnings);

// Qualitative CRI band used in the CRI table.
std::string_view cri_interpretation(double cri) noexcept;

}  // namespace compressbench
