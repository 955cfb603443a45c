#pragma once

// Experiment plans (model x benchmark x ratio x prompt x replicate), their
// execution against backends, and the append-only JSONL record stream.

#include <compare>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "compressbench/backends.hpp"
#include "compressbench/compression.hpp"
#include "compressbench/error.hpp"
#include "compressbench/prompt.hpp"

namespace compressbench {

// Ratios compare at 1e-6 resolution so 0.3 parsed from JSON and 0.3 from a
// sweep land in the same cell.
std::int64_t ratio_key(double ratio) noexcept;

struct CellKey {
  std::string model;
  std::string benchmark;
  double ratio = 1.0;

  friend bool operator==(const CellKey& l, const CellKey& r) noexcept {
    return l.model == r.model && l.benchmark == r.benchmark &&
           ratio_key(l.ratio) == ratio_key(r.ratio);
  }
  friend std::strong_ordering operator<=>(const CellKey& l, const CellKey& r) noexcept {
    if (auto c = l.model <=> r.model; c != 0) return c;
    if (auto c = l.benchmark <=> r.benchmark; c != 0) return c;
    return ratio_key(l.ratio) <=> ratio_key(r.ratio);
  }
};

struct TrialKey {
  CellKey cell;
  std::string prompt_id;
  std::uint32_t replicate_index = 0;

  friend bool operator==(const TrialKey&, const TrialKey&) = default;
  friend std::strong_ordering operator<=>(const TrialKey&, const TrialKey&) = default;
};

struct TrialRecord {
  std::string model;
  std::string benchmark;
  double ratio = 1.0;
  std::string prompt_id;
  std::uint32_t replicate_index = 0;
  std::uint32_t input_tokens = 0;
  std::uint32_t output_tokens = 0;
  bool hit_ceiling = false;
  std::optional<bool> pass1;
  std::optional<double> psi;
  std::string timestamp;
  TokenSource token_source = TokenSource::kProvider;

  CellKey cell() const { return {model, benchmark, ratio}; }
  TrialKey key() const { return {cell(), prompt_id, replicate_index}; }
};

struct TrialError {
  TrialKey key;
  ErrorCode code = ErrorCode::kInternal;
  std::string message;
  std::string timestamp;
};

std::string record_to_jsonl(const TrialRecord& record);
std::string error_to_jsonl(const TrialError& error);

struct PromptItem {
  std::string prompt_id;
  std::string text;
  std::optional<bool> pass1_baseline;
  // Per-prompt instruction segments; the benchmark profile is used otherwise.
  std::vector<SegmentSpan> spans;
};

std::vector<PromptItem> load_prompt_dataset(const std::filesystem::path& path);

struct BenchmarkDataset {
  BenchmarkProfile profile;
  std::filesystem::path prompt_file;
  // Seeded sample without replacement, prompts_per_cell long.
  std::vector<PromptItem> prompts;
};

struct ModelSpec {
  std::string name;
  BackendConfig backend;
};

struct ExperimentPlan {
  std::vector<ModelSpec> models;
  std::vector<BenchmarkDataset> benchmarks;
  RatioSweep sweep = RatioSweep::standard();
  std::size_t prompts_per_cell = 50;
  std::uint32_t replicates = 3;
  std::uint64_t seed = 0;
  std::uint32_t max_tokens = 1024;
  double temperature = 0.0;
  std::string system_prompt;
  // (model, benchmark, ratio, prompt_id) -> pass@1 from an external grader.
  std::map<TrialKey, bool> grades;

  std::size_t total_calls() const noexcept;
};

// Parses a plan config document. Relative paths resolve against base_dir.
// Throws kConfig for missing files / bad fields and kInsufficientPrompts
// when a dataset is smaller than prompts_per_cell.
ExperimentPlan build_plan_from_json(std::string_view json_text,
                                    const std::filesystem::path& base_dir);
ExperimentPlan build_plan(const std::filesystem::path& config_path);

class RecordSink {
 public:
  virtual ~RecordSink() = default;
  virtual void on_record(const TrialRecord& record) = 0;
  virtual void on_error(const TrialError& error) = 0;
};

// Single exclusive appender; every line is flushed as it is written.
class JsonlRecordWriter final : public RecordSink {
 public:
  explicit JsonlRecordWriter(const std::filesystem::path& path);
  void on_record(const TrialRecord& record) override;
  void on_error(const TrialError& error) override;

 private:
  void append(const std::string& line);
  std::filesystem::path path_;
  std::mutex mutex_;
};

struct RunOptions {
  // 0 picks the sum of the backends' parallel limits.
  std::size_t workers = 0;
  // Stop claiming new trials after this many (simulates an interrupted run).
  std::optional<std::size_t> stop_after;
  std::set<TrialKey> skip;
  std::function<void(std::size_t done, std::size_t total)> progress;
};

struct RunSummary {
  std::size_t planned = 0;
  std::size_t skipped = 0;
  std::size_t completed = 0;
  std::size_t errors = 0;
};

// Every non-skipped trial yields exactly one record or one error; backend
// failures never abort the run.
RunSummary run(const ExperimentPlan& plan, const std::map<std::string, Backend*>& backends,
               RecordSink& sink, const RunOptions& options = {});

struct FileRunOptions {
  std::optional<std::size_t> stop_after;
  // Re-attempt trials whose only persisted entry is an error.
  bool retry_errors = false;
  std::shared_ptr<HttpTransport> transport;
  std::function<void(std::size_t done, std::size_t total)> progress;
};

// Builds backends, skips trials already persisted in out_path, appends.
RunSummary run_to_file(const ExperimentPlan& plan, const std::filesystem::path& out_path,
                       const FileRunOptions& options = {});

struct RecordFile {
  std::vector<TrialRecord> records;
  std::vector<TrialError> errors;
  // "path:line: message" for lines that failed to parse.
  std::vector<std::string> line_errors;
};

// Malformed lines are reported and skipped. Per trial key a record beats an
// error and later lines replace earlier ones.
RecordFile load_records(const std::filesystem::path& path);
RecordFile load_records(std::span<const std::filesystem::path> paths);

struct DeterminismMismatch {
  CellKey cell;
  std::string prompt_id;
  std::vector<std::uint32_t> output_tokens;  // by replicate index
};

// Replicate groups (cell, prompt) whose output token counts differ.
std::vector<DeterminismMismatch> verify_determinism(std::span<const TrialRecord> records);

struct SimulationOptions {
  std::vector<double> psi_grid;
  std::size_t trials_per_point = 10000;
  std::uint64_t seed = 0;
  std::string model = "synthetic";
};

// Draws from the verbose-compensation model at each grid point. Records land
// in benchmark "psi=<value>" at ratio 1.0 with psi set, input_tokens 1 and no
// timestamp, so the output is byte-identical for a given seed.
std::vector<TrialRecord> simulate(const VerboseCompensationParams& params,
                                  const SimulationOptions& options);

}  // namespace compressbench
