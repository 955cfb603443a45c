#include "compressbench/trial_engine.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <numeric>
#include <thread>

#include <fmt/format.h>

#include "backend_json.hpp"
#include "compressbench/rng.hpp"
#include "io_util.hpp"

namespace compressbench {

using nlohmann::json;

std::int64_t ratio_key(double ratio) noexcept { return std::llround(ratio * 1e6); }

namespace {

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t seconds = std::chrono::system_clock::to_time_t(now);
  const auto millis =
      std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() %
      1000;
  std::tm utc{};
  gmtime_r(&seconds, &utc);
  char buffer[32];
  std::strftime(buffer, sizeof buffer, "%Y-%m-%dT%H:%M:%S", &utc);
  char out[40];
  std::snprintf(out, sizeof out, "%s.%03dZ", buffer, static_cast<int>(millis));
  return out;
}

json key_fields(const TrialKey& key) {
  return {{"model", key.cell.model},
          {"benchmark", key.cell.benchmark},
          {"ratio", key.cell.ratio},
          {"prompt_id", key.prompt_id},
          {"replicate_index", key.replicate_index}};
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

std::vector<SegmentSpan> spans_from_json(const json& items, std::string_view ctx) {
  std::vector<SegmentSpan> spans;
  for (const auto& item : items) {
    SegmentSpan span;
    span.label = detail::get_field_or<std::string>(item, "label", "", ctx);
    span.a = detail::get_field<std::size_t>(item, "a", ctx);
    span.b = detail::get_field<std::size_t>(item, "b", ctx);
    span.weight = detail::get_field<double>(item, "weight", ctx);
    spans.push_back(std::move(span));
  }
  return spans;
}

std::optional<bool> optional_pass(const json& doc, const char* key) {
  auto it = doc.find(key);
  if (it == doc.end() || it->is_null()) return std::nullopt;
  if (it->is_boolean()) return it->get<bool>();
  if (it->is_number()) return it->get<double>() >= 0.5;
  throw Error(ErrorCode::kParse, std::string("field '") + key + "' must be boolean");
}

}  // namespace

std::string record_to_jsonl(const TrialRecord& record) {
  json doc = key_fields(record.key());
  doc["kind"] = "record";
  doc["input_tokens"] = record.input_tokens;
  doc["output_tokens"] = record.output_tokens;
  doc["hit_ceiling"] = record.hit_ceiling;
  doc["pass1"] = record.pass1 ? json(*record.pass1) : json(nullptr);
  doc["psi"] = record.psi ? json(*record.psi) : json(nullptr);
  doc["timestamp"] = record.timestamp;
  doc["token_source"] = token_source_name(record.token_source);
  return doc.dump();
}

std::string error_to_jsonl(const TrialError& error) {
  json doc = key_fields(error.key);
  doc["kind"] = "error";
  doc["error_code"] = error_code_name(error.code);
  doc["error_code_value"] = static_cast<int>(error.code);
  doc["message"] = error.message;
  doc["timestamp"] = error.timestamp;
  return doc.dump();
}

std::vector<PromptItem> load_prompt_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kConfig, "cannot open prompt dataset " + path.string());
  std::vector<PromptItem> items;
  std::set<std::string> seen;
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string ctx = path.string() + ":" + std::to_string(line_number);
    const json doc = detail::parse_json(line, ctx);
    PromptItem item;
    item.prompt_id = detail::get_field<std::string>(doc, "prompt_id", ctx);
    item.text = detail::get_field<std::string>(doc, "text", ctx);
    item.pass1_baseline = optional_pass(doc, "pass1_baseline");
    if (auto it = doc.find("spans"); it != doc.end() && !it->is_null()) {
      item.spans = spans_from_json(*it, ctx);
    }
    if (!seen.insert(item.prompt_id).second) {
      throw Error(ErrorCode::kConfig, ctx + ": duplicate prompt_id " + item.prompt_id);
    }
    items.push_back(std::move(item));
  }
  return items;
}

std::size_t ExperimentPlan::total_calls() const noexcept {
  return models.size() * benchmarks.size() * sweep.size() * prompts_per_cell * replicates;
}

ExperimentPlan build_plan_from_json(std::string_view json_text,
                                    const std::filesystem::path& base_dir) {
  using detail::get_field;
  using detail::get_field_or;
  constexpr std::string_view ctx = "plan config";
  json doc;
  try {
    doc = detail::parse_json(json_text, ctx);
  } catch (const Error& e) {
    throw Error(ErrorCode::kConfig, e.what());
  }
  if (!doc.is_object()) throw Error(ErrorCode::kConfig, "plan config must be an object");

  ExperimentPlan plan;
  try {
    plan.seed = get_field_or<std::uint64_t>(doc, "seed", 0, ctx);
    plan.prompts_per_cell = get_field_or<std::size_t>(doc, "prompts_per_cell", 50, ctx);
    plan.replicates = get_field_or<std::uint32_t>(doc, "replicates", 3, ctx);
    plan.max_tokens = get_field_or<std::uint32_t>(doc, "max_tokens", 1024, ctx);
    plan.temperature = get_field_or<double>(doc, "temperature", 0.0, ctx);
    plan.system_prompt = get_field_or<std::string>(doc, "system_prompt", "", ctx);
    if (doc.contains("ratios")) {
      std::vector<CompressionRatio> ratios;
      for (double r : get_field<std::vector<double>>(doc, "ratios", ctx)) ratios.emplace_back(r);
      plan.sweep = RatioSweep(std::move(ratios));
    }
  } catch (const Error& e) {
    throw Error(ErrorCode::kConfig, e.what());
  }
  if (plan.prompts_per_cell < 1 || plan.replicates < 1 || plan.max_tokens < 1) {
    throw Error(ErrorCode::kConfig,
                "prompts_per_cell, replicates and max_tokens must all be >= 1");
  }

  const auto models = get_field_or<json>(doc, "models", json::array(), ctx);
  if (models.empty()) throw Error(ErrorCode::kConfig, "plan lists no models");
  std::set<std::string> model_names;
  for (const auto& m : models) {
    ModelSpec spec;
    try {
      spec.name = get_field<std::string>(m, "name", "plan model");
      spec.backend = detail::backend_config_from_json(get_field<json>(m, "backend", "plan model"),
                                                      base_dir);
    } catch (const Error& e) {
      throw Error(ErrorCode::kConfig, e.what());
    }
    if (!model_names.insert(spec.name).second) {
      throw Error(ErrorCode::kConfig, "duplicate model " + spec.name);
    }
    plan.models.push_back(std::move(spec));
  }

  const auto benchmarks = get_field_or<json>(doc, "benchmarks", json::array(), ctx);
  if (benchmarks.empty()) throw Error(ErrorCode::kConfig, "plan lists no benchmarks");
  for (const auto& b : benchmarks) {
    BenchmarkDataset dataset;
    std::filesystem::path profile_path;
    try {
      profile_path = resolve(base_dir, get_field<std::string>(b, "profile", "plan benchmark"));
      dataset.prompt_file = resolve(base_dir, get_field<std::string>(b, "prompts", "plan benchmark"));
    } catch (const Error& e) {
      throw Error(ErrorCode::kConfig, e.what());
    }
    if (!std::filesystem::exists(profile_path)) {
      throw Error(ErrorCode::kConfig, "missing profile " + profile_path.string());
    }
    if (!std::filesystem::exists(dataset.prompt_file)) {
      throw Error(ErrorCode::kConfig, "missing prompt file " + dataset.prompt_file.string());
    }
    dataset.profile = load_profile(profile_path);
    auto items = load_prompt_dataset(dataset.prompt_file);
    if (items.size() < plan.prompts_per_cell) {
      throw Error(ErrorCode::kInsufficientPrompts,
                  dataset.prompt_file.string() + " holds " + std::to_string(items.size()) +
                      " prompts, plan needs " + std::to_string(plan.prompts_per_cell));
    }
    Rng rng(substream_seed(plan.seed, stable_hash(dataset.profile.name)));
    std::shuffle(items.begin(), items.end(), rng);
    items.resize(plan.prompts_per_cell);
    dataset.prompts = std::move(items);
    plan.benchmarks.push_back(std::move(dataset));
  }

  if (auto it = doc.find("grader"); it != doc.end() && it->is_string()) {
    const auto grader_path = resolve(base_dir, it->get<std::string>());
    std::ifstream in(grader_path);
    if (!in) throw Error(ErrorCode::kConfig, "cannot open grader file " + grader_path.string());
    std::string line;
    std::size_t line_number = 0;
    while (std::getline(in, line)) {
      ++line_number;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      const std::string gctx = grader_path.string() + ":" + std::to_string(line_number);
      const json g = detail::parse_json(line, gctx);
      TrialKey key{{get_field<std::string>(g, "model", gctx),
                    get_field<std::string>(g, "benchmark", gctx),
                    get_field<double>(g, "ratio", gctx)},
                   get_field<std::string>(g, "prompt_id", gctx),
                   0};
      const auto pass = optional_pass(g, "pass1");
      if (pass) plan.grades[key] = *pass;
    }
  }
  return plan;
}

ExperimentPlan build_plan(const std::filesystem::path& config_path) {
  std::string text;
  try {
    text = detail::read_text_file(config_path);
  } catch (const Error& e) {
    throw Error(ErrorCode::kConfig, e.what());
  }
  return build_plan_from_json(text, config_path.parent_path());
}

// ---------------------------------------------------------------------------

JsonlRecordWriter::JsonlRecordWriter(const std::filesystem::path& path) : path_(path) {
  std::ofstream probe(path_, std::ios::app);
  if (!probe) throw Error(ErrorCode::kIo, "cannot open record file " + path_.string());
}

void JsonlRecordWriter::append(const std::string& line) {
  std::lock_guard lock(mutex_);
  std::ofstream out(path_, std::ios::app);
  out << line << '\n';
  out.flush();
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path_.string());
}

void JsonlRecordWriter::on_record(const TrialRecord& record) { append(record_to_jsonl(record)); }
void JsonlRecordWriter::on_error(const TrialError& error) { append(error_to_jsonl(error)); }

namespace {

struct TrialSpec {
  const ModelSpec* model;
  const BenchmarkDataset* benchmark;
  double ratio;
  const PromptItem* prompt;
  std::uint32_t replicate;

  TrialKey key() const {
    return {{model->name, benchmark->profile.name, ratio}, prompt->prompt_id, replicate};
  }
};

std::optional<double> prompt_psi(const BenchmarkDataset& benchmark, const PromptItem& item,
                                 const Prompt& prompt, double ratio) {
  const auto& profile = benchmark.profile;
  if (!item.spans.empty()) {
    const SegmentAnnotation annotation(item.spans, prompt.size());
    return weighted_survival(annotation, ratio, profile.survival_mode, profile.rounding)
        .weighted;
  }
  try {
    return profile_survival(profile, ratio);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kProfileIncomplete) return std::nullopt;
    throw;
  }
}

TrialRecord execute_trial(const ExperimentPlan& plan, const TrialSpec& spec,
                          Backend& backend) {
  const auto& profile = spec.benchmark->profile;
  const Prompt prompt = tokenize(spec.prompt->text, profile.name);
  const Prompt compressed =
      compress_first_n(prompt, CompressionRatio(spec.ratio), profile.rounding);

  CompletionRequest request;
  request.model_name = spec.model->name;
  request.prompt_text = compressed.text();
  request.system_prompt = plan.system_prompt;
  request.temperature = plan.temperature;
  request.max_tokens = plan.max_tokens;
  request.psi = prompt_psi(*spec.benchmark, *spec.prompt, prompt, spec.ratio);
  request.replicate_index = spec.replicate;

  const CompletionResponse response = backend.complete(request);

  TrialRecord record;
  record.model = spec.model->name;
  record.benchmark = profile.name;
  record.ratio = spec.ratio;
  record.prompt_id = spec.prompt->prompt_id;
  record.replicate_index = spec.replicate;
  record.input_tokens = static_cast<std::uint32_t>(compressed.size());
  record.output_tokens = response.output_tokens;
  record.hit_ceiling = response.hit_ceiling;
  record.psi = request.psi;
  record.token_source = response.token_source;
  record.timestamp = utc_timestamp();

  TrialKey grade_key = spec.key();
  grade_key.replicate_index = 0;
  if (auto it = plan.grades.find(grade_key); it != plan.grades.end()) {
    record.pass1 = it->second;
  } else if (ratio_key(spec.ratio) == ratio_key(1.0)) {
    record.pass1 = spec.prompt->pass1_baseline;
  }
  return record;
}

}  // namespace

RunSummary run(const ExperimentPlan& plan, const std::map<std::string, Backend*>& backends,
               RecordSink& sink, const RunOptions& options) {
  std::vector<TrialSpec> trials;
  trials.reserve(plan.total_calls());
  RunSummary summary;
  summary.planned = plan.total_calls();
  for (const auto& model : plan.models) {
    if (!backends.contains(model.name) || backends.at(model.name) == nullptr) {
      throw Error(ErrorCode::kConfig, "no backend for model " + model.name);
    }
    for (const auto& benchmark : plan.benchmarks) {
      for (const auto& ratio : plan.sweep.ratios()) {
        for (const auto& prompt : benchmark.prompts) {
          for (std::uint32_t rep = 0; rep < plan.replicates; ++rep) {
            TrialSpec spec{&model, &benchmark, ratio.value(), &prompt, rep};
            if (options.skip.contains(spec.key())) {
              ++summary.skipped;
            } else {
              trials.push_back(spec);
            }
          }
        }
      }
    }
  }

  std::size_t workers = options.workers;
  if (workers == 0) {
    for (const auto& [name, backend] : backends) workers += backend->max_parallel();
  }
  workers = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(1, trials.size()));
  const std::size_t limit = std::min(trials.size(), options.stop_after.value_or(trials.size()));

  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> completed{0};
  std::atomic<std::size_t> failed{0};
  std::mutex progress_mutex;

  auto worker = [&] {
    for (;;) {
      const std::size_t index = next.fetch_add(1);
      if (index >= limit) return;
      const TrialSpec& spec = trials[index];
      try {
        sink.on_record(execute_trial(plan, spec, *backends.at(spec.model->name)));
        completed.fetch_add(1);
      } catch (const Error& e) {
        if (e.code() == ErrorCode::kIo) throw;
        sink.on_error({spec.key(), e.code(), e.what(), utc_timestamp()});
        failed.fetch_add(1);
      } catch (const std::exception& e) {
        sink.on_error({spec.key(), ErrorCode::kInternal, e.what(), utc_timestamp()});
        failed.fetch_add(1);
      }
      if (options.progress) {
        std::lock_guard lock(progress_mutex);
        options.progress(completed.load() + failed.load(), limit);
      }
    }
  };

  std::exception_ptr fatal;
  std::mutex fatal_mutex;
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t i = 0; i < workers; ++i) {
      pool.emplace_back([&] {
        try {
          worker();
        } catch (...) {
          std::lock_guard lock(fatal_mutex);
          if (!fatal) fatal = std::current_exception();
          next.store(limit);
        }
      });
    }
  }
  if (fatal) std::rethrow_exception(fatal);

  summary.completed = completed.load();
  summary.errors = failed.load();
  return summary;
}

RunSummary run_to_file(const ExperimentPlan& plan, const std::filesystem::path& out_path,
                       const FileRunOptions& options) {
  RunOptions run_options;
  run_options.stop_after = options.stop_after;
  run_options.progress = options.progress;
  if (std::filesystem::exists(out_path)) {
    const RecordFile existing = load_records(out_path);
    for (const auto& r : existing.records) run_options.skip.insert(r.key());
    if (!options.retry_errors) {
      for (const auto& e : existing.errors) run_options.skip.insert(e.key);
    }
  }

  std::vector<std::unique_ptr<Backend>> owned;
  std::map<std::string, Backend*> backends;
  for (const auto& model : plan.models) {
    owned.push_back(make_backend(model.backend, options.transport));
    backends[model.name] = owned.back().get();
  }
  JsonlRecordWriter writer(out_path);
  return run(plan, backends, writer, run_options);
}

// ---------------------------------------------------------------------------

namespace {

TrialKey key_from_json(const json& doc, std::string_view ctx) {
  return {{detail::get_field<std::string>(doc, "model", ctx),
           detail::get_field<std::string>(doc, "benchmark", ctx),
           detail::get_field<double>(doc, "ratio", ctx)},
          detail::get_field<std::string>(doc, "prompt_id", ctx),
          detail::get_field<std::uint32_t>(doc, "replicate_index", ctx)};
}

TrialRecord record_from_json(const json& doc, std::string_view ctx) {
  const TrialKey key = key_from_json(doc, ctx);
  TrialRecord record;
  record.model = key.cell.model;
  record.benchmark = key.cell.benchmark;
  record.ratio = key.cell.ratio;
  record.prompt_id = key.prompt_id;
  record.replicate_index = key.replicate_index;
  record.input_tokens = detail::get_field<std::uint32_t>(doc, "input_tokens", ctx);
  record.output_tokens = detail::get_field<std::uint32_t>(doc, "output_tokens", ctx);
  record.hit_ceiling = detail::get_field<bool>(doc, "hit_ceiling", ctx);
  record.pass1 = optional_pass(doc, "pass1");
  if (auto it = doc.find("psi"); it != doc.end() && !it->is_null()) {
    record.psi = it->get<double>();
    if (!(*record.psi >= 0.0 && *record.psi <= 1.0)) {
      throw Error(ErrorCode::kParse, std::string(ctx) + ": psi outside [0, 1]");
    }
  }
  record.timestamp = detail::get_field_or<std::string>(doc, "timestamp", "", ctx);
  record.token_source =
      detail::get_field_or<std::string>(doc, "token_source", "provider", ctx) == "word_count"
          ? TokenSource::kWordCount
          : TokenSource::kProvider;
  if (record.input_tokens < 1) {
    throw Error(ErrorCode::kParse, std::string(ctx) + ": input_tokens must be >= 1");
  }
  return record;
}

ErrorCode code_from_json(const json& doc) {
  if (auto it = doc.find("error_code_value"); it != doc.end() && it->is_number_integer()) {
    const int value = it->get<int>();
    if (value > 0 && value <= static_cast<int>(ErrorCode::kInternal)) {
      return static_cast<ErrorCode>(value);
    }
  }
  return ErrorCode::kInternal;
}

void load_into(const std::filesystem::path& path, std::map<TrialKey, TrialRecord>& records,
               std::map<TrialKey, TrialError>& errors, std::vector<std::string>& line_errors) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open record file " + path.string());
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string ctx = path.string() + ":" + std::to_string(line_number);
    try {
      const json doc = detail::parse_json(line, ctx);
      const auto kind = detail::get_field_or<std::string>(doc, "kind", "record", ctx);
      if (kind == "error") {
        TrialError error{key_from_json(doc, ctx), code_from_json(doc),
                         detail::get_field_or<std::string>(doc, "message", "", ctx),
                         detail::get_field_or<std::string>(doc, "timestamp", "", ctx)};
        if (!records.contains(error.key)) errors.insert_or_assign(error.key, std::move(error));
      } else if (kind == "record") {
        TrialRecord record = record_from_json(doc, ctx);
        errors.erase(record.key());
        records.insert_or_assign(record.key(), std::move(record));
      } else {
        throw Error(ErrorCode::kParse, ctx + ": unknown kind '" + kind + "'");
      }
    } catch (const Error& e) {
      const std::string what = e.what();
      line_errors.push_back(what.rfind(ctx, 0) == 0 ? what : ctx + ": " + what);
    } catch (const json::exception& e) {
      line_errors.push_back(ctx + ": " + e.what());
    }
  }
}

}  // namespace

RecordFile load_records(std::span<const std::filesystem::path> paths) {
  std::map<TrialKey, TrialRecord> records;
  std::map<TrialKey, TrialError> errors;
  RecordFile out;
  for (const auto& path : paths) load_into(path, records, errors, out.line_errors);
  out.records.reserve(records.size());
  for (auto& [key, record] : records) out.records.push_back(std::move(record));
  for (auto& [key, error] : errors) out.errors.push_back(std::move(error));
  return out;
}

RecordFile load_records(const std::filesystem::path& path) {
  return load_records(std::span<const std::filesystem::path>(&path, 1));
}

std::vector<DeterminismMismatch> verify_determinism(std::span<const TrialRecord> records) {
  std::map<std::pair<CellKey, std::string>, std::map<std::uint32_t, std::uint32_t>> groups;
  for (const auto& r : records) {
    groups[{r.cell(), r.prompt_id}][r.replicate_index] = r.output_tokens;
  }
  std::vector<DeterminismMismatch> mismatches;
  for (const auto& [group, by_replicate] : groups) {
    const auto first = by_replicate.begin()->second;
    const bool differs = std::any_of(by_replicate.begin(), by_replicate.end(),
                                     [&](const auto& kv) { return kv.second != first; });
    if (!differs) continue;
    DeterminismMismatch m{group.first, group.second, {}};
    for (const auto& [rep, tokens] : by_replicate) m.output_tokens.push_back(tokens);
    mismatches.push_back(std::move(m));
  }
  return mismatches;
}

std::vector<TrialRecord> simulate(const VerboseCompensationParams& params,
                                  const SimulationOptions& options) {
  params.validate();
  if (options.psi_grid.empty()) throw Error(ErrorCode::kInvalidArgument, "empty psi grid");
  if (options.trials_per_point == 0) {
    throw Error(ErrorCode::kInvalidArgument, "trials per point must be >= 1");
  }
  std::vector<TrialRecord> out;
  out.reserve(options.psi_grid.size() * options.trials_per_point);
  for (std::size_t j = 0; j < options.psi_grid.size(); ++j) {
    const double psi = options.psi_grid[j];
    if (!(psi >= 0.0 && psi <= 1.0)) {
      throw Error(ErrorCode::kInvalidArgument, fmt::format("psi {} outside [0, 1]", psi));
    }
    Rng rng(substream_seed(options.seed, j));
    const std::string benchmark = fmt::format("psi={:.4f}", psi);
    for (std::size_t i = 0; i < options.trials_per_point; ++i) {
      TrialRecord r;
      r.model = options.model;
      r.benchmark = benchmark;
      r.ratio = 1.0;
      r.prompt_id = fmt::format("sim-{}", i);
      // No prompt exists; 1 keeps the record loadable under the T_in >= 1 rule.
      r.input_tokens = 1;
      r.output_tokens = synthesize_length(params, psi, rng);
      r.hit_ceiling = static_cast<double>(r.output_tokens) >= params.tmax;
      r.psi = psi;
      r.token_source = TokenSource::kWordCount;
      out.push_back(std::move(r));
    }
  }
  return out;
}

}  // namespace compressbench
