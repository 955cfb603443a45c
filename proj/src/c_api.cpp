#include "compressbench/compressbench.h"

#include <algorithm>
#include <cstdlib>
#include <cstring>
#include <new>

#include <fmt/format.h>

#include "compressbench/backends.hpp"
#include "compressbench/compression.hpp"
#include "compressbench/metrics.hpp"
#include "compressbench/prompt.hpp"
#include "compressbench/report.hpp"
#include "compressbench/stats.hpp"
#include "compressbench/trial_engine.hpp"
#include "io_util.hpp"

using namespace compressbench;
using nlohmann::json;

struct cb_prompt {
  Prompt prompt;
};

struct cb_profile {
  BenchmarkProfile profile;
};

namespace {

thread_local std::string g_last_error;

cb_status fail(ErrorCode code, std::string message) {
  g_last_error = std::move(message);
  return static_cast<cb_status>(code);
}

// Runs body, translating exceptions into status codes and messages.
template <typename F>
cb_status guarded(F&& body) {
  try {
    body();
    return CB_OK;
  } catch (const TobitConvergenceError& e) {
    std::string message = e.what();
    for (const auto& line : e.trace()) message += "\n  " + line;
    return fail(e.code(), std::move(message));
  } catch (const Error& e) {
    return fail(e.code(), e.what());
  } catch (const std::bad_alloc&) {
    return fail(ErrorCode::kInternal, "out of memory");
  } catch (const std::exception& e) {
    return fail(ErrorCode::kInternal, e.what());
  } catch (...) {
    return fail(ErrorCode::kInternal, "unknown exception");
  }
}

void require(const void* p, const char* what) {
  if (p == nullptr) throw Error(ErrorCode::kInvalidArgument, std::string(what) + " is NULL");
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out == nullptr) throw std::bad_alloc();
  std::memcpy(out, s.data(), s.size() + 1);
  return out;
}

Rounding to_rounding(cb_rounding r) {
  switch (r) {
    case CB_ROUND_FLOOR:
      return Rounding::kFloor;
    case CB_ROUND_NEAREST:
      return Rounding::kNearest;
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown rounding mode");
}

SurvivalMode to_mode(cb_survival_kind kind, double threshold) {
  switch (kind) {
    case CB_SURVIVAL_STRICT:
      return SurvivalMode::strict();
    case CB_SURVIVAL_FRACTIONAL:
      return SurvivalMode::fractional(threshold);
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown survival mode");
}

VerboseCompensationParams to_params(const cb_vc_params& p) {
  VerboseCompensationParams out;
  out.t0 = p.t0;
  out.alpha = p.alpha;
  out.tau = p.tau;
  out.tmax = p.tmax;
  out.beta = p.beta;
  out.dispersion_linear = p.dispersion_linear;
  out.dispersion_ceiling = p.dispersion_ceiling;
  out.validate();
  return out;
}

std::vector<std::filesystem::path> to_paths(const char* const* paths, std::size_t n) {
  if (n > 0) require(paths, "paths");
  std::vector<std::filesystem::path> out;
  for (std::size_t i = 0; i < n; ++i) {
    require(paths[i], "path");
    out.emplace_back(paths[i]);
  }
  return out;
}

json segments_json(std::span<const SegmentSpan> spans, const SurvivalResult& result) {
  json out = json::array();
  for (std::size_t i = 0; i < spans.size() && i < result.per_segment.size(); ++i) {
    out.push_back({{"label", spans[i].label},
                   {"a", spans[i].a},
                   {"b", spans[i].b},
                   {"weight", spans[i].weight},
                   {"psi", result.per_segment[i].psi}});
  }
  return out;
}

}  // namespace

extern "C" {

const char* cb_status_name(cb_status status) {
  if (status < CB_OK || status > CB_INTERNAL) return "Unknown";
  return error_code_name(static_cast<ErrorCode>(status)).data();
}

const char* cb_last_error(void) { return g_last_error.c_str(); }

const char* cb_version(void) { return "0.1.0"; }

void cb_string_free(char* s) { std::free(s); }

void cb_doubles_free(double* values) { std::free(values); }

// ---- prompts ---------------------------------------------------------------

cb_status cb_prompt_create(const char* text, cb_prompt** out) {
  return guarded([&] {
    require(text, "text");
    require(out, "out");
    *out = new cb_prompt{tokenize(text)};
  });
}

void cb_prompt_free(cb_prompt* prompt) { delete prompt; }

size_t cb_prompt_length(const cb_prompt* prompt) {
  return prompt == nullptr ? 0 : prompt->prompt.size();
}

cb_status cb_prompt_text(const cb_prompt* prompt, char** out) {
  return guarded([&] {
    require(prompt, "prompt");
    require(out, "out");
    *out = dup_string(prompt->prompt.text());
  });
}

cb_status cb_prompt_compress(const cb_prompt* prompt, double ratio, cb_rounding rounding,
                             cb_prompt** out) {
  return guarded([&] {
    require(prompt, "prompt");
    require(out, "out");
    Prompt compressed =
        compress_first_n(prompt->prompt, CompressionRatio(ratio), to_rounding(rounding));
    *out = new cb_prompt{std::move(compressed)};
  });
}

cb_status cb_retained_count(size_t n, double ratio, cb_rounding rounding, size_t* out) {
  return guarded([&] {
    require(out, "out");
    *out = retained_count(n, ratio, to_rounding(rounding));
  });
}

// ---- survival --------------------------------------------------------------

cb_status cb_weighted_survival(const cb_span* spans, size_t n_spans, size_t prompt_length,
                               double ratio, cb_survival_kind kind, double threshold,
                               cb_rounding rounding, double* psi, double* per_segment) {
  return guarded([&] {
    require(spans, "spans");
    require(psi, "psi");
    std::vector<SegmentSpan> items;
    for (size_t i = 0; i < n_spans; ++i) {
      items.push_back({spans[i].a, spans[i].b, spans[i].weight,
                       spans[i].label != nullptr ? spans[i].label : ""});
    }
    const SurvivalMode mode = to_mode(kind, threshold);
    const Rounding round = to_rounding(rounding);
    const SegmentAnnotation annotation(items, prompt_length);
    const double weighted = weighted_survival(annotation, ratio, mode, round).weighted;
    if (per_segment != nullptr) {
      for (size_t i = 0; i < n_spans; ++i) {
        per_segment[i] = segment_survival(items[i], prompt_length, ratio, mode, round);
      }
    }
    *psi = weighted;
  });
}

cb_status cb_profile_load(const char* path, cb_profile** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = new cb_profile{load_profile(path)};
  });
}

cb_status cb_profile_parse(const char* text, cb_profile** out) {
  return guarded([&] {
    require(text, "json");
    require(out, "out");
    *out = new cb_profile{parse_profile(text)};
  });
}

void cb_profile_free(cb_profile* profile) { delete profile; }

const char* cb_profile_name(const cb_profile* profile) {
  return profile == nullptr ? "" : profile->profile.name.c_str();
}

double cb_profile_mean_tokens(const cb_profile* profile) {
  return profile == nullptr ? 0.0 : profile->profile.mean_tokens;
}

cb_status cb_profile_survival(const cb_profile* profile, double ratio, double* psi) {
  return guarded([&] {
    require(profile, "profile");
    require(psi, "psi");
    *psi = profile_survival(profile->profile, ratio);
  });
}

cb_status cb_profile_survival_json(const cb_profile* profile, double ratio, char** out) {
  return guarded([&] {
    require(profile, "profile");
    require(out, "out");
    const BenchmarkProfile& p = profile->profile;
    const SurvivalResult result = profile_survival_detail(p, ratio);
    bool from_table = false;
    for (const auto& [r, value] : p.psi_table) {
      if (std::abs(r - ratio) <= 1e-9) from_table = true;
    }
    json doc = {{"benchmark", p.name},
                {"ratio", ratio},
                {"psi", result.weighted},
                {"source", from_table ? "table" : "template"},
                {"segments", json::array()}};
    if (!from_table) {
      const SegmentAnnotation annotation(p.template_spans, p.template_length());
      doc["segments"] = segments_json(annotation.spans(), result);
    }
    *out = dup_string(doc.dump());
  });
}

cb_status cb_prompt_file_survival_json(const char* path, double ratio, cb_survival_kind kind,
                                       double threshold, cb_rounding rounding, char** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    const SurvivalMode mode = to_mode(kind, threshold);
    const Rounding round = to_rounding(rounding);
    check_ratio(ratio);
    json doc = json::array();
    for (const auto& item : load_prompt_dataset(path)) {
      const Prompt prompt = tokenize(item.text);
      json row = {{"prompt_id", item.prompt_id},
                  {"tokens", prompt.size()},
                  {"psi", nullptr},
                  {"segments", json::array()}};
      if (!item.spans.empty()) {
        try {
          const SegmentAnnotation annotation(item.spans, prompt.size());
          const SurvivalResult result = weighted_survival(annotation, ratio, mode, round);
          row["psi"] = result.weighted;
          row["segments"] = segments_json(annotation.spans(), result);
        } catch (const Error& e) {
          throw Error(e.code(), fmt::format("{}: prompt {}: {}", path, item.prompt_id, e.what()));
        }
      }
      doc.push_back(std::move(row));
    }
    *out = dup_string(doc.dump());
  });
}

// ---- metrics ---------------------------------------------------------------

cb_status cb_energy(double t_in, double t_out, double eps_in_mj, double eps_out_mj, double* out) {
  return guarded([&] {
    require(out, "out");
    *out = energy(t_in, t_out, EnergyModel{eps_in_mj, eps_out_mj});
  });
}

cb_status cb_explosion_ratio(double baseline, double compressed, double* out) {
  return guarded([&] {
    require(out, "out");
    *out = explosion_ratio(baseline, compressed);
  });
}

cb_status cb_weighted_mixture(const double* values, const double* weights, size_t n,
                              double* out) {
  return guarded([&] {
    require(values, "values");
    require(weights, "weights");
    require(out, "out");
    *out = weighted_mixture(std::span<const double>(values, n),
                            std::span<const double>(weights, n));
  });
}

cb_status cb_cri(const cb_outcome* outcomes, size_t n, const double* weights, double* result,
                 cb_cri_term* terms) {
  return guarded([&] {
    require(outcomes, "outcomes");
    require(result, "cri");
    std::vector<BenchmarkOutcome> items;
    for (size_t i = 0; i < n; ++i) {
      const auto& o = outcomes[i];
      items.push_back({o.benchmark != nullptr ? o.benchmark : "", o.q0, o.qr, o.t0, o.tr,
                       o.tmax});
    }
    std::optional<std::span<const double>> w;
    if (weights != nullptr) w = std::span<const double>(weights, n);
    const CriReport report = cri(items, w);
    *result = report.cri;
    if (terms != nullptr) {
      for (size_t i = 0; i < n; ++i) {
        const auto& t = report.terms[i];
        terms[i] = {t.quality_retention, t.length_factor, t.term, t.weight,
                    t.excluded ? 1 : 0, t.exceeds_one ? 1 : 0};
      }
    }
  });
}

// ---- statistics ------------------------------------------------------------

cb_status cb_welch_t(const double* a, size_t na, const double* b, size_t nb,
                     cb_welch_result* out) {
  return guarded([&] {
    require(a, "a");
    require(b, "b");
    require(out, "out");
    const WelchResult r =
        welch_t(std::span<const double>(a, na), std::span<const double>(b, nb));
    *out = {r.t_statistic, r.degrees_of_freedom, r.p_value, r.degenerate ? 1 : 0};
  });
}

void cb_bootstrap_options_init(cb_bootstrap_options* options) {
  if (options == nullptr) return;
  const BootstrapOptions defaults;
  *options = {defaults.resamples, defaults.level, defaults.seed, defaults.threads};
}

cb_status cb_bootstrap_bca(const double* x, size_t n, cb_statistic statistic,
                           const cb_bootstrap_options* options, cb_interval* out) {
  return guarded([&] {
    require(x, "x");
    require(out, "out");
    BootstrapOptions opts;
    if (options != nullptr) {
      opts = {options->resamples, options->level, options->seed, options->threads};
    }
    const std::span<const double> sample(x, n);
    BootstrapCI ci;
    switch (statistic) {
      case CB_STAT_MEAN:
        ci = bootstrap_mean_bca(sample, opts);
        break;
      case CB_STAT_MEDIAN:
        ci = bootstrap_bca(
            sample,
            [](std::span<const double> s) {
              std::vector<double> v(s.begin(), s.end());
              std::sort(v.begin(), v.end());
              return sorted_quantile(v, 0.5);
            },
            opts);
        break;
      default:
        throw Error(ErrorCode::kInvalidArgument, "unknown statistic");
    }
    *out = {ci.statistic, ci.lower, ci.upper, ci.level, ci.bias_correction, ci.acceleration,
            ci.degenerate ? 1 : 0};
  });
}

cb_status cb_tobit_fit(const double* y, size_t n, double ceiling, cb_tobit_result* out) {
  return guarded([&] {
    require(y, "y");
    require(out, "out");
    const TobitFit fit = tobit_fit(std::span<const double>(y, n), ceiling);
    *out = {fit.mu,
            fit.sigma,
            fit.censored_fraction,
            fit.log_likelihood,
            fit.standardized_bound,
            fit.iterations,
            fit.uncensored_fallback ? 1 : 0};
  });
}

cb_status cb_truncated_mean(double mu, double sigma, double ceiling, double* out) {
  return guarded([&] {
    require(out, "out");
    *out = truncated_mean(mu, sigma, ceiling);
  });
}

cb_status cb_threshold_fit(const double* psi, const double* mean_tout, size_t n,
                           cb_threshold_result* out) {
  return guarded([&] {
    require(psi, "psi");
    require(mean_tout, "mean_tout");
    require(out, "out");
    std::vector<ThresholdPoint> points;
    for (size_t i = 0; i < n; ++i) points.push_back({psi[i], mean_tout[i]});
    const ThresholdFit fit = fit_threshold_model(points);
    *out = {fit.tau,        fit.intercept, fit.slope_low, fit.slope_high,
            fit.rss,        fit.candidates, fit.degenerate_break ? 1 : 0};
  });
}

// ---- synthetic -------------------------------------------------------------

cb_status cb_params_load(const char* path, cb_vc_params* out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    VerboseCompensationParams p;
    try {
      p = parse_params(detail::read_text_file(path));
    } catch (const Error& e) {
      throw Error(e.code(), fmt::format("{}: {}", path, e.what()));
    }
    *out = {p.t0, p.alpha, p.tau, p.tmax, p.beta, p.dispersion_linear, p.dispersion_ceiling};
  });
}

cb_status cb_synthesize_lengths(const cb_vc_params* params, double psi, uint64_t seed,
                                size_t count, double* out) {
  return guarded([&] {
    require(params, "params");
    if (count > 0) require(out, "out");
    const VerboseCompensationParams p = to_params(*params);
    Rng rng(seed);
    for (size_t i = 0; i < count; ++i) out[i] = synthesize_length(p, psi, rng);
  });
}

cb_status cb_simulate(const cb_simulate_request* request, char** summary_json) {
  return guarded([&] {
    require(request, "request");
    if (request->n_psi > 0) require(request->psi_grid, "psi_grid");
    SimulationOptions options;
    options.psi_grid.assign(request->psi_grid, request->psi_grid + request->n_psi);
    options.trials_per_point = request->trials_per_point;
    options.seed = request->seed;
    const std::vector<TrialRecord> records = simulate(to_params(request->params), options);

    if (request->out_path != nullptr) {
      std::ofstream file(request->out_path, std::ios::binary | std::ios::trunc);
      if (!file) throw Error(ErrorCode::kIo, fmt::format("cannot write {}", request->out_path));
      for (const auto& r : records) file << record_to_jsonl(r) << '\n';
      if (!file) throw Error(ErrorCode::kIo, fmt::format("write failed: {}", request->out_path));
    }
    if (summary_json != nullptr) {
      json doc = json::array();
      for (const auto& cell : summarize_cells(records)) {
        doc.push_back({{"psi", detail::parse_double(cell.cell.benchmark.substr(4), "psi")},
                       {"trials", cell.n_obs},
                       {"mean_tout", cell.mean_tout},
                       {"sd", cell.sd},
                       {"ceiling_fraction", cell.ceiling_fraction}});
      }
      *summary_json = dup_string(doc.dump());
    }
  });
}

// ---- experiments and records -----------------------------------------------

void cb_run_options_init(cb_run_options* options) {
  if (options == nullptr) return;
  *options = {-1, 0, -1, nullptr, nullptr};
}

cb_status cb_run_plan(const char* config_path, const char* out_path,
                      const cb_run_options* options, cb_run_summary* summary) {
  return guarded([&] {
    require(config_path, "config_path");
    require(out_path, "out_path");
    ExperimentPlan plan = build_plan(config_path);
    FileRunOptions run_options;
    if (options != nullptr) {
      if (options->stop_after >= 0) {
        run_options.stop_after = static_cast<std::size_t>(options->stop_after);
      }
      run_options.retry_errors = options->retry_errors != 0;
      if (options->seed_override >= 0) {
        // Re-seeding changes the prompt sample and synthetic draws.
        const std::string text = detail::read_text_file(config_path);
        json doc = detail::parse_json(text, config_path);
        doc["seed"] = static_cast<std::uint64_t>(options->seed_override);
        plan = build_plan_from_json(doc.dump(),
                                    std::filesystem::path(config_path).parent_path());
      }
      if (options->progress != nullptr) {
        const cb_progress_fn fn = options->progress;
        void* user = options->progress_user;
        run_options.progress = [fn, user](std::size_t done, std::size_t total) {
          fn(done, total, user);
        };
      }
    }
    const RunSummary s = run_to_file(plan, out_path, run_options);
    if (summary != nullptr) *summary = {s.planned, s.skipped, s.completed, s.errors};
  });
}

cb_status cb_records_output_tokens(const char* const* paths, size_t n_paths, const char* model,
                                   const char* benchmark, double ratio, double** values,
                                   size_t* n_values) {
  return guarded([&] {
    require(model, "model");
    require(benchmark, "benchmark");
    require(values, "values");
    require(n_values, "n_values");
    const auto files = to_paths(paths, n_paths);
    const RecordFile file = load_records(files);
    const CellKey cell{model, benchmark, ratio};
    std::vector<double> out;
    for (const auto& r : file.records) {
      if (r.cell() == cell) out.push_back(r.output_tokens);
    }
    if (out.empty()) {
      throw Error(ErrorCode::kEmptyCell, fmt::format("no records for {} / {} / r={}", model,
                                                     benchmark, ratio));
    }
    auto* buffer = static_cast<double*>(std::malloc(out.size() * sizeof(double)));
    if (buffer == nullptr) throw std::bad_alloc();
    std::copy(out.begin(), out.end(), buffer);
    *values = buffer;
    *n_values = out.size();
  });
}

cb_status cb_verify_determinism(const char* const* paths, size_t n_paths, size_t* n_mismatches,
                                char** mismatches_json) {
  return guarded([&] {
    require(n_mismatches, "n_mismatches");
    const auto files = to_paths(paths, n_paths);
    const RecordFile file = load_records(files);
    const auto mismatches = verify_determinism(file.records);
    *n_mismatches = mismatches.size();
    if (mismatches_json != nullptr) {
      json doc = json::array();
      for (const auto& m : mismatches) {
        doc.push_back({{"model", m.cell.model},
                       {"benchmark", m.cell.benchmark},
                       {"ratio", m.cell.ratio},
                       {"prompt_id", m.prompt_id},
                       {"output_tokens", m.output_tokens}});
      }
      *mismatches_json = dup_string(doc.dump());
    }
  });
}

// ---- reports ---------------------------------------------------------------

namespace {

ReportFormat to_format(cb_format format) {
  switch (format) {
    case CB_FORMAT_TABLE:
      return ReportFormat::kTable;
    case CB_FORMAT_CSV:
      return ReportFormat::kCsv;
    case CB_FORMAT_MARKDOWN:
      return ReportFormat::kMarkdown;
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown report format");
}

}  // namespace

cb_status cb_render_table(const char* title, const char* const* headers, size_t n_columns,
                          const char* const* cells, size_t n_rows,
                          const char* const* footnotes, size_t n_footnotes, cb_format format,
                          char** out) {
  return guarded([&] {
    require(headers, "headers");
    require(out, "out");
    if (n_rows > 0) require(cells, "cells");
    if (n_footnotes > 0) require(footnotes, "footnotes");
    auto text = [](const char* s) { return std::string(s != nullptr ? s : ""); };
    std::vector<std::string> head;
    for (size_t c = 0; c < n_columns; ++c) head.push_back(text(headers[c]));
    ReportTable table(text(title), head);
    for (size_t r = 0; r < n_rows; ++r) {
      std::vector<std::string> row;
      for (size_t c = 0; c < n_columns; ++c) row.push_back(text(cells[r * n_columns + c]));
      table.add_row(std::move(row));
    }
    for (size_t i = 0; i < n_footnotes; ++i) table.add_footnote(text(footnotes[i]));
    *out = dup_string(render(table, to_format(format)));
  });
}

cb_status cb_format_fixed(double value, int decimals, char** out) {
  return guarded([&] {
    require(out, "out");
    if (decimals < 0 || decimals > 17) {
      throw Error(ErrorCode::kInvalidArgument, "decimals must lie in [0, 17]");
    }
    *out = dup_string(format_fixed(value, decimals));
  });
}

void cb_report_request_init(cb_report_request* request) {
  if (request == nullptr) return;
  *request = cb_report_request{};
  const ReportOptions defaults;
  request->ratio = defaults.ratio;
  request->tmax = defaults.tmax;
  request->eps_in_mj = defaults.energy.eps_in_mj;
  request->eps_out_mj = defaults.energy.eps_out_mj;
  request->bootstrap_resamples = defaults.bootstrap.resamples;
  request->seed = defaults.bootstrap.seed;
  request->sections = CB_SECTION_ALL;
  request->format = CB_FORMAT_TABLE;
}

cb_status cb_report_render(const cb_report_request* request, char** text, char** warnings) {
  return guarded([&] {
    require(request, "request");
    require(text, "text");
    std::vector<std::string> notes;
    std::map<std::string, BenchmarkProfile> profiles;
    if (request->profiles_dir != nullptr) profiles = load_profiles(request->profiles_dir);

    ReportInput input;
    if (request->n_record_paths > 0) {
      const auto files = to_paths(request->record_paths, request->n_record_paths);
      input = report_input_from_records(files, notes);
    } else if (request->fixture_path != nullptr) {
      if (profiles.empty()) {
        throw Error(ErrorCode::kConfig, "a fixture needs benchmark profiles for input tokens");
      }
      FixtureData fixture = load_fixture(request->fixture_path, profile_mean_tokens(profiles));
      input.cells = std::move(fixture.cells);
      input.recorded_energy_mj = std::move(fixture.recorded_energy_mj);
    } else {
      throw Error(ErrorCode::kInvalidArgument, "no record files and no fixture given");
    }
    input.profiles = std::move(profiles);

    ReportOptions options;
    options.ratio = request->ratio;
    options.tmax = request->tmax;
    options.energy = {request->eps_in_mj, request->eps_out_mj};
    options.bootstrap.resamples = request->bootstrap_resamples;
    options.bootstrap.seed = request->seed;
    options.sections = request->sections;
    if (request->n_weights > 0) {
      require(request->weight_benchmarks, "weight_benchmarks");
      require(request->weights, "weights");
      std::vector<double> w(request->weights, request->weights + request->n_weights);
      for (size_t i = 0; i < request->n_weights; ++i) {
        require(request->weight_benchmarks[i], "weight benchmark");
        options.custom_weights[request->weight_benchmarks[i]] = request->weights[i];
      }
      // Same sum check as the library mixture.
      weighted_mixture(std::vector<double>(w.size(), 0.0), w);
    }
    const ReportFormat format = to_format(request->format);
    Report report = build_report(input, options);
    for (auto& w : report.warnings) notes.push_back(std::move(w));
    std::string joined;
    for (const auto& n : notes) joined += n + "\n";
    const std::string rendered = render_all(report.tables, format);
    char* warnings_out = warnings != nullptr ? dup_string(joined) : nullptr;
    *text = dup_string(rendered);
    if (warnings != nullptr) *warnings = warnings_out;
  });
}

}  // extern "C"
