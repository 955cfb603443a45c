// Command-line front end. Talks to the library only through the C API.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "compressbench/compressbench.h"

#ifndef COMPRESSBENCH_DATA_DIR
#define COMPRESSBENCH_DATA_DIR "data"
#endif

namespace {

using nlohmann::json;

// Library failure carried up to main() for the error line.
struct CliFailure {
  std::string code;
  std::string message;
};

void check(cb_status status) {
  if (status != CB_OK) throw CliFailure{cb_status_name(status), cb_last_error()};
}

[[noreturn]] void usage_failure(const std::string& message) {
  throw CliFailure{cb_status_name(CB_INVALID_ARGUMENT), message};
}

std::string take(char* s) {
  std::string out = s != nullptr ? s : "";
  cb_string_free(s);
  return out;
}

std::string fixed(double value, int decimals) {
  char* out = nullptr;
  check(cb_format_fixed(value, decimals, &out));
  return take(out);
}

cb_format parse_format(const std::string& name) {
  if (name == "table") return CB_FORMAT_TABLE;
  if (name == "csv") return CB_FORMAT_CSV;
  if (name == "markdown") return CB_FORMAT_MARKDOWN;
  usage_failure("unknown format '" + name + "'");
}

cb_rounding parse_rounding(const std::string& name) {
  if (name == "floor") return CB_ROUND_FLOOR;
  if (name == "nearest") return CB_ROUND_NEAREST;
  usage_failure("unknown rounding '" + name + "'");
}

struct Table {
  std::string title;
  std::vector<std::string> headers;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> footnotes;

  std::string render(cb_format format) const {
    std::vector<const char*> head;
    for (const auto& h : headers) head.push_back(h.c_str());
    std::vector<const char*> cells;
    for (const auto& row : rows) {
      for (const auto& c : row) cells.push_back(c.c_str());
    }
    std::vector<const char*> notes;
    for (const auto& n : footnotes) notes.push_back(n.c_str());
    char* out = nullptr;
    check(cb_render_table(title.c_str(), head.data(), head.size(), cells.data(), rows.size(),
                          notes.data(), notes.size(), format, &out));
    return take(out);
  }
};

// Writes to --out when given, otherwise standard output.
void emit(const std::string& text, const std::string& out_path) {
  if (out_path.empty()) {
    std::cout << text;
    std::cout.flush();
    return;
  }
  std::ofstream file(out_path, std::ios::binary | std::ios::trunc);
  if (!file) throw CliFailure{cb_status_name(CB_IO), "cannot write " + out_path};
  file << text;
}

std::vector<double> read_numbers(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CliFailure{cb_status_name(CB_IO), "cannot open " + path};
  std::vector<double> out;
  std::string token;
  std::size_t index = 0;
  while (in >> token) {
    ++index;
    if (token.find_first_not_of("0123456789+-.eE") != std::string::npos) {
      if (index == 1) continue;  // header line
      throw CliFailure{cb_status_name(CB_PARSE),
                       path + ": not a number: '" + token + "'"};
    }
    std::istringstream parse(token);
    parse.imbue(std::locale::classic());
    double v = 0.0;
    if (!(parse >> v)) {
      throw CliFailure{cb_status_name(CB_PARSE), path + ": not a number: '" + token + "'"};
    }
    out.push_back(v);
  }
  return out;
}

struct CellRef {
  std::string model;
  std::string benchmark;
  double ratio = 1.0;
};

CellRef parse_cell(const std::string& text) {
  // MODEL/BENCHMARK/RATIO
  const auto first = text.find('/');
  const auto last = text.rfind('/');
  if (first == std::string::npos || first == last) {
    usage_failure("cell must be MODEL/BENCHMARK/RATIO, got '" + text + "'");
  }
  CellRef cell{text.substr(0, first), text.substr(first + 1, last - first - 1), 0.0};
  try {
    cell.ratio = std::stod(text.substr(last + 1));
  } catch (const std::exception&) {
    usage_failure("bad ratio in cell '" + text + "'");
  }
  return cell;
}

// A sample is a numbers file, or a cell of the --records files.
std::vector<double> load_sample(const std::string& source,
                                const std::vector<std::string>& records) {
  if (source.rfind("cell=", 0) != 0) return read_numbers(source);
  if (records.empty()) usage_failure("cell= samples need --records");
  const CellRef cell = parse_cell(source.substr(5));
  std::vector<const char*> paths;
  for (const auto& r : records) paths.push_back(r.c_str());
  double* values = nullptr;
  std::size_t n = 0;
  check(cb_records_output_tokens(paths.data(), paths.size(), cell.model.c_str(),
                                 cell.benchmark.c_str(), cell.ratio, &values, &n));
  std::vector<double> out(values, values + n);
  cb_doubles_free(values);
  return out;
}

std::string data_path(const std::string& relative) {
  return std::string(COMPRESSBENCH_DATA_DIR) + "/" + relative;
}

struct Shared {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string format = "table";
};

void add_shared(CLI::App* cmd, Shared& shared, bool with_config = true) {
  if (with_config) cmd->add_option("--config", shared.config, "Configuration file");
  cmd->add_option("--seed", shared.seed, "Random seed");
  cmd->add_option("--out", shared.out, "Output path");
  cmd->add_option("--format", shared.format, "Output format")
      ->check(CLI::IsMember({"table", "csv", "markdown"}));
}

// ---- psi ------------------------------------------------------------------

struct PsiArgs {
  std::vector<std::string> profiles;
  std::string prompts;
  std::vector<double> ratios{1.0, 0.7, 0.5, 0.3};
  std::string mode = "strict";
  double threshold = 0.75;
  std::string rounding = "floor";
};

std::string segments_text(const json& segments) {
  std::string out;
  for (const auto& s : segments) {
    if (!out.empty()) out += "; ";
    out += s.at("label").get<std::string>() + "=" + fixed(s.at("psi").get<double>(), 2);
  }
  return out.empty() ? "-" : out;
}

void cmd_psi(const PsiArgs& args, const Shared& shared) {
  if (args.profiles.empty() == args.prompts.empty()) {
    usage_failure("give either --profile or --prompts");
  }
  Table table{"Instruction survival", {"Input", "r", "Psi", "Segments"}, {}, {}};
  for (const auto& path : args.profiles) {
    cb_profile* raw = nullptr;
    check(cb_profile_load(path.c_str(), &raw));
    std::unique_ptr<cb_profile, decltype(&cb_profile_free)> profile(raw, cb_profile_free);
    for (double r : args.ratios) {
      char* out = nullptr;
      const cb_status status = cb_profile_survival_json(profile.get(), r, &out);
      if (status == CB_PROFILE_INCOMPLETE) {
        table.rows.push_back({cb_profile_name(profile.get()), fixed(r, 2), "-", "-"});
        table.footnotes.push_back(cb_last_error());
        continue;
      }
      check(status);
      const json doc = json::parse(take(out));
      std::string segments = segments_text(doc.at("segments"));
      if (doc.at("source") == "table") segments = "(table value)";
      table.rows.push_back({cb_profile_name(profile.get()), fixed(r, 2),
                            fixed(doc.at("psi").get<double>(), 4), segments});
    }
  }
  if (!args.prompts.empty()) {
    const cb_survival_kind kind =
        args.mode == "fractional" ? CB_SURVIVAL_FRACTIONAL : CB_SURVIVAL_STRICT;
    for (double r : args.ratios) {
      char* out = nullptr;
      check(cb_prompt_file_survival_json(args.prompts.c_str(), r, kind, args.threshold,
                                         parse_rounding(args.rounding), &out));
      for (const auto& row : json::parse(take(out))) {
        const std::string psi =
            row.at("psi").is_null() ? "-" : fixed(row.at("psi").get<double>(), 4);
        table.rows.push_back({row.at("prompt_id").get<std::string>(), fixed(r, 2), psi,
                              segments_text(row.at("segments"))});
      }
    }
  }
  emit(table.render(parse_format(shared.format)), shared.out);
}

// ---- compress ---------------------------------------------------------------

struct CompressArgs {
  std::string text;
  std::string file;
  std::vector<double> ratios{0.3};
  std::string rounding = "floor";
};

void cmd_compress(const CompressArgs& args, const Shared& shared) {
  std::string text = args.text;
  if (!args.file.empty()) {
    std::ifstream in(args.file, std::ios::binary);
    if (!in) throw CliFailure{cb_status_name(CB_IO), "cannot open " + args.file};
    std::ostringstream buffer;
    buffer << in.rdbuf();
    text = buffer.str();
  }
  cb_prompt* raw = nullptr;
  check(cb_prompt_create(text.c_str(), &raw));
  std::unique_ptr<cb_prompt, decltype(&cb_prompt_free)> prompt(raw, cb_prompt_free);
  const cb_format format = parse_format(shared.format);
  Table table{"First-N-words compression", {"r", "Kept", "Of", "Text"}, {}, {}};
  for (double r : args.ratios) {
    cb_prompt* out = nullptr;
    check(cb_prompt_compress(prompt.get(), r, parse_rounding(args.rounding), &out));
    std::unique_ptr<cb_prompt, decltype(&cb_prompt_free)> compressed(out, cb_prompt_free);
    char* body = nullptr;
    check(cb_prompt_text(compressed.get(), &body));
    table.rows.push_back({fixed(r, 2), std::to_string(cb_prompt_length(compressed.get())),
                          std::to_string(cb_prompt_length(prompt.get())), take(body)});
  }
  if (format == CB_FORMAT_TABLE && table.rows.size() == 1) {
    emit(table.rows.front().back() + "\n", shared.out);
  } else {
    emit(table.render(format), shared.out);
  }
}

// ---- run ------------------------------------------------------------------

struct RunArgs {
  std::optional<std::int64_t> stop_after;
  bool retry_errors = false;
  bool progress = false;
};

void print_progress(std::size_t done, std::size_t total, void*) {
  std::fprintf(stderr, "\rprogress: %zu/%zu", done, total);
  if (done == total) std::fprintf(stderr, "\n");
}

void cmd_run(const RunArgs& args, const Shared& shared) {
  if (shared.config.empty()) usage_failure("run needs --config");
  if (shared.out.empty()) usage_failure("run needs --out");
  cb_run_options options;
  cb_run_options_init(&options);
  if (args.stop_after) options.stop_after = *args.stop_after;
  options.retry_errors = args.retry_errors ? 1 : 0;
  if (shared.seed) options.seed_override = static_cast<std::int64_t>(*shared.seed);
  if (args.progress) options.progress = print_progress;
  cb_run_summary summary{};
  check(cb_run_plan(shared.config.c_str(), shared.out.c_str(), &options, &summary));
  std::cout << "planned=" << summary.planned << " skipped=" << summary.skipped
            << " completed=" << summary.completed << " errors=" << summary.errors << "\n";
}

// ---- simulate -------------------------------------------------------------

struct SimulateArgs {
  std::vector<double> psi{0.05, 0.15, 0.25, 0.35, 0.45, 0.55, 0.65, 0.75, 0.85, 0.95};
  std::size_t trials = 10000;
  std::string records_out;
};

void cmd_simulate(const SimulateArgs& args, const Shared& shared) {
  if (shared.config.empty()) usage_failure("simulate needs --config (parameter file)");
  cb_simulate_request request{};
  check(cb_params_load(shared.config.c_str(), &request.params));
  request.psi_grid = args.psi.data();
  request.n_psi = args.psi.size();
  request.trials_per_point = args.trials;
  request.seed = shared.seed.value_or(0);
  request.out_path = shared.out.empty() ? nullptr : shared.out.c_str();
  char* summary = nullptr;
  check(cb_simulate(&request, &summary));
  const json doc = json::parse(take(summary));

  Table table{"Synthetic verbose-compensation draws",
              {"Psi", "Trials", "Mean T_out", "SD", "Ceiling %"},
              {},
              {}};
  std::vector<double> psi;
  std::vector<double> mean;
  for (const auto& row : doc) {
    psi.push_back(row.at("psi").get<double>());
    mean.push_back(row.at("mean_tout").get<double>());
    table.rows.push_back({fixed(psi.back(), 3), std::to_string(row.at("trials").get<std::size_t>()),
                          fixed(mean.back(), 1), fixed(row.at("sd").get<double>(), 1),
                          fixed(100.0 * row.at("ceiling_fraction").get<double>(), 1)});
  }
  if (psi.size() >= 4) {
    cb_threshold_result fit{};
    if (cb_threshold_fit(psi.data(), mean.data(), psi.size(), &fit) == CB_OK) {
      table.footnotes.push_back("threshold fit: tau=" + fixed(fit.tau, 3) + " intercept=" +
                                fixed(fit.intercept, 1) + " slope_below=" +
                                fixed(fit.slope_low, 1) + " slope_above=" +
                                fixed(fit.slope_high, 1));
    } else {
      table.footnotes.push_back(std::string("threshold fit: ") + cb_last_error());
    }
  }
  std::cout << table.render(parse_format(shared.format));
}

// ---- report / cri -----------------------------------------------------------

struct ReportArgs {
  std::vector<std::string> records;
  std::string fixture;
  std::string profiles;
  double ratio = 0.3;
  double tmax = 1024.0;
  double eps_in = 0.15;
  double eps_out = 0.45;
  std::vector<std::string> weights;
  std::vector<std::string> sections;
  std::size_t resamples = 2000;
  std::vector<std::string> outcomes;
};

unsigned parse_sections(const std::vector<std::string>& names) {
  if (names.empty()) return CB_SECTION_ALL;
  unsigned mask = 0;
  for (const auto& n : names) {
    if (n == "cells") mask |= CB_SECTION_CELLS;
    else if (n == "reconciliation") mask |= CB_SECTION_RECONCILIATION;
    else if (n == "provider") mask |= CB_SECTION_PROVIDER;
    else if (n == "cri") mask |= CB_SECTION_CRI;
    else if (n == "threshold") mask |= CB_SECTION_THRESHOLD;
    else if (n == "points") mask |= CB_SECTION_THRESHOLD_POINTS;
    else usage_failure("unknown section '" + n + "'");
  }
  return mask;
}

void render_report(const ReportArgs& args, const Shared& shared, unsigned sections) {
  cb_report_request request;
  cb_report_request_init(&request);
  std::vector<const char*> paths;
  for (const auto& r : args.records) paths.push_back(r.c_str());
  request.record_paths = paths.data();
  request.n_record_paths = paths.size();
  const std::string fixture =
      args.fixture.empty() && args.records.empty() ? data_path("fixtures/table6.csv")
                                                   : args.fixture;
  const std::string profiles = args.profiles.empty() ? data_path("profiles") : args.profiles;
  request.fixture_path = fixture.empty() ? nullptr : fixture.c_str();
  request.profiles_dir = profiles.c_str();
  request.ratio = args.ratio;
  request.tmax = args.tmax;
  request.eps_in_mj = args.eps_in;
  request.eps_out_mj = args.eps_out;
  request.bootstrap_resamples = args.resamples;
  request.seed = shared.seed.value_or(0);
  request.sections = sections;
  request.format = parse_format(shared.format);

  std::vector<std::string> weight_names;
  std::vector<double> weight_values;
  for (const auto& w : args.weights) {
    const auto eq = w.find('=');
    if (eq == std::string::npos) usage_failure("weights must be BENCHMARK=WEIGHT");
    weight_names.push_back(w.substr(0, eq));
    try {
      weight_values.push_back(std::stod(w.substr(eq + 1)));
    } catch (const std::exception&) {
      usage_failure("bad weight '" + w + "'");
    }
  }
  std::vector<const char*> weight_ptrs;
  for (const auto& n : weight_names) weight_ptrs.push_back(n.c_str());
  request.weight_benchmarks = weight_ptrs.data();
  request.weights = weight_values.data();
  request.n_weights = weight_values.size();

  char* text = nullptr;
  char* warnings = nullptr;
  check(cb_report_render(&request, &text, &warnings));
  std::istringstream lines(take(warnings));
  for (std::string line; std::getline(lines, line);) {
    if (!line.empty()) std::cerr << "warning: " << line << "\n";
  }
  emit(take(text), shared.out);
}

void cmd_cri(const ReportArgs& args, const Shared& shared) {
  if (args.outcomes.empty()) {
    render_report(args, shared, CB_SECTION_CRI);
    return;
  }
  // BENCHMARK:Q0:QR:T0:TR
  std::vector<std::string> names;
  std::vector<cb_outcome> outcomes;
  for (const auto& spec : args.outcomes) {
    std::vector<std::string> parts;
    std::stringstream in(spec);
    for (std::string part; std::getline(in, part, ':');) parts.push_back(part);
    if (parts.size() != 5) usage_failure("outcome must be BENCHMARK:Q0:QR:T0:TR");
    names.push_back(parts[0]);
    cb_outcome o{};
    try {
      o.q0 = std::stod(parts[1]);
      o.qr = std::stod(parts[2]);
      o.t0 = std::stod(parts[3]);
      o.tr = std::stod(parts[4]);
    } catch (const std::exception&) {
      usage_failure("bad number in outcome '" + spec + "'");
    }
    o.tmax = args.tmax;
    outcomes.push_back(o);
  }
  for (std::size_t i = 0; i < outcomes.size(); ++i) outcomes[i].benchmark = names[i].c_str();
  std::vector<cb_cri_term> terms(outcomes.size());
  double value = 0.0;
  check(cb_cri(outcomes.data(), outcomes.size(), nullptr, &value, terms.data()));
  Table table{"Compression Robustness Index",
              {"Benchmark", "Q_r/Q_0", "Length factor", "Term", "Weight"},
              {},
              {}};
  for (std::size_t i = 0; i < terms.size(); ++i) {
    const auto& t = terms[i];
    table.rows.push_back({names[i], t.excluded ? "-" : fixed(t.quality_retention, 3),
                          fixed(t.length_factor, 3), t.excluded ? "excluded" : fixed(t.term, 3),
                          fixed(t.weight, 3)});
    if (t.exceeds_one) table.footnotes.push_back(names[i] + ": Q_r exceeds Q_0");
    if (t.excluded) table.footnotes.push_back(names[i] + ": Q_0 is 0; excluded");
  }
  table.rows.push_back({"CRI", "", "", fixed(value, 3), ""});
  emit(table.render(parse_format(shared.format)), shared.out);
}

// ---- stats ------------------------------------------------------------------

struct StatsArgs {
  std::vector<std::string> records;
  std::string a;
  std::string b;
  std::string sample;
  std::string points;
  double ceiling = 1024.0;
  double mu = 0.0;
  double sigma = 1.0;
  std::string statistic = "mean";
  std::size_t resamples = 10000;
  double level = 0.95;
};

void key_values(const std::string& title,
                const std::vector<std::pair<std::string, std::string>>& items,
                const Shared& shared) {
  Table table{title, {"Quantity", "Value"}, {}, {}};
  for (const auto& [k, v] : items) table.rows.push_back({k, v});
  emit(table.render(parse_format(shared.format)), shared.out);
}

void cmd_welch(const StatsArgs& args, const Shared& shared) {
  const auto a = load_sample(args.a, args.records);
  const auto b = load_sample(args.b, args.records);
  cb_welch_result r{};
  check(cb_welch_t(a.data(), a.size(), b.data(), b.size(), &r));
  key_values("Welch's t-test",
             {{"n_a", std::to_string(a.size())},
              {"n_b", std::to_string(b.size())},
              {"t", fixed(r.t_statistic, 6)},
              {"df", fixed(r.degrees_of_freedom, 4)},
              {"p", fixed(r.p_value, 6)},
              {"degenerate", r.degenerate ? "yes" : "no"}},
             shared);
}

void cmd_tobit(const StatsArgs& args, const Shared& shared) {
  const auto y = load_sample(args.sample, args.records);
  cb_tobit_result r{};
  check(cb_tobit_fit(y.data(), y.size(), args.ceiling, &r));
  double below = 0.0;
  check(cb_truncated_mean(r.mu, r.sigma, args.ceiling, &below));
  key_values("Censored-normal (Tobit) fit",
             {{"n", std::to_string(y.size())},
              {"ceiling", fixed(args.ceiling, 1)},
              {"censored %", fixed(100.0 * r.censored_fraction, 1)},
              {"mu", fixed(r.mu, 2)},
              {"sigma", fixed(r.sigma, 2)},
              {"(ceiling - mu) / sigma", fixed(r.standardized_bound, 4)},
              {"E[T | T < ceiling]", fixed(below, 2)},
              {"log-likelihood", fixed(r.log_likelihood, 4)},
              {"iterations", std::to_string(r.iterations)},
              {"closed form (no censoring)", r.uncensored_fallback ? "yes" : "no"}},
             shared);
}

void cmd_bootstrap(const StatsArgs& args, const Shared& shared) {
  const auto x = load_sample(args.sample, args.records);
  cb_bootstrap_options options;
  cb_bootstrap_options_init(&options);
  options.resamples = args.resamples;
  options.level = args.level;
  options.seed = shared.seed.value_or(0);
  cb_statistic statistic = CB_STAT_MEAN;
  if (args.statistic == "median") statistic = CB_STAT_MEDIAN;
  cb_interval ci{};
  check(cb_bootstrap_bca(x.data(), x.size(), statistic, &options, &ci));
  key_values("BCa bootstrap interval",
             {{"statistic", args.statistic},
              {"n", std::to_string(x.size())},
              {"estimate", fixed(ci.statistic, 4)},
              {"lower", fixed(ci.lower, 4)},
              {"upper", fixed(ci.upper, 4)},
              {"level", fixed(ci.level, 3)},
              {"resamples", std::to_string(options.resamples)},
              {"seed", std::to_string(options.seed)},
              {"z0", fixed(ci.bias_correction, 6)},
              {"acceleration", fixed(ci.acceleration, 6)}},
             shared);
}

void cmd_truncmean(const StatsArgs& args, const Shared& shared) {
  double value = 0.0;
  check(cb_truncated_mean(args.mu, args.sigma, args.ceiling, &value));
  key_values("Truncated normal mean",
             {{"mu", fixed(args.mu, 4)},
              {"sigma", fixed(args.sigma, 4)},
              {"ceiling", fixed(args.ceiling, 4)},
              {"E[T | T < ceiling]", fixed(value, 6)}},
             shared);
}

void cmd_threshold(const StatsArgs& args, const Shared& shared) {
  const auto values = read_numbers(args.points);
  if (values.size() % 2 != 0) usage_failure("points file needs psi,mean pairs");
  std::vector<double> psi;
  std::vector<double> mean;
  for (std::size_t i = 0; i < values.size(); i += 2) {
    psi.push_back(values[i]);
    mean.push_back(values[i + 1]);
  }
  cb_threshold_result r{};
  check(cb_threshold_fit(psi.data(), mean.data(), psi.size(), &r));
  key_values("Threshold model fit",
             {{"points", std::to_string(psi.size())},
              {"tau", fixed(r.tau, 4)},
              {"intercept", fixed(r.intercept, 4)},
              {"slope below", fixed(r.slope_low, 4)},
              {"slope above", fixed(r.slope_high, 4)},
              {"rss", fixed(r.rss, 6)},
              {"candidates", std::to_string(r.candidates)},
              {"degenerate break", r.degenerate_break ? "yes" : "no"}},
             shared);
}

int cmd_determinism(const StatsArgs& args) {
  if (args.records.empty()) usage_failure("determinism needs --records");
  std::vector<const char*> paths;
  for (const auto& r : args.records) paths.push_back(r.c_str());
  std::size_t n = 0;
  char* details = nullptr;
  check(cb_verify_determinism(paths.data(), paths.size(), &n, &details));
  const json doc = json::parse(take(details));
  for (const auto& m : doc) {
    std::cout << "mismatch: " << m.at("model").get<std::string>() << " / "
              << m.at("benchmark").get<std::string>() << " / r=" << m.at("ratio").dump()
              << " / " << m.at("prompt_id").get<std::string>() << " "
              << m.at("output_tokens").dump() << "\n";
  }
  std::cout << "determinism: mismatches=" << n << "\n";
  return n == 0 ? 0 : 1;
}

std::string quoted(const std::string& message) {
  std::string out = "\"";
  for (char c : message) {
    if (c == '"' || c == '\\') out += '\\';
    if (c == '\n') {
      out += "\\n";
      continue;
    }
    out += c;
  }
  return out + "\"";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Prompt-compression output-length toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(cb_version()));
  Shared shared;

  PsiArgs psi;
  auto* psi_cmd = app.add_subcommand("psi", "Instruction survival for profiles or prompt files");
  psi_cmd->add_option("--profile", psi.profiles, "Benchmark profile JSON (repeatable)");
  psi_cmd->add_option("--prompts", psi.prompts, "Prompt JSONL with per-prompt spans");
  psi_cmd->add_option("--ratios", psi.ratios, "Compression ratios")->delimiter(',');
  psi_cmd->add_option("--mode", psi.mode, "Survival mode for --prompts")
      ->check(CLI::IsMember({"strict", "fractional"}));
  psi_cmd->add_option("--threshold", psi.threshold, "Fractional coverage threshold");
  psi_cmd->add_option("--rounding", psi.rounding, "floor or nearest");
  add_shared(psi_cmd, shared, false);

  CompressArgs compress;
  auto* compress_cmd = app.add_subcommand("compress", "First-N-words compression of a prompt");
  auto* text_opt = compress_cmd->add_option("--text", compress.text, "Prompt text");
  compress_cmd->add_option("--file", compress.file, "Read the prompt from a file")
      ->excludes(text_opt);
  compress_cmd->add_option("--ratios,--ratio", compress.ratios, "Compression ratios")
      ->delimiter(',');
  compress_cmd->add_option("--rounding", compress.rounding, "floor or nearest");
  add_shared(compress_cmd, shared, false);

  RunArgs run;
  auto* run_cmd = app.add_subcommand("run", "Run or resume an experiment plan");
  run_cmd->add_option("--stop-after", run.stop_after, "Stop after this many new trials");
  run_cmd->add_flag("--retry-errors", run.retry_errors, "Re-attempt trials that errored");
  run_cmd->add_flag("--progress", run.progress, "Progress on standard error");
  add_shared(run_cmd, shared);

  SimulateArgs simulate;
  auto* sim_cmd = app.add_subcommand("simulate", "Draw synthetic output lengths over a Psi grid");
  sim_cmd->add_option("--psi", simulate.psi, "Psi grid")->delimiter(',');
  sim_cmd->add_option("--trials", simulate.trials, "Trials per grid point");
  add_shared(sim_cmd, shared);

  ReportArgs report;
  auto add_report_inputs = [&](CLI::App* cmd) {
    cmd->add_option("--records", report.records, "Trial record JSONL files");
    cmd->add_option("--fixture", report.fixture, "Cell-summary CSV (default: bundled)");
    cmd->add_option("--profiles", report.profiles, "Profile directory (default: bundled)");
    cmd->add_option("--ratio", report.ratio, "Compressed ratio to compare with r=1.0");
    cmd->add_option("--tmax", report.tmax, "Generation ceiling");
    add_shared(cmd, shared);
  };
  auto* report_cmd = app.add_subcommand("report", "Summary, reconciliation, provider and CRI tables");
  add_report_inputs(report_cmd);
  report_cmd->add_option("--eps-in", report.eps_in, "mJ per input token");
  report_cmd->add_option("--eps-out", report.eps_out, "mJ per output token");
  report_cmd->add_option("--weights", report.weights, "BENCHMARK=WEIGHT mixture row")
      ->delimiter(',');
  report_cmd->add_option("--sections", report.sections,
                         "cells,reconciliation,provider,cri,threshold,points")
      ->delimiter(',');
  report_cmd->add_option("--resamples", report.resamples, "Bootstrap resamples");

  auto* cri_cmd = app.add_subcommand("cri", "Compression Robustness Index");
  add_report_inputs(cri_cmd);
  cri_cmd->add_option("--outcome", report.outcomes, "BENCHMARK:Q0:QR:T0:TR (repeatable)");

  StatsArgs stats;
  auto* stats_cmd = app.add_subcommand("stats", "Statistical routines");
  stats_cmd->require_subcommand(1);
  auto add_stats_common = [&](CLI::App* cmd) {
    cmd->add_option("--records", stats.records, "Record files for cell= samples");
    add_shared(cmd, shared, false);
  };
  auto* welch_cmd = stats_cmd->add_subcommand("welch", "Welch's unequal-variance t-test");
  welch_cmd->add_option("--a", stats.a, "Sample A: numbers file or cell=M/B/R")->required();
  welch_cmd->add_option("--b", stats.b, "Sample B: numbers file or cell=M/B/R")->required();
  add_stats_common(welch_cmd);
  auto* tobit_cmd = stats_cmd->add_subcommand("tobit", "Censored-normal fit");
  tobit_cmd->add_option("--sample", stats.sample, "Numbers file or cell=M/B/R")->required();
  tobit_cmd->add_option("--ceiling", stats.ceiling, "Censoring point");
  add_stats_common(tobit_cmd);
  auto* boot_cmd = stats_cmd->add_subcommand("bootstrap", "BCa bootstrap interval");
  boot_cmd->add_option("--sample", stats.sample, "Numbers file or cell=M/B/R")->required();
  boot_cmd->add_option("--statistic", stats.statistic, "mean or median")
      ->check(CLI::IsMember({"mean", "median"}));
  boot_cmd->add_option("--resamples", stats.resamples, "Bootstrap resamples");
  boot_cmd->add_option("--level", stats.level, "Confidence level");
  add_stats_common(boot_cmd);
  auto* trunc_cmd = stats_cmd->add_subcommand("truncmean", "Mean of a normal below a ceiling");
  trunc_cmd->add_option("--mu", stats.mu)->required();
  trunc_cmd->add_option("--sigma", stats.sigma)->required();
  trunc_cmd->add_option("--ceiling", stats.ceiling);
  add_stats_common(trunc_cmd);
  auto* thr_cmd = stats_cmd->add_subcommand("threshold", "Two-piece linear fit on (Psi, mean)");
  thr_cmd->add_option("--points", stats.points, "File of psi,mean pairs")->required();
  add_stats_common(thr_cmd);
  auto* det_cmd = stats_cmd->add_subcommand("determinism", "Replicates must agree exactly");
  add_stats_common(det_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    if (code != 0) {
      std::cerr << "error: code=UsageError message=" << quoted(e.what()) << "\n";
    }
    return code;
  }

  try {
    if (*psi_cmd) cmd_psi(psi, shared);
    else if (*compress_cmd) cmd_compress(compress, shared);
    else if (*run_cmd) cmd_run(run, shared);
    else if (*sim_cmd) cmd_simulate(simulate, shared);
    else if (*report_cmd) render_report(report, shared, parse_sections(report.sections));
    else if (*cri_cmd) cmd_cri(report, shared);
    else if (*welch_cmd) cmd_welch(stats, shared);
    else if (*tobit_cmd) cmd_tobit(stats, shared);
    else if (*boot_cmd) cmd_bootstrap(stats, shared);
    else if (*trunc_cmd) cmd_truncmean(stats, shared);
    else if (*thr_cmd) cmd_threshold(stats, shared);
    else if (*det_cmd) return cmd_determinism(stats);
  } catch (const CliFailure& f) {
    std::cerr << "error: code=" << f.code << " message=" << quoted(f.message) << "\n";
    return 1;
  } catch (const json::exception& e) {
    std::cerr << "error: code=InternalError message=" << quoted(e.what()) << "\n";
    return 1;
  }
  return 0;
}
