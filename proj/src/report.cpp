#include "compressbench/report.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <utility>

#include <fmt/format.h>

#include "io_util.hpp"

namespace compressbench {

std::string format_fixed(double value, int decimals) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  std::string out = fmt::format("{:.{}f}", value, decimals);
  if (out.front() == '-' && out.find_first_not_of("-0.") == std::string::npos) {
    out.erase(0, 1);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Tables and rendering

ReportTable::ReportTable(std::string title, std::vector<std::string> headers,
                         ReportSection section)
    : title_(std::move(title)), headers_(std::move(headers)), section_(section) {
  if (headers_.empty()) throw Error(ErrorCode::kInvalidArgument, "table needs >= 1 column");
}

void ReportTable::add_row(std::vector<std::string> row) {
  if (row.size() != headers_.size()) {
    throw Error(ErrorCode::kInvalidArgument,
                fmt::format("row has {} cells, table '{}' has {} columns", row.size(), title_,
                            headers_.size()));
  }
  rows_.push_back(std::move(row));
}

ReportFormat parse_report_format(std::string_view name) {
  if (name == "table") return ReportFormat::kTable;
  if (name == "csv") return ReportFormat::kCsv;
  if (name == "markdown" || name == "md") return ReportFormat::kMarkdown;
  throw Error(ErrorCode::kInvalidArgument,
              fmt::format("unknown format '{}' (table, csv, markdown)", name));
}

namespace {

std::string csv_field(const std::string& value) {
  if (value.find_first_of(",\"\n") == std::string::npos) return value;
  std::string out = "\"";
  for (char c : value) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string render_text(const ReportTable& t) {
  std::vector<std::size_t> width(t.headers().size());
  for (std::size_t c = 0; c < width.size(); ++c) width[c] = t.headers()[c].size();
  for (const auto& row : t.rows()) {
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  // Numeric columns are right-aligned, text columns left-aligned.
  std::vector<bool> numeric(width.size(), true);
  numeric[0] = false;
  for (const auto& row : t.rows()) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      const std::string& cell = row[c];
      if (cell.empty() || cell == "-") continue;
      const char first = cell.front();
      const bool looks_numeric = (first >= '0' && first <= '9') || first == '-' ||
                                 first == '+' || first == '.' || first == '[' ||
                                 cell == "inf" || cell == "nan";
      if (!looks_numeric) numeric[c] = false;
    }
  }
  auto line = [&](const std::vector<std::string>& cells) {
    std::string out;
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (c > 0) out += "  ";
      out += numeric[c] ? fmt::format("{:>{}}", cells[c], width[c])
                        : fmt::format("{:<{}}", cells[c], width[c]);
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    return out + "\n";
  };
  std::size_t total = 0;
  for (std::size_t w : width) total += w;
  total += 2 * (width.size() - 1);

  std::string out = t.title() + "\n";
  out += line(t.headers());
  out += std::string(total, '-') + "\n";
  for (const auto& row : t.rows()) out += line(row);
  if (t.rows().empty()) out += "(no rows)\n";
  for (const auto& note : t.footnotes()) out += "  " + note + "\n";
  return out;
}

std::string render_csv(const ReportTable& t) {
  std::string out;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (c > 0) out += ',';
      out += csv_field(cells[c]);
    }
    out += '\n';
  };
  line(t.headers());
  for (const auto& row : t.rows()) line(row);
  return out;
}

std::string md_cell(const std::string& value) {
  std::string out;
  for (char c : value) {
    if (c == '|') out += '\\';
    out += c;
  }
  return out;
}

std::string render_markdown(const ReportTable& t) {
  std::string out = "### " + t.title() + "\n\n";
  auto line = [&](const std::vector<std::string>& cells) {
    out += "|";
    for (const auto& c : cells) out += " " + md_cell(c) + " |";
    out += "\n";
  };
  line(t.headers());
  out += "|";
  for (std::size_t c = 0; c < t.headers().size(); ++c) out += c == 0 ? " :--- |" : " ---: |";
  out += "\n";
  for (const auto& row : t.rows()) line(row);
  if (!t.footnotes().empty()) {
    out += "\n";
    for (const auto& note : t.footnotes()) out += "- " + note + "\n";
  }
  return out;
}

}  // namespace

std::string render(const ReportTable& table, ReportFormat format) {
  switch (format) {
    case ReportFormat::kTable:
      return render_text(table);
    case ReportFormat::kCsv:
      return render_csv(table);
    case ReportFormat::kMarkdown:
      return render_markdown(table);
  }
  return {};
}

std::string render_all(const std::vector<ReportTable>& tables, ReportFormat format) {
  std::string out;
  for (std::size_t i = 0; i < tables.size(); ++i) {
    if (i > 0) out += "\n";
    if (format == ReportFormat::kCsv) out += "# " + tables[i].title() + "\n";
    out += render(tables[i], format);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Fixture and profiles

namespace {

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        fields.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        fields.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.emplace_back();
    } else if (c != '\r') {
      fields.back() += c;
    }
  }
  return fields;
}

}  // namespace

FixtureData parse_fixture(std::string_view csv_text,
                          const std::map<std::string, double>& mean_tokens,
                          std::string_view source) {
  static const std::vector<std::string> kColumns = {
      "model", "benchmark", "ratio", "mean_tout", "sd", "ceiling_pct", "pass1", "energy_mj"};
  FixtureData data;
  std::size_t line_no = 0;
  bool header_seen = false;
  std::set<CellKey> seen;
  std::size_t pos = 0;
  while (pos <= csv_text.size()) {
    const std::size_t end = std::min(csv_text.find('\n', pos), csv_text.size());
    const std::string_view raw = csv_text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (raw.find_first_not_of(" \t\r") == std::string_view::npos) {
      if (end == csv_text.size()) break;
      continue;
    }
    const std::string ctx = fmt::format("{}:{}", source, line_no);
    auto fields = split_csv_line(raw);
    if (!header_seen) {
      if (fields != kColumns) {
        throw Error(ErrorCode::kParse,
                    ctx + ": expected header model,benchmark,ratio,mean_tout,sd,ceiling_pct,"
                          "pass1,energy_mj");
      }
      header_seen = true;
      continue;
    }
    if (fields.size() != kColumns.size()) {
      throw Error(ErrorCode::kParse,
                  fmt::format("{}: expected {} fields, got {}", ctx, kColumns.size(),
                              fields.size()));
    }
    CellSummary cell;
    cell.cell.model = fields[0];
    cell.cell.benchmark = fields[1];
    cell.cell.ratio = detail::parse_double(fields[2], ctx + " ratio");
    check_ratio(cell.cell.ratio);
    cell.mean_tout = detail::parse_double(fields[3], ctx + " mean_tout");
    cell.sd = detail::parse_double(fields[4], ctx + " sd");
    cell.cv = cell.mean_tout > 0.0 ? cell.sd / cell.mean_tout : 0.0;
    cell.ceiling_fraction = detail::parse_double(fields[5], ctx + " ceiling_pct") / 100.0;
    if (!fields[6].empty()) cell.pass1_rate = detail::parse_double(fields[6], ctx + " pass1");
    const auto tokens = mean_tokens.find(cell.cell.benchmark);
    if (tokens == mean_tokens.end()) {
      throw Error(ErrorCode::kConfig, fmt::format("{}: no profile for benchmark '{}'", ctx,
                                                  cell.cell.benchmark));
    }
    cell.mean_tin = tokens->second * cell.cell.ratio;
    if (!seen.insert(cell.cell).second) {
      throw Error(ErrorCode::kParse, ctx + ": duplicate cell");
    }
    if (!fields[7].empty()) {
      data.recorded_energy_mj[cell.cell] = detail::parse_double(fields[7], ctx + " energy_mj");
    }
    data.cells.push_back(std::move(cell));
  }
  if (!header_seen) throw Error(ErrorCode::kParse, std::string(source) + ": empty fixture");
  return data;
}

FixtureData load_fixture(const std::filesystem::path& path,
                         const std::map<std::string, double>& mean_tokens) {
  return parse_fixture(detail::read_text_file(path), mean_tokens, path.string());
}

std::map<std::string, BenchmarkProfile> load_profiles(const std::filesystem::path& dir) {
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec)) {
    throw Error(ErrorCode::kConfig, "profile directory not found: " + dir.string());
  }
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".json") {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  std::map<std::string, BenchmarkProfile> out;
  for (const auto& file : files) {
    BenchmarkProfile profile = load_profile(file);
    const std::string name = profile.name;
    if (!out.emplace(name, std::move(profile)).second) {
      throw Error(ErrorCode::kConfig,
                  fmt::format("{}: duplicate profile name '{}'", file.string(), name));
    }
  }
  return out;
}

std::map<std::string, double> profile_mean_tokens(
    const std::map<std::string, BenchmarkProfile>& profiles) {
  std::map<std::string, double> out;
  for (const auto& [name, profile] : profiles) out[name] = profile.mean_tokens;
  return out;
}

ReportInput report_input_from_records(std::span<const std::filesystem::path> paths,
                                      std::vector<std::string>& warnings) {
  RecordFile file = load_records(paths);
  for (auto& e : file.line_errors) warnings.push_back("LineError: " + e);
  if (!file.errors.empty()) {
    warnings.push_back(fmt::format("{} trials ended in errors and are not summarised",
                                   file.errors.size()));
  }
  ReportInput input;
  input.cells = summarize_cells(file.records);
  input.records = std::move(file.records);
  return input;
}

std::string_view cri_interpretation(double cri) noexcept {
  if (cri >= 0.7) return "Highly robust";
  if (cri >= 0.3) return "Moderately robust";
  return "Compression-sensitive";
}

// ---------------------------------------------------------------------------
// Report assembly

namespace {

struct CellIndex {
  std::vector<std::string> models;      // first-appearance order
  std::vector<std::string> benchmarks;  // first-appearance order
  std::map<CellKey, const CellSummary*> by_key;

  explicit CellIndex(const std::vector<CellSummary>& cells) {
    for (const auto& c : cells) {
      if (std::find(models.begin(), models.end(), c.cell.model) == models.end()) {
        models.push_back(c.cell.model);
      }
      if (std::find(benchmarks.begin(), benchmarks.end(), c.cell.benchmark) ==
          benchmarks.end()) {
        benchmarks.push_back(c.cell.benchmark);
      }
      by_key[c.cell] = &c;
    }
  }

  const CellSummary* find(const std::string& model, const std::string& benchmark,
                          double ratio) const {
    auto it = by_key.find(CellKey{model, benchmark, ratio});
    return it == by_key.end() ? nullptr : it->second;
  }
};

std::string ratio_text(double ratio) { return format_fixed(ratio, 1); }
std::string times(double ratio) { return format_fixed(ratio, 1) + "x"; }

std::string interval_text(double lo, double hi, int decimals) {
  return "[" + format_fixed(lo, decimals) + ", " + format_fixed(hi, decimals) + "]";
}

// Per-prompt means (over replicates) of output tokens for one cell.
std::map<std::string, double> prompt_means(const std::vector<TrialRecord>& records,
                                           const CellKey& cell) {
  std::map<std::string, std::pair<double, std::size_t>> acc;
  for (const auto& r : records) {
    if (!(r.cell() == cell)) continue;
    auto& slot = acc[r.prompt_id];
    slot.first += r.output_tokens;
    ++slot.second;
  }
  std::map<std::string, double> out;
  for (const auto& [id, s] : acc) out[id] = s.first / static_cast<double>(s.second);
  return out;
}

// BCa interval of mean(compressed) / mean(baseline) over prompts present in
// both cells, resampling prompts as pairs.
std::optional<BootstrapCI> explosion_interval(const std::vector<TrialRecord>& records,
                                              const CellKey& baseline, const CellKey& compressed,
                                              const BootstrapOptions& options) {
  const auto base = prompt_means(records, baseline);
  const auto comp = prompt_means(records, compressed);
  std::vector<std::pair<double, double>> pairs;
  for (const auto& [id, b] : base) {
    auto it = comp.find(id);
    if (it != comp.end()) pairs.emplace_back(b, it->second);
  }
  if (pairs.size() < 2) return std::nullopt;
  auto statistic = [](std::span<const std::pair<double, double>> s) {
    double b = 0.0;
    double c = 0.0;
    for (const auto& [x, y] : s) {
      b += x;
      c += y;
    }
    return b > 0.0 ? c / b : std::numeric_limits<double>::quiet_NaN();
  };
  const double estimate = statistic(pairs);
  if (!std::isfinite(estimate)) return std::nullopt;
  BootstrapCI ci =
      bootstrap_bca(std::span<const std::pair<double, double>>(pairs), statistic, options);
  if (!std::isfinite(ci.lower) || !std::isfinite(ci.upper)) return std::nullopt;
  return ci;
}

ReportTable cell_table(const ReportInput& input, const ReportOptions& options,
                       const CellIndex& index) {
  const bool with_n = !input.records.empty();
  std::vector<std::string> headers = {"Model",   "Benchmark", "r",      "Mean T_out", "SD",
                                      "Ceiling %", "pass@1", "Energy (mJ)"};
  if (with_n) headers.insert(headers.begin() + 3, "N");
  ReportTable table("Full results by model, benchmark and compression ratio", headers);
  std::size_t energy_mismatches = 0;
  for (const auto& c : input.cells) {
    const double e = energy(c.mean_tin, c.mean_tout, options.energy);
    std::vector<std::string> row = {c.cell.model,
                                    c.cell.benchmark,
                                    ratio_text(c.cell.ratio),
                                    format_fixed(c.mean_tout, 1),
                                    format_fixed(c.sd, 1),
                                    format_fixed(100.0 * c.ceiling_fraction, 0),
                                    c.pass1_rate ? format_fixed(*c.pass1_rate, 2) : "-",
                                    format_fixed(e, 1)};
    if (with_n) row.insert(row.begin() + 3, std::to_string(c.n_obs));
    auto recorded = input.recorded_energy_mj.find(c.cell);
    if (recorded != input.recorded_energy_mj.end() &&
        format_fixed(recorded->second, 1) != format_fixed(e, 1)) {
      ++energy_mismatches;
      table.add_footnote(fmt::format("{} / {} / r={}: recorded energy {} mJ, computed {} mJ",
                                     c.cell.model, c.cell.benchmark, ratio_text(c.cell.ratio),
                                     format_fixed(recorded->second, 1), format_fixed(e, 1)));
    }
    table.add_row(std::move(row));
  }
  (void)index;
  table.add_footnote(fmt::format("Energy = {} mJ x T_in + {} mJ x T_out.",
                                 options.energy.eps_in_mj, options.energy.eps_out_mj));
  return table;
}

struct MixRow {
  double baseline = 0.0;
  double compressed = 0.0;
};

std::vector<ReportTable> reconciliation_tables(const ReportInput& input,
                                               const ReportOptions& options,
                                               const CellIndex& index,
                                               std::vector<std::string>& warnings) {
  const bool with_ci = !input.records.empty();
  std::vector<ReportTable> tables;
  const std::string r = ratio_text(options.ratio);
  for (const auto& model : index.models) {
    std::vector<std::string> headers = {"Benchmark", "Baseline (r=1.0)",
                                        "Compressed (r=" + r + ")", "Ratio"};
    if (with_ci) headers.push_back(format_fixed(100.0 * options.bootstrap.level, 0) + "% CI");
    ReportTable table(model + " output tokens at r=" + r + " by benchmark", headers,
                      ReportSection::kReconciliation);
    std::vector<std::string> names;
    std::vector<double> base;
    std::vector<double> comp;
    bool censored = false;
    for (const auto& bench : index.benchmarks) {
      const CellSummary* b = index.find(model, bench, 1.0);
      const CellSummary* c = index.find(model, bench, options.ratio);
      if (b == nullptr || c == nullptr) continue;
      std::string ratio_cell = "-";
      if (b->mean_tout > 0.0) ratio_cell = times(explosion_ratio(b->mean_tout, c->mean_tout));
      std::string comp_cell = format_fixed(c->mean_tout, 1);
      if (c->ceiling_fraction > 0.0) {
        comp_cell += "*";
        censored = true;
      }
      std::vector<std::string> row = {bench, format_fixed(b->mean_tout, 1), comp_cell,
                                      ratio_cell};
      if (with_ci) {
        const auto ci =
            explosion_interval(input.records, b->cell, c->cell, options.bootstrap);
        row.push_back(ci ? interval_text(ci->lower, ci->upper, 1) : "-");
      }
      table.add_row(std::move(row));
      names.push_back(bench);
      base.push_back(b->mean_tout);
      comp.push_back(c->mean_tout);
    }
    if (names.empty()) {
      warnings.push_back(model + ": no benchmark has both r=1.0 and r=" + r + " cells");
      continue;
    }
    auto mixture_row = [&](const std::string& label, const std::vector<double>& w) {
      const double mb = weighted_mixture(base, w);
      const double mc = weighted_mixture(comp, w);
      std::vector<std::string> row = {label, format_fixed(mb, 1), format_fixed(mc, 1),
                                      mb > 0.0 ? times(mc / mb) : "-"};
      if (with_ci) row.push_back("-");
      table.add_row(std::move(row));
    };
    mixture_row("Balanced weighted", balanced_weights(names.size()));
    if (!options.custom_weights.empty()) {
      std::vector<double> w(names.size(), 0.0);
      for (const auto& [bench, weight] : options.custom_weights) {
        auto it = std::find(names.begin(), names.end(), bench);
        if (it == names.end()) {
          throw Error(ErrorCode::kInvalidWeights,
                      fmt::format("weight given for '{}' which has no cells for {}", bench,
                                  model));
        }
        w[static_cast<std::size_t>(it - names.begin())] = weight;
      }
      mixture_row(options.custom_weights_label, w);
    }
    if (censored) {
      table.add_footnote("* Some trials hit the generation ceiling; the observed mean is a "
                         "lower bound on the latent mean.");
    }
    if (with_ci) {
      table.add_footnote(fmt::format(
          "CI: BCa bootstrap over prompts ({} resamples, seed {}) of the ratio of means.",
          options.bootstrap.resamples, options.bootstrap.seed));
    }
    tables.push_back(std::move(table));
  }
  return tables;
}

ReportTable provider_table(const ReportInput& input, const ReportOptions& options,
                           const CellIndex& index) {
  const std::string r = ratio_text(options.ratio);
  ReportTable table("Provider comparison at r=" + r + " (balanced benchmark composition)",
                    {"Model", "Baseline", "r=" + r, "Ratio", "CV", "Energy (mJ)"},
                    ReportSection::kProvider);
  (void)input;
  for (const auto& model : index.models) {
    std::vector<const CellSummary*> base;
    std::vector<const CellSummary*> comp;
    for (const auto& bench : index.benchmarks) {
      const CellSummary* b = index.find(model, bench, 1.0);
      const CellSummary* c = index.find(model, bench, options.ratio);
      if (b == nullptr || c == nullptr) continue;
      base.push_back(b);
      comp.push_back(c);
    }
    if (base.empty()) continue;
    const double w = 1.0 / static_cast<double>(base.size());
    double mb = 0.0;
    double mc = 0.0;
    double second_moment = 0.0;
    double e = 0.0;
    for (std::size_t i = 0; i < base.size(); ++i) {
      mb += w * base[i]->mean_tout;
      mc += w * comp[i]->mean_tout;
      second_moment += w * (comp[i]->sd * comp[i]->sd + comp[i]->mean_tout * comp[i]->mean_tout);
      e += w * energy(comp[i]->mean_tin, comp[i]->mean_tout, options.energy);
    }
    const double cv = mc > 0.0 ? std::sqrt(std::max(0.0, second_moment - mc * mc)) / mc : 0.0;
    table.add_row({model, format_fixed(mb, 1), format_fixed(mc, 1),
                   mb > 0.0 ? times(mc / mb) : "-", format_fixed(cv, 2), format_fixed(e, 1)});
  }
  table.add_footnote("CV is that of the equal-weight mixture of the compressed cells "
                     "(within-cell spread plus between-benchmark spread).");
  return table;
}

ReportTable cri_table(const ReportOptions& options, const CellIndex& index,
                      std::vector<std::string>& warnings) {
  const std::string r = ratio_text(options.ratio);
  ReportTable table("Compression Robustness Index at r=" + r,
                    {"Model", "CRI", "Benchmarks", "Interpretation"}, ReportSection::kCri);
  for (const auto& model : index.models) {
    std::vector<BenchmarkOutcome> outcomes;
    for (const auto& bench : index.benchmarks) {
      const CellSummary* b = index.find(model, bench, 1.0);
      const CellSummary* c = index.find(model, bench, options.ratio);
      if (b == nullptr || c == nullptr) continue;
      if (!b->pass1_rate || !c->pass1_rate) {
        warnings.push_back(fmt::format("{} / {}: pass@1 missing; left out of the CRI", model,
                                       bench));
        continue;
      }
      outcomes.push_back({bench, *b->pass1_rate, *c->pass1_rate, b->mean_tout, c->mean_tout,
                          options.tmax});
    }
    if (outcomes.empty()) continue;
    try {
      const CriReport report = cri(outcomes, std::nullopt, model, options.ratio);
      std::size_t used = 0;
      for (const auto& t : report.terms) used += t.excluded ? 0 : 1;
      table.add_row({model, format_fixed(report.cri, 3), std::to_string(used),
                     std::string(cri_interpretation(report.cri))});
      for (const auto& flag : report.flags) table.add_footnote(model + ": " + flag);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kUndefinedQualityRatio) throw;
      table.add_row({model, "-", "0", "undefined"});
      table.add_footnote(model + ": " + e.what());
    }
  }
  table.add_footnote(fmt::format(
      "CRI = mean over benchmarks of (Q_r/Q_0) x (1 - max(0, T_r - T_0)/{}).",
      format_fixed(options.tmax, 0)));
  return table;
}

std::optional<double> cell_psi(const ReportInput& input, const CellKey& cell) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& r : input.records) {
    if (r.psi && r.cell() == cell) {
      sum += *r.psi;
      ++n;
    }
  }
  if (n > 0) return sum / static_cast<double>(n);
  auto it = input.profiles.find(cell.benchmark);
  if (it == input.profiles.end()) return std::nullopt;
  try {
    return profile_survival(it->second, cell.ratio);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kProfileIncomplete) return std::nullopt;
    throw;
  }
}

std::vector<ReportTable> threshold_tables(const ReportInput& input, const CellIndex& index) {
  ReportTable points("Instruction survival vs mean output tokens",
                     {"Model", "Benchmark", "r", "Psi", "Mean T_out"},
                     ReportSection::kThresholdPoints);
  ReportTable fits("Threshold model fit per model",
                   {"Model", "Points", "tau", "Intercept", "Slope below", "Slope above", "RSS"},
                   ReportSection::kThreshold);
  std::map<std::string, std::vector<ThresholdPoint>> by_model;
  for (const auto& c : input.cells) {
    const auto psi = cell_psi(input, c.cell);
    if (!psi) continue;
    points.add_row({c.cell.model, c.cell.benchmark, ratio_text(c.cell.ratio),
                    format_fixed(*psi, 3), format_fixed(c.mean_tout, 1)});
    by_model[c.cell.model].push_back({*psi, c.mean_tout});
  }
  for (const auto& model : index.models) {
    auto it = by_model.find(model);
    if (it == by_model.end()) continue;
    try {
      const ThresholdFit fit = fit_threshold_model(it->second);
      fits.add_row({model, std::to_string(it->second.size()), format_fixed(fit.tau, 3),
                    format_fixed(fit.intercept, 1), format_fixed(fit.slope_low, 1),
                    format_fixed(fit.slope_high, 1), format_fixed(fit.rss, 1)});
      if (fit.degenerate_break) fits.add_footnote(model + ": both slopes equal; no break");
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kInsufficientData && e.code() != ErrorCode::kNoBreakpoint) {
        throw;
      }
      fits.add_row({model, std::to_string(it->second.size()), "-", "-", "-", "-", "-"});
      fits.add_footnote(model + ": " + e.what());
    }
  }
  fits.add_footnote("Continuous two-piece linear fit of mean output tokens on Psi; "
                    "slopes are per unit Psi.");
  return {std::move(fits), std::move(points)};
}

}  // namespace

Report build_report(const ReportInput& input, const ReportOptions& options) {
  check_ratio(options.ratio);
  options.energy.validate();
  Report report;
  if (input.cells.empty()) report.warnings.push_back("no cells to report; tables are empty");
  const CellIndex index(input.cells);
  report.tables.push_back(cell_table(input, options, index));
  for (auto& t : reconciliation_tables(input, options, index, report.warnings)) {
    report.tables.push_back(std::move(t));
  }
  report.tables.push_back(provider_table(input, options, index));
  report.tables.push_back(cri_table(options, index, report.warnings));
  for (auto& t : threshold_tables(input, index)) report.tables.push_back(std::move(t));
  std::erase_if(report.tables, [&](const ReportTable& t) {
    return (options.sections & static_cast<unsigned>(t.section())) == 0;
  });
  return report;
}

}  // namespace compressbench
