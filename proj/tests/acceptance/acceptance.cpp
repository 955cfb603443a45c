// Acceptance criteria 1-11. One PASS/FAIL line per criterion; exit status is
// nonzero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "compressbench/backends.hpp"
#include "compressbench/metrics.hpp"
#include "compressbench/prompt.hpp"
#include "compressbench/report.hpp"
#include "compressbench/stats.hpp"
#include "compressbench/trial_engine.hpp"

namespace cb = compressbench;
namespace fs = std::filesystem;

namespace {

const fs::path kData = CB_TEST_DATA_DIR;

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Fixture {
  std::map<std::string, cb::BenchmarkProfile> profiles;
  cb::FixtureData data;

  const cb::CellSummary& cell(const std::string& model, const std::string& bench,
                              double ratio) const {
    for (const auto& c : data.cells) {
      if (c.cell == cb::CellKey{model, bench, ratio}) return c;
    }
    throw std::runtime_error(fmt::format("fixture lacks {}/{}/{}", model, bench, ratio));
  }
};

Fixture load_fixture() {
  Fixture f;
  f.profiles = cb::load_profiles(kData / "profiles");
  f.data = cb::load_fixture(kData / "fixtures/table6.csv", cb::profile_mean_tokens(f.profiles));
  return f;
}

const std::vector<std::string> kModels{"GPT-4o-mini", "Mistral-Large", "DeepSeek"};
const std::vector<std::string> kBenchmarks{"MBPP", "HumanEval", "GSM8K"};

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

// Transport that records any use; the offline surface must never touch it.
class TripwireTransport final : public cb::HttpTransport {
 public:
  cb::HttpResult post(const std::string&, const std::vector<std::pair<std::string, std::string>>&,
                      const std::string&, std::chrono::milliseconds) override {
    ++calls;
    return {0, "", "network disabled in acceptance"};
  }
  std::size_t calls = 0;
};

class VectorSink final : public cb::RecordSink {
 public:
  void on_record(const cb::TrialRecord& r) override {
    std::lock_guard lock(mutex);
    records.push_back(r);
  }
  void on_error(const cb::TrialError& e) override {
    std::lock_guard lock(mutex);
    errors.push_back(e);
  }
  std::mutex mutex;
  std::vector<cb::TrialRecord> records;
  std::vector<cb::TrialError> errors;
};

double fig1(double x) { return x <= 0.35 ? 1050 - 500 * x : 1050 - 500 * 0.35 - 1200 * (x - 0.35); }

std::vector<double> censored_normal(std::size_t n, double mu, double sigma, double c,
                                    std::uint64_t seed) {
  cb::Rng rng(seed);
  std::normal_distribution<double> d(mu, sigma);
  std::vector<double> y(n);
  for (auto& v : y) v = std::min(d(rng), c);
  return y;
}

// ---------------------------------------------------------------------------

Outcome criterion1() {
  const auto start = std::chrono::steady_clock::now();
  const Fixture f = load_fixture();
  const std::map<std::string, double> expected{
      {"GPT-4o-mini", 0.848}, {"Mistral-Large", 0.424}, {"DeepSeek", 0.090}};
  bool ok = true;
  std::string detail;
  for (const auto& model : kModels) {
    std::vector<cb::BenchmarkOutcome> outcomes;
    for (const auto& b : kBenchmarks) {
      const auto& base = f.cell(model, b, 1.0);
      const auto& comp = f.cell(model, b, 0.3);
      outcomes.push_back({b, *base.pass1_rate, *comp.pass1_rate, base.mean_tout, comp.mean_tout});
    }
    const double value = cb::cri(outcomes).cri;
    ok = ok && std::abs(value - expected.at(model)) <= 0.001;
    detail += fmt::format("{}={:.4f} ", model, value);
  }
  const double elapsed = seconds_since(start);
  ok = ok && elapsed < 1.0;
  return {ok, detail + fmt::format("({:.3f}s)", elapsed)};
}

Outcome criterion2() {
  const auto mbpp = cb::load_profile(kData / "profiles/mbpp.json");
  const auto he = cb::load_profile(kData / "profiles/humaneval.json");
  const auto gsm = cb::load_profile(kData / "profiles/gsm8k.json");
  const double m = cb::profile_survival(mbpp, 0.3);
  const double h = cb::profile_survival(he, 0.3);
  const double g = cb::profile_survival(gsm, 0.3);
  const bool modes = mbpp.survival_mode.kind == cb::SurvivalMode::Kind::kStrict &&
                     he.survival_mode.kind == cb::SurvivalMode::Kind::kFractional &&
                     he.survival_mode.threshold == 0.75;
  const bool ok = modes && m == 0.15 && h == 0.72 && g == 0.41;
  return {ok, fmt::format("MBPP={} HumanEval={} GSM8K={}", m, h, g)};
}

Outcome criterion3() {
  const Fixture f = load_fixture();
  std::vector<double> base, comp;
  for (const auto& b : kBenchmarks) {
    base.push_back(f.cell("DeepSeek", b, 1.0).mean_tout);
    comp.push_back(f.cell("DeepSeek", b, 0.3).mean_tout);
  }
  const auto w = cb::balanced_weights(3);
  const double bm = cb::weighted_mixture(base, w), cm = cb::weighted_mixture(comp, w);
  const double ratio = cb::explosion_ratio(bm, cm);
  const bool ok = std::abs(bm - 34.3) <= 0.1 && std::abs(cm - 611.9) <= 0.1 &&
                  std::abs(ratio - 17.8) <= 0.1;
  return {ok, fmt::format("baseline={:.2f} compressed={:.2f} ratio={:.3f}", bm, cm, ratio)};
}

Outcome criterion4() {
  const Fixture f = load_fixture();
  double worst = 0;
  std::string worst_cell;
  for (const auto& c : f.data.cells) {
    const double computed = cb::energy(c.mean_tin, c.mean_tout);
    const double diff = std::abs(computed - f.data.recorded_energy_mj.at(c.cell));
    if (diff > worst) {
      worst = diff;
      worst_cell = fmt::format("{}/{}/{}", c.cell.model, c.cell.benchmark, c.cell.ratio);
    }
  }
  return {worst <= 0.2 && f.data.cells.size() == 36,
          fmt::format("{} rows, max |diff| = {:.3f} mJ at {}", f.data.cells.size(), worst,
                      worst_cell)};
}

Outcome criterion5() {
  const auto start = std::chrono::steady_clock::now();
  const auto y = censored_normal(10000, 900, 300, 1024, 20260101);
  const auto fit = cb::tobit_fit(y, 1024);
  const bool recovered = std::abs(fit.mu - 900) <= 45 && std::abs(fit.sigma - 300) <= 15;
  const auto heavy = censored_normal(10000, 1350, 500, 1024, 20260102);
  const auto heavy_fit = cb::tobit_fit(heavy, 1024);
  const double elapsed = seconds_since(start);
  const bool ok = recovered && heavy_fit.mu > 1024 && elapsed < 10.0;
  return {ok, fmt::format("censored {:.1f}%: mu={:.1f} sigma={:.1f}; censored {:.1f}%: mu={:.1f} "
                          "({:.2f}s)",
                          100 * fit.censored_fraction, fit.mu, fit.sigma,
                          100 * heavy_fit.censored_fraction, heavy_fit.mu, elapsed)};
}

Outcome criterion6() {
  // 10^6 accepted draws below c per grid point, by rejection from N(mu, sigma).
  constexpr std::size_t kDraws = 1000000;
  double worst = 0;
  std::size_t points = 0;
  std::uint64_t index = 0;
  for (double mu : {800.0, 1000.0, 1200.0}) {
    for (double sigma : {100.0, 200.0, 300.0}) {
      const double c = 1024;
      cb::Rng rng(cb::substream_seed(6, index++));
      std::normal_distribution<double> d(mu, sigma);
      double sum = 0;
      std::size_t kept = 0;
      while (kept < kDraws) {
        const double x = d(rng);
        if (x < c) {
          sum += x;
          ++kept;
        }
      }
      worst = std::max(worst, std::abs(sum / kDraws - cb::truncated_mean(mu, sigma, c)));
      ++points;
    }
  }
  return {worst <= 0.5 && points >= 9,
          fmt::format("{} grid points, max |MC - closed form| = {:.3f} tokens", points, worst)};
}

Outcome criterion7() {
  std::vector<cb::ThresholdPoint> exact;
  for (int i = 1; i <= 19; ++i) exact.push_back({i * 0.05, fig1(i * 0.05)});
  const auto fit = cb::fit_threshold_model(exact);
  const bool exact_ok = std::abs(fit.tau - 0.35) < 1e-9 && std::abs(fit.intercept - 1050) < 1e-6 &&
                        std::abs(fit.slope_low + 500) < 1e-6 &&
                        std::abs(fit.slope_high + 1200) < 1e-6 && fit.rss < 1e-6;
  int inside = 0;
  const int reps = 200;
  for (int s = 0; s < reps; ++s) {
    cb::Rng rng(cb::substream_seed(7, s));
    std::normal_distribution<double> noise(0, 20);
    std::vector<cb::ThresholdPoint> pts;
    for (int i = 1; i <= 19; ++i) pts.push_back({i * 0.05, fig1(i * 0.05) + noise(rng)});
    const double tau = cb::fit_threshold_model(pts).tau;
    inside += tau >= 0.30 && tau <= 0.40;
  }
  const double share = static_cast<double>(inside) / reps;
  return {exact_ok && share >= 0.95,
          fmt::format("exact: tau={} intercept={:.3f} slopes=({:.3f}, {:.3f}) rss={:.2e}; "
                      "noisy: {}/{} in [0.30, 0.40]",
                      fit.tau, fit.intercept, fit.slope_low, fit.slope_high, fit.rss, inside,
                      reps)};
}

Outcome criterion8() {
  const auto start = std::chrono::steady_clock::now();
  const int reps = 500;
  int covered = 0;
  for (int r = 0; r < reps; ++r) {
    cb::Rng rng(cb::substream_seed(8, r));
    std::normal_distribution<double> z(0, 1);
    std::vector<double> x(50);
    for (auto& v : x) v = z(rng);
    const auto ci = cb::bootstrap_mean_bca(x, {2000, 0.95, static_cast<std::uint64_t>(r), 0});
    covered += ci.lower <= 0.0 && 0.0 <= ci.upper;
  }
  const double coverage = static_cast<double>(covered) / reps;

  std::vector<double> v(20);
  for (int i = 0; i < 20; ++i) v[i] = i + 1;
  const auto a = cb::bootstrap_mean_bca(v, {2000, 0.95, 99, 1});
  const auto b = cb::bootstrap_mean_bca(v, {2000, 0.95, 99, 0});
  const bool exact = a.lower == b.lower && a.upper == b.upper;
  const double elapsed = seconds_since(start);
  return {coverage >= 0.93 && coverage <= 0.97 && exact && elapsed < 60.0,
          fmt::format("coverage {:.3f} over {} samples; rerun bit-exact: {} ({:.1f}s)", coverage,
                      reps, exact ? "yes" : "no", elapsed)};
}

Outcome criterion9() {
  const std::vector<double> ra{1, 2, 3, 4, 5}, rb{2, 3, 4, 5, 6};
  const auto ref = cb::welch_t(ra, rb);
  const bool reference = std::abs(ref.t_statistic + 1.0) <= 1e-9 &&
                         std::abs(ref.degrees_of_freedom - 8.0) <= 1e-9 &&
                         std::abs(ref.p_value - 0.34659350708733424783) <= 1e-9;
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<int> size(2, 40);
  std::normal_distribution<double> z(0, 1);
  std::uniform_real_distribution<double> scale(1e-3, 1e3);
  int violations = 0;
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> a(size(rng)), b(size(rng));
    for (auto& x : a) x = 3 + z(rng);
    for (auto& x : b) x = 3.5 + 2 * z(rng);
    const auto ab = cb::welch_t(a, b), ba = cb::welch_t(b, a);
    const double k = scale(rng);
    for (auto& x : a) x *= k;
    for (auto& x : b) x *= k;
    const auto s = cb::welch_t(a, b);
    const bool anti = ab.t_statistic == -ba.t_statistic && ab.p_value == ba.p_value;
    const bool inv = std::abs(s.t_statistic - ab.t_statistic) <=
                         1e-9 * std::max(1.0, std::abs(ab.t_statistic)) &&
                     std::abs(s.p_value - ab.p_value) <= 1e-9;
    violations += !(anti && inv);
  }
  return {reference && violations == 0,
          fmt::format("reference t={:.12f} df={:.12f} p={:.12f}; {} property violations in 1000 "
                      "pairs",
                      ref.t_statistic, ref.degrees_of_freedom, ref.p_value, violations)};
}

Outcome criterion10() {
  cb::VerboseCompensationParams p;
  p.t0 = 25;
  p.alpha = 60;
  p.tau = 0.35;
  p.tmax = 1024;
  p.beta = 0.74;
  p.dispersion_linear = 0.25;
  p.dispersion_ceiling = 0.10;
  const auto sim = cb::simulate(p, {{0.15}, 10000, 10, "calibration"});
  std::size_t hits = 0;
  for (const auto& r : sim) hits += r.hit_ceiling;
  const double fraction = static_cast<double>(hits) / sim.size();

  // Zero-dispersion synthetic run over the bundled plan: replicates must agree.
  auto plan = cb::build_plan(kData / "examples/plan_synthetic.json");
  std::vector<std::unique_ptr<cb::Backend>> owned;
  std::map<std::string, cb::Backend*> backends;
  for (auto& model : plan.models) {
    auto& synthetic = std::get<cb::SyntheticBackendConfig>(model.backend.settings);
    synthetic.params.dispersion_linear = 0;
    synthetic.params.dispersion_ceiling = 0;
    owned.push_back(cb::make_backend(model.backend));
    backends[model.name] = owned.back().get();
  }
  VectorSink sink;
  cb::run(plan, backends, sink);
  const auto mismatches = cb::verify_determinism(sink.records);
  const bool ok = std::abs(fraction - 0.74) <= 0.02 && mismatches.empty() &&
                  sink.records.size() == plan.total_calls();
  return {ok, fmt::format("ceiling fraction {:.4f} over {} trials; {} records, {} mismatched "
                          "replicate groups",
                          fraction, sim.size(), sink.records.size(), mismatches.size())};
}

Outcome criterion11() {
  // The live experiment is out of reach; the offline surface must work with
  // the network disabled: replay plan, synthetic plan and the fixture.
  auto tripwire = std::make_shared<TripwireTransport>();
  const auto plan = cb::build_plan(kData / "examples/plan_replay.json");
  std::vector<std::unique_ptr<cb::Backend>> owned;
  std::map<std::string, cb::Backend*> backends;
  for (const auto& model : plan.models) {
    owned.push_back(cb::make_backend(model.backend, tripwire));
    backends[model.name] = owned.back().get();
  }
  VectorSink sink;
  cb::run(plan, backends, sink);
  const Fixture f = load_fixture();
  const bool ok = tripwire->calls == 0 && sink.errors.empty() &&
                  sink.records.size() == plan.total_calls() && f.data.cells.size() == 36;
  return {ok, fmt::format("live 5,400-call run not attempted; replay run {} records, {} errors, "
                          "{} network calls; fixture {} cells",
                          sink.records.size(), sink.errors.size(), tripwire->calls,
                          f.data.cells.size())};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"CRI reproduction from fixture", criterion1},
      {"Instruction survival profiles", criterion2},
      {"Balanced reconciliation row", criterion3},
      {"Energy columns", criterion4},
      {"Tobit recovery", criterion5},
      {"Truncated mean vs Monte Carlo", criterion6},
      {"Threshold fit", criterion7},
      {"BCa bootstrap coverage", criterion8},
      {"Welch t-test", criterion9},
      {"Synthetic backend calibration", criterion10},
      {"Offline acceptance surface", criterion11},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome outcome;
    try {
      outcome = criteria[i].second();
    } catch (const std::exception& e) {
      outcome = {false, std::string("exception: ") + e.what()};
    }
    failed += !outcome.pass;
    std::printf("%s %2zu %s: %s\n", outcome.pass ? "PASS" : "FAIL", i + 1,
                criteria[i].first.c_str(), outcome.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed,
              criteria.size());
  return failed == 0 ? 0 : 1;
}
