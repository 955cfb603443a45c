// Randomised invariant checks. Every generator is seeded, so failures replay.

#include <cmath>
#include <numeric>
#include <random>

#include "compressbench/backends.hpp"
#include "compressbench/compression.hpp"
#include "compressbench/metrics.hpp"
#include "compressbench/prompt.hpp"
#include "compressbench/stats.hpp"
#include "test_support.hpp"

namespace cb = compressbench;

namespace {

cb::Prompt numbered_prompt(std::size_t n) {
  std::vector<std::string> tokens;
  for (std::size_t i = 1; i <= n; ++i) tokens.push_back("t" + std::to_string(i));
  return cb::Prompt(std::move(tokens));
}

// Random annotation over a prompt of length n with weights summing to 1.
std::vector<cb::SegmentSpan> random_spans(std::mt19937_64& rng, std::size_t n) {
  std::uniform_int_distribution<std::size_t> count(1, 4);
  std::uniform_int_distribution<std::size_t> pos(1, n);
  std::uniform_real_distribution<double> raw(0.05, 1.0);
  std::vector<cb::SegmentSpan> spans(count(rng));
  double total = 0;
  for (auto& s : spans) {
    std::size_t a = pos(rng), b = pos(rng);
    if (a > b) std::swap(a, b);
    s.a = a;
    s.b = b;
    s.weight = raw(rng);
    total += s.weight;
  }
  double assigned = 0;
  for (std::size_t i = 0; i + 1 < spans.size(); ++i) {
    spans[i].weight /= total;
    assigned += spans[i].weight;
  }
  spans.back().weight = 1.0 - assigned;
  return spans;
}

std::vector<double> ratio_grid() {
  std::vector<double> grid;
  for (int i = 1; i <= 20; ++i) grid.push_back(i / 20.0);
  return grid;
}

}  // namespace

TEST(SurvivalProperty, MonotoneInRatioAndBounded) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 1 + rng() % 60;
    const cb::SegmentAnnotation ann(random_spans(rng, n), n);
    for (const auto mode : {cb::SurvivalMode::strict(), cb::SurvivalMode::fractional(0.75),
                            cb::SurvivalMode::fractional(1.0)}) {
      double previous = -1;
      for (double r : ratio_grid()) {
        const auto res = cb::weighted_survival(ann, r, mode);
        EXPECT_GE(res.weighted, previous - 1e-12);
        EXPECT_GE(res.weighted, -1e-12);
        EXPECT_LE(res.weighted, 1 + 1e-12);
        for (const auto& seg : res.per_segment) {
          if (mode.kind == cb::SurvivalMode::Kind::kStrict) {
            EXPECT_TRUE(seg.psi == 0.0 || seg.psi == 1.0);
          } else {
            EXPECT_GE(seg.psi, 0.0);
            EXPECT_LE(seg.psi, 1.0);
          }
        }
        previous = res.weighted;
      }
      EXPECT_NEAR(cb::weighted_survival(ann, 1.0, mode).weighted, 1.0, 1e-12);
    }
  }
}

TEST(SurvivalProperty, OrderAndSplitInvariance) {
  std::mt19937_64 rng(2);
  const auto coverage = cb::SurvivalMode::fractional(1.0);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 2 + rng() % 40;
    auto spans = random_spans(rng, n);
    const cb::SegmentAnnotation ann(spans, n);

    auto shuffled = spans;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    const cb::SegmentAnnotation reordered(shuffled, n);

    // Split the longest span into two contiguous parts, weight by length.
    auto split = spans;
    auto longest = std::max_element(split.begin(), split.end(), [](const auto& x, const auto& y) {
      return x.length() < y.length();
    });
    if (longest->length() >= 2) {
      const cb::SegmentSpan whole = *longest;
      const std::size_t cut = whole.a + rng() % (whole.length() - 1);  // last index of part 1
      cb::SegmentSpan first = whole, second = whole;
      first.b = cut;
      second.a = cut + 1;
      first.weight = whole.weight * static_cast<double>(first.length()) / whole.length();
      second.weight = whole.weight - first.weight;
      *longest = first;
      split.push_back(second);
    }
    const cb::SegmentAnnotation divided(split, n);

    for (double r : ratio_grid()) {
      for (const auto mode : {cb::SurvivalMode::strict(), coverage}) {
        EXPECT_NEAR(cb::weighted_survival(ann, r, mode).weighted,
                    cb::weighted_survival(reordered, r, mode).weighted, 1e-12);
      }
      EXPECT_NEAR(cb::weighted_survival(ann, r, coverage).weighted,
                  cb::weighted_survival(divided, r, coverage).weighted, 1e-9);
    }
  }
}

TEST(SurvivalProperty, StrictMatchesBruteForceTruncation) {
  for (std::size_t n = 1; n <= 12; ++n) {
    const cb::Prompt prompt = numbered_prompt(n);
    for (double r : ratio_grid()) {
      const cb::Prompt kept = cb::compress_first_n(prompt, cb::CompressionRatio(r));
      const auto toks = kept.tokens();
      for (std::size_t a = 1; a <= n; ++a) {
        for (std::size_t b = a; b <= n; ++b) {
          // Direct containment: every token of the span appears in the truncated prompt.
          bool contained = true;
          for (std::size_t i = a; i <= b; ++i) {
            const std::string want = "t" + std::to_string(i);
            contained = contained && std::find(toks.begin(), toks.end(), want) != toks.end();
          }
          const double psi = cb::segment_survival({a, b, 1.0, ""}, n, r);
          EXPECT_EQ(psi, contained ? 1.0 : 0.0) << "n=" << n << " r=" << r << " [" << a << ","
                                                << b << "]";
        }
      }
    }
  }
}

TEST(CompressionProperty, PrefixNestingAndComposition) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng() % 80;
    const cb::Prompt p = numbered_prompt(n);
    const auto grid = ratio_grid();
    std::vector<cb::Prompt> outs;
    for (double r : grid) outs.push_back(cb::compress_first_n(p, cb::CompressionRatio(r)));
    for (std::size_t i = 0; i < outs.size(); ++i) {
      const auto t = outs[i].tokens();
      ASSERT_LE(t.size(), n);
      EXPECT_TRUE(std::equal(t.begin(), t.end(), p.tokens().begin()));
      EXPECT_EQ(t.size(), cb::retained_count(n, grid[i]));
      if (i > 0) {
        const auto prev = outs[i - 1].tokens();
        ASSERT_LE(prev.size(), t.size());
        EXPECT_TRUE(std::equal(prev.begin(), prev.end(), t.begin()));
      }
    }
    // Survival on the original equals a containment check on the compressed prompt.
    const auto spans = random_spans(rng, n);
    for (std::size_t i = 0; i < grid.size(); ++i) {
      for (const auto& s : spans) {
        const double closed_form = cb::segment_survival(s, n, grid[i]);
        const bool inside = s.b <= outs[i].size();
        EXPECT_EQ(closed_form, inside ? 1.0 : 0.0);
      }
    }
  }
}

TEST(CountProperty, TokenizerAndCounterAgree) {
  std::mt19937_64 rng(4);
  const std::string alphabet = "ab \t\n\r\v\fc";
  for (int trial = 0; trial < 500; ++trial) {
    std::string s;
    const std::size_t len = rng() % 30;
    for (std::size_t i = 0; i < len; ++i) s.push_back(alphabet[rng() % alphabet.size()]);
    const std::size_t words = cb::count_output_tokens(s);
    if (words == 0) {
      EXPECT_CB_ERROR(cb::tokenize(s), kEmptyPrompt);
    } else {
      EXPECT_EQ(cb::tokenize(s).size(), words) << '"' << s << '"';
    }
  }
}

TEST(SyntheticProperty, MeanNonIncreasingAndJumpsOnlyAtTau) {
  cb::VerboseCompensationParams p;
  p.t0 = 25;
  p.alpha = 60;
  p.tau = 0.35;
  p.tmax = 1024;
  p.beta = 0.74;
  std::vector<double> means;
  std::vector<double> grid;
  for (int i = 0; i <= 100; ++i) grid.push_back(i / 100.0);
  for (double psi : grid) {
    cb::Rng rng(99);  // same stream per point isolates the dependence on psi
    double sum = 0;
    for (int k = 0; k < 2000; ++k) sum += cb::synthesize_length(p, psi, rng);
    means.push_back(sum / 2000);
  }
  for (std::size_t i = 1; i < grid.size(); ++i) {
    EXPECT_LE(means[i], means[i - 1] + 1e-9) << "psi=" << grid[i];
    const bool crosses_tau = grid[i - 1] < p.tau && grid[i] >= p.tau;
    if (!crosses_tau) {
      // Integer rounding allows one token of slack on top of the linear change.
      EXPECT_LE(means[i - 1] - means[i], p.alpha * 0.01 + 1.0) << "psi=" << grid[i];
    }
  }
}

TEST(StatsProperty, TobitIsLocalOptimumAndGradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    cb::Rng rng(seed);
    std::normal_distribution<double> d(800 + 20.0 * seed, 250);
    std::vector<double> y(300);
    for (auto& v : y) v = std::min(d(rng), 1024.0);
    const auto fit = cb::tobit_fit(y, 1024);
    const double ll = cb::tobit_log_likelihood(y, 1024, fit.mu, fit.sigma);
    for (double f : {0.99, 1.01}) {
      EXPECT_GE(ll, cb::tobit_log_likelihood(y, 1024, fit.mu * f, fit.sigma));
      EXPECT_GE(ll, cb::tobit_log_likelihood(y, 1024, fit.mu, fit.sigma * f));
    }
    // Gradient away from the optimum, where it is not ~0.
    const double mu = fit.mu * 1.05, sigma = fit.sigma * 0.9, h = 1e-5;
    const auto g = cb::tobit_gradient(y, 1024, mu, sigma);
    const double dmu = (cb::tobit_log_likelihood(y, 1024, mu + h, sigma) -
                        cb::tobit_log_likelihood(y, 1024, mu - h, sigma)) /
                       (2 * h);
    const double dls = (cb::tobit_log_likelihood(y, 1024, mu, sigma * std::exp(h)) -
                        cb::tobit_log_likelihood(y, 1024, mu, sigma * std::exp(-h))) /
                       (2 * h);
    EXPECT_NEAR(g[0], dmu, 1e-5 * std::max(1.0, std::abs(dmu)));
    EXPECT_NEAR(g[1], dls, 1e-5 * std::max(1.0, std::abs(dls)));
  }
}

TEST(StatsProperty, TruncationLowersTheMean) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> mu(-1000, 3000), sigma(0.1, 800), offset(-3000, 3000);
  for (int i = 0; i < 2000; ++i) {
    const double m = mu(rng), s = sigma(rng), c = m + offset(rng);
    const double t = cb::truncated_mean(m, s, c);
    EXPECT_LE(t, m);
    EXPECT_LT(t, c);
  }
}

TEST(StatsProperty, WelchAntisymmetryAndScale) {
  std::mt19937_64 rng(6);
  std::uniform_int_distribution<int> size(2, 30);
  std::normal_distribution<double> z(0, 1);
  std::uniform_real_distribution<double> scale(1e-3, 1e3);
  for (int i = 0; i < 200; ++i) {
    std::vector<double> a(size(rng)), b(size(rng));
    for (auto& x : a) x = 5 + 2 * z(rng);
    for (auto& x : b) x = 6 + 3 * z(rng);
    const auto ab = cb::welch_t(a, b), ba = cb::welch_t(b, a);
    EXPECT_DOUBLE_EQ(ab.t_statistic, -ba.t_statistic);
    EXPECT_DOUBLE_EQ(ab.p_value, ba.p_value);
    const double k = scale(rng);
    for (auto& x : a) x *= k;
    for (auto& x : b) x *= k;
    const auto scaled = cb::welch_t(a, b);
    EXPECT_NEAR(scaled.t_statistic, ab.t_statistic, 1e-9 * std::max(1.0, std::abs(ab.t_statistic)));
    EXPECT_NEAR(scaled.p_value, ab.p_value, 1e-9);
  }
}

TEST(MetricsProperty, CriMonotoneAndEnergyLinear) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> q(0.05, 1.0), t(1, 1024), bump(0, 200);
  for (int i = 0; i < 300; ++i) {
    std::vector<cb::BenchmarkOutcome> o(3);
    for (auto& x : o) {
      x.q0 = q(rng);
      x.qr = std::uniform_real_distribution<double>(0, x.q0)(rng);
      x.t0 = t(rng);
      x.tr = t(rng);
    }
    const double base = cb::cri(o).cri;
    const std::size_t j = rng() % 3;
    auto longer = o;
    longer[j].tr += bump(rng);
    EXPECT_LE(cb::cri(longer).cri, base + 1e-15);
    auto better = o;
    better[j].qr = std::min(1.0, better[j].qr + 0.1);
    EXPECT_GE(cb::cri(better).cri, base - 1e-15);
  }
  for (int i = 0; i < 300; ++i) {
    const double a = t(rng), b = t(rng), c = t(rng), d = t(rng);
    EXPECT_NEAR(cb::energy(a + c, b + d), cb::energy(a, b) + cb::energy(c, d), 1e-9);
  }
  const std::vector<cb::BenchmarkOutcome> shrink{{"B", 0.7, 0.6, 80, 20}};
  EXPECT_EQ(cb::cri(shrink).terms[0].length_factor, 1.0);
}

TEST(BootstrapProperty, ThreadCountNeverChangesIntervals) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> z(0, 1);
  for (int i = 0; i < 5; ++i) {
    std::vector<double> v(40);
    for (auto& x : v) x = z(rng);
    const auto one = cb::bootstrap_mean_bca(v, {1000, 0.95, static_cast<std::uint64_t>(i), 1});
    const auto many = cb::bootstrap_mean_bca(v, {1000, 0.95, static_cast<std::uint64_t>(i), 3});
    EXPECT_EQ(one.lower, many.lower);
    EXPECT_EQ(one.upper, many.upper);
    EXPECT_LE(one.lower, one.statistic);
    EXPECT_GE(one.upper, one.statistic);
  }
}
