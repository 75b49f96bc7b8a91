#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "opd/calibrate.hpp"
#include "opd/errors.hpp"
#include "support/fixtures.hpp"

namespace opd {
namespace {

PredictionRecord rec(std::vector<double> probs, std::vector<std::uint32_t> truth) {
  PredictionRecord r;
  r.probs = std::move(probs);
  r.truth = std::move(truth);
  return r;
}

std::vector<double> fitted(const IsotonicCurve& c, std::span<const double> raw) {
  std::vector<double> out;
  for (double x : raw) out.push_back(c.apply(x));
  return out;
}

TEST(Isotonic, TwoPointViolationPools) {
  const std::vector<double> raw = {0.2, 0.4}, y = {1, 0};
  const auto c = fit_isotonic_curve(raw, y);
  EXPECT_EQ(fitted(c, raw), (std::vector<double>{0.5, 0.5}));
}

TEST(Isotonic, MonotoneInputReproducesLevelMeans) {
  const std::vector<double> raw = {0.1, 0.1, 0.5, 0.5, 0.9}, y = {0, 0, 0, 1, 1};
  const auto c = fit_isotonic_curve(raw, y);
  EXPECT_EQ(fitted(c, raw), (std::vector<double>{0, 0, 0.5, 0.5, 1}));
  // clamped outside the observed range
  EXPECT_EQ(c.apply(0.0), 0.0);
  EXPECT_EQ(c.apply(1.0), 1.0);
  EXPECT_EQ(c.apply(0.7), 0.5);
}

TEST(Isotonic, AllOnesIsConstant) {
  const std::vector<double> raw = {0.9, 0.1, 0.4}, y = {1, 1, 1};
  const auto c = fit_isotonic_curve(raw, y);
  for (double x : {0.0, 0.3, 0.95}) EXPECT_EQ(c.apply(x), 1.0);
}

TEST(Isotonic, UnobservedLabelKeepsIdentity) {
  const std::vector<PredictionRecord> rs = {rec({0.3, 0.8}, {0})};
  const IsotonicMap m = fit_isotonic({}, 2, "dev");
  ASSERT_EQ(m.curves.size(), 2u);
  EXPECT_TRUE(m.curves[0].identity());
  EXPECT_EQ(m.apply(rs[0]).probs, rs[0].probs);
}

// Least-squares projection onto the monotone cone by enumerating every split
// of the sorted points into contiguous blocks.
std::vector<double> exhaustive_pool(const std::vector<double>& y, const std::vector<double>& w) {
  const std::size_t n = y.size();
  double best_sse = std::numeric_limits<double>::infinity();
  std::vector<double> best;
  for (std::uint32_t cuts = 0; cuts < (1u << (n - 1)); ++cuts) {
    std::vector<double> fit(n);
    double prev = -1.0;
    bool ok = true;
    std::size_t start = 0;
    for (std::size_t i = 0; i < n && ok; ++i) {
      if (i + 1 < n && !(cuts >> i & 1u)) continue;
      double sw = 0, sy = 0;
      for (std::size_t j = start; j <= i; ++j) sw += w[j], sy += w[j] * y[j];
      const double mean = sy / sw;
      if (mean < prev - 1e-12) ok = false;
      prev = mean;
      for (std::size_t j = start; j <= i; ++j) fit[j] = mean;
      start = i + 1;
    }
    if (!ok) continue;
    double sse = 0;
    for (std::size_t j = 0; j < n; ++j) sse += w[j] * (y[j] - fit[j]) * (y[j] - fit[j]);
    if (sse < best_sse) best_sse = sse, best = fit;
  }
  return best;
}

TEST(IsotonicProperty, MatchesExhaustivePoolingOracle) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = testing::uniform_index(rng, 1, 12);
    std::vector<double> raw(n), y(n), w(n);
    for (std::size_t i = 0; i < n; ++i) raw[i] = (static_cast<double>(i) + u(rng) * 0.9) / static_cast<double>(n);
    for (auto& v : y) v = trial % 2 ? static_cast<double>(testing::uniform_index(rng, 0, 1)) : u(rng);
    for (auto& v : w) v = 0.5 + u(rng);
    const auto expect = exhaustive_pool(y, w);
    const auto got = fitted(fit_isotonic_curve(raw, y, w), raw);
    for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(got[i], expect[i], 1e-12) << "trial " << trial;
  }
}

TEST(IsotonicProperty, NonDecreasingAndInUnitInterval) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = testing::uniform_index(rng, 1, 60);
    std::vector<double> raw(n), y(n);
    for (auto& v : raw) v = std::round(u(rng) * 20.0) / 20.0;
    for (auto& v : y) v = static_cast<double>(u(rng) < 0.4);
    const auto c = fit_isotonic_curve(raw, y);
    double prev = -1.0;
    for (int i = 0; i <= 200; ++i) {
      const double v = c.apply(i / 200.0);
      EXPECT_GE(v, prev);
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
      prev = v;
    }
  }
}

TEST(Ece, Examples) {
  const std::vector<double> half(4, 0.5), ones(3, 1.0);
  EXPECT_DOUBLE_EQ(ece(half, std::vector<std::uint8_t>{1, 0, 1, 0}), 0.0);
  EXPECT_DOUBLE_EQ(ece(ones, std::vector<std::uint8_t>{0, 0, 0}), 1.0);
  // bins {0.05}, {0.15, 0.12}, {0.55, 0.58}, {0.95}
  const std::vector<double> p = {0.05, 0.15, 0.12, 0.55, 0.58, 0.95};
  const std::vector<std::uint8_t> y = {0, 1, 0, 1, 0, 1};
  EXPECT_NEAR(ece(p, y), 0.16, 1e-12);
  EXPECT_NEAR(ece(p, y, 2), (3 * std::abs(0.32 / 3 - 1.0 / 3) + 3 * std::abs(2.08 / 3 - 2.0 / 3)) / 6, 1e-12);
}

TEST(EceProperty, CalibrationDoesNotIncreaseEceOnFitData) {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const std::size_t n_labels = 6;
  std::vector<PredictionRecord> rs;
  for (int i = 0; i < 400; ++i) {
    PredictionRecord r;
    for (std::uint32_t l = 0; l < n_labels; ++l) {
      const double p = u(rng);
      r.probs.push_back(p);
      if (u(rng) < p * p) r.truth.push_back(l);  // miscalibrated on purpose
    }
    rs.push_back(std::move(r));
  }
  const IsotonicMap m = fit_isotonic(rs, n_labels, "dev");
  const auto calibrated = m.apply(rs);
  for (std::size_t l = 0; l < n_labels; ++l) EXPECT_LE(ece(calibrated, l), ece(rs, l) + 1e-9) << "label " << l;
  const IsotonicMap back = IsotonicMap::from_text(m.to_text());
  EXPECT_EQ(back.provenance, "dev");
  for (const auto& r : rs) EXPECT_EQ(back.apply(r).probs, m.apply(r).probs);
}

TEST(ExactMatch, Examples) {
  ThresholdRule rule;
  rule.t_upper = 0.95;
  rule.t_lower = 0.10;
  EXPECT_TRUE(decide_exact_match(std::vector<double>{0.97, 0.05}, rule));
  EXPECT_FALSE(decide_exact_match(std::vector<double>{0.97, 0.50}, rule));
  EXPECT_FALSE(decide_exact_match(std::vector<double>{0.05, 0.02}, rule));
  // closed boundaries
  EXPECT_TRUE(decide_exact_match(std::vector<double>{0.95, 0.10}, rule));
  rule.selects_nothing = true;
  EXPECT_FALSE(decide_exact_match(std::vector<double>{0.97, 0.05}, rule));
}

TEST(ExactMatchProperty, TighterThresholdsShrinkSelection) {
  std::mt19937_64 rng(14);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 2000; ++trial) {
    std::vector<double> p(5);
    for (auto& v : p) v = std::round(u(rng) * 20.0) / 20.0;
    ThresholdRule loose, tight;
    loose.t_upper = testing::uniform_index(rng, 0, 20) / 20.0;
    loose.t_lower = testing::uniform_index(rng, 0, 20) / 20.0;
    tight = loose;
    tight.t_upper = std::min(1.0, loose.t_upper + testing::uniform_index(rng, 0, 4) / 20.0);
    tight.t_lower = std::max(0.0, loose.t_lower - testing::uniform_index(rng, 0, 4) / 20.0);
    if (decide_exact_match(p, tight)) EXPECT_TRUE(decide_exact_match(p, loose));
  }
}

TEST(Search, HandFixture) {
  // record 0 is an exact match, record 1 predicts the wrong label
  const std::vector<PredictionRecord> dev = {rec({0.97, 0.03}, {0}), rec({0.93, 0.08}, {1})};
  const auto s = search_thresholds(dev, 0.01, 0.5, "dev");
  EXPECT_FALSE(s.rule.selects_nothing);
  EXPECT_EQ(s.dev.true_positives, 1u);
  EXPECT_EQ(s.dev.false_positives, 0u);
  // highest t_u that keeps record 0, then lowest t_l
  EXPECT_DOUBLE_EQ(s.rule.t_upper, 0.95);
  EXPECT_DOUBLE_EQ(s.rule.t_lower, 0.05);
  EXPECT_EQ(s.dev.possible, 1u);
}

TEST(Search, CertainRecordIsFeasibleAtGridCorner) {
  const std::vector<PredictionRecord> dev = {rec({1.0, 0.0}, {0})};
  const auto s = search_thresholds(dev, 1.0, 0.5, "dev");
  EXPECT_EQ(s.rule.t_upper, 1.0);
  EXPECT_EQ(s.rule.t_lower, 0.0);
  EXPECT_GE(s.dev.true_positives, 1u);
}

TEST(Search, FlatOutputsSelectNothing) {
  const std::vector<PredictionRecord> dev = {rec({0.5, 0.5}, {0}), rec({0.5, 0.5}, {1})};
  const auto s = search_thresholds(dev, 0.05, 0.5, "dev");
  EXPECT_TRUE(s.rule.selects_nothing);
  EXPECT_TRUE(s.dev.selected.empty());
  const auto t = evaluate_automation(dev, s.rule);
  EXPECT_EQ(t.percent_of_possible(), 0.0);
  EXPECT_EQ(t.fp_rate(), 0.0);
}

TEST(SearchProperty, MatchesGridEnumerationAndRespectsMaxFp) {
  std::mt19937_64 rng(15);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 40; ++trial) {
    std::vector<PredictionRecord> dev;
    for (int i = 0; i < 30; ++i) {
      PredictionRecord r;
      for (std::uint32_t l = 0; l < 4; ++l) {
        const bool pos = u(rng) < 0.3;
        if (pos) r.truth.push_back(l);
        r.probs.push_back(std::clamp(pos ? 0.75 + 0.3 * (u(rng) - 0.3) : 0.25 + 0.3 * (u(rng) - 0.7), 0.0, 1.0));
      }
      if (r.truth.empty()) r.truth.push_back(0);
      dev.push_back(std::move(r));
    }
    const double max_fp = 0.05 * static_cast<double>(1 + trial % 4);
    const auto s = search_thresholds(dev, max_fp, 0.5, "dev");
    std::size_t best_tp = 0;
    for (int iu = 0; iu <= 20; ++iu)
      for (int il = 0; il <= 20; ++il) {
        ThresholdRule r;
        r.t_upper = iu / 20.0;
        r.t_lower = il / 20.0;
        const auto a = apply_rule(dev, r);
        if (a.fp_rate() <= max_fp) best_tp = std::max(best_tp, a.true_positives);
      }
    EXPECT_EQ(s.dev.true_positives, best_tp);
    EXPECT_LE(s.dev.fp_rate(), max_fp);
    EXPECT_EQ(s.dev.true_positives + s.dev.false_positives, s.dev.selected.size());
  }
}

TEST(Automation, PerfectModelIdentifiesEverything) {
  std::vector<PredictionRecord> test;
  for (std::uint32_t i = 0; i < 20; ++i) {
    std::vector<double> p(4, 0.02);
    p[i % 4] = 0.98;
    test.push_back(rec(p, {i % 4}));
  }
  ThresholdRule rule;
  rule.t_upper = 0.95;
  rule.t_lower = 0.05;
  rule.provenance = "dev";
  const auto a = evaluate_automation(test, rule);
  EXPECT_DOUBLE_EQ(a.percent_of_possible(), 100.0);
  EXPECT_EQ(a.fp_rate(), 0.0);
}

TEST(Automation, TestProvenanceIsLeakage) {
  const std::vector<PredictionRecord> test = {rec({0.9, 0.1}, {0})};
  ThresholdRule rule;
  rule.provenance = "test";
  EXPECT_THROW(evaluate_automation(test, rule), LeakageError);
  rule.provenance = "dev";
  const IsotonicMap map = fit_isotonic(test, 2, "test");
  EXPECT_THROW(evaluate_automation(test, rule, &map), LeakageError);
}

TEST(Automation, CsvHeader) {
  const std::vector<AutomationRow> rows = {{0.05, true, 50.0, 0.04}};
  const std::string csv = automation_csv(rows);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 2);
  EXPECT_NE(csv.find("max_fp"), std::string::npos);
}

}  // namespace
}  // namespace opd
