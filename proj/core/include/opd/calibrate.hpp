#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "opd/metrics.hpp"

namespace opd {

/// Piecewise-constant monotone map for one label. Block i covers raw values
/// from lower[i] up to the next block's lower bound.
struct IsotonicCurve {
  std::vector<double> lower;   // ascending
  std::vector<double> upper;   // largest raw value pooled into each block
  std::vector<double> values;  // non-decreasing
  std::vector<double> weights;

  bool identity() const { return values.empty(); }
  double apply(double raw) const;
};

/// Pool-adjacent-violators fit of `outcomes` on `raw`; equal raw values are
/// pooled first. Optional `weights` default to one.
IsotonicCurve fit_isotonic_curve(std::span<const double> raw, std::span<const double> outcomes,
                                 std::span<const double> weights = {});

struct IsotonicMap {
  std::vector<IsotonicCurve> curves;  // one per label
  /// Split the map was fitted on; "test" is rejected at application time.
  std::string provenance;

  /// Calibrated copy; ranking scores are replaced by the calibrated values.
  PredictionRecord apply(const PredictionRecord& record) const;
  std::vector<PredictionRecord> apply(std::span<const PredictionRecord> records) const;

  std::string to_text() const;
  static IsotonicMap from_text(const std::string& text);
};

/// Label-wise isotonic regression. Without records every label keeps the
/// identity map.
IsotonicMap fit_isotonic(std::span<const PredictionRecord> records, std::size_t n_labels, std::string provenance);

/// Equal-width bins; the last bin is closed.
double ece(std::span<const double> probs, std::span<const std::uint8_t> outcomes, std::size_t n_bins = 10);
double ece(std::span<const PredictionRecord> records, std::size_t label, std::size_t n_bins = 10);

struct ThresholdRule {
  double t_upper = 1.0;
  double t_lower = 0.0;
  double decision_threshold = 0.5;
  /// Set when no grid point selected anything; such a rule selects nothing.
  bool selects_nothing = false;
  std::string provenance;
};

/// Predicted set non-empty, every predicted p >= t_u and every other p <= t_l.
bool decide_exact_match(std::span<const double> probs, const ThresholdRule& rule);

struct AutomationResult {
  std::vector<std::size_t> selected;
  std::size_t true_positives = 0;
  std::size_t false_positives = 0;
  /// Records whose predicted set is an exact match.
  std::size_t possible = 0;

  double fp_rate() const {
    return static_cast<double>(false_positives) / static_cast<double>(std::max<std::size_t>(1, selected.size()));
  }
  double percent_of_possible() const {
    return possible == 0 ? 0.0 : 100.0 * static_cast<double>(true_positives) / static_cast<double>(possible);
  }
};

/// Applies `rule` without provenance checks.
AutomationResult apply_rule(std::span<const PredictionRecord> records, const ThresholdRule& rule);

struct ThresholdSearch {
  ThresholdRule rule;
  AutomationResult dev;
};

inline constexpr double kThresholdStep = 0.05;
inline constexpr std::size_t kThresholdGridPoints = 21;

/// Exhaustive search over {0, 0.05, ..., 1}^2 for the rule with most true
/// positives whose dev fp_rate stays within `max_fp`. Ties: lower fp_rate, then
/// higher t_u, then lower t_l.
ThresholdSearch search_thresholds(std::span<const PredictionRecord> dev, double max_fp, double decision_threshold,
                                  std::string provenance);

/// Calibrates with `map` when given, then applies the rule. Throws LeakageError
/// when the rule or map was fitted on the test split.
AutomationResult evaluate_automation(std::span<const PredictionRecord> test, const ThresholdRule& rule,
                                     const IsotonicMap* map = nullptr);

struct AutomationRow {
  double max_fp = 0.0;
  bool calibrated = false;
  double percent_identified = 0.0;
  double achieved_fp_rate = 0.0;
};

std::string automation_csv(std::span<const AutomationRow> rows);

}  // namespace opd
