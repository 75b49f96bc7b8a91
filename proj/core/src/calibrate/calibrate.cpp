#include "opd/calibrate.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <fmt/format.h>

#include "opd/errors.hpp"

namespace opd {

double IsotonicCurve::apply(double raw) const {
  if (identity()) return raw;
  auto it = std::upper_bound(lower.begin(), lower.end(), raw);
  const std::size_t block = it == lower.begin() ? 0 : static_cast<std::size_t>(it - lower.begin()) - 1;
  return values[block];
}

IsotonicCurve fit_isotonic_curve(std::span<const double> raw, std::span<const double> outcomes,
                                 std::span<const double> weights) {
  if (raw.size() != outcomes.size() || (!weights.empty() && weights.size() != raw.size())) {
    throw DimensionError("fit_isotonic_curve: input lengths differ");
  }
  std::vector<std::size_t> order(raw.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return raw[a] < raw[b]; });

  IsotonicCurve c;
  for (std::size_t i = 0; i < order.size();) {
    double x = raw[order[i]], wsum = 0.0, ysum = 0.0;
    std::size_t j = i;
    for (; j < order.size() && raw[order[j]] == x; ++j) {
      const double w = weights.empty() ? 1.0 : weights[order[j]];
      wsum += w;
      ysum += w * outcomes[order[j]];
    }
    i = j;
    c.lower.push_back(x);
    c.upper.push_back(x);
    c.values.push_back(ysum / wsum);
    c.weights.push_back(wsum);
    // merge backwards while the order is violated
    while (c.values.size() > 1 && c.values[c.values.size() - 2] > c.values.back()) {
      const std::size_t b = c.values.size() - 1;
      const double w = c.weights[b - 1] + c.weights[b];
      c.values[b - 1] = (c.weights[b - 1] * c.values[b - 1] + c.weights[b] * c.values[b]) / w;
      c.weights[b - 1] = w;
      c.upper[b - 1] = c.upper[b];
      c.lower.pop_back();
      c.upper.pop_back();
      c.values.pop_back();
      c.weights.pop_back();
    }
  }
  return c;
}

PredictionRecord IsotonicMap::apply(const PredictionRecord& record) const {
  if (record.probs.size() != curves.size()) {
    throw DimensionError("isotonic map covers " + std::to_string(curves.size()) + " labels, record has " +
                         std::to_string(record.probs.size()));
  }
  PredictionRecord out = record;
  out.scores.clear();
  for (std::size_t i = 0; i < curves.size(); ++i) out.probs[i] = curves[i].apply(record.probs[i]);
  return out;
}

std::vector<PredictionRecord> IsotonicMap::apply(std::span<const PredictionRecord> records) const {
  std::vector<PredictionRecord> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(apply(r));
  return out;
}

std::string IsotonicMap::to_text() const {
  std::string out = fmt::format("isotonic {} {}\n", curves.size(), provenance.empty() ? "-" : provenance);
  for (std::size_t i = 0; i < curves.size(); ++i) {
    const auto& c = curves[i];
    out += fmt::format("label {} {}\n", i, c.values.size());
    for (std::size_t b = 0; b < c.values.size(); ++b) {
      out += fmt::format("{:.17g} {:.17g} {:.17g} {:.17g}\n", c.lower[b], c.upper[b], c.values[b], c.weights[b]);
    }
  }
  return out;
}

IsotonicMap IsotonicMap::from_text(const std::string& text) {
  std::istringstream in(text);
  std::string tag;
  std::size_t n = 0;
  IsotonicMap map;
  if (!(in >> tag >> n >> map.provenance) || tag != "isotonic") throw ParseError("not an isotonic map");
  if (map.provenance == "-") map.provenance.clear();
  map.curves.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t idx = 0, blocks = 0;
    if (!(in >> tag >> idx >> blocks) || tag != "label" || idx != i) {
      throw ParseError("isotonic map: bad header for label " + std::to_string(i));
    }
    auto& c = map.curves[i];
    for (std::size_t b = 0; b < blocks; ++b) {
      double lo, hi, v, w;
      if (!(in >> lo >> hi >> v >> w)) throw ParseError("isotonic map: truncated label " + std::to_string(i));
      c.lower.push_back(lo);
      c.upper.push_back(hi);
      c.values.push_back(v);
      c.weights.push_back(w);
    }
  }
  return map;
}

IsotonicMap fit_isotonic(std::span<const PredictionRecord> records, std::size_t n_labels, std::string provenance) {
  IsotonicMap map;
  map.provenance = std::move(provenance);
  map.curves.resize(n_labels);
  if (records.empty()) return map;
  std::vector<double> raw(records.size()), y(records.size());
  for (std::size_t l = 0; l < n_labels; ++l) {
    for (std::size_t i = 0; i < records.size(); ++i) {
      const auto& r = records[i];
      if (r.probs.size() != n_labels) throw DimensionError("fit_isotonic: record width differs from label count");
      raw[i] = r.probs[l];
      y[i] = std::binary_search(r.truth.begin(), r.truth.end(), static_cast<std::uint32_t>(l)) ? 1.0 : 0.0;
    }
    map.curves[l] = fit_isotonic_curve(raw, y);
  }
  return map;
}

double ece(std::span<const double> probs, std::span<const std::uint8_t> outcomes, std::size_t n_bins) {
  if (probs.size() != outcomes.size()) throw DimensionError("ece: input lengths differ");
  if (probs.empty()) throw ContractError("ece: no observations");
  if (n_bins == 0) throw ConfigError("ece: n_bins must be >= 1");
  std::vector<double> conf(n_bins, 0.0), freq(n_bins, 0.0);
  std::vector<std::size_t> count(n_bins, 0);
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const auto b = std::min(n_bins - 1, static_cast<std::size_t>(std::max(0.0, probs[i]) * static_cast<double>(n_bins)));
    conf[b] += probs[i];
    freq[b] += outcomes[i];
    ++count[b];
  }
  double total = 0.0;
  for (std::size_t b = 0; b < n_bins; ++b) {
    if (count[b] == 0) continue;
    total += std::abs(conf[b] - freq[b]);  // |b| * |mean conf - mean freq|
  }
  return total / static_cast<double>(probs.size());
}

double ece(std::span<const PredictionRecord> records, std::size_t label, std::size_t n_bins) {
  std::vector<double> p;
  std::vector<std::uint8_t> y;
  for (const auto& r : records) {
    p.push_back(r.probs.at(label));
    y.push_back(std::binary_search(r.truth.begin(), r.truth.end(), static_cast<std::uint32_t>(label)));
  }
  return ece(p, y, n_bins);
}

bool decide_exact_match(std::span<const double> probs, const ThresholdRule& rule) {
  if (rule.selects_nothing) return false;
  bool any = false;
  for (double p : probs) {
    if (p > rule.decision_threshold) {
      any = true;
      if (p < rule.t_upper) return false;
    } else if (p > rule.t_lower) {
      return false;
    }
  }
  return any;
}

namespace {

bool exact_match(const PredictionRecord& r, double threshold) {
  if (r.unseen_truth() > 0) return false;
  std::size_t t = 0;
  for (std::size_t i = 0; i < r.probs.size(); ++i) {
    const bool positive = t < r.truth.size() && r.truth[t] == i;
    if (positive) ++t;
    if ((r.probs[i] > threshold) != positive) return false;
  }
  return !r.truth.empty();
}

}  // namespace

AutomationResult apply_rule(std::span<const PredictionRecord> records, const ThresholdRule& rule) {
  AutomationResult res;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const bool correct = exact_match(records[i], rule.decision_threshold);
    res.possible += correct;
    if (!decide_exact_match(records[i].probs, rule)) continue;
    res.selected.push_back(i);
    if (correct) ++res.true_positives;
    else ++res.false_positives;
  }
  return res;
}

ThresholdSearch search_thresholds(std::span<const PredictionRecord> dev, double max_fp, double decision_threshold,
                                  std::string provenance) {
  if (!(max_fp > 0.0 && max_fp <= 1.0)) throw ConfigError("max_fp must lie in (0, 1]");
  // Per record: smallest predicted probability and largest other probability.
  struct Summary {
    bool any = false, correct = false;
    double min_pred = 1.0, max_other = 0.0;
  };
  std::vector<Summary> s(dev.size());
  std::size_t possible = 0;
  for (std::size_t i = 0; i < dev.size(); ++i) {
    for (double p : dev[i].probs) {
      if (p > decision_threshold) {
        s[i].any = true;
        s[i].min_pred = std::min(s[i].min_pred, p);
      } else {
        s[i].max_other = std::max(s[i].max_other, p);
      }
    }
    s[i].correct = exact_match(dev[i], decision_threshold);
    possible += s[i].correct;
  }

  struct Best {
    std::size_t tp = 0, fp = 0, selected = 0;
    double fp_rate = 0.0, t_u = 0.0, t_l = 0.0;
    bool found = false;
  } best;
  for (std::size_t iu = 0; iu < kThresholdGridPoints; ++iu) {
    const double t_u = static_cast<double>(iu) / 20.0;
    for (std::size_t il = 0; il < kThresholdGridPoints; ++il) {
      const double t_l = static_cast<double>(il) / 20.0;
      std::size_t tp = 0, fp = 0;
      for (const auto& r : s) {
        if (!r.any || r.min_pred < t_u || r.max_other > t_l) continue;
        r.correct ? ++tp : ++fp;
      }
      const double rate = static_cast<double>(fp) / static_cast<double>(std::max<std::size_t>(1, tp + fp));
      if (rate > max_fp || tp == 0) continue;
      const bool better = !best.found || tp > best.tp || (tp == best.tp && rate < best.fp_rate) ||
                          (tp == best.tp && rate == best.fp_rate && t_u > best.t_u) ||
                          (tp == best.tp && rate == best.fp_rate && t_u == best.t_u && t_l < best.t_l);
      if (better) best = {tp, fp, tp + fp, rate, t_u, t_l, true};
    }
  }

  ThresholdSearch out;
  out.rule.decision_threshold = decision_threshold;
  out.rule.provenance = std::move(provenance);
  if (!best.found) {
    out.rule.selects_nothing = true;
    out.dev.possible = possible;
    return out;
  }
  out.rule.t_upper = best.t_u;
  out.rule.t_lower = best.t_l;
  out.dev = apply_rule(dev, out.rule);
  return out;
}

AutomationResult evaluate_automation(std::span<const PredictionRecord> test, const ThresholdRule& rule,
                                     const IsotonicMap* map) {
  if (rule.provenance == "test") throw LeakageError("threshold rule was fitted on the test split");
  if (map && map->provenance == "test") throw LeakageError("isotonic map was fitted on the test split");
  if (!map) return apply_rule(test, rule);
  const auto calibrated = map->apply(test);
  return apply_rule(calibrated, rule);
}

std::string automation_csv(std::span<const AutomationRow> rows) {
  std::string out = "max_fp,calibrated,percent_identified,achieved_fp_rate\n";
  for (const auto& r : rows) {
    out += fmt::format("{:.2f},{},{:.2f},{:.4f}\n", r.max_fp, r.calibrated ? "true" : "false", r.percent_identified,
                       r.achieved_fp_rate);
  }
  return out;
}

}  // namespace opd
