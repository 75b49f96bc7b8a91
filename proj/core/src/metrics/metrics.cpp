#include "opd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include <fmt/format.h>

#include "opd/errors.hpp"

namespace opd {

std::vector<std::uint32_t> rank_labels(std::span<const double> scores) {
  std::vector<std::uint32_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0U);
  std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) { return scores[a] > scores[b]; });
  return order;
}

double recall_at_k(const PredictionRecord& record, std::size_t k) {
  if (record.truth_size() == 0) throw ContractError("recall_at_k: record has no ground truth");
  const auto scores = record.ranking();
  std::vector<std::uint32_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0U);
  const std::size_t top = std::min(k, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(top), order.end(),
                    [&](std::uint32_t a, std::uint32_t b) { return scores[a] != scores[b] ? scores[a] > scores[b] : a < b; });
  std::size_t hits = 0;
  for (std::size_t i = 0; i < top; ++i) {
    if (std::binary_search(record.truth.begin(), record.truth.end(), order[i])) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(record.truth_size());
}

double instance_f1(std::span<const std::uint32_t> predicted, std::span<const std::uint32_t> truth,
                   std::size_t extra_truth) {
  if (predicted.empty()) return 0.0;
  std::size_t tp = 0;
  for (auto p : predicted) {
    if (std::find(truth.begin(), truth.end(), p) != truth.end()) ++tp;
  }
  if (tp == 0) return 0.0;
  const double precision = static_cast<double>(tp) / static_cast<double>(predicted.size());
  const double recall = static_cast<double>(tp) / static_cast<double>(truth.size() + extra_truth);
  return 2.0 * precision * recall / (precision + recall);
}

double instance_f1(const PredictionRecord& record, double threshold) {
  const auto predicted = [&] {
    std::vector<std::uint32_t> out;
    for (std::size_t i = 0; i < record.probs.size(); ++i) {
      if (record.probs[i] > threshold) out.push_back(static_cast<std::uint32_t>(i));
    }
    return out;
  }();
  return instance_f1(predicted, record.truth, record.unseen_truth());
}

double ConfusionCounts::f1() const {
  const std::size_t denom = 2 * tp + fp + fn;
  return denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

ConfusionCounts confusion(const PredictionRecord& record, double threshold) {
  ConfusionCounts c;
  std::size_t t = 0;
  for (std::size_t i = 0; i < record.probs.size(); ++i) {
    const bool positive = t < record.truth.size() && record.truth[t] == i;
    if (positive) ++t;
    const bool predicted = record.probs[i] > threshold;
    if (predicted && positive) ++c.tp;
    else if (predicted) ++c.fp;
    else if (positive) ++c.fn;
  }
  c.fn += record.unseen_truth();
  return c;
}

double micro_f1(std::span<const PredictionRecord> records, double threshold) {
  ConfusionCounts total;
  for (const auto& r : records) total += confusion(r, threshold);
  if (total.tp + total.fn == 0) throw ContractError("micro_f1: no positive labels in the evaluation set");
  return total.f1();
}

double macro_f1(std::span<const PredictionRecord> records, double threshold) {
  if (records.empty()) throw ContractError("macro_f1: no records");
  const std::size_t n = records.front().probs.size();
  std::vector<ConfusionCounts> per_label(n);
  std::set<std::string> unseen;
  for (const auto& r : records) {
    if (r.probs.size() != n) throw DimensionError("macro_f1: records disagree on label count");
    std::size_t t = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const bool positive = t < r.truth.size() && r.truth[t] == i;
      if (positive) ++t;
      const bool predicted = r.probs[i] > threshold;
      if (predicted && positive) ++per_label[i].tp;
      else if (predicted) ++per_label[i].fp;
      else if (positive) ++per_label[i].fn;
    }
    unseen.insert(r.unseen_codes.begin(), r.unseen_codes.end());
  }
  double sum = 0.0;
  std::size_t included = 0;
  for (const auto& c : per_label) {
    if (c.tp + c.fn == 0) continue;
    sum += c.f1();
    ++included;
  }
  included += unseen.size();
  if (included == 0) throw ContractError("macro_f1: no label has a positive example");
  return sum / static_cast<double>(included);
}

std::optional<double> auc(std::span<const double> scores, std::span<const std::uint8_t> outcomes) {
  if (scores.size() != outcomes.size()) throw DimensionError("auc: scores and outcomes differ in length");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double positive_rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + 1 + j);  // average of ranks i+1..j
    for (std::size_t m = i; m < j; ++m) {
      if (outcomes[order[m]]) {
        positive_rank_sum += rank;
        ++n_pos;
      }
    }
    i = j;
  }
  const std::size_t n_neg = scores.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) return std::nullopt;
  const double np = static_cast<double>(n_pos);
  return (positive_rank_sum - np * (np + 1.0) / 2.0) / (np * static_cast<double>(n_neg));
}

namespace {

std::vector<std::uint8_t> outcome_row(const PredictionRecord& r) {
  std::vector<std::uint8_t> y(r.probs.size(), 0);
  for (auto t : r.truth) y.at(t) = 1;
  return y;
}

}  // namespace

double auc_micro(std::span<const PredictionRecord> records) {
  std::vector<double> scores;
  std::vector<std::uint8_t> outcomes;
  for (const auto& r : records) {
    const auto ranking = r.ranking();
    scores.insert(scores.end(), ranking.begin(), ranking.end());
    const auto y = outcome_row(r);
    outcomes.insert(outcomes.end(), y.begin(), y.end());
  }
  auto value = auc(scores, outcomes);
  if (!value) throw ContractError("auc_micro: needs at least one positive and one negative pair");
  return *value;
}

double auc_macro(std::span<const PredictionRecord> records) {
  if (records.empty()) throw ContractError("auc_macro: no records");
  const std::size_t n = records.front().probs.size();
  std::vector<std::vector<double>> scores(n);
  std::vector<std::vector<std::uint8_t>> outcomes(n);
  for (const auto& r : records) {
    if (r.probs.size() != n) throw DimensionError("auc_macro: records disagree on label count");
    const auto ranking = r.ranking();
    const auto y = outcome_row(r);
    for (std::size_t i = 0; i < n; ++i) {
      scores[i].push_back(ranking[i]);
      outcomes[i].push_back(y[i]);
    }
  }
  double sum = 0.0;
  std::size_t included = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (auto v = auc(scores[i], outcomes[i])) {
      sum += *v;
      ++included;
    }
  }
  if (included == 0) throw ContractError("auc_macro: no label has both classes");
  return sum / static_cast<double>(included);
}

double oracle_recall(std::span<const PredictionRecord> records, const LabelSpace& labels,
                     const std::map<std::string, std::size_t>& train_counts, std::size_t min_count, std::size_t k) {
  if (records.empty()) throw ContractError("oracle_recall: no records");
  double total = 0.0;
  for (const auto& r : records) {
    if (r.truth_size() == 0) throw ContractError("oracle_recall: record has no ground truth");
    std::size_t eligible = 0;
    auto count_of = [&](const std::string& code) {
      auto it = train_counts.find(code);
      return it == train_counts.end() ? std::size_t{0} : it->second;
    };
    for (auto t : r.truth) eligible += count_of(labels.code(t)) >= min_count;
    for (const auto& c : r.unseen_codes) eligible += count_of(c) >= min_count;
    total += static_cast<double>(std::min(eligible, k)) / static_cast<double>(r.truth_size());
  }
  return total / static_cast<double>(records.size());
}

MetricsReport evaluate(std::span<const PredictionRecord> records, std::size_t k, double threshold) {
  if (records.empty()) throw ContractError("evaluate: no records");
  MetricsReport rep;
  rep.records = records.size();
  rep.k = k;
  double r_sum = 0.0, f_sum = 0.0;
  for (const auto& r : records) {
    r_sum += recall_at_k(r, k);
    f_sum += instance_f1(r, threshold);
  }
  rep.recall_at_k = r_sum / static_cast<double>(records.size());
  rep.f1_instance = f_sum / static_cast<double>(records.size());
  auto attempt = [](auto fn) -> std::optional<double> {
    try {
      return fn();
    } catch (const ContractError&) {
      return std::nullopt;
    }
  };
  rep.auc_macro = attempt([&] { return auc_macro(records); });
  rep.auc_micro = attempt([&] { return auc_micro(records); });
  rep.f1_macro = attempt([&] { return macro_f1(records, threshold); });
  rep.f1_micro = attempt([&] { return micro_f1(records, threshold); });
  return rep;
}

namespace {

std::string pct(const std::optional<double>& v) { return v ? fmt::format("{:.2f}", 100.0 * *v) : std::string("-"); }

}  // namespace

std::string format_report_text(std::span<const std::pair<std::string, MetricsReport>> rows) {
  const std::size_t k = rows.empty() ? 5 : rows.front().second.k;
  std::size_t width = 6;
  for (const auto& [name, _] : rows) width = std::max(width, name.size() + 2);
  std::string out = fmt::format("{:<{}}{:^18}{:^27}{:>10}\n", "", width, "AUC", "F1", "");
  out += fmt::format("{:<{}}{:>9}{:>9}{:>9}{:>9}{:>9}{:>10}\n", "Model", width, "Macro", "Micro", "Macro", "Micro",
                     "Inst.", fmt::format("R@{}", k));
  for (const auto& [name, r] : rows) {
    out += fmt::format("{:<{}}{:>9}{:>9}{:>9}{:>9}{:>9}{:>10}\n", name, width, pct(r.auc_macro), pct(r.auc_micro),
                       pct(r.f1_macro), pct(r.f1_micro), pct(r.f1_instance), pct(r.recall_at_k));
  }
  return out;
}

std::string format_report_csv(std::span<const std::pair<std::string, MetricsReport>> rows) {
  const std::size_t k = rows.empty() ? 5 : rows.front().second.k;
  std::string out = fmt::format("model,auc_macro,auc_micro,f1_macro,f1_micro,f1_instance,recall_at_{}\n", k);
  for (const auto& [name, r] : rows) {
    out += fmt::format("{},{},{},{},{},{},{}\n", name, pct(r.auc_macro), pct(r.auc_micro), pct(r.f1_macro),
                       pct(r.f1_micro), pct(r.f1_instance), pct(r.recall_at_k));
  }
  return out;
}

GroupKey parse_group_key(std::string_view name) {
  if (name == "dept") return GroupKey::kDept;
  if (name == "label_frequency") return GroupKey::kLabelFrequency;
  if (name == "first_visit") return GroupKey::kFirstVisit;
  throw ConfigError("unknown breakdown key '" + std::string(name) + "' (dept, label_frequency, first_visit)");
}

std::string_view to_string(GroupKey key) {
  switch (key) {
    case GroupKey::kDept: return "dept";
    case GroupKey::kLabelFrequency: return "label_frequency";
    case GroupKey::kFirstVisit: return "first_visit";
  }
  return "?";
}

std::string frequency_bucket(std::size_t train_count) {
  static constexpr std::array<std::pair<std::size_t, const char*>, 5> kBuckets = {{
      {200, "200+"}, {100, "100-199"}, {50, "50-99"}, {20, "20-49"}, {10, "10-19"}}};
  for (const auto& [floor, name] : kBuckets) {
    if (train_count >= floor) return name;
  }
  return "0-9";
}

namespace {

struct GroupAccumulator {
  std::size_t size = 0;
  double recall = 0.0, f1 = 0.0;
  ConfusionCounts counts;
  std::set<std::string> codes;
  std::optional<Date> first, last;

  void add(const PredictionRecord& r, std::size_t k, double threshold, const std::vector<std::string>& truth_names) {
    ++size;
    recall += recall_at_k(r, k);
    f1 += instance_f1(r, threshold);
    counts += confusion(r, threshold);
    codes.insert(truth_names.begin(), truth_names.end());
    if (!first || r.date < *first) first = r.date;
    if (!last || r.date > *last) last = r.date;
  }
};

PredictionRecord project(const PredictionRecord& r, std::span<const std::uint32_t> keep) {
  PredictionRecord p;
  p.patient_id = r.patient_id;
  p.dept = r.dept;
  p.date = r.date;
  p.first_visit = r.first_visit;
  const auto ranking = r.ranking();
  for (std::size_t j = 0; j < keep.size(); ++j) {
    p.probs.push_back(r.probs[keep[j]]);
    if (!r.scores.empty()) p.scores.push_back(ranking[keep[j]]);
    if (std::binary_search(r.truth.begin(), r.truth.end(), keep[j])) p.truth.push_back(static_cast<std::uint32_t>(j));
  }
  return p;
}

}  // namespace

std::vector<GroupReport> breakdown(std::span<const PredictionRecord> records, GroupKey key,
                                   std::span<const std::size_t> label_train_counts, std::size_t k, double threshold) {
  std::map<std::string, GroupAccumulator> groups;
  auto names = [](const PredictionRecord& r, std::span<const std::uint32_t> mapping) {
    std::vector<std::string> out;
    for (auto t : r.truth) out.push_back("#" + std::to_string(mapping.empty() ? t : mapping[t]));
    out.insert(out.end(), r.unseen_codes.begin(), r.unseen_codes.end());
    return out;
  };
  if (key == GroupKey::kLabelFrequency) {
    std::map<std::string, std::vector<std::uint32_t>> buckets;
    for (std::size_t i = 0; i < label_train_counts.size(); ++i) {
      buckets[frequency_bucket(label_train_counts[i])].push_back(static_cast<std::uint32_t>(i));
    }
    for (const auto& [bucket, labels] : buckets) {
      for (const auto& r : records) {
        if (r.probs.size() != label_train_counts.size()) {
          throw DimensionError("breakdown: record width differs from label count list");
        }
        PredictionRecord p = project(r, labels);
        if (p.truth.empty()) continue;
        groups[bucket].add(p, k, threshold, names(p, labels));
      }
    }
  } else {
    for (const auto& r : records) {
      const std::string g = key == GroupKey::kDept ? r.dept : (r.first_visit ? "first_visit" : "recurring");
      groups[g].add(r, k, threshold, names(r, {}));
    }
  }

  std::vector<GroupReport> out;
  for (auto& [name, acc] : groups) {
    GroupReport g;
    g.group = name;
    g.size = acc.size;
    g.recall_at_k = acc.recall / static_cast<double>(acc.size);
    g.f1_instance = acc.f1 / static_cast<double>(acc.size);
    g.counts = acc.counts;
    g.distinct_labels = acc.codes.size();
    const double days = static_cast<double>((*acc.last - *acc.first).count() + 1);
    g.distinct_labels_per_year = static_cast<double>(g.distinct_labels) / (days / 365.25);
    out.push_back(std::move(g));
  }
  std::stable_sort(out.begin(), out.end(), [](const GroupReport& a, const GroupReport& b) { return a.size > b.size; });
  return out;
}

std::string breakdown_csv(std::span<const GroupReport> groups, std::size_t k) {
  std::string out = fmt::format("group,size,recall_at_{},f1_instance,tp,fp,fn,distinct_labels,distinct_labels_per_year\n", k);
  for (const auto& g : groups) {
    out += fmt::format("{},{},{:.4f},{:.4f},{},{},{},{},{:.2f}\n", g.group, g.size, g.recall_at_k, g.f1_instance,
                       g.counts.tp, g.counts.fp, g.counts.fn, g.distinct_labels, g.distinct_labels_per_year);
  }
  return out;
}

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && v[order[j]] == v[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t m = i; m < j; ++m) ranks[order[m]] = rank;
    i = j;
  }
  return ranks;
}

}  // namespace

double spearman(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw ContractError("spearman: inputs differ in length");
  if (xs.size() < 2) throw ContractError("spearman: needs at least two points");
  const auto rx = average_ranks(xs), ry = average_ranks(ys);
  const double n = static_cast<double>(xs.size());
  const double mean = (n + 1.0) / 2.0;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mean) * (ry[i] - mean);
    sxx += (rx[i] - mean) * (rx[i] - mean);
    syy += (ry[i] - mean) * (ry[i] - mean);
  }
  if (sxx == 0.0 || syy == 0.0) throw ContractError("spearman: undefined for constant input");
  return sxy / std::sqrt(sxx * syy);
}

Histogram score_histogram(std::span<const double> scores, std::size_t bins) {
  if (bins == 0) throw ConfigError("score_histogram: bins must be >= 1");
  Histogram h;
  h.counts.assign(bins, 0);
  std::size_t ones = 0;
  for (double s : scores) {
    if (!(s >= 0.0 && s <= 1.0)) throw ContractError("score_histogram: score outside [0,1]");
    const auto b = std::min(bins - 1, static_cast<std::size_t>(s * static_cast<double>(bins)));
    ++h.counts[b];
    ones += s == 1.0;
  }
  h.exact_one_fraction = scores.empty() ? 0.0 : static_cast<double>(ones) / static_cast<double>(scores.size());
  return h;
}

std::vector<double> per_record(std::span<const PredictionRecord> records, RecordMetric metric, std::size_t k,
                               double threshold) {
  std::vector<double> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    out.push_back(metric == RecordMetric::kInstanceF1 ? instance_f1(r, threshold) : recall_at_k(r, k));
  }
  return out;
}

bool level3_inconsistent(std::string_view a, std::string_view b) {
  for (auto c : {a, b}) {
    if (!is_valid_code(c)) throw ValidationError("malformed code '" + std::string(c) + "'");
  }
  if (a.substr(0, 3) != b.substr(0, 3)) return false;
  auto rest = [](std::string_view c) {
    std::string r;
    for (char ch : c.substr(3)) {
      if (ch != '.') r += ch;
    }
    return r;
  };
  return rest(a) != rest(b);
}

ConsistencyResult consistency_check(std::span<const std::pair<std::string, std::string>> pairs) {
  ConsistencyResult res;
  for (const auto& [a, b] : pairs) {
    ++res.matched_pairs;
    res.inconsistent_pairs += level3_inconsistent(a, b);
  }
  return res;
}

std::vector<std::pair<std::string, std::string>> matched_code_pairs(std::span<const Encounter> encounters,
                                                                    int window_days) {
  std::map<std::string, std::vector<const Encounter*>> by_patient;
  for (const auto& e : encounters) by_patient[e.patient_id].push_back(&e);
  std::vector<std::pair<std::string, std::string>> out;
  for (auto& [_, visits] : by_patient) {
    std::stable_sort(visits.begin(), visits.end(),
                     [](const Encounter* x, const Encounter* y) { return x->date < y->date; });
    for (std::size_t i = 0; i < visits.size(); ++i) {
      for (std::size_t j = i + 1; j < visits.size(); ++j) {
        if ((visits[j]->date - visits[i]->date).count() > window_days) break;
        for (const auto& a : visits[i]->codes) {
          for (const auto& b : visits[j]->codes) {
            if (chapter_of(a) == chapter_of(b)) out.emplace_back(a, b);
          }
        }
      }
    }
  }
  return out;
}

}  // namespace opd
