#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "opd/corpus.hpp"

namespace opd {

/// Scores of one evaluated encounter.
struct PredictionRecord {
  /// Probability per label, in label-space order.
  std::vector<double> probs;
  /// Ranking scores when they differ from `probs` (pre-clamp reranker output).
  std::vector<double> scores;
  /// Ground truth inside the label space, ascending.
  std::vector<std::uint32_t> truth;
  /// Ground-truth codes absent from the label space; they count as missed.
  std::vector<std::string> unseen_codes;

  std::string patient_id;
  std::string dept;
  Date date{};
  bool first_visit = true;

  std::span<const double> ranking() const { return scores.empty() ? std::span<const double>(probs) : scores; }
  std::size_t unseen_truth() const { return unseen_codes.size(); }
  std::size_t truth_size() const { return truth.size() + unseen_codes.size(); }
};

/// Label indices ordered by descending score; ties by ascending index.
std::vector<std::uint32_t> rank_labels(std::span<const double> scores);

/// Fraction of ground truth found among the k best-ranked labels. Throws
/// ContractError for an empty ground truth.
double recall_at_k(const PredictionRecord& record, std::size_t k = 5);

/// Harmonic mean of set precision and recall; `extra_truth` counts ground-truth
/// items that cannot appear in `predicted`. An empty prediction scores 0.
double instance_f1(std::span<const std::uint32_t> predicted, std::span<const std::uint32_t> truth,
                   std::size_t extra_truth = 0);
double instance_f1(const PredictionRecord& record, double threshold = 0.5);

struct ConfusionCounts {
  std::size_t tp = 0, fp = 0, fn = 0;
  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
  double f1() const;
};

ConfusionCounts confusion(const PredictionRecord& record, double threshold = 0.5);

/// Pooled over all (record, label) pairs. Throws ContractError without positives.
double micro_f1(std::span<const PredictionRecord> records, double threshold = 0.5);
/// Mean per-label F1 over labels with at least one positive; codes outside the
/// label space take part with F1 = 0.
double macro_f1(std::span<const PredictionRecord> records, double threshold = 0.5);

/// Rank-statistic AUC of scores against binary outcomes, ties counted half.
/// Returns nothing when either class is absent.
std::optional<double> auc(std::span<const double> scores, std::span<const std::uint8_t> outcomes);
/// Over every in-space (record, label) pair. Throws ContractError if degenerate.
double auc_micro(std::span<const PredictionRecord> records);
/// Mean over labels with both classes present. Throws ContractError if none.
double auc_macro(std::span<const PredictionRecord> records);

/// Recall@k of the oracle that predicts the ground-truth codes with train count
/// >= min_count, ranked first.
double oracle_recall(std::span<const PredictionRecord> records, const LabelSpace& labels,
                     const std::map<std::string, std::size_t>& train_counts, std::size_t min_count,
                     std::size_t k = 5);

struct MetricsReport {
  std::size_t records = 0;
  std::size_t k = 5;
  std::optional<double> auc_macro, auc_micro;
  std::optional<double> f1_macro, f1_micro;
  double f1_instance = 0.0;
  double recall_at_k = 0.0;
};

MetricsReport evaluate(std::span<const PredictionRecord> records, std::size_t k = 5, double threshold = 0.5);

/// Aligned table with one row per named report, values x100 with two decimals.
std::string format_report_text(std::span<const std::pair<std::string, MetricsReport>> rows);
std::string format_report_csv(std::span<const std::pair<std::string, MetricsReport>> rows);

enum class GroupKey { kDept, kLabelFrequency, kFirstVisit };

GroupKey parse_group_key(std::string_view name);
std::string_view to_string(GroupKey key);

/// Label-frequency bucket of a train count.
std::string frequency_bucket(std::size_t train_count);

struct GroupReport {
  std::string group;
  std::size_t size = 0;
  double recall_at_k = 0.0;
  double f1_instance = 0.0;
  ConfusionCounts counts;
  std::size_t distinct_labels = 0;
  /// Distinct ground-truth codes per year spanned by the group's encounters.
  double distinct_labels_per_year = 0.0;
};

/// Groups sorted by size descending, then name. Label-frequency groups project
/// every record onto the labels of one bucket and skip records without
/// ground truth there; `label_train_counts` is indexed like the label space.
std::vector<GroupReport> breakdown(std::span<const PredictionRecord> records, GroupKey key,
                                   std::span<const std::size_t> label_train_counts, std::size_t k = 5,
                                   double threshold = 0.5);
std::string breakdown_csv(std::span<const GroupReport> groups, std::size_t k = 5);

/// Spearman rank correlation with average ranks for ties. Throws ContractError
/// on length mismatch, fewer than two points or constant input.
double spearman(std::span<const double> xs, std::span<const double> ys);

struct Histogram {
  std::vector<std::size_t> counts;
  double exact_one_fraction = 0.0;
};

/// Bins [i/b, (i+1)/b) with the last bin closed.
Histogram score_histogram(std::span<const double> scores, std::size_t bins = 10);

enum class RecordMetric { kInstanceF1, kRecallAtK };
std::vector<double> per_record(std::span<const PredictionRecord> records, RecordMetric metric, std::size_t k = 5,
                               double threshold = 0.5);

/// Same chapter, different specifics once '.' is ignored. Throws
/// ValidationError on malformed codes.
bool level3_inconsistent(std::string_view a, std::string_view b);

struct ConsistencyResult {
  std::size_t matched_pairs = 0;
  std::size_t inconsistent_pairs = 0;
  double rate() const {
    return matched_pairs == 0 ? 0.0 : static_cast<double>(inconsistent_pairs) / static_cast<double>(matched_pairs);
  }
};

ConsistencyResult consistency_check(std::span<const std::pair<std::string, std::string>> pairs);
/// Pairs codes sharing a chapter across two visits of one patient at most
/// `window_days` apart.
std::vector<std::pair<std::string, std::string>> matched_code_pairs(std::span<const Encounter> encounters,
                                                                    int window_days = 7);

}  // namespace opd
