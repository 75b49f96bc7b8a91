#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "opd/metrics.hpp"
#include "opd/model.hpp"

namespace opd {

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 8;
  std::size_t max_epochs = 20;
  /// Epochs without a dev Recall@5 improvement before stopping.
  std::size_t patience = 3;
  std::uint64_t seed = 7;
  double decision_threshold = 0.5;
  /// Fill the seconds column of the history. Off keeps outputs reproducible.
  bool record_timing = false;

  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double loss = 0.0;
  double dev_recall_at_5 = 0.0;
  double dev_instance_f1 = 0.0;
  std::optional<double> seconds;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  /// Epoch whose parameters were kept; 0 when no epoch ran.
  std::size_t best_epoch = 0;
  std::size_t examples_processed = 0;

  std::string to_csv() const;
};

class Adam {
 public:
  explicit Adam(double learning_rate = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  /// One update of every parameter with a gradient in `grads`, scaled by
  /// `grad_scale` first.
  void step(ParameterStore& params, const GradientMap& grads, double grad_scale = 1.0);

 private:
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Mini-batch Adam on mean BCE with early stopping on dev Recall@5. On return
/// `model` holds the parameters of the best epoch. Throws NumericError naming
/// the batch when the loss is not finite.
TrainHistory train(BaseModel& model, std::span<const Example> train_set, std::span<const Example> dev_set,
                   const TrainConfig& config, const EpochCallback& on_epoch = {});

/// Trains only the reranker; the base model is read-only.
TrainHistory train_reranker(const BaseModel& base, Reranker& reranker, std::span<const Example> train_set,
                            std::span<const Example> dev_set, const TrainConfig& config,
                            const EpochCallback& on_epoch = {});

/// Prediction record of a base-model forward pass.
PredictionRecord predict_record(const BaseModel& model, const Example& example);
std::vector<PredictionRecord> predict_records(const BaseModel& model, std::span<const Example> examples);
/// Reranker output: clamped probabilities plus pre-clamp ranking scores.
PredictionRecord predict_record(const Reranker& reranker, const RerankerInput& input, const Example& example);
std::vector<PredictionRecord> predict_records(const BaseModel& base, const Reranker& reranker,
                                              std::span<const Example> examples);

/// Record skeleton with ground truth and grouping fields, no scores.
PredictionRecord record_skeleton(const Example& example);

/// Indices of a uniform sample without replacement of ceil(fraction * n)
/// items, ascending. Throws ConfigError unless 0 < fraction <= 1.
std::vector<std::size_t> subsample_indices(std::size_t n, double fraction, std::uint64_t seed);

template <typename T>
std::vector<T> subsample_train(std::span<const T> items, double fraction, std::uint64_t seed) {
  std::vector<T> out;
  for (auto i : subsample_indices(items.size(), fraction, seed)) out.push_back(items[i]);
  return out;
}

struct FractionRow {
  double fraction = 0.0;
  std::size_t train_examples = 0;
  double recall_at_5 = 0.0;
  double instance_f1 = 0.0;
  double relative_recall_at_5 = 0.0;
  double relative_instance_f1 = 0.0;
};

/// Trains one model per fraction (each an independent draw) and scores it on
/// `eval_set`. Fraction 1.0 must be present; it normalises the curve.
std::vector<FractionRow> data_fraction_experiment(std::span<const double> fractions, std::span<const Example> train_set,
                                                  std::span<const Example> dev_set, std::span<const Example> eval_set,
                                                  const BaseModelConfig& model_config, const TrainConfig& config);
std::string fractions_csv(std::span<const FractionRow> rows);

}  // namespace opd
