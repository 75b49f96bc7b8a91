#include "opd/train.hpp"

#include <algorithm>
#include <chrono>
#include <limits>
#include <numeric>
#include <random>

#include <fmt/format.h>

#include "opd/errors.hpp"
#include "opd/numerics/checkpoint.hpp"

namespace opd {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be > 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (patience < 1) throw ConfigError("patience must be >= 1");
  if (!(decision_threshold >= 0.0 && decision_threshold <= 1.0)) {
    throw ConfigError("decision_threshold must lie in [0, 1]");
  }
}

std::string TrainHistory::to_csv() const {
  std::string out = "epoch,loss,dev_r5,dev_if1,seconds\n";
  for (const auto& e : epochs) {
    out += fmt::format("{},{:.17g},{:.17g},{:.17g},{}\n", e.epoch, e.loss, e.dev_recall_at_5, e.dev_instance_f1,
                       e.seconds ? fmt::format("{:.3f}", *e.seconds) : std::string());
  }
  return out;
}

Adam::Adam(double learning_rate, double beta1, double beta2, double eps)
    : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::step(ParameterStore& params, const GradientMap& grads, double grad_scale) {
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.emplace_back(p.value.shape());
      v_.emplace_back(p.value.shape());
    }
  }
  if (m_.size() != params.size()) throw ContractError("Adam: parameter set changed between steps");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = params[i];
    if (!grads.contains(p)) continue;
    const Tensor& g = grads.at(p);
    auto value = p.value.values();
    auto m = m_[i].values();
    auto v = v_[i].values();
    for (std::size_t j = 0; j < value.size(); ++j) {
      const double gj = g[j] * grad_scale;
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * gj;
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * gj * gj;
      value[j] -= lr_ * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps_);
    }
  }
}

namespace {

double mean_recall(std::span<const PredictionRecord> records) {
  double s = 0.0;
  for (const auto& r : records) s += recall_at_k(r, 5);
  return records.empty() ? 0.0 : s / static_cast<double>(records.size());
}

double mean_if1(std::span<const PredictionRecord> records, double threshold) {
  double s = 0.0;
  for (const auto& r : records) s += instance_f1(r, threshold);
  return records.empty() ? 0.0 : s / static_cast<double>(records.size());
}

struct Objective {
  ParameterStore* params = nullptr;
  std::size_t n_train = 0;
  std::function<Var(Tape&, std::size_t)> example_loss;
  std::function<std::vector<PredictionRecord>()> dev_records;
};

TrainHistory fit(Objective& obj, const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  TrainHistory history;
  if (config.max_epochs == 0) return history;
  if (obj.n_train == 0) throw ContractError("training set is empty");

  Adam adam(config.learning_rate);
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(obj.n_train);
  std::iota(order.begin(), order.end(), std::size_t{0});

  ParameterStore best = *obj.params;
  double best_r5 = -std::numeric_limits<double>::infinity();

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t b = 0, batch = 0; b < order.size(); b += config.batch_size, ++batch) {
      const std::size_t end = std::min(order.size(), b + config.batch_size);
      GradientMap grads;
      double batch_loss = 0.0;
      for (std::size_t i = b; i < end; ++i) {
        Tape tape;
        const Var loss = obj.example_loss(tape, order[i]);
        batch_loss += loss.value()[0];
        tape.backward(loss, grads);
      }
      if (!std::isfinite(batch_loss)) {
        throw NumericError(fmt::format("non-finite loss in epoch {} batch {}", epoch, batch + 1));
      }
      adam.step(*obj.params, grads, 1.0 / static_cast<double>(end - b));
      loss_sum += batch_loss;
      history.examples_processed += end - b;
    }

    const auto dev = obj.dev_records();
    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss = loss_sum / static_cast<double>(obj.n_train);
    rec.dev_recall_at_5 = mean_recall(dev);
    rec.dev_instance_f1 = mean_if1(dev, config.decision_threshold);
    if (config.record_timing) {
      rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
    history.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);

    if (rec.dev_recall_at_5 > best_r5) {
      best_r5 = rec.dev_recall_at_5;
      history.best_epoch = epoch;
      best = *obj.params;
    } else if (epoch - history.best_epoch >= config.patience) {
      break;
    }
  }
  assign_parameters(*obj.params, best);
  return history;
}

}  // namespace

PredictionRecord record_skeleton(const Example& example) {
  PredictionRecord r;
  r.truth = example.labels;
  r.unseen_codes = example.unseen_codes;
  r.patient_id = example.patient_id;
  r.dept = example.dept_name;
  r.date = example.date;
  r.first_visit = example.first_visit;
  return r;
}

PredictionRecord predict_record(const BaseModel& model, const Example& example) {
  PredictionRecord r = record_skeleton(example);
  r.probs = model.predict(example.tokens);
  return r;
}

std::vector<PredictionRecord> predict_records(const BaseModel& model, std::span<const Example> examples) {
  std::vector<PredictionRecord> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) out.push_back(predict_record(model, ex));
  return out;
}

PredictionRecord predict_record(const Reranker& reranker, const RerankerInput& input, const Example& example) {
  PredictionRecord r = record_skeleton(example);
  Tape tape;
  const RerankerOutput out = reranker.forward(tape, input, false);
  r.probs.assign(out.probs.value().values().begin(), out.probs.value().values().end());
  r.scores.assign(out.scores.value().values().begin(), out.scores.value().values().end());
  return r;
}

std::vector<PredictionRecord> predict_records(const BaseModel& base, const Reranker& reranker,
                                              std::span<const Example> examples) {
  std::vector<PredictionRecord> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) out.push_back(predict_record(reranker, make_reranker_input(base, ex), ex));
  return out;
}

TrainHistory train(BaseModel& model, std::span<const Example> train_set, std::span<const Example> dev_set,
                   const TrainConfig& config, const EpochCallback& on_epoch) {
  const std::size_t n_labels = model.config().n_labels;
  std::vector<Tensor> targets;
  targets.reserve(train_set.size());
  for (const auto& ex : train_set) targets.push_back(label_targets(ex, n_labels));

  Objective obj;
  obj.params = &model.params();
  obj.n_train = train_set.size();
  obj.example_loss = [&](Tape& tape, std::size_t i) {
    const Var probs = model.forward(tape, train_set[i].tokens).probs;
    return bce_loss(probs, tape.constant_ref(targets[i]));
  };
  obj.dev_records = [&] { return predict_records(model, dev_set); };
  return fit(obj, config, on_epoch);
}

TrainHistory train_reranker(const BaseModel& base, Reranker& reranker, std::span<const Example> train_set,
                            std::span<const Example> dev_set, const TrainConfig& config,
                            const EpochCallback& on_epoch) {
  const std::size_t n_labels = reranker.config().n_labels;
  std::vector<RerankerInput> train_inputs, dev_inputs;
  std::vector<Tensor> targets;
  if (config.max_epochs > 0) {
    for (const auto& ex : train_set) {
      train_inputs.push_back(make_reranker_input(base, ex));
      targets.push_back(label_targets(ex, n_labels));
    }
    for (const auto& ex : dev_set) dev_inputs.push_back(make_reranker_input(base, ex));
  }

  Objective obj;
  obj.params = &reranker.params();
  obj.n_train = train_set.size();
  obj.example_loss = [&](Tape& tape, std::size_t i) {
    const Var probs = reranker.forward(tape, train_inputs[i]).probs;
    return bce_loss(probs, tape.constant_ref(targets[i]));
  };
  obj.dev_records = [&] {
    std::vector<PredictionRecord> out;
    out.reserve(dev_set.size());
    for (std::size_t i = 0; i < dev_set.size(); ++i) out.push_back(predict_record(reranker, dev_inputs[i], dev_set[i]));
    return out;
  };
  return fit(obj, config, on_epoch);
}

std::vector<std::size_t> subsample_indices(std::size_t n, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError(fmt::format("fraction {} outside (0, 1]", fraction));
  // A small slack keeps products like 0.3 * 10 from rounding up past 3.
  const auto take = std::min(n, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9)));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (take == n) return idx;
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < take; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(take);
  std::sort(idx.begin(), idx.end());
  return idx;
}

std::vector<FractionRow> data_fraction_experiment(std::span<const double> fractions, std::span<const Example> train_set,
                                                  std::span<const Example> dev_set, std::span<const Example> eval_set,
                                                  const BaseModelConfig& model_config, const TrainConfig& config) {
  if (std::find(fractions.begin(), fractions.end(), 1.0) == fractions.end()) {
    throw ConfigError("data fraction experiment needs fraction 1.0 for normalisation");
  }
  std::vector<FractionRow> rows;
  for (std::size_t i = 0; i < fractions.size(); ++i) {
    const auto subset = subsample_train(train_set, fractions[i], config.seed + 1000 * (i + 1));
    BaseModel model(model_config);
    train(model, subset, dev_set, config);
    const auto records = predict_records(model, eval_set);
    FractionRow row;
    row.fraction = fractions[i];
    row.train_examples = subset.size();
    row.recall_at_5 = mean_recall(records);
    row.instance_f1 = mean_if1(records, config.decision_threshold);
    rows.push_back(row);
  }
  const auto full = *std::find_if(rows.begin(), rows.end(), [](const FractionRow& r) { return r.fraction == 1.0; });
  for (auto& r : rows) {
    r.relative_recall_at_5 = full.recall_at_5 > 0.0 ? r.recall_at_5 / full.recall_at_5 : 0.0;
    r.relative_instance_f1 = full.instance_f1 > 0.0 ? r.instance_f1 / full.instance_f1 : 0.0;
  }
  return rows;
}

std::string fractions_csv(std::span<const FractionRow> rows) {
  std::string out = "fraction,train_examples,recall_at_5,instance_f1,relative_recall_at_5,relative_instance_f1\n";
  for (const auto& r : rows) {
    out += fmt::format("{:.4g},{},{:.6f},{:.6f},{:.6f},{:.6f}\n", r.fraction, r.train_examples, r.recall_at_5,
                       r.instance_f1, r.relative_recall_at_5, r.relative_instance_f1);
  }
  return out;
}

}  // namespace opd
