// Acceptance run: one PASS/FAIL line per criterion.
//
//   opd_acceptance [--only 1,4,8] [--work DIR]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "app.hpp"
#include "manifest.hpp"
#include "opd/calibrate.hpp"
#include "opd/hashing.hpp"
#include "opd/numerics/grad_check.hpp"
#include "opd/pipeline.hpp"

namespace opd {
namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::size_t uniform_index(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

double uniform(std::mt19937_64& rng, double lo = 0.0, double hi = 1.0) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = uniform(rng, lo, hi);
  return t;
}

std::vector<Parameter*> all_params(ParameterStore& store) {
  std::vector<Parameter*> out;
  for (auto& p : store) out.push_back(&p);
  return out;
}

// ---------------------------------------------------------------------------
// Trained models shared by several criteria

struct Trained {
  RunConfig run;
  PreparedData data;
  FeatureSet features;
  std::optional<BaseModel> base;
  TrainHistory base_history;
  double base_seconds = 0.0;
  std::optional<Reranker> reranker;
  TrainHistory reranker_history;
};

void progress(const char* what, const EpochRecord& e) {
  std::cerr << fmt::format("  [{}] epoch {} loss {:.5f} dev R@5 {:.4f}\n", what, e.epoch, e.loss, e.dev_recall_at_5);
}

Trained train_base_on(RunConfig run, const char* tag) {
  Trained t;
  t.run = std::move(run);
  t.data = prepare_from_config(t.run);
  t.features = build_features(t.data, t.run.min_token_count, t.run.max_tokens);
  t.base.emplace(model_config(t.run, t.features.vocab.size(), t.data.labels.size()));
  const auto t0 = Clock::now();
  t.base_history = train(*t.base, t.features.train, t.features.dev, train_config(t.run),
                         [tag](const EpochRecord& e) { progress(tag, e); });
  t.base_seconds = seconds_since(t0);
  return t;
}

void train_reranker_on(Trained& t, const char* tag) {
  t.reranker.emplace(reranker_config(t.run, *t.base, t.features.modalities, t.data.labels.size()));
  t.reranker_history = train_reranker(*t.base, *t.reranker, t.features.train, t.features.dev,
                                      reranker_train_config(t.run), [tag](const EpochRecord& e) { progress(tag, e); });
}

Trained& default_run() {
  static Trained t = train_base_on(RunConfig{}, "base");
  return t;
}

Trained& default_run_with_reranker() {
  Trained& t = default_run();
  if (!t.reranker) train_reranker_on(t, "reranker");
  return t;
}

// ---------------------------------------------------------------------------
// 1. Gradient correctness

Outcome gradients() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::size_t checks = 0;
  for (Architecture arch : {Architecture::kCaml, Architecture::kLaat}) {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
      std::mt19937_64 rng(seed);
      BaseModelConfig c;
      c.architecture = arch;
      c.vocab_size = 9;
      c.n_labels = 4;
      c.embed_dim = 4;
      c.conv_channels = 8;
      c.kernel_width = 3;
      c.attention_dim = 4;
      c.initial_output_bias = 0.0;
      c.seed = seed;
      BaseModel m(c);
      // the default U(+-0.1) init leaves some attention gradients near 1e-8,
      // below central-difference noise
      for (auto& p : m.params())
        for (auto& v : p.value.values()) v = uniform(rng, -0.5, 0.5);
      std::vector<std::int32_t> tokens(uniform_index(rng, 1, 6));
      for (auto& tok : tokens) tok = static_cast<std::int32_t>(uniform_index(rng, 1, 8));
      Tensor y({4});
      for (auto& v : y.values()) v = static_cast<double>(uniform_index(rng, 0, 1));
      const auto r = grad_check([&](Tape& t) { return bce_loss(m.forward(t, tokens).probs, t.constant(y)); },
                                all_params(m.params()));
      worst = std::max(worst, r.max_relative_error);
      ++checks;
    }
  }
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    std::mt19937_64 rng(seed);
    RerankerConfig c;
    c.n_labels = 4;
    c.hidden_dim = 4;
    c.model_dim = 8;
    c.heads = 2;
    c.modality_sizes = {3, 2, 4, 3};
    c.seed = seed;
    Reranker r(c);
    // a small projection keeps P' + P away from the clamp's kinks
    for (auto& p : r.params()) {
      const double limit = p.name.rfind("proj.", 0) == 0 ? 0.05 : 1.0;
      for (auto& v : p.value.values()) v = uniform(rng, -limit, limit);
    }
    RerankerInput in;
    in.base_probs = random_tensor({4}, rng, 0.35, 0.65);
    in.note_hidden = random_tensor({uniform_index(rng, 1, 6), 4}, rng);
    if (seed % 2) in.aux_hidden = random_tensor({uniform_index(rng, 1, 3), 4}, rng);
    in.doctor = static_cast<std::int32_t>(uniform_index(rng, 0, 3));
    in.dept = static_cast<std::int32_t>(uniform_index(rng, 0, 2));
    in.meds = {1, static_cast<std::int32_t>(uniform_index(rng, 0, 4))};
    if (seed % 3) in.procs = {static_cast<std::int32_t>(uniform_index(rng, 1, 3))};
    Tensor y({4});
    for (auto& v : y.values()) v = static_cast<double>(uniform_index(rng, 0, 1));
    const auto rep = grad_check([&](Tape& t) { return bce_loss(r.forward(t, in).probs, t.constant(y)); },
                                all_params(r.params()));
    worst = std::max(worst, rep.max_relative_error);
    ++checks;
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 30.0,
          fmt::format("max rel err {:.2e} < 1e-4 over {} checks (CAML, LAAT, reranker x 20 seeds), {:.1f}s < 30s",
                      worst, checks, secs)};
}

// ---------------------------------------------------------------------------
// 2. Oracle equivalences

PredictionRecord make_record(std::vector<double> probs, std::vector<std::uint32_t> truth) {
  PredictionRecord r;
  r.probs = std::move(probs);
  r.truth = std::move(truth);
  return r;
}

std::vector<double> random_scores(std::mt19937_64& rng, std::size_t n, bool coarse) {
  std::vector<double> p(n);
  for (auto& v : p) v = coarse ? std::round(uniform(rng) * 10.0) / 10.0 : uniform(rng);
  return p;
}

std::vector<std::uint32_t> random_truth(std::mt19937_64& rng, std::size_t n) {
  std::vector<std::uint32_t> t;
  for (std::uint32_t i = 0; i < n; ++i)
    if (uniform_index(rng, 0, 2) == 0) t.push_back(i);
  if (t.empty()) t.push_back(static_cast<std::uint32_t>(uniform_index(rng, 0, n - 1)));
  return t;
}

std::vector<double> average_ranks(const std::vector<double>& x) {
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    double less = 0, equal = 0;
    for (double v : x) less += v < x[i], equal += v == x[i];
    r[i] = less + (equal + 1.0) / 2.0;
  }
  return r;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n, mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

std::vector<double> exhaustive_pool(const std::vector<double>& y, const std::vector<double>& w) {
  const std::size_t n = y.size();
  double best_sse = std::numeric_limits<double>::infinity();
  std::vector<double> best;
  for (std::uint32_t cuts = 0; cuts < (1u << (n - 1)); ++cuts) {
    std::vector<double> fit(n);
    double prev = -std::numeric_limits<double>::infinity();
    bool ok = true;
    std::size_t start = 0;
    for (std::size_t i = 0; i < n && ok; ++i) {
      if (i + 1 < n && !(cuts >> i & 1u)) continue;
      double sw = 0, sy = 0;
      for (std::size_t j = start; j <= i; ++j) sw += w[j], sy += w[j] * y[j];
      const double mean = sy / sw;
      ok = mean >= prev - 1e-12;
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

Outcome oracles() {
  const auto t0 = Clock::now();
  constexpr int kCases = 1000;
  std::map<std::string, std::size_t> mismatches = {
      {"recall", 0}, {"micro_f1", 0}, {"auc", 0}, {"spearman", 0}, {"pav", 0}};
  std::mt19937_64 rng(2024);

  for (int c = 0; c < kCases; ++c) {
    const auto p = random_scores(rng, 10, c % 2 == 0);
    const auto truth = random_truth(rng, 10);
    const std::size_t k = uniform_index(rng, 1, 10);
    std::size_t hits = 0;
    for (auto i : truth) {
      std::size_t ahead = 0;
      for (std::size_t j = 0; j < 10; ++j) ahead += p[j] > p[i] || (p[j] == p[i] && j < i);
      hits += ahead < k;
    }
    mismatches["recall"] +=
        recall_at_k(make_record(p, truth), k) != static_cast<double>(hits) / static_cast<double>(truth.size());
  }

  for (int c = 0; c < kCases; ++c) {
    const std::size_t n = uniform_index(rng, 1, 20), m = uniform_index(rng, 1, 100);
    std::vector<PredictionRecord> rs;
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t j = 0; j < m; ++j) {
      auto r = make_record(random_scores(rng, n, false), random_truth(rng, n));
      const std::set<std::uint32_t> gt(r.truth.begin(), r.truth.end());
      for (std::uint32_t i = 0; i < n; ++i) {
        const bool pred = r.probs[i] > 0.5, pos = gt.count(i) > 0;
        tp += pred && pos, fp += pred && !pos, fn += !pred && pos;
      }
      rs.push_back(std::move(r));
    }
    const double want = tp == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
    mismatches["micro_f1"] += micro_f1(rs) != want;
  }

  for (int c = 0; c < kCases; ++c) {
    const std::size_t n = uniform_index(rng, 2, 200);
    const auto s = random_scores(rng, n, c % 2 == 0);
    std::vector<std::uint8_t> y(n);
    for (auto& v : y) v = static_cast<std::uint8_t>(uniform_index(rng, 0, 1));
    y[0] = 1, y[1] = 0;
    double wins = 0, pairs = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (y[i] && !y[j]) pairs += 1, wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
    mismatches["auc"] += *auc(s, y) != wins / pairs;
  }

  for (int c = 0; c < kCases; ++c) {
    const std::size_t n = uniform_index(rng, 3, 30);
    std::vector<double> x(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = static_cast<double>(uniform_index(rng, 0, 8));
      y[i] = static_cast<double>(uniform_index(rng, 0, 8));
    }
    x[0] = 0, x[1] = 8, y[0] = 0, y[1] = 8;  // neither side constant
    mismatches["spearman"] += std::abs(spearman(x, y) - pearson(average_ranks(x), average_ranks(y))) > 1e-12;
  }

  for (int c = 0; c < kCases; ++c) {
    const std::size_t n = uniform_index(rng, 1, 12);
    std::vector<double> raw(n), y(n), w(n);
    for (std::size_t i = 0; i < n; ++i) raw[i] = (static_cast<double>(i) + 0.9 * uniform(rng)) / static_cast<double>(n);
    for (auto& v : y) v = c % 2 ? static_cast<double>(uniform_index(rng, 0, 1)) : uniform(rng);
    for (auto& v : w) v = 0.5 + uniform(rng);
    const auto want = exhaustive_pool(y, w);
    const auto curve = fit_isotonic_curve(raw, y, w);
    bool bad = false;
    for (std::size_t i = 0; i < n; ++i) bad |= std::abs(curve.apply(raw[i]) - want[i]) > 1e-9;
    mismatches["pav"] += bad;
  }

  const double secs = seconds_since(t0);
  std::size_t total = 0;
  std::string parts;
  for (const auto& [name, count] : mismatches) {
    total += count;
    parts += fmt::format("{}{} {}", parts.empty() ? "" : ", ", name, count);
  }
  return {total == 0 && secs < 60.0,
          fmt::format("mismatches over {} cases each: {}; {:.1f}s < 60s", kCases, parts, secs)};
}

// ---------------------------------------------------------------------------
// 3. Preprocessing properties

Outcome preprocessing() {
  std::mt19937_64 rng(77);
  const std::vector<std::vector<std::string>> sets = {{"A00.1"}, {"B01.2"}, {"A00.1", "B01.2"}, {"C02.3"}, {"D03.4"}};
  std::size_t failures = 0;
  for (int h = 0; h < 1000; ++h) {
    std::vector<Encounter> history(uniform_index(rng, 1, 15));
    for (std::size_t i = 0; i < history.size(); ++i) {
      auto& e = history[i];
      e.patient_id = fmt::format("P{}", h);
      e.date = parse_date("2020-01-01") + std::chrono::days(uniform_index(rng, 0, 30));
      e.dept = "D01";
      e.doctor = "DR001";
      e.text = fmt::format("note {}", i);
      e.codes = sets[uniform_index(rng, 0, sets.size() - 1)];
    }
    auto sorted = history;
    std::stable_sort(sorted.begin(), sorted.end(), [](const Encounter& a, const Encounter& b) { return a.date < b.date; });
    const auto once = dedup_ditto(history);
    failures += dedup_ditto(once) != once;
    failures += once.empty() || once.front() != sorted.front();
  }

  const RunConfig run;
  const PreparedData data = prepare_from_config(run);
  std::map<std::string, std::size_t> recount;
  for (const auto& e : data.train)
    for (const auto& c : e.codes) ++recount[c];
  std::size_t below = 0;
  for (const auto& code : data.labels.codes()) below += recount[code] < run.preprocess.min_label_count;
  for (const auto& [code, n] : recount) below += !data.labels.index_of(code).has_value();
  return {failures == 0 && below == 0,
          fmt::format("dedup failures {} over 1000 histories; labels below K={} after filtering: {} of {}", failures,
                      run.preprocess.min_label_count, below, data.labels.size())};
}

// ---------------------------------------------------------------------------
// 4. End-to-end learnability

std::vector<PredictionRecord> rescored(std::vector<PredictionRecord> records,
                                       const std::function<std::vector<double>(std::size_t)>& scores) {
  for (std::size_t i = 0; i < records.size(); ++i) {
    records[i].probs = scores(i);
    records[i].scores.clear();
  }
  return records;
}

Outcome learnability() {
  const auto t0 = Clock::now();
  Trained& t = default_run();
  const auto dev = predict_records(*t.base, t.features.dev);
  const double model = evaluate(dev).recall_at_k;
  const std::size_t n_labels = t.data.labels.size();

  std::mt19937_64 rng(99);
  const auto random_dev = rescored(dev, [&](std::size_t) {
    std::vector<double> p(n_labels);
    for (auto& v : p) v = uniform(rng);
    return p;
  });
  std::vector<double> marginal(n_labels);
  for (std::size_t l = 0; l < n_labels; ++l) marginal[l] = static_cast<double>(t.data.labels.train_count(l));
  const auto marginal_dev = rescored(dev, [&](std::size_t) { return marginal; });
  const double r_random = evaluate(random_dev).recall_at_k, r_marginal = evaluate(marginal_dev).recall_at_k;
  const double secs = seconds_since(t0);
  return {model >= 0.85 && model - r_random >= 0.25 && model - r_marginal >= 0.25 && secs < 600.0,
          fmt::format("dev R@5 {:.4f} >= 0.85; random {:.4f}, marginal {:.4f} (margins {:.4f}, {:.4f} >= 0.25); "
                      "{} docs, {} labels, best epoch {} of {}; {:.0f}s < 600s",
                      model, r_random, r_marginal, model - r_random, model - r_marginal,
                      t.data.train.size() + t.data.dev.size() + t.data.test.size(), n_labels, t.base_history.best_epoch,
                      t.base_history.epochs.size(), secs)};
}

// ---------------------------------------------------------------------------
// 5. Reranker trend

double test_gap(Trained& t) {
  const double base = evaluate(predict_records(*t.base, t.features.test)).recall_at_k;
  const double rr = evaluate(predict_records(*t.base, *t.reranker, t.features.test)).recall_at_k;
  return rr - base;
}

Outcome reranker_trend() {
  Trained& with_signal = default_run_with_reranker();
  const double gap_signal = test_gap(with_signal);

  RunConfig no_signal_cfg;
  no_signal_cfg.corpus.omitted_evidence_fraction = 0.0;
  Trained no_signal = train_base_on(no_signal_cfg, "base f=0");
  train_reranker_on(no_signal, "reranker f=0");
  const double gap_none = test_gap(no_signal);
  return {gap_signal >= 0.02 && std::abs(gap_none) <= 0.01,
          fmt::format("test R@5 gain {:+.4f} >= 0.02 at omitted fraction 0.2; {:+.4f} within +-0.01 at 0", gap_signal,
                      gap_none)};
}

// ---------------------------------------------------------------------------
// 6. Dedup trend

Outcome dedup_trend() {
  Trained& dedup = default_run();
  RunConfig full_cfg;
  full_cfg.preprocess.dedup_train = false;
  Trained full = train_base_on(full_cfg, "base full");
  auto best = [](const TrainHistory& h) { return h.epochs.at(h.best_epoch - 1).dev_recall_at_5; };
  const double r_dedup = best(dedup.base_history), r_full = best(full.base_history);
  const double saved =
      1.0 - static_cast<double>(dedup.base_history.examples_processed) / static_cast<double>(full.base_history.examples_processed);
  return {r_dedup >= r_full && saved >= 0.25,
          fmt::format("dev R@5 dedup {:.4f} >= full {:.4f} at max {} epochs; examples processed {} vs {} ({:.0f}% fewer "
                      ">= 25%); train docs {} vs {}",
                      r_dedup, r_full, dedup.run.train.max_epochs, dedup.base_history.examples_processed,
                      full.base_history.examples_processed, 100.0 * saved, dedup.features.train.size(),
                      full.features.train.size())};
}

// ---------------------------------------------------------------------------
// 7. Data-fraction saturation

Outcome fraction_saturation() {
  Trained& t = default_run();
  TrainConfig cfg = train_config(t.run);
  cfg.seed = stage_seed(t.run.seed, Stage::kFractions);
  const auto rows = data_fraction_experiment(t.run.fractions, t.features.train, t.features.dev, t.features.test,
                                             model_config(t.run, t.features.vocab.size(), t.data.labels.size()), cfg);
  std::vector<FractionRow> sorted = rows;
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.fraction < b.fraction; });
  bool monotone = true;
  double at_half = 0.0;
  std::string curve;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    if (i > 0) monotone &= sorted[i].relative_recall_at_5 >= sorted[i - 1].relative_recall_at_5 - 0.02;
    if (sorted[i].fraction == 0.5) at_half = sorted[i].relative_recall_at_5;
    curve += fmt::format("{}{}:{:.3f}", curve.empty() ? "" : " ", sorted[i].fraction, sorted[i].relative_recall_at_5);
  }
  return {at_half >= 0.95 && monotone,
          fmt::format("relative test R@5 {}; at 0.5 {:.4f} >= 0.95; non-decreasing within 0.02: {}", curve, at_half,
                      monotone ? "yes" : "no")};
}

// ---------------------------------------------------------------------------
// 8. Automation budget compliance

// Confident records are exact matches; the rest sit near the threshold and
// are right only by chance.
std::vector<PredictionRecord> separable_fixture(std::mt19937_64& rng, std::size_t n) {
  std::vector<PredictionRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    PredictionRecord r;
    const bool confident = uniform(rng) < 0.6;
    for (std::uint32_t l = 0; l < 6; ++l) {
      const bool pos = uniform(rng) < 0.3 || (l == 5 && r.truth.empty());
      if (pos) r.truth.push_back(l);
      r.probs.push_back(confident ? (pos ? uniform(rng, 0.92, 1.0) : uniform(rng, 0.0, 0.08)) : uniform(rng, 0.3, 0.7));
    }
    out.push_back(std::move(r));
  }
  return out;
}

Outcome automation() {
  Trained& t = default_run();
  const auto dev = predict_records(*t.base, t.features.dev);
  const auto test = predict_records(*t.base, t.features.test);
  bool within = true;
  std::string budgets;
  for (double max_fp : {0.05, 0.10, 0.15, 0.20}) {
    const auto s = search_thresholds(dev, max_fp, t.run.train.decision_threshold, "dev");
    within &= s.dev.fp_rate() <= max_fp;
    const auto r = evaluate_automation(test, s.rule);
    budgets += fmt::format("{}{}: dev fp {:.3f}, test {:.1f}%", budgets.empty() ? "" : "; ", max_fp, s.dev.fp_rate(),
                           r.percent_of_possible());
  }

  std::mt19937_64 rng(8);
  std::size_t violations = 0;
  for (int probe = 0; probe < 10000; ++probe) {
    std::vector<double> p(uniform_index(rng, 1, 8));
    for (auto& v : p) v = std::round(uniform(rng) * 20.0) / 20.0;
    ThresholdRule loose;
    loose.t_upper = static_cast<double>(uniform_index(rng, 0, 20)) / 20.0;
    loose.t_lower = static_cast<double>(uniform_index(rng, 0, 20)) / 20.0;
    ThresholdRule tight = loose;
    tight.t_upper = std::min(1.0, loose.t_upper + static_cast<double>(uniform_index(rng, 0, 5)) / 20.0);
    tight.t_lower = std::max(0.0, loose.t_lower - static_cast<double>(uniform_index(rng, 0, 5)) / 20.0);
    violations += decide_exact_match(p, tight) && !decide_exact_match(p, loose);
  }

  const auto fixture_dev = separable_fixture(rng, 500), fixture_test = separable_fixture(rng, 500);
  const auto s = search_thresholds(fixture_dev, 0.05, 0.5, "dev");
  const auto r = evaluate_automation(fixture_test, s.rule);
  return {within && violations == 0 && r.percent_of_possible() >= 50.0,
          fmt::format("trained model {}; monotonicity violations {} of 10000; separable fixture {:.1f}% >= 50% at "
                      "max_fp 0.05 (test fp {:.3f})",
                      budgets, violations, r.percent_of_possible(), r.fp_rate())};
}

// ---------------------------------------------------------------------------
// 9. Calibration

Outcome calibration() {
  Trained& t = default_run();
  const auto dev = predict_records(*t.base, t.features.dev);
  const auto test = predict_records(*t.base, t.features.test);
  const std::size_t n_labels = t.data.labels.size();
  const IsotonicMap map = fit_isotonic(dev, n_labels, "dev");
  const auto dev_cal = map.apply(dev), test_cal = map.apply(test);
  const std::size_t bins = t.run.ece_bins;
  std::size_t fit_ok = 0, decreased = 0;
  for (std::size_t l = 0; l < n_labels; ++l) {
    fit_ok += ece(dev_cal, l, bins) <= ece(dev, l, bins) + 1e-9;
    decreased += ece(test_cal, l, bins) < ece(test, l, bins);
  }
  const double share = static_cast<double>(decreased) / static_cast<double>(n_labels);
  return {fit_ok == n_labels && share > 0.5,
          fmt::format("dev ECE non-increasing for {} of {} labels; test ECE decreased for {:.1f}% of labels (> 50%)",
                      fit_ok, n_labels, 100.0 * share)};
}

// ---------------------------------------------------------------------------
// 10. Consistency checker

Outcome consistency() {
  const bool a = level3_inconsistent("E78.2", "E78.5");
  const bool b = level3_inconsistent("I70.203", "I70.202");
  const bool c = !level3_inconsistent("E78.2", "E78.2") && !level3_inconsistent("I70.203", "I70.203");
  return {a && b && c, fmt::format("E78.2/E78.5 inconsistent: {}; I70.203/I70.202 inconsistent: {}; identity pairs "
                                   "consistent: {}",
                                   a, b, c)};
}

// ---------------------------------------------------------------------------
// 11. Determinism

const char* kDeterminismConfig = R"(seed = 11
corpus.n_patients = 60
corpus.n_codes = 30
corpus.n_depts = 4
corpus.n_doctors = 8
corpus.vocab_size = 300
split.dev_patients = 10
split.test_patients = 10
preprocess.min_label_count = 1
model.embed_dim = 8
model.conv_channels = 12
reranker.model_dim = 8
train.max_epochs = 2
reranker_train.max_epochs = 1
fractions = 0.5,1
)";

int quiet_run(const std::vector<std::string>& args) {
  std::ostringstream sink;
  auto* out = std::cout.rdbuf(sink.rdbuf());
  auto* err = std::cerr.rdbuf(sink.rdbuf());
  const int rc = cli::run(args);
  std::cout.rdbuf(out);
  std::cerr.rdbuf(err);
  if (rc != 0) std::cerr << sink.str();
  return rc;
}

/// Runs every stage into `dir`; returns the manifests written.
std::vector<fs::path> full_pipeline(const fs::path& dir) {
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string cfg = (dir / "run.cfg").string();
  { std::ofstream(cfg) << kDeterminismConfig; }
  auto p = [&](const char* name) { return (dir / name).string(); };
  struct Step {
    std::vector<std::string> args;
    std::string primary;  // the manifest sits next to or inside this output
  };
  const std::vector<Step> stages = {
      {{"gen-corpus", "--out", p("corpus.jsonl")}, p("corpus.jsonl")},
      {{"preprocess", "--in", p("corpus.jsonl"), "--out", p("prep")}, p("prep")},
      {{"train", "--data", p("prep"), "--out", p("base.ckpt"), "--history", p("base.csv")}, p("base.ckpt")},
      {{"train-reranker", "--data", p("prep"), "--base", p("base.ckpt"), "--out", p("rr.ckpt"), "--history",
        p("rr.csv")},
       p("rr.ckpt")},
      {{"evaluate", "--data", p("prep"), "--model", p("base.ckpt"), "--out", p("eval.csv"), "--breakdown", "dept"},
       p("eval.csv")},
      {{"evaluate", "--data", p("prep"), "--model", p("base.ckpt"), "--reranker", p("rr.ckpt"), "--out",
        p("eval_rr.csv")},
       p("eval_rr.csv")},
      {{"fractions", "--data", p("prep"), "--out", p("fractions.csv")}, p("fractions.csv")},
      {{"calibrate", "--data", p("prep"), "--model", p("base.ckpt"), "--out", p("iso.txt"), "--ece-out",
        p("ece.csv")},
       p("iso.txt")},
      {{"automate", "--data", p("prep"), "--model", p("base.ckpt"), "--calibrated", p("iso.txt"), "--max-fp",
        "0.05,0.1,0.15,0.2", "--out", p("automate.csv")},
       p("automate.csv")},
      {{"report", "--data", p("prep"), "--model", p("base.ckpt"), "--out", p("report.txt")}, p("report.txt")},
  };
  std::vector<fs::path> manifests;
  for (auto step : stages) {
    step.args.insert(step.args.begin() + 1, {"--config", cfg});
    if (quiet_run(step.args) != 0) throw std::runtime_error("stage failed: " + step.args[0]);
    const fs::path out = step.primary;
    manifests.push_back(fs::is_directory(out) ? out / "manifest.json" : fs::path(out.string() + ".manifest.json"));
  }
  return manifests;
}

std::map<std::string, std::string> output_hashes(const std::vector<fs::path>& manifests) {
  std::map<std::string, std::string> out;
  for (const auto& m : manifests)
    for (const auto& f : cli::Manifest::load(m).outputs) out[f.path.filename().string()] = f.sha256;
  return out;
}

Outcome determinism(const fs::path& work) {
  const auto a = full_pipeline(work / "run_a");
  const auto b = full_pipeline(work / "run_b");
  const auto ha = output_hashes(a), hb = output_hashes(b);
  std::size_t same = 0;
  for (const auto& [name, hash] : ha) {
    const auto it = hb.find(name);
    same += it != hb.end() && it->second == hash;
  }
  // on-disk files must still match what the manifests recorded
  for (const auto& m : a)
    for (const auto& f : cli::Manifest::load(m).outputs) same -= sha256_file(f.path) != f.sha256 ? 1 : 0;
  std::size_t replayed = 0;
  for (const auto& m : a) replayed += quiet_run({"replay", "--manifest", m.string()}) == 0;
  return {same == ha.size() && ha.size() == hb.size() && replayed == a.size(),
          fmt::format("{} of {} outputs byte-identical across two full runs; {} of {} stages replayed byte-identically",
                      same, ha.size(), replayed, a.size())};
}

}  // namespace
}  // namespace opd

int main(int argc, char** argv) {
  using namespace opd;
  std::set<int> only;
  fs::path work = fs::temp_directory_path() / "opd_acceptance";
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--only" && i + 1 < argc) {
      std::stringstream list(argv[++i]);
      for (std::string item; std::getline(list, item, ',');) only.insert(std::stoi(item));
    } else if (arg == "--work" && i + 1 < argc) {
      work = argv[++i];
    } else {
      std::cerr << "usage: opd_acceptance [--only 1,2,...] [--work DIR]\n";
      return 2;
    }
  }

  const std::vector<std::pair<int, std::function<Outcome()>>> criteria = {
      {1, gradients},       {2, oracles},          {3, preprocessing},       {4, learnability},
      {5, reranker_trend},  {6, dedup_trend},      {7, fraction_saturation}, {8, automation},
      {9, calibration},     {10, consistency},     {11, [&] { return determinism(work); }},
  };
  int failed = 0;
  for (const auto& [id, check] : criteria) {
    if (!only.empty() && !only.count(id)) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << fmt::format("criterion {:>2}: {} {} [{:.0f}s]\n", id, o.pass ? "PASS" : "FAIL", o.detail,
                             seconds_since(t0))
              << std::flush;
  }
  return failed == 0 ? 0 : 1;
}
