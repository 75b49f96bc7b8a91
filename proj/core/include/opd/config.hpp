#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "opd/corpus.hpp"
#include "opd/model.hpp"
#include "opd/preprocess.hpp"
#include "opd/train.hpp"

namespace opd {

/// Every tunable of the pipeline. Text form: one `key = value` per line, '#'
/// starts a comment, unknown keys are rejected.
struct RunConfig {
  /// Root of all randomness; per-stage seeds are derived from it.
  std::uint64_t seed = 42;

  CorpusConfig corpus;
  std::size_t dev_patients = 50;
  std::size_t test_patients = 50;

  PreprocessOptions preprocess;
  std::size_t min_token_count = 1;
  std::size_t max_tokens = kDefaultMaxTokens;

  BaseModelConfig model;  // vocab_size, n_labels and seed are filled at run time
  std::size_t reranker_dim = 64;
  std::size_t reranker_heads = 2;

  TrainConfig train;
  TrainConfig reranker_train;

  std::vector<double> fractions = {0.05, 0.1, 0.25, 0.5, 1.0};
  std::size_t ece_bins = 10;

  RunConfig();

  /// Normalised text: every key in a fixed order with its effective value.
  std::string to_text() const;
  std::string hash() const;
  void validate() const;

  static RunConfig parse(std::string_view text);
  static RunConfig load(const std::filesystem::path& path);
};

/// Stage identifiers for derived seeds.
enum class Stage { kCorpus, kSplit, kModelInit, kRerankerInit, kTrain, kRerankerTrain, kFractions };

/// The corpus uses the root seed unchanged so that seed 42 names the default
/// corpus; the other stages mix the root seed with the stage index.
std::uint64_t stage_seed(std::uint64_t root, Stage stage);

/// Copies of the sub-configs with their stage seeds applied.
CorpusConfig corpus_config(const RunConfig& run);
TrainConfig train_config(const RunConfig& run);
TrainConfig reranker_train_config(const RunConfig& run);
BaseModelConfig model_config(const RunConfig& run, std::size_t vocab_size, std::size_t n_labels);
RerankerConfig reranker_config(const RunConfig& run, const BaseModel& base, const ModalityVocab& modalities,
                               std::size_t n_labels);

}  // namespace opd
