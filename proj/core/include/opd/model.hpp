#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "opd/corpus.hpp"
#include "opd/numerics/autodiff.hpp"
#include "opd/numerics/ops.hpp"
#include "opd/preprocess.hpp"

namespace opd {

// ---------------------------------------------------------------------------
// Model inputs

/// Id maps for the structured modalities. Id 0 is reserved for unknown entries.
class ModalityVocab {
 public:
  enum Kind : std::size_t { kDoctor, kDept, kMedication, kProcedure, kKinds };

  ModalityVocab();
  static ModalityVocab build(std::span<const Encounter> train);

  std::int32_t id(Kind kind, std::string_view name) const;
  std::size_t size(Kind kind) const { return names_[kind].size(); }
  std::string hash() const;

  /// Lines of "<kind><TAB><name>" in id order; unknown rows are implicit.
  void save(const std::filesystem::path& path) const;
  static ModalityVocab load(const std::filesystem::path& path);

  friend bool operator==(const ModalityVocab& a, const ModalityVocab& b) { return a.names_ == b.names_; }

 private:
  void add(Kind kind, const std::string& name);

  std::array<std::vector<std::string>, kKinds> names_;
  std::array<std::map<std::string, std::int32_t, std::less<>>, kKinds> ids_;
};

/// Featurised encounter: everything a model or a metric needs.
struct Example {
  std::string patient_id;
  Date date{};
  std::string dept_name;
  bool first_visit = true;

  std::vector<std::int32_t> tokens;
  /// Medication and procedure names run through the note tokenizer.
  std::vector<std::int32_t> aux_tokens;
  /// Ground truth inside the label space, ascending.
  std::vector<std::uint32_t> labels;
  /// Every ground-truth code, including ones outside the label space.
  std::vector<std::string> truth_codes;
  /// Ground-truth codes outside the label space.
  std::vector<std::string> unseen_codes;

  std::int32_t doctor = 0;
  std::int32_t dept = 0;
  std::vector<std::int32_t> meds;
  std::vector<std::int32_t> procs;
};

/// Text of the medication and procedure names used as auxiliary input.
std::string auxiliary_text(const Encounter& e);

/// `first_visit` marks the earliest encounter of each patient within `encounters`.
std::vector<Example> make_examples(std::span<const Encounter> encounters, const Vocabulary& vocab,
                                   const LabelSpace& labels, const ModalityVocab* modalities,
                                   std::size_t max_len = kDefaultMaxTokens);

/// Multi-hot target vector over the label space.
Tensor label_targets(const Example& example, std::size_t n_labels);

/// Vocabulary over train notes plus train medication and procedure names, so
/// the auxiliary text shares the note encoder's vocabulary.
Vocabulary build_training_vocab(std::span<const Encounter> train, std::size_t min_token_count = 1);

struct FeatureSet {
  Vocabulary vocab;
  ModalityVocab modalities;
  std::vector<Example> train, dev, test;
};

FeatureSet build_features(const PreparedData& data, std::size_t min_token_count = 1,
                          std::size_t max_len = kDefaultMaxTokens);

// ---------------------------------------------------------------------------
// Base classifiers

enum class Architecture { kCaml, kLaat };

std::string_view to_string(Architecture arch);
Architecture parse_architecture(std::string_view name);

struct BaseModelConfig {
  Architecture architecture = Architecture::kCaml;
  std::size_t vocab_size = 0;
  std::size_t n_labels = 0;
  std::size_t embed_dim = 32;
  std::size_t conv_channels = 64;
  std::size_t kernel_width = 3;
  /// Projection size of the structured label attention (LAAT only).
  std::size_t attention_dim = 32;
  /// Initial bias of every label's output unit.
  double initial_output_bias = -4.0;
  std::uint64_t seed = 1;

  void validate() const;
};

struct EncodedDocument {
  Var hidden;  // [T x channels], every position
  std::vector<std::int32_t> valid_positions;
};

struct BaseOutput {
  Var hidden_rows;  // unmasked rows of the encoder output
  Var probs;        // [N]
};

/// Shared CNN encoder followed by per-label attention and a sigmoid output
/// per label.
class BaseModel {
 public:
  explicit BaseModel(BaseModelConfig config);

  const BaseModelConfig& config() const { return config_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }

  /// Embedding lookup, convolution and tanh. Padding positions are excluded
  /// from `valid_positions`.
  EncodedDocument encode_document(Tape& tape, std::span<const std::int32_t> tokens, bool trainable = true) const;
  /// Label-specific document representations [N x channels]. Throws
  /// EmptySourceError when every position is masked.
  Var label_attention(Tape& tape, Var hidden_rows, bool trainable = true) const;
  Var classify(Tape& tape, Var label_repr, bool trainable = true) const;
  BaseOutput forward(Tape& tape, std::span<const std::int32_t> tokens, bool trainable = true) const;

  std::vector<double> predict(std::span<const std::int32_t> tokens) const;
  /// Unmasked encoder rows, or nothing when the input is all padding.
  std::optional<Tensor> hidden_rows(std::span<const std::int32_t> tokens) const;

  void save(const std::filesystem::path& path, const Vocabulary& vocab, const LabelSpace& labels) const;
  /// Verifies the recorded vocabulary and label-space digests.
  static BaseModel load(const std::filesystem::path& path, const Vocabulary& vocab, const LabelSpace& labels);

 private:
  enum Slot : std::size_t { kEmbedding, kKernels, kConvBias, kAttnU, kAttnW, kOutWeight, kOutBias };
  Var bind(Tape& tape, Slot slot, bool trainable) const;

  BaseModelConfig config_;
  ParameterStore params_;
  std::array<std::size_t, 7> slot_{};
};

/// Labels with probability strictly above `threshold`, ascending.
std::vector<std::uint32_t> predict_set(std::span<const double> probs, double threshold = 0.5);

// ---------------------------------------------------------------------------
// Reranker

struct RerankerConfig {
  std::size_t n_labels = 0;
  /// Width of the frozen encoder's hidden rows.
  std::size_t hidden_dim = 0;
  std::size_t model_dim = 64;
  std::size_t heads = 2;
  std::array<std::size_t, ModalityVocab::kKinds> modality_sizes{};
  std::uint64_t seed = 2;

  void validate() const;
};

/// Frozen base-model quantities for one encounter plus its structured fields.
struct RerankerInput {
  Tensor base_probs;                  // [N]
  Tensor note_hidden;                 // unmasked encoder rows of the note
  std::optional<Tensor> aux_hidden;   // encoder rows of medication/procedure names
  std::int32_t doctor = 0;
  std::int32_t dept = 0;
  std::vector<std::int32_t> meds;
  std::vector<std::int32_t> procs;
};

/// Runs the frozen base model. Throws EmptySourceError for an all-padding note.
RerankerInput make_reranker_input(const BaseModel& base, const Example& example);

struct RerankerOutput {
  Var scores;  // P' + P before clamping; used for ranking
  Var probs;   // clamped to [0, 1]
};

class Reranker {
 public:
  explicit Reranker(RerankerConfig config);

  const RerankerConfig& config() const { return config_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }

  /// Sum over modalities of the modality embeddings [model_dim].
  Var embed_modalities(Tape& tape, const RerankerInput& in, bool trainable = true) const;
  RerankerOutput forward(Tape& tape, const RerankerInput& in, bool trainable = true) const;
  /// Pre-clamp scores.
  std::vector<double> predict_scores(const RerankerInput& in) const;

  void save(const std::filesystem::path& path, const LabelSpace& labels, const ModalityVocab& modalities) const;
  static Reranker load(const std::filesystem::path& path, const LabelSpace& labels, const ModalityVocab& modalities);

 private:
  AttentionWeights bind_attention(Tape& tape, const std::vector<std::size_t>& slots, bool trainable) const;

  RerankerConfig config_;
  ParameterStore params_;
  std::size_t label_embedding_ = 0;
  std::array<std::size_t, ModalityVocab::kKinds> modality_{};
  std::vector<std::size_t> attn_note_, attn_aux_;  // q..., k..., v..., o
  std::size_t proj_weight_ = 0, proj_bias_ = 0;
};

}  // namespace opd
