#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "opd/corpus.hpp"

namespace opd {

enum class DedupMode {
  /// Drop an encounter whose code set equals the previous retained one.
  kConsecutive,
  /// Drop an encounter whose code set equals any earlier retained one.
  kAnyEarlier,
};

/// De-duplicates the encounters of a single patient. Encounters are sorted by
/// date (stable for ties). Throws ContractError on mixed patient ids.
std::vector<Encounter> dedup_ditto(std::span<const Encounter> patient_encounters,
                                   DedupMode mode = DedupMode::kConsecutive);

/// Applies dedup_ditto per patient. Patients keep their order of first
/// appearance.
std::vector<Encounter> dedup_corpus(std::span<const Encounter> encounters,
                                    DedupMode mode = DedupMode::kConsecutive);

struct FrequencyFilterResult {
  std::vector<Encounter> train;
  /// Retained labels, ascending.
  std::vector<std::string> labels;
  std::size_t dropped_documents = 0;
  std::size_t removed_label_occurrences = 0;
};

/// Removes labels seen in fewer than `min_count` training documents and drops
/// documents left without labels.
FrequencyFilterResult filter_min_frequency(std::span<const Encounter> train, std::size_t min_count);

/// Lower-cased runs of ASCII alphanumerics; bytes >= 0x80 are kept inside
/// tokens so non-Latin script survives as opaque tokens.
std::vector<std::string> split_tokens(std::string_view text);

class Vocabulary {
 public:
  static constexpr std::int32_t kPad = 0;
  static constexpr std::int32_t kUnknown = 1;

  Vocabulary();

  std::size_t size() const { return tokens_.size(); }
  std::int32_t id(std::string_view token) const;
  const std::string& token(std::int32_t id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  std::string hash() const;

  /// One token per line in id order, starting with the reserved entries.
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

 private:
  friend Vocabulary build_vocab(std::span<const std::string> texts, std::size_t min_token_count);
  void append(std::string token);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int32_t> ids_;
};

/// Tokens with count >= min_token_count, ids assigned by descending frequency
/// with alphabetical tie-break.
Vocabulary build_vocab(std::span<const std::string> texts, std::size_t min_token_count = 1);

inline constexpr std::size_t kDefaultMaxTokens = 512;

struct TokenizedNote {
  std::vector<std::int32_t> token_ids;
};

/// Empty text yields a single padding token; longer texts keep their head.
TokenizedNote tokenize(std::string_view text, const Vocabulary& vocab, std::size_t max_len = kDefaultMaxTokens);

struct PreprocessOptions {
  bool dedup_train = true;
  DedupMode dedup_mode = DedupMode::kConsecutive;
  std::size_t min_label_count = 2;
};

/// One row of the dataset table: the same statistics for train/dev/test.
struct PreprocessReport {
  CorpusStats raw_train, raw_dev, raw_test;
  CorpusStats out_train, out_dev, out_test;
  std::size_t min_label_count = 0;
  std::size_t labels_before_filter = 0;
  std::size_t labels_after_filter = 0;
  std::size_t documents_dropped_by_filter = 0;
  /// Stages in the order they ran.
  std::vector<std::string> stages;

  std::string to_text() const;
  std::string to_csv() const;
};

struct PreparedData {
  std::vector<Encounter> train, dev, test;
  LabelSpace labels;
  /// Document frequency of every code in the de-duplicated train set before
  /// the frequency filter; the oracle scores use these.
  std::map<std::string, std::size_t> unfiltered_train_counts;
  PreprocessReport report;
};

/// Dedup (train optional, evaluation always) and then the train-only label
/// filter. Evaluation sets never lose labels.
PreparedData prepare_data(const Split& split, const PreprocessOptions& options);

}  // namespace opd
