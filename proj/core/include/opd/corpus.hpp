#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace opd {

using Date = std::chrono::sys_days;

std::string format_date(Date date);
/// Parses "YYYY-MM-DD"; throws ParseError on anything else.
Date parse_date(std::string_view text);

/// ICD-10 style: one upper-case letter, two digits, optionally '.' followed by
/// one to four upper-case alphanumerics.
bool is_valid_code(std::string_view code);
/// First three characters of a valid code.
std::string_view chapter_of(std::string_view code);

/// One doctor-patient visit. `codes` is kept sorted ascending and unique.
struct Encounter {
  std::string patient_id;
  Date date{};
  std::string dept;
  std::string doctor;
  std::string text;
  std::vector<std::string> codes;
  std::vector<std::string> meds;
  std::vector<std::string> procs;

  friend bool operator==(const Encounter&, const Encounter&) = default;
};

/// Throws ValidationError if codes are empty, duplicated or malformed.
void validate(const Encounter& e);
/// Sorts codes ascending; throws ValidationError on duplicates.
void normalize_codes(Encounter& e);

/// Ordered label universe. The order defines probability-vector indexing.
class LabelSpace {
 public:
  LabelSpace() = default;
  explicit LabelSpace(std::vector<std::string> codes, std::vector<std::size_t> train_counts = {});

  /// Codes observed in `train`, sorted ascending, with document frequencies.
  static LabelSpace from_encounters(std::span<const Encounter> train);

  std::size_t size() const { return codes_.size(); }
  const std::string& code(std::size_t i) const { return codes_.at(i); }
  const std::vector<std::string>& codes() const { return codes_; }
  std::string_view chapter(std::size_t i) const { return chapter_of(codes_.at(i)); }
  std::size_t train_count(std::size_t i) const { return counts_.at(i); }
  std::optional<std::size_t> index_of(std::string_view code) const;

  /// Digest over the ordered code list; identifies the label order.
  std::string hash() const;

  /// TSV with one "code<TAB>train_count" line per label, in order.
  void save(const std::filesystem::path& path) const;
  static LabelSpace load(const std::filesystem::path& path);

  friend bool operator==(const LabelSpace&, const LabelSpace&) = default;

 private:
  std::vector<std::string> codes_;
  std::vector<std::size_t> counts_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

struct CorpusConfig {
  std::size_t n_patients = 500;
  std::size_t n_codes = 300;
  std::size_t n_depts = 12;
  std::size_t n_doctors = 48;
  std::size_t tokens_per_code = 3;
  /// Size of the pool of uninformative filler words.
  std::size_t vocab_size = 2000;
  double zipf_exponent = 1.3;
  double ditto_probability = 0.5;
  double omitted_evidence_fraction = 0.2;
  double mean_encounters_per_patient = 14.0;
  double mean_codes_per_encounter = 2.4;
  std::uint64_t seed = 42;

  /// Throws ConfigError when a field is out of range.
  void validate() const;
};

/// Ground truth of the generative process, for tests and diagnostics.
struct CorpusTruth {
  /// Zipf rank of every code (0 = most frequent), indexed like the LabelSpace.
  std::vector<std::size_t> zipf_rank;
  /// Codes that never leave textual evidence.
  std::vector<std::string> omitted_codes;
  /// The medication each omitted code implies.
  std::map<std::string, std::string> omitted_code_medication;
};

struct GeneratedCorpus {
  std::vector<Encounter> encounters;
  LabelSpace labels;  // every code of the namespace, train counts zero
  CorpusTruth truth;
};

inline constexpr std::size_t kMaxCodes = 26 * 100;

GeneratedCorpus generate_corpus(const CorpusConfig& config);

struct Split {
  std::vector<Encounter> train;
  std::vector<Encounter> dev;
  std::vector<Encounter> test;
};

/// Assigns whole patients uniformly at random to dev and test; the remainder
/// forms train. Each part keeps the input order of its encounters.
Split split_by_patient(std::span<const Encounter> corpus, std::size_t n_dev_patients,
                       std::size_t n_test_patients, std::uint64_t seed);

/// One JSON object per line with exactly the fields patient_id, date, dept,
/// doctor, text, codes, meds, procs. Codes are written sorted ascending.
void write_encounters(const std::filesystem::path& path, std::span<const Encounter> encounters);
std::vector<Encounter> read_encounters(const std::filesystem::path& path);
std::string encounter_to_json(const Encounter& e);
/// Throws ParseError / ValidationError mentioning `line_no`.
Encounter encounter_from_json(std::string_view line, std::size_t line_no);

struct CorpusStats {
  std::size_t documents = 0;
  std::size_t patients = 0;
  std::size_t distinct_codes = 0;
  double mean_length_chars = 0.0;
  double mean_codes_per_document = 0.0;
  /// Percentage of distinct codes absent from the reference set; empty when
  /// no reference was given.
  std::optional<double> pct_codes_unseen;
};

CorpusStats corpus_stats(std::span<const Encounter> encounters);
CorpusStats corpus_stats(std::span<const Encounter> encounters, std::span<const Encounter> reference_train);

}  // namespace opd
