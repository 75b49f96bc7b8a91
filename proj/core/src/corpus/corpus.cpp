#include "opd/corpus.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "opd/errors.hpp"
#include "opd/hashing.hpp"

namespace opd {

std::string format_date(Date date) {
  const std::chrono::year_month_day ymd{date};
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
  return buf;
}

Date parse_date(std::string_view text) {
  auto digits = [&](std::size_t from, std::size_t n) {
    int v = 0;
    for (std::size_t i = from; i < from + n; ++i) {
      if (!std::isdigit(static_cast<unsigned char>(text[i]))) return -1;
      v = v * 10 + (text[i] - '0');
    }
    return v;
  };
  if (text.size() != 10 || text[4] != '-' || text[7] != '-') {
    throw ParseError("invalid date '" + std::string(text) + "', expected YYYY-MM-DD");
  }
  const int y = digits(0, 4), m = digits(5, 2), d = digits(8, 2);
  const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{static_cast<unsigned>(m)},
                                        std::chrono::day{static_cast<unsigned>(d)}};
  if (y < 0 || m < 0 || d < 0 || !ymd.ok()) {
    throw ParseError("invalid date '" + std::string(text) + "'");
  }
  return Date{ymd};
}

bool is_valid_code(std::string_view code) {
  if (code.size() < 3) return false;
  if (!std::isupper(static_cast<unsigned char>(code[0])) || !std::isdigit(static_cast<unsigned char>(code[1])) ||
      !std::isdigit(static_cast<unsigned char>(code[2]))) {
    return false;
  }
  if (code.size() == 3) return true;
  if (code[3] != '.' || code.size() < 5 || code.size() > 8) return false;
  return std::all_of(code.begin() + 4, code.end(), [](char c) {
    return std::isdigit(static_cast<unsigned char>(c)) || std::isupper(static_cast<unsigned char>(c));
  });
}

std::string_view chapter_of(std::string_view code) { return code.substr(0, 3); }

void normalize_codes(Encounter& e) {
  std::sort(e.codes.begin(), e.codes.end());
  if (std::adjacent_find(e.codes.begin(), e.codes.end()) != e.codes.end()) {
    throw ValidationError("duplicate code in encounter of patient '" + e.patient_id + "'");
  }
}

void validate(const Encounter& e) {
  if (e.codes.empty()) throw ValidationError("encounter of patient '" + e.patient_id + "' has no codes");
  std::set<std::string_view> seen;
  for (const auto& c : e.codes) {
    if (!is_valid_code(c)) throw ValidationError("malformed code '" + c + "'");
    if (!seen.insert(c).second) throw ValidationError("duplicate code '" + c + "'");
  }
}

// ---------------------------------------------------------------------------
// LabelSpace

LabelSpace::LabelSpace(std::vector<std::string> codes, std::vector<std::size_t> train_counts)
    : codes_(std::move(codes)), counts_(std::move(train_counts)) {
  if (counts_.empty()) counts_.assign(codes_.size(), 0);
  if (counts_.size() != codes_.size()) throw ContractError("label counts do not match label codes");
  for (std::size_t i = 0; i < codes_.size(); ++i) {
    if (!is_valid_code(codes_[i])) throw ValidationError("malformed label code '" + codes_[i] + "'");
    if (!index_.emplace(codes_[i], i).second) throw ValidationError("duplicate label '" + codes_[i] + "'");
  }
}

LabelSpace LabelSpace::from_encounters(std::span<const Encounter> train) {
  std::map<std::string, std::size_t> counts;
  for (const auto& e : train) {
    for (const auto& c : e.codes) ++counts[c];
  }
  std::vector<std::string> codes;
  std::vector<std::size_t> n;
  for (const auto& [c, k] : counts) {
    codes.push_back(c);
    n.push_back(k);
  }
  return LabelSpace(std::move(codes), std::move(n));
}

std::optional<std::size_t> LabelSpace::index_of(std::string_view code) const {
  auto it = index_.find(code);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::string LabelSpace::hash() const {
  std::string joined;
  for (const auto& c : codes_) {
    joined += c;
    joined += '\n';
  }
  return sha256_hex(joined);
}

void LabelSpace::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (std::size_t i = 0; i < codes_.size(); ++i) out << codes_[i] << '\t' << counts_[i] << '\n';
}

LabelSpace LabelSpace::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::string> codes;
  std::vector<std::size_t> counts;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": expected code<TAB>count");
    }
    codes.push_back(line.substr(0, tab));
    try {
      std::size_t used = 0;
      counts.push_back(std::stoul(line.substr(tab + 1), &used));
      if (used != line.size() - tab - 1) throw std::invalid_argument("trailing");
    } catch (const std::logic_error&) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": bad count");
    }
  }
  return LabelSpace(std::move(codes), std::move(counts));
}

// ---------------------------------------------------------------------------
// Generator

void CorpusConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string(name) + " must be positive");
  };
  positive(n_patients, "n_patients");
  positive(n_codes, "n_codes");
  positive(n_depts, "n_depts");
  positive(n_doctors, "n_doctors");
  positive(tokens_per_code, "tokens_per_code");
  positive(vocab_size, "vocab_size");
  if (n_codes > kMaxCodes) {
    throw ConfigError("n_codes " + std::to_string(n_codes) + " exceeds the code namespace of " +
                      std::to_string(kMaxCodes));
  }
  if (n_doctors < n_depts) throw ConfigError("n_doctors must be at least n_depts");
  if (!(zipf_exponent > 0.0) || !std::isfinite(zipf_exponent)) throw ConfigError("zipf_exponent must be > 0");
  auto probability = [](double p, const char* name) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(std::string(name) + " must lie in [0,1]");
  };
  probability(ditto_probability, "ditto_probability");
  probability(omitted_evidence_fraction, "omitted_evidence_fraction");
  if (!(mean_encounters_per_patient >= 1.0)) throw ConfigError("mean_encounters_per_patient must be >= 1");
  if (!(mean_codes_per_encounter >= 1.0)) throw ConfigError("mean_codes_per_encounter must be >= 1");
}

namespace {

constexpr std::size_t kSyllablesPerWord = 4;
constexpr std::array<const char*, 20> kSyllables = {"ba", "ko", "mi", "te", "ru", "sa", "lo",
                                                    "ne", "di", "va", "pu", "ze", "ka", "fo",
                                                    "ri", "tu", "me", "no", "gi", "ha"};
constexpr std::size_t kWordSpace = 20 * 20 * 20 * 20;

std::string pseudo_word(std::size_t index) {
  std::string w;
  for (std::size_t i = 0; i < kSyllablesPerWord; ++i) {
    w += kSyllables[index % kSyllables.size()];
    index /= kSyllables.size();
  }
  return w;
}

constexpr std::size_t kGenericMeds = 30;
constexpr std::size_t kGenericProcs = 15;
constexpr double kChronicInclusion = 0.6;
constexpr double kChronicExtraMean = 0.8;
constexpr double kIndicativeChapterShare = 0.25;
constexpr double kDittoKeepFraction = 0.9;

class Generator {
 public:
  explicit Generator(const CorpusConfig& cfg) : cfg_(cfg), rng_(cfg.seed) {}

  GeneratedCorpus run() {
    build_codes();
    build_lexicon();
    GeneratedCorpus out;
    for (std::size_t p = 0; p < cfg_.n_patients; ++p) generate_patient(p, out.encounters);
    out.labels = LabelSpace(codes_);
    out.truth.zipf_rank = rank_of_code_;
    for (std::size_t c = 0; c < codes_.size(); ++c) {
      if (omitted_[c]) {
        out.truth.omitted_codes.push_back(codes_[c]);
        out.truth.omitted_code_medication[codes_[c]] = code_med_[c];
      }
    }
    return out;
  }

 private:
  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(rng_); }
  std::size_t below(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng_); }
  std::size_t poisson(double mean) {
    if (mean <= 0.0) return 0;
    return static_cast<std::size_t>(std::poisson_distribution<long>(mean)(rng_));
  }

  void build_codes() {
    // Chapters are drawn from the letter/two-digit namespace; each holds one to
    // four sibling codes so that level-3 neighbours exist.
    std::vector<std::size_t> chapters(kMaxCodes);
    std::iota(chapters.begin(), chapters.end(), 0);
    std::shuffle(chapters.begin(), chapters.end(), rng_);
    std::size_t next_chapter = 0;
    std::vector<std::pair<std::string, std::size_t>> made;  // code, chapter slot
    while (made.size() < cfg_.n_codes) {
      const std::size_t slot = chapters[next_chapter++];
      const std::size_t siblings = std::min<std::size_t>(1 + below(4), cfg_.n_codes - made.size());
      char chapter[4];
      std::snprintf(chapter, sizeof chapter, "%c%02zu", static_cast<char>('A' + slot / 100), slot % 100);
      for (std::size_t s = 0; s < siblings; ++s) {
        made.emplace_back(std::string(chapter) + "." + std::to_string(s), next_chapter - 1);
      }
    }
    std::sort(made.begin(), made.end());
    const std::size_t n = made.size();
    n_chapters_ = next_chapter;
    for (const auto& [code, ch] : made) {
      codes_.push_back(code);
      chapter_index_.push_back(ch);
    }
    chapter_dept_.resize(n_chapters_);
    for (auto& d : chapter_dept_) d = below(cfg_.n_depts);

    // Zipf ranks via a random permutation of codes.
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng_);
    rank_of_code_.assign(n, 0);
    code_at_rank_ = order;
    for (std::size_t r = 0; r < n; ++r) rank_of_code_[order[r]] = r;
    zipf_cdf_.resize(n);
    double total = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      total += 1.0 / std::pow(static_cast<double>(r + 1), cfg_.zipf_exponent);
      zipf_cdf_[r] = total;
    }
    for (auto& v : zipf_cdf_) v /= total;

    const auto n_omitted = static_cast<std::size_t>(std::llround(cfg_.omitted_evidence_fraction * static_cast<double>(n)));
    std::vector<std::size_t> pick(n);
    std::iota(pick.begin(), pick.end(), 0);
    std::shuffle(pick.begin(), pick.end(), rng_);
    omitted_.assign(n, false);
    for (std::size_t i = 0; i < n_omitted; ++i) omitted_[pick[i]] = true;
  }

  void build_lexicon() {
    const std::size_t n = codes_.size();
    const std::size_t per_code = cfg_.tokens_per_code;
    const std::size_t needed = cfg_.vocab_size + n * per_code + 2 * n_chapters_ + n + kGenericMeds + kGenericProcs;
    if (needed > kWordSpace) throw ConfigError("corpus configuration exhausts the synthetic word space");
    // Word indices are scattered through the word space with a fixed stride so
    // neighbouring categories do not share prefixes.
    std::size_t next = 0;
    auto take = [&]() { return pseudo_word((next++ * 7919) % kWordSpace); };
    for (std::size_t i = 0; i < cfg_.vocab_size; ++i) filler_.push_back(take());
    code_words_.resize(n);
    for (auto& words : code_words_) {
      for (std::size_t i = 0; i < per_code; ++i) words.push_back(take());
    }
    chapter_words_.resize(n_chapters_);
    for (auto& words : chapter_words_) {
      for (int i = 0; i < 2; ++i) words.push_back(take());
    }
    code_med_.resize(n);
    for (auto& m : code_med_) m = take();
    for (std::size_t i = 0; i < kGenericMeds; ++i) generic_meds_.push_back(take());
    for (std::size_t i = 0; i < kGenericProcs; ++i) generic_procs_.push_back(take());

    filler_cdf_.resize(filler_.size());
    double total = 0.0;
    for (std::size_t r = 0; r < filler_.size(); ++r) {
      total += 1.0 / static_cast<double>(r + 1);
      filler_cdf_[r] = total;
    }
    for (auto& v : filler_cdf_) v /= total;
  }

  std::size_t draw_code() {
    const double u = uniform();
    auto it = std::lower_bound(zipf_cdf_.begin(), zipf_cdf_.end(), u);
    const std::size_t r = std::min<std::size_t>(static_cast<std::size_t>(it - zipf_cdf_.begin()), zipf_cdf_.size() - 1);
    return code_at_rank_[r];
  }

  const std::string& draw_filler() {
    const double u = uniform();
    auto it = std::lower_bound(filler_cdf_.begin(), filler_cdf_.end(), u);
    return filler_[std::min<std::size_t>(static_cast<std::size_t>(it - filler_cdf_.begin()), filler_.size() - 1)];
  }

  std::set<std::size_t> draw_code_set(const std::vector<std::size_t>& chronic) {
    const double acute_mean =
        std::max(0.05, cfg_.mean_codes_per_encounter - kChronicInclusion * (1.0 + kChronicExtraMean));
    std::set<std::size_t> set;
    for (auto c : chronic) {
      if (uniform() < kChronicInclusion) set.insert(c);
    }
    const std::size_t acute = poisson(acute_mean);
    for (std::size_t i = 0; i < acute; ++i) set.insert(draw_code());
    if (set.empty()) set.insert(chronic[below(chronic.size())]);
    return set;
  }

  std::vector<std::string> compose_text(const std::set<std::size_t>& set) {
    std::vector<std::string> tokens;
    for (auto c : set) {
      if (omitted_[c]) continue;
      for (std::size_t i = 0; i < cfg_.tokens_per_code; ++i) {
        if (uniform() < kIndicativeChapterShare) {
          const auto& ch = chapter_words_[chapter_index_[c]];
          tokens.push_back(ch[below(ch.size())]);
        } else {
          const auto& words = code_words_[c];
          tokens.push_back(words[below(words.size())]);
        }
      }
    }
    const std::size_t filler = 20 + poisson(10.0);
    for (std::size_t i = 0; i < filler; ++i) tokens.push_back(draw_filler());
    std::shuffle(tokens.begin(), tokens.end(), rng_);
    return tokens;
  }

  static std::string join(const std::vector<std::string>& tokens) {
    std::string text;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      if (i) text += (i % 9 == 0) ? ". " : " ";
      text += tokens[i];
    }
    if (!text.empty()) text += '.';
    return text;
  }

  void generate_patient(std::size_t index, std::vector<Encounter>& out) {
    char pid[16];
    std::snprintf(pid, sizeof pid, "P%06zu", index + 1);
    const std::size_t visits =
        1 + poisson(std::max(0.0, cfg_.mean_encounters_per_patient - 1.0));

    std::vector<std::size_t> chronic;
    const std::size_t n_chronic = 1 + poisson(kChronicExtraMean);
    std::set<std::size_t> chronic_set;
    for (std::size_t i = 0; i < n_chronic; ++i) chronic_set.insert(draw_code());
    chronic.assign(chronic_set.begin(), chronic_set.end());

    using namespace std::chrono;
    Date date = sys_days{year{2016} / January / 1} + days{static_cast<int>(below(1096))};
    std::set<std::size_t> previous_set;
    std::vector<std::string> previous_tokens;
    Encounter previous;
    for (std::size_t v = 0; v < visits; ++v) {
      Encounter e;
      e.patient_id = pid;
      if (v > 0) date += days{1 + static_cast<int>(std::geometric_distribution<int>(1.0 / 21.0)(rng_))};
      e.date = date;
      if (v > 0 && uniform() < cfg_.ditto_probability) {
        // Copy the code set, metadata and at least 80% of the text, then append
        // newly documented filler.
        std::vector<std::string> tokens;
        const std::size_t max_drop = previous_tokens.size() / 5;
        std::size_t dropped = 0;
        for (const auto& t : previous_tokens) {
          if (dropped < max_drop && uniform() >= kDittoKeepFraction) {
            ++dropped;
            continue;
          }
          tokens.push_back(t);
        }
        const std::size_t growth = poisson(4.0);
        for (std::size_t i = 0; i < growth; ++i) tokens.push_back(draw_filler());
        e.text = join(tokens);
        e.codes = previous.codes;
        e.dept = previous.dept;
        e.doctor = previous.doctor;
        e.meds = previous.meds;
        e.procs = previous.procs;
        previous_tokens = std::move(tokens);
        out.push_back(e);
        previous = std::move(e);
        continue;
      }

      std::set<std::size_t> set = draw_code_set(chronic);
      for (int attempt = 0; v > 0 && set == previous_set && attempt < 1000; ++attempt) set = draw_code_set(chronic);
      while (v > 0 && set == previous_set) set.insert(draw_code());
      previous_set = set;

      previous_tokens = compose_text(set);
      e.text = join(previous_tokens);
      for (auto c : set) e.codes.push_back(codes_[c]);
      std::sort(e.codes.begin(), e.codes.end());

      // The department follows the chapter of a main code. Omitted codes take
      // precedence and pin the doctor, leaving a metadata-only trace.
      std::vector<std::size_t> members(set.begin(), set.end());
      std::size_t main = members[below(members.size())];
      bool pinned = false;
      for (auto c : members) {
        if (omitted_[c]) {
          main = c;
          pinned = true;
          break;
        }
      }
      const std::size_t dept = chapter_dept_[chapter_index_[main]];
      const std::size_t dept_doctors = (cfg_.n_doctors - dept + cfg_.n_depts - 1) / cfg_.n_depts;
      const std::size_t pick = pinned ? main % dept_doctors : below(dept_doctors);
      char dept_id[16], doctor_id[16];
      std::snprintf(dept_id, sizeof dept_id, "D%02zu", dept + 1);
      std::snprintf(doctor_id, sizeof doctor_id, "DR%03zu", dept + pick * cfg_.n_depts + 1);
      e.dept = dept_id;
      e.doctor = doctor_id;

      std::set<std::string> meds, procs;
      for (auto c : members) {
        if (omitted_[c]) meds.insert(code_med_[c]);
      }
      for (std::size_t i = below(3); i > 0; --i) meds.insert(generic_meds_[below(generic_meds_.size())]);
      for (std::size_t i = below(2); i > 0; --i) procs.insert(generic_procs_[below(generic_procs_.size())]);
      e.meds.assign(meds.begin(), meds.end());
      e.procs.assign(procs.begin(), procs.end());
      out.push_back(e);
      previous = std::move(e);
    }
  }

  const CorpusConfig& cfg_;
  std::mt19937_64 rng_;
  std::vector<std::string> codes_;
  std::vector<std::size_t> chapter_index_;
  std::size_t n_chapters_ = 0;
  std::vector<std::size_t> chapter_dept_;
  std::vector<std::size_t> rank_of_code_;
  std::vector<std::size_t> code_at_rank_;
  std::vector<double> zipf_cdf_;
  std::vector<bool> omitted_;
  std::vector<std::string> filler_;
  std::vector<double> filler_cdf_;
  std::vector<std::vector<std::string>> code_words_;
  std::vector<std::vector<std::string>> chapter_words_;
  std::vector<std::string> code_med_;
  std::vector<std::string> generic_meds_;
  std::vector<std::string> generic_procs_;
};

}  // namespace

GeneratedCorpus generate_corpus(const CorpusConfig& config) {
  config.validate();
  return Generator(config).run();
}

// ---------------------------------------------------------------------------
// Split

Split split_by_patient(std::span<const Encounter> corpus, std::size_t n_dev_patients,
                       std::size_t n_test_patients, std::uint64_t seed) {
  std::vector<std::string> patients;
  std::unordered_set<std::string> seen;
  for (const auto& e : corpus) {
    if (seen.insert(e.patient_id).second) patients.push_back(e.patient_id);
  }
  if (n_dev_patients + n_test_patients > 0 && n_dev_patients + n_test_patients >= patients.size()) {
    throw ConfigError("cannot hold out " + std::to_string(n_dev_patients + n_test_patients) +
                      " patients from a corpus of " + std::to_string(patients.size()));
  }
  std::mt19937_64 rng(seed);
  std::shuffle(patients.begin(), patients.end(), rng);
  std::unordered_map<std::string, int> part;
  for (std::size_t i = 0; i < patients.size(); ++i) {
    part[patients[i]] = i < n_dev_patients ? 1 : (i < n_dev_patients + n_test_patients ? 2 : 0);
  }
  Split split;
  for (const auto& e : corpus) {
    switch (part.at(e.patient_id)) {
      case 1: split.dev.push_back(e); break;
      case 2: split.test.push_back(e); break;
      default: split.train.push_back(e); break;
    }
  }
  return split;
}

// ---------------------------------------------------------------------------
// Statistics

CorpusStats corpus_stats(std::span<const Encounter> encounters) {
  CorpusStats s;
  s.documents = encounters.size();
  std::unordered_set<std::string_view> patients;
  std::set<std::string_view> codes;
  double chars = 0.0, n_codes = 0.0;
  for (const auto& e : encounters) {
    patients.insert(e.patient_id);
    for (const auto& c : e.codes) codes.insert(c);
    chars += static_cast<double>(e.text.size());
    n_codes += static_cast<double>(e.codes.size());
  }
  s.patients = patients.size();
  s.distinct_codes = codes.size();
  if (s.documents) {
    s.mean_length_chars = chars / static_cast<double>(s.documents);
    s.mean_codes_per_document = n_codes / static_cast<double>(s.documents);
  }
  return s;
}

CorpusStats corpus_stats(std::span<const Encounter> encounters, std::span<const Encounter> reference_train) {
  CorpusStats s = corpus_stats(encounters);
  std::unordered_set<std::string_view> train_codes;
  for (const auto& e : reference_train) {
    for (const auto& c : e.codes) train_codes.insert(c);
  }
  std::set<std::string_view> codes;
  for (const auto& e : encounters) {
    for (const auto& c : e.codes) codes.insert(c);
  }
  std::size_t unseen = 0;
  for (auto c : codes) unseen += train_codes.count(c) ? 0 : 1;
  s.pct_codes_unseen = codes.empty() ? 0.0 : 100.0 * static_cast<double>(unseen) / static_cast<double>(codes.size());
  return s;
}

}  // namespace opd
