#include "opd/preprocess.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "opd/errors.hpp"
#include "opd/hashing.hpp"

namespace opd {

std::vector<Encounter> dedup_ditto(std::span<const Encounter> patient_encounters, DedupMode mode) {
  if (patient_encounters.empty()) return {};
  const std::string& pid = patient_encounters.front().patient_id;
  for (const auto& e : patient_encounters) {
    if (e.patient_id != pid) {
      throw ContractError("dedup_ditto expects one patient, got '" + pid + "' and '" + e.patient_id + "'");
    }
  }
  std::vector<const Encounter*> ordered;
  ordered.reserve(patient_encounters.size());
  for (const auto& e : patient_encounters) ordered.push_back(&e);
  std::stable_sort(ordered.begin(), ordered.end(),
                   [](const Encounter* a, const Encounter* b) { return a->date < b->date; });

  auto code_set = [](const Encounter& e) {
    std::vector<std::string> c = e.codes;
    std::sort(c.begin(), c.end());
    return c;
  };

  std::vector<Encounter> kept;
  std::set<std::vector<std::string>> seen;
  std::vector<std::string> last;
  for (const Encounter* e : ordered) {
    auto codes = code_set(*e);
    const bool duplicate = kept.empty() ? false
                           : mode == DedupMode::kConsecutive ? codes == last
                                                             : seen.count(codes) != 0;
    if (duplicate) continue;
    kept.push_back(*e);
    seen.insert(codes);
    last = std::move(codes);
  }
  return kept;
}

std::vector<Encounter> dedup_corpus(std::span<const Encounter> encounters, DedupMode mode) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<Encounter>> by_patient;
  for (const auto& e : encounters) {
    auto [it, inserted] = by_patient.try_emplace(e.patient_id);
    if (inserted) order.push_back(e.patient_id);
    it->second.push_back(e);
  }
  std::vector<Encounter> out;
  for (const auto& pid : order) {
    auto kept = dedup_ditto(by_patient.at(pid), mode);
    std::move(kept.begin(), kept.end(), std::back_inserter(out));
  }
  return out;
}

FrequencyFilterResult filter_min_frequency(std::span<const Encounter> train, std::size_t min_count) {
  std::map<std::string, std::size_t> counts;
  for (const auto& e : train) {
    std::set<std::string_view> unique(e.codes.begin(), e.codes.end());
    for (auto c : unique) ++counts[std::string(c)];
  }
  FrequencyFilterResult result;
  for (const auto& [code, n] : counts) {
    if (n >= min_count) result.labels.push_back(code);
  }
  const std::set<std::string_view> keep(result.labels.begin(), result.labels.end());
  for (const auto& e : train) {
    Encounter filtered = e;
    filtered.codes.clear();
    for (const auto& c : e.codes) {
      if (keep.count(c)) {
        filtered.codes.push_back(c);
      } else {
        ++result.removed_label_occurrences;
      }
    }
    if (filtered.codes.empty()) {
      ++result.dropped_documents;
      continue;
    }
    result.train.push_back(std::move(filtered));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Vocabulary

std::vector<std::string> split_tokens(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (char ch : text) {
    const auto u = static_cast<unsigned char>(ch);
    if (std::isalnum(u) || u >= 0x80) {
      current += static_cast<char>(std::tolower(u));
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

Vocabulary::Vocabulary() {
  append("<pad>");
  append("<unk>");
}

void Vocabulary::append(std::string token) {
  const auto id = static_cast<std::int32_t>(tokens_.size());
  if (!ids_.emplace(token, id).second) throw ValidationError("duplicate vocabulary token '" + token + "'");
  tokens_.push_back(std::move(token));
}

std::int32_t Vocabulary::id(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  return it == ids_.end() ? kUnknown : it->second;
}

std::string Vocabulary::hash() const {
  std::string joined;
  for (const auto& t : tokens_) {
    joined += t;
    joined += '\n';
  }
  return sha256_hex(joined);
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  Vocabulary v;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no <= 2) {
      if (line != v.tokens_[line_no - 1]) {
        throw ParseError(path.string() + ":" + std::to_string(line_no) + ": reserved token expected");
      }
      continue;
    }
    if (line.empty()) throw ParseError(path.string() + ":" + std::to_string(line_no) + ": empty token");
    v.append(line);
  }
  return v;
}

Vocabulary build_vocab(std::span<const std::string> texts, std::size_t min_token_count) {
  if (min_token_count == 0) throw ConfigError("min_token_count must be >= 1");
  std::unordered_map<std::string, std::size_t> counts;
  for (const auto& text : texts) {
    for (auto& tok : split_tokens(text)) ++counts[std::move(tok)];
  }
  std::vector<std::pair<std::string, std::size_t>> ranked;
  for (auto& [tok, n] : counts) {
    if (n >= min_token_count) ranked.emplace_back(tok, n);
  }
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  Vocabulary v;
  for (auto& [tok, _] : ranked) v.append(std::move(tok));
  return v;
}

TokenizedNote tokenize(std::string_view text, const Vocabulary& vocab, std::size_t max_len) {
  TokenizedNote note;
  for (const auto& tok : split_tokens(text)) {
    if (note.token_ids.size() >= max_len) break;
    note.token_ids.push_back(vocab.id(tok));
  }
  if (note.token_ids.empty()) note.token_ids.push_back(Vocabulary::kPad);
  return note;
}

// ---------------------------------------------------------------------------
// Pipeline

PreparedData prepare_data(const Split& split, const PreprocessOptions& options) {
  PreparedData out;
  PreprocessReport& report = out.report;
  report.raw_train = corpus_stats(split.train);
  report.raw_dev = corpus_stats(split.dev, split.train);
  report.raw_test = corpus_stats(split.test, split.train);
  report.min_label_count = options.min_label_count;

  if (options.dedup_train) {
    out.train = dedup_corpus(split.train, options.dedup_mode);
    report.stages.emplace_back("dedup-train");
  } else {
    out.train = split.train;
  }
  out.dev = dedup_corpus(split.dev, options.dedup_mode);
  out.test = dedup_corpus(split.test, options.dedup_mode);
  report.stages.emplace_back("dedup-eval");

  for (const auto& e : out.train) {
    for (const auto& c : e.codes) ++out.unfiltered_train_counts[c];
  }
  report.labels_before_filter = out.unfiltered_train_counts.size();

  auto filtered = filter_min_frequency(out.train, options.min_label_count);
  report.stages.emplace_back("min-frequency-filter");
  // The filter must see de-duplicated counts; running it first changes them.
  if (report.stages.front().rfind("dedup", 0) != 0) {
    throw ContractError("preprocessing must de-duplicate before filtering labels");
  }
  report.labels_after_filter = filtered.labels.size();
  report.documents_dropped_by_filter = filtered.dropped_documents;
  out.train = std::move(filtered.train);
  out.labels = LabelSpace::from_encounters(out.train);

  report.out_train = corpus_stats(out.train);
  report.out_dev = corpus_stats(out.dev, out.train);
  report.out_test = corpus_stats(out.test, out.train);
  return out;
}

namespace {

struct Row {
  const char* name;
  std::string (*format)(const CorpusStats&);
};

const std::array<Row, 6>& table_rows() {
  static const std::array<Row, 6> rows = {{
      {"Number of Documents", [](const CorpusStats& s) { return std::to_string(s.documents); }},
      {"Number of Patients", [](const CorpusStats& s) { return std::to_string(s.patients); }},
      {"Number of Distinct Codes", [](const CorpusStats& s) { return std::to_string(s.distinct_codes); }},
      {"Mean Document Length (characters)",
       [](const CorpusStats& s) { return fmt::format("{:.0f}", s.mean_length_chars); }},
      {"Mean # Codes per Document",
       [](const CorpusStats& s) { return fmt::format("{:.2f}", s.mean_codes_per_document); }},
      {"Distinct % Codes Unseen in Train",
       [](const CorpusStats& s) {
         return s.pct_codes_unseen ? fmt::format("{:.1f}%", *s.pct_codes_unseen) : std::string("-");
       }},
  }};
  return rows;
}

}  // namespace

std::string PreprocessReport::to_text() const {
  std::string out = fmt::format("{:<36}{:>10}{:>10}{:>10}  {:>10}{:>10}{:>10}\n", "", "raw:train", "dev", "test",
                                "out:train", "dev", "test");
  for (const auto& row : table_rows()) {
    out += fmt::format("{:<36}{:>10}{:>10}{:>10}  {:>10}{:>10}{:>10}\n", row.name, row.format(raw_train),
                       row.format(raw_dev), row.format(raw_test), row.format(out_train), row.format(out_dev),
                       row.format(out_test));
  }
  std::string stage_list;
  for (const auto& s : stages) stage_list += (stage_list.empty() ? "" : " -> ") + s;
  out += fmt::format("\nstages: {}\nmin label count: {}\nlabels before filter: {}\nlabels after filter: {}\n"
                     "train documents dropped by filter: {}\n",
                     stage_list, min_label_count, labels_before_filter, labels_after_filter,
                     documents_dropped_by_filter);
  return out;
}

std::string PreprocessReport::to_csv() const {
  std::string out = "statistic,raw_train,raw_dev,raw_test,out_train,out_dev,out_test\n";
  for (const auto& row : table_rows()) {
    out += fmt::format("\"{}\",{},{},{},{},{},{}\n", row.name, row.format(raw_train), row.format(raw_dev),
                       row.format(raw_test), row.format(out_train), row.format(out_dev), row.format(out_test));
  }
  return out;
}

}  // namespace opd
