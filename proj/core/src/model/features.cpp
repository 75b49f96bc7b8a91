#include <algorithm>
#include <fstream>
#include <map>
#include <set>

#include "opd/errors.hpp"
#include "opd/hashing.hpp"
#include "opd/model.hpp"

namespace opd {
namespace {

constexpr std::array<const char*, ModalityVocab::kKinds> kKindNames = {"doctor", "dept", "med", "proc"};

}  // namespace

ModalityVocab::ModalityVocab() = default;

void ModalityVocab::add(Kind kind, const std::string& name) {
  // ids start at 1; 0 is the unknown row
  const auto id = static_cast<std::int32_t>(names_[kind].size() + 1);
  if (!ids_[kind].emplace(name, id).second) {
    throw ValidationError(std::string("duplicate ") + kKindNames[kind] + " entry '" + name + "'");
  }
  names_[kind].push_back(name);
}

ModalityVocab ModalityVocab::build(std::span<const Encounter> train) {
  std::array<std::set<std::string>, kKinds> seen;
  for (const auto& e : train) {
    seen[kDoctor].insert(e.doctor);
    seen[kDept].insert(e.dept);
    seen[kMedication].insert(e.meds.begin(), e.meds.end());
    seen[kProcedure].insert(e.procs.begin(), e.procs.end());
  }
  ModalityVocab v;
  for (std::size_t k = 0; k < kKinds; ++k) {
    for (const auto& name : seen[k]) v.add(static_cast<Kind>(k), name);
  }
  return v;
}

std::int32_t ModalityVocab::id(Kind kind, std::string_view name) const {
  auto it = ids_[kind].find(name);
  return it == ids_[kind].end() ? 0 : it->second;
}

std::string ModalityVocab::hash() const {
  std::string joined;
  for (std::size_t k = 0; k < kKinds; ++k) {
    for (const auto& n : names_[k]) joined += std::string(kKindNames[k]) + '\t' + n + '\n';
  }
  return sha256_hex(joined);
}

void ModalityVocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (std::size_t k = 0; k < kKinds; ++k) {
    for (const auto& n : names_[k]) out << kKindNames[k] << '\t' << n << '\n';
  }
}

ModalityVocab ModalityVocab::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  ModalityVocab v;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto tab = line.find('\t');
    const auto kind_name = line.substr(0, tab);
    auto it = std::find(kKindNames.begin(), kKindNames.end(), kind_name);
    if (tab == std::string::npos || tab + 1 == line.size() || it == kKindNames.end()) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": expected '<kind>\\t<name>'");
    }
    v.add(static_cast<Kind>(it - kKindNames.begin()), line.substr(tab + 1));
  }
  return v;
}

std::string auxiliary_text(const Encounter& e) {
  std::string text;
  for (const auto* list : {&e.meds, &e.procs}) {
    for (const auto& name : *list) {
      if (!text.empty()) text += ' ';
      text += name;
    }
  }
  return text;
}

std::vector<Example> make_examples(std::span<const Encounter> encounters, const Vocabulary& vocab,
                                   const LabelSpace& labels, const ModalityVocab* modalities,
                                   std::size_t max_len) {
  std::map<std::string, std::size_t> first;  // patient -> index of earliest encounter
  for (std::size_t i = 0; i < encounters.size(); ++i) {
    auto [it, inserted] = first.try_emplace(encounters[i].patient_id, i);
    if (!inserted && encounters[i].date < encounters[it->second].date) it->second = i;
  }

  std::vector<Example> out;
  out.reserve(encounters.size());
  for (std::size_t i = 0; i < encounters.size(); ++i) {
    const Encounter& e = encounters[i];
    Example ex;
    ex.patient_id = e.patient_id;
    ex.date = e.date;
    ex.dept_name = e.dept;
    ex.first_visit = first.at(e.patient_id) == i;
    ex.tokens = tokenize(e.text, vocab, max_len).token_ids;
    ex.aux_tokens = tokenize(auxiliary_text(e), vocab, max_len).token_ids;
    ex.truth_codes = e.codes;
    for (const auto& c : e.codes) {
      if (auto idx = labels.index_of(c)) {
        ex.labels.push_back(static_cast<std::uint32_t>(*idx));
      } else {
        ex.unseen_codes.push_back(c);
      }
    }
    std::sort(ex.labels.begin(), ex.labels.end());
    if (modalities) {
      ex.doctor = modalities->id(ModalityVocab::kDoctor, e.doctor);
      ex.dept = modalities->id(ModalityVocab::kDept, e.dept);
      for (const auto& m : e.meds) ex.meds.push_back(modalities->id(ModalityVocab::kMedication, m));
      for (const auto& p : e.procs) ex.procs.push_back(modalities->id(ModalityVocab::kProcedure, p));
    }
    out.push_back(std::move(ex));
  }
  return out;
}

Tensor label_targets(const Example& example, std::size_t n_labels) {
  Tensor y({n_labels});
  for (auto l : example.labels) {
    if (l >= n_labels) throw ContractError("label index " + std::to_string(l) + " outside label space");
    y[l] = 1.0;
  }
  return y;
}

Vocabulary build_training_vocab(std::span<const Encounter> train, std::size_t min_token_count) {
  std::vector<std::string> texts;
  texts.reserve(2 * train.size());
  for (const auto& e : train) {
    texts.push_back(e.text);
    texts.push_back(auxiliary_text(e));
  }
  return build_vocab(texts, min_token_count);
}

FeatureSet build_features(const PreparedData& data, std::size_t min_token_count, std::size_t max_len) {
  FeatureSet f;
  f.vocab = build_training_vocab(data.train, min_token_count);
  f.modalities = ModalityVocab::build(data.train);
  f.train = make_examples(data.train, f.vocab, data.labels, &f.modalities, max_len);
  f.dev = make_examples(data.dev, f.vocab, data.labels, &f.modalities, max_len);
  f.test = make_examples(data.test, f.vocab, data.labels, &f.modalities, max_len);
  return f;
}

}  // namespace opd
