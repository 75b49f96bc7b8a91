#include "opd/pipeline.hpp"

#include <fstream>

#include <fmt/format.h>

#include "opd/errors.hpp"

namespace opd {
namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

void write_counts(const std::filesystem::path& path, const std::map<std::string, std::size_t>& counts) {
  std::string text;
  for (const auto& [code, n] : counts) text += fmt::format("{}\t{}\n", code, n);
  write_text(path, text);
}

std::map<std::string, std::size_t> read_counts(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::map<std::string, std::size_t> counts;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto tab = line.find('\t');
    try {
      if (tab == std::string::npos) throw std::invalid_argument("tab");
      std::size_t used = 0;
      const auto n = std::stoull(line.substr(tab + 1), &used);
      if (used != line.size() - tab - 1) throw std::invalid_argument("trailing");
      counts[line.substr(0, tab)] = static_cast<std::size_t>(n);
    } catch (const std::exception&) {
      throw ParseError(fmt::format("{}:{}: expected '<code>\\t<count>'", path.string(), line_no));
    }
  }
  return counts;
}

}  // namespace

PreparedData prepare_corpus(const RunConfig& run, std::span<const Encounter> corpus) {
  const Split split = split_by_patient(corpus, run.dev_patients, run.test_patients, stage_seed(run.seed, Stage::kSplit));
  return prepare_data(split, run.preprocess);
}

PreparedData prepare_from_config(const RunConfig& run) {
  const GeneratedCorpus g = generate_corpus(corpus_config(run));
  return prepare_corpus(run, g.encounters);
}

std::vector<std::filesystem::path> write_prepared(const std::filesystem::path& dir, const PreparedData& data,
                                                  const FeatureSet& features) {
  std::filesystem::create_directories(dir);
  using namespace data_files;
  std::vector<std::filesystem::path> out = {dir / kTrain, dir / kDev,   dir / kTest,       dir / kLabels,
                                            dir / kTrainCounts, dir / kVocab, dir / kModalities, dir / kReportText,
                                            dir / kReportCsv};
  write_encounters(out[0], data.train);
  write_encounters(out[1], data.dev);
  write_encounters(out[2], data.test);
  data.labels.save(out[3]);
  write_counts(out[4], data.unfiltered_train_counts);
  features.vocab.save(out[5]);
  features.modalities.save(out[6]);
  write_text(out[7], data.report.to_text());
  write_text(out[8], data.report.to_csv());
  return out;
}

std::vector<std::filesystem::path> workspace_inputs(const std::filesystem::path& dir) {
  using namespace data_files;
  return {dir / kTrain, dir / kDev, dir / kTest, dir / kLabels, dir / kTrainCounts, dir / kVocab, dir / kModalities};
}

Workspace load_workspace(const std::filesystem::path& dir, const RunConfig& run) {
  using namespace data_files;
  Workspace ws;
  ws.data.train = read_encounters(dir / kTrain);
  ws.data.dev = read_encounters(dir / kDev);
  ws.data.test = read_encounters(dir / kTest);
  ws.data.labels = LabelSpace::load(dir / kLabels);
  ws.data.unfiltered_train_counts = read_counts(dir / kTrainCounts);
  ws.features = build_features(ws.data, run.min_token_count, run.max_tokens);
  if (Vocabulary::load(dir / kVocab).hash() != ws.features.vocab.hash()) {
    throw ValidationError("stored vocabulary does not match the one rebuilt from " + (dir / kTrain).string() +
                          "; was the config changed after preprocessing?");
  }
  if (ModalityVocab::load(dir / kModalities).hash() != ws.features.modalities.hash()) {
    throw ValidationError("stored modality vocabulary does not match the training data");
  }
  return ws;
}

SplitName parse_split(std::string_view name) {
  if (name == "dev") return SplitName::kDev;
  if (name == "test") return SplitName::kTest;
  throw ConfigError("unknown split '" + std::string(name) + "' (dev or test)");
}

std::string_view to_string(SplitName split) { return split == SplitName::kDev ? "dev" : "test"; }

const std::vector<Example>& examples_of(const Workspace& ws, SplitName split) {
  return split == SplitName::kDev ? ws.features.dev : ws.features.test;
}

std::vector<std::size_t> label_train_counts(const LabelSpace& labels) {
  std::vector<std::size_t> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) out[i] = labels.train_count(i);
  return out;
}

}  // namespace opd
