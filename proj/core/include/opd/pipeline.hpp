#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "opd/config.hpp"
#include "opd/metrics.hpp"

namespace opd {

/// generate -> split -> preprocess, entirely in memory.
PreparedData prepare_from_config(const RunConfig& run);
PreparedData prepare_corpus(const RunConfig& run, std::span<const Encounter> corpus);

/// File names inside a prepared-data directory.
namespace data_files {
inline constexpr const char* kTrain = "train.jsonl";
inline constexpr const char* kDev = "dev.jsonl";
inline constexpr const char* kTest = "test.jsonl";
inline constexpr const char* kLabels = "labels.tsv";
inline constexpr const char* kTrainCounts = "train_counts.tsv";
inline constexpr const char* kVocab = "vocab.txt";
inline constexpr const char* kModalities = "modalities.tsv";
inline constexpr const char* kReportText = "report.txt";
inline constexpr const char* kReportCsv = "report.csv";
}  // namespace data_files

/// Writes the splits, label space, vocabularies and the dataset report.
/// Returns the paths written, in a fixed order.
std::vector<std::filesystem::path> write_prepared(const std::filesystem::path& dir, const PreparedData& data,
                                                  const FeatureSet& features);

/// Everything a model stage needs, read back from a prepared directory.
struct Workspace {
  PreparedData data;
  FeatureSet features;
};

/// Paths read by load_workspace.
std::vector<std::filesystem::path> workspace_inputs(const std::filesystem::path& dir);
/// Rebuilds the features and checks them against the stored vocabularies.
Workspace load_workspace(const std::filesystem::path& dir, const RunConfig& run);

enum class SplitName { kDev, kTest };
SplitName parse_split(std::string_view name);
std::string_view to_string(SplitName split);
const std::vector<Example>& examples_of(const Workspace& ws, SplitName split);

/// Label counts from the de-duplicated train set, by label index.
std::vector<std::size_t> label_train_counts(const LabelSpace& labels);

}  // namespace opd
