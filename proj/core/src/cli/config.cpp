#include "opd/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "opd/errors.hpp"
#include "opd/hashing.hpp"

namespace opd {
namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <typename T>
T parse_number(std::string_view key, std::string_view text) {
  T v{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty()) {
    throw ConfigError(fmt::format("{}: cannot parse '{}' as a number", key, text));
  }
  return v;
}

bool parse_bool(std::string_view key, std::string_view text) {
  if (text == "true") return true;
  if (text == "false") return false;
  throw ConfigError(fmt::format("{}: expected true or false, got '{}'", key, text));
}

std::string format_double(double v) { return fmt::format("{}", v); }

struct Field {
  const char* key;
  const char* doc;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, std::string_view)> set;
};

template <typename Access>
Field size_field(const char* key, const char* doc, Access access) {
  return {key, doc, [access](const RunConfig& c) { return std::to_string(access(const_cast<RunConfig&>(c))); },
          [access, key](RunConfig& c, std::string_view v) { access(c) = parse_number<std::size_t>(key, v); }};
}

template <typename Access>
Field double_field(const char* key, const char* doc, Access access) {
  return {key, doc, [access](const RunConfig& c) { return format_double(access(const_cast<RunConfig&>(c))); },
          [access, key](RunConfig& c, std::string_view v) { access(c) = parse_number<double>(key, v); }};
}

template <typename Access>
Field bool_field(const char* key, const char* doc, Access access) {
  return {key, doc, [access](const RunConfig& c) { return access(const_cast<RunConfig&>(c)) ? "true" : "false"; },
          [access, key](RunConfig& c, std::string_view v) { access(c) = parse_bool(key, v); }};
}

#define OPD_REF(expr) [](RunConfig& c) -> auto& { return c.expr; }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      {"seed", "root seed; every stage derives its stream from it",
       [](const RunConfig& c) { return std::to_string(c.seed); },
       [](RunConfig& c, std::string_view v) { c.seed = parse_number<std::uint64_t>("seed", v); }},

      size_field("corpus.n_patients", "patients in the synthetic corpus", OPD_REF(corpus.n_patients)),
      size_field("corpus.n_codes", "size of the code namespace", OPD_REF(corpus.n_codes)),
      size_field("corpus.n_depts", "outpatient departments", OPD_REF(corpus.n_depts)),
      size_field("corpus.n_doctors", "doctors, spread over departments", OPD_REF(corpus.n_doctors)),
      size_field("corpus.tokens_per_code", "indicative tokens a documented code adds to a note",
                 OPD_REF(corpus.tokens_per_code)),
      size_field("corpus.vocab_size", "filler words", OPD_REF(corpus.vocab_size)),
      double_field("corpus.zipf_exponent", "skew of the code frequencies", OPD_REF(corpus.zipf_exponent)),
      double_field("corpus.ditto_probability", "chance that a visit copies the previous one",
                   OPD_REF(corpus.ditto_probability)),
      double_field("corpus.omitted_evidence_fraction", "share of codes never mentioned in text",
                   OPD_REF(corpus.omitted_evidence_fraction)),
      double_field("corpus.mean_encounters_per_patient", "", OPD_REF(corpus.mean_encounters_per_patient)),
      double_field("corpus.mean_codes_per_encounter", "", OPD_REF(corpus.mean_codes_per_encounter)),

      size_field("split.dev_patients", "patients held out for development", OPD_REF(dev_patients)),
      size_field("split.test_patients", "patients held out for testing", OPD_REF(test_patients)),

      bool_field("preprocess.dedup_train", "remove ditto copies from train", OPD_REF(preprocess.dedup_train)),
      {"preprocess.dedup_mode", "consecutive or any_earlier",
       [](const RunConfig& c) {
         return std::string(c.preprocess.dedup_mode == DedupMode::kConsecutive ? "consecutive" : "any_earlier");
       },
       [](RunConfig& c, std::string_view v) {
         if (v == "consecutive") {
           c.preprocess.dedup_mode = DedupMode::kConsecutive;
         } else if (v == "any_earlier") {
           c.preprocess.dedup_mode = DedupMode::kAnyEarlier;
         } else {
           throw ConfigError(fmt::format("preprocess.dedup_mode: unknown mode '{}'", v));
         }
       }},
      size_field("preprocess.min_label_count", "labels need this many train documents",
                 OPD_REF(preprocess.min_label_count)),
      size_field("preprocess.min_token_count", "vocabulary cut-off", OPD_REF(min_token_count)),
      size_field("preprocess.max_tokens", "notes are truncated to this length", OPD_REF(max_tokens)),

      {"model.architecture", "caml or laat",
       [](const RunConfig& c) { return std::string(to_string(c.model.architecture)); },
       [](RunConfig& c, std::string_view v) { c.model.architecture = parse_architecture(v); }},
      size_field("model.embed_dim", "", OPD_REF(model.embed_dim)),
      size_field("model.conv_channels", "", OPD_REF(model.conv_channels)),
      size_field("model.kernel_width", "odd", OPD_REF(model.kernel_width)),
      size_field("model.attention_dim", "laat only", OPD_REF(model.attention_dim)),
      double_field("model.initial_output_bias", "", OPD_REF(model.initial_output_bias)),

      size_field("reranker.model_dim", "", OPD_REF(reranker_dim)),
      size_field("reranker.heads", "must divide reranker.model_dim", OPD_REF(reranker_heads)),

      double_field("train.learning_rate", "", OPD_REF(train.learning_rate)),
      size_field("train.batch_size", "", OPD_REF(train.batch_size)),
      size_field("train.max_epochs", "", OPD_REF(train.max_epochs)),
      size_field("train.patience", "epochs without dev Recall@5 gain before stopping", OPD_REF(train.patience)),
      double_field("train.decision_threshold", "", OPD_REF(train.decision_threshold)),
      bool_field("train.record_timing", "fill the seconds column; outputs stop being reproducible",
                 OPD_REF(train.record_timing)),

      double_field("reranker_train.learning_rate", "", OPD_REF(reranker_train.learning_rate)),
      size_field("reranker_train.batch_size", "", OPD_REF(reranker_train.batch_size)),
      size_field("reranker_train.max_epochs", "", OPD_REF(reranker_train.max_epochs)),
      size_field("reranker_train.patience", "", OPD_REF(reranker_train.patience)),

      {"fractions", "train fractions of the data-fraction experiment",
       [](const RunConfig& c) {
         std::string s;
         for (std::size_t i = 0; i < c.fractions.size(); ++i) s += (i ? "," : "") + format_double(c.fractions[i]);
         return s;
       },
       [](RunConfig& c, std::string_view v) {
         c.fractions.clear();
         std::size_t start = 0;
         while (start <= v.size()) {
           const auto comma = std::min(v.find(',', start), v.size());
           c.fractions.push_back(parse_number<double>("fractions", trim(v.substr(start, comma - start))));
           start = comma + 1;
         }
       }},
      size_field("calibrate.ece_bins", "", OPD_REF(ece_bins)),
  };
  return table;
}

#undef OPD_REF

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace

RunConfig::RunConfig() {
  reranker_train.max_epochs = 10;
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& f : fields()) {
    if (*f.doc) out += fmt::format("# {}\n", f.doc);
    out += fmt::format("{} = {}\n", f.key, f.get(*this));
  }
  return out;
}

std::string RunConfig::hash() const { return sha256_hex(to_text()); }

void RunConfig::validate() const {
  corpus.validate();
  train.validate();
  reranker_train.validate();
  if (max_tokens == 0) throw ConfigError("preprocess.max_tokens must be positive");
  if (min_token_count == 0) throw ConfigError("preprocess.min_token_count must be positive");
  if (reranker_dim == 0 || reranker_heads == 0 || reranker_dim % reranker_heads != 0) {
    throw ConfigError("reranker.heads must divide reranker.model_dim");
  }
  if (ece_bins == 0) throw ConfigError("calibrate.ece_bins must be positive");
  if (fractions.empty()) throw ConfigError("fractions must not be empty");
  for (double f : fractions) {
    if (!(f > 0.0 && f <= 1.0)) throw ConfigError(fmt::format("fraction {} outside (0, 1]", f));
  }
  BaseModelConfig m = model;
  m.vocab_size = 2;
  m.n_labels = 1;
  m.validate();
}

RunConfig RunConfig::parse(std::string_view text) {
  RunConfig c;
  std::set<std::string, std::less<>> seen;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    const auto end = std::min(text.find('\n', start), text.size());
    std::string_view line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError(fmt::format("line {}: expected 'key = value'", line_no));
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    auto it = std::find_if(fields().begin(), fields().end(), [&](const Field& f) { return key == f.key; });
    if (it == fields().end()) throw ConfigError(fmt::format("line {}: unknown key '{}'", line_no, key));
    if (!seen.emplace(key).second) throw ConfigError(fmt::format("line {}: duplicate key '{}'", line_no, key));
    try {
      it->set(c, value);
    } catch (const ConfigError& e) {
      throw ConfigError(fmt::format("line {}: {}", line_no, e.what()));
    }
  }
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::uint64_t stage_seed(std::uint64_t root, Stage stage) {
  if (stage == Stage::kCorpus) return root;
  return splitmix64(root ^ (0xD1B54A32D192ED03ULL * static_cast<std::uint64_t>(stage)));
}

CorpusConfig corpus_config(const RunConfig& run) {
  CorpusConfig c = run.corpus;
  c.seed = stage_seed(run.seed, Stage::kCorpus);
  return c;
}

TrainConfig train_config(const RunConfig& run) {
  TrainConfig t = run.train;
  t.seed = stage_seed(run.seed, Stage::kTrain);
  return t;
}

TrainConfig reranker_train_config(const RunConfig& run) {
  TrainConfig t = run.reranker_train;
  t.seed = stage_seed(run.seed, Stage::kRerankerTrain);
  t.decision_threshold = run.train.decision_threshold;
  t.record_timing = run.train.record_timing;
  return t;
}

BaseModelConfig model_config(const RunConfig& run, std::size_t vocab_size, std::size_t n_labels) {
  BaseModelConfig m = run.model;
  m.vocab_size = vocab_size;
  m.n_labels = n_labels;
  m.seed = stage_seed(run.seed, Stage::kModelInit);
  return m;
}

RerankerConfig reranker_config(const RunConfig& run, const BaseModel& base, const ModalityVocab& modalities,
                               std::size_t n_labels) {
  RerankerConfig r;
  r.n_labels = n_labels;
  r.hidden_dim = base.config().conv_channels;
  r.model_dim = run.reranker_dim;
  r.heads = run.reranker_heads;
  for (std::size_t k = 0; k < ModalityVocab::kKinds; ++k) {
    r.modality_sizes[k] = modalities.size(static_cast<ModalityVocab::Kind>(k));
  }
  r.seed = stage_seed(run.seed, Stage::kRerankerInit);
  return r;
}

}  // namespace opd
