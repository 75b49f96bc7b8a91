#include <cmath>
#include <random>

#include "opd/errors.hpp"
#include "opd/model.hpp"
#include "opd/numerics/checkpoint.hpp"

namespace opd {
namespace {

Tensor uniform(Shape shape, double limit, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

double glorot(std::size_t fan_in, std::size_t fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

std::size_t meta_size(const CheckpointMeta& meta, const std::string& key) {
  auto it = meta.find(key);
  if (it == meta.end()) throw ValidationError("checkpoint lacks '" + key + "'");
  try {
    return static_cast<std::size_t>(std::stoull(it->second));
  } catch (const std::exception&) {
    throw ValidationError("checkpoint field '" + key + "' is not a count: " + it->second);
  }
}

void expect_meta(const CheckpointMeta& meta, const std::string& key, const std::string& want) {
  auto it = meta.find(key);
  if (it == meta.end()) throw ValidationError("checkpoint lacks '" + key + "'");
  if (it->second != want) {
    throw ValidationError("checkpoint " + key + " mismatch: file has " + it->second + ", expected " + want);
  }
}

}  // namespace

std::string_view to_string(Architecture arch) { return arch == Architecture::kCaml ? "caml" : "laat"; }

Architecture parse_architecture(std::string_view name) {
  if (name == "caml") return Architecture::kCaml;
  if (name == "laat") return Architecture::kLaat;
  throw ConfigError("unknown architecture '" + std::string(name) + "' (expected caml or laat)");
}

void BaseModelConfig::validate() const {
  if (vocab_size < 2) throw ConfigError("vocab_size must cover the reserved ids");
  if (n_labels == 0) throw ConfigError("n_labels must be positive");
  if (embed_dim == 0 || conv_channels == 0 || attention_dim == 0) throw ConfigError("model dimensions must be positive");
  if (kernel_width % 2 == 0) throw ConfigError("kernel_width must be odd, got " + std::to_string(kernel_width));
  if (!std::isfinite(initial_output_bias)) throw ConfigError("initial_output_bias must be finite");
}

BaseModel::BaseModel(BaseModelConfig config) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(config_.seed);
  const auto V = config_.vocab_size, de = config_.embed_dim, dc = config_.conv_channels;
  const auto w = config_.kernel_width, N = config_.n_labels, da = config_.attention_dim;

  Tensor embedding = uniform({V, de}, 0.1, rng);
  std::fill_n(embedding.row(Vocabulary::kPad).data(), de, 0.0);
  slot_[kEmbedding] = params_.add("embedding", std::move(embedding));
  slot_[kKernels] = params_.add("conv.kernels", uniform({dc, w, de}, glorot(w * de, dc), rng));
  slot_[kConvBias] = params_.add("conv.bias", Tensor({dc}));
  if (config_.architecture == Architecture::kCaml) {
    slot_[kAttnU] = params_.add("attention.u", uniform({N, dc}, glorot(dc, 1), rng));
  } else {
    slot_[kAttnW] = params_.add("attention.w", uniform({da, dc}, glorot(dc, da), rng));
    slot_[kAttnU] = params_.add("attention.u", uniform({N, da}, glorot(da, 1), rng));
  }
  slot_[kOutWeight] = params_.add("output.weight", uniform({N, dc}, glorot(dc, 1), rng));
  slot_[kOutBias] = params_.add("output.bias", Tensor({N}, config_.initial_output_bias));
  params_.set_requires_grad(true);
}

Var BaseModel::bind(Tape& tape, Slot slot, bool trainable) const {
  return tape.param(params_[slot_[slot]], trainable);
}

EncodedDocument BaseModel::encode_document(Tape& tape, std::span<const std::int32_t> tokens, bool trainable) const {
  if (tokens.empty()) throw ContractError("encode_document: empty token sequence");
  EncodedDocument doc;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    if (tokens[t] < 0 || static_cast<std::size_t>(tokens[t]) >= config_.vocab_size) {
      throw ContractError("token id " + std::to_string(tokens[t]) + " outside vocabulary of " +
                          std::to_string(config_.vocab_size));
    }
    if (tokens[t] != Vocabulary::kPad) doc.valid_positions.push_back(static_cast<std::int32_t>(t));
  }
  const Var embedded = gather_rows(bind(tape, kEmbedding, trainable), tokens);
  doc.hidden = tanh(conv1d(embedded, bind(tape, kKernels, trainable), bind(tape, kConvBias, trainable)));
  return doc;
}

Var BaseModel::label_attention(Tape& tape, Var hidden_rows, bool trainable) const {
  Var scores;  // [N x T]
  if (config_.architecture == Architecture::kCaml) {
    scores = matmul_bt(bind(tape, kAttnU, trainable), hidden_rows);
  } else {
    const Var z = tanh(matmul_bt(hidden_rows, bind(tape, kAttnW, trainable)));  // [T x d_a]
    scores = matmul_bt(bind(tape, kAttnU, trainable), z);
  }
  return matmul(softmax(scores, 1), hidden_rows);
}

Var BaseModel::classify(Tape& tape, Var label_repr, bool trainable) const {
  const Var logits = add(rowwise_dot(label_repr, bind(tape, kOutWeight, trainable)), bind(tape, kOutBias, trainable));
  return sigmoid(logits);
}

BaseOutput BaseModel::forward(Tape& tape, std::span<const std::int32_t> tokens, bool trainable) const {
  EncodedDocument doc = encode_document(tape, tokens, trainable);
  if (doc.valid_positions.empty()) throw EmptySourceError("label attention: every token position is padding");
  BaseOutput out;
  out.hidden_rows = doc.valid_positions.size() == tokens.size() ? doc.hidden
                                                                  : gather_rows(doc.hidden, doc.valid_positions);
  out.probs = classify(tape, label_attention(tape, out.hidden_rows, trainable), trainable);
  return out;
}

std::vector<double> BaseModel::predict(std::span<const std::int32_t> tokens) const {
  Tape tape;
  const Var p = forward(tape, tokens, false).probs;
  return {p.value().values().begin(), p.value().values().end()};
}

std::optional<Tensor> BaseModel::hidden_rows(std::span<const std::int32_t> tokens) const {
  Tape tape;
  EncodedDocument doc = encode_document(tape, tokens, false);
  if (doc.valid_positions.empty()) return std::nullopt;
  return gather_rows(doc.hidden, doc.valid_positions).value();
}

void BaseModel::save(const std::filesystem::path& path, const Vocabulary& vocab, const LabelSpace& labels) const {
  if (vocab.size() != config_.vocab_size || labels.size() != config_.n_labels) {
    throw ContractError("model dimensions do not match the given vocabulary / label space");
  }
  CheckpointMeta meta{
      {"architecture", std::string(to_string(config_.architecture))},
      {"n_labels", std::to_string(config_.n_labels)},
      {"vocab_size", std::to_string(config_.vocab_size)},
      {"embed_dim", std::to_string(config_.embed_dim)},
      {"conv_channels", std::to_string(config_.conv_channels)},
      {"kernel_width", std::to_string(config_.kernel_width)},
      {"attention_dim", std::to_string(config_.attention_dim)},
      {"vocab_hash", vocab.hash()},
      {"labels_hash", labels.hash()},
  };
  save_checkpoint(path, params_, meta);
}

BaseModel BaseModel::load(const std::filesystem::path& path, const Vocabulary& vocab, const LabelSpace& labels) {
  Checkpoint ck = load_checkpoint(path);
  expect_meta(ck.meta, "vocab_hash", vocab.hash());
  expect_meta(ck.meta, "labels_hash", labels.hash());
  BaseModelConfig cfg;
  auto arch = ck.meta.find("architecture");
  if (arch == ck.meta.end()) throw ValidationError("checkpoint lacks 'architecture'");
  cfg.architecture = parse_architecture(arch->second);
  cfg.n_labels = meta_size(ck.meta, "n_labels");
  cfg.vocab_size = meta_size(ck.meta, "vocab_size");
  cfg.embed_dim = meta_size(ck.meta, "embed_dim");
  cfg.conv_channels = meta_size(ck.meta, "conv_channels");
  cfg.kernel_width = meta_size(ck.meta, "kernel_width");
  cfg.attention_dim = meta_size(ck.meta, "attention_dim");
  if (cfg.n_labels != labels.size() || cfg.vocab_size != vocab.size()) {
    throw ValidationError("checkpoint dimensions disagree with vocabulary / label space");
  }
  BaseModel model(cfg);
  assign_parameters(model.params_, ck.params);
  return model;
}

std::vector<std::uint32_t> predict_set(std::span<const double> probs, double threshold) {
  std::vector<std::uint32_t> out;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] > threshold) out.push_back(static_cast<std::uint32_t>(i));
  }
  return out;
}

}  // namespace opd
