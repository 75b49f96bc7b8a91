#include <cmath>
#include <random>

#include "opd/errors.hpp"
#include "opd/model.hpp"
#include "opd/numerics/checkpoint.hpp"

namespace opd {
namespace {

constexpr std::array<const char*, ModalityVocab::kKinds> kModalityParams = {
    "modality.doctor", "modality.dept", "modality.med", "modality.proc"};

Tensor uniform(Shape shape, double limit, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

double glorot(std::size_t fan_in, std::size_t fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

std::vector<std::size_t> add_attention(ParameterStore& store, const std::string& prefix, std::size_t heads,
                                       std::size_t d_query, std::size_t d_source, std::size_t d_out,
                                       std::mt19937_64& rng) {
  const std::size_t dh = d_out / heads;
  std::vector<std::size_t> slots;
  for (const char* role : {"q", "k", "v"}) {
    const std::size_t d_in = role[0] == 'q' ? d_query : d_source;
    for (std::size_t h = 0; h < heads; ++h) {
      slots.push_back(store.add(prefix + "." + role + std::to_string(h), uniform({d_in, dh}, glorot(d_in, dh), rng)));
    }
  }
  slots.push_back(store.add(prefix + ".o", uniform({heads * dh, d_out}, glorot(heads * dh, d_out), rng)));
  return slots;
}

}  // namespace

void RerankerConfig::validate() const {
  if (n_labels == 0 || hidden_dim == 0 || model_dim == 0) throw ConfigError("reranker dimensions must be positive");
  if (heads == 0 || model_dim % heads != 0) {
    throw ConfigError("reranker model_dim " + std::to_string(model_dim) + " is not divisible by " +
                      std::to_string(heads) + " heads");
  }
}

Reranker::Reranker(RerankerConfig config) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(config_.seed);
  const auto N = config_.n_labels, d = config_.model_dim;
  label_embedding_ = params_.add("label_embedding", uniform({N, d}, glorot(N, d), rng));
  for (std::size_t k = 0; k < ModalityVocab::kKinds; ++k) {
    Tensor table = uniform({config_.modality_sizes[k] + 1, d}, 0.1, rng);
    std::fill_n(table.row(0).data(), d, 0.0);  // unknown entries
    modality_[k] = params_.add(kModalityParams[k], std::move(table));
  }
  attn_note_ = add_attention(params_, "attn_note", config_.heads, d, config_.hidden_dim, d, rng);
  attn_aux_ = add_attention(params_, "attn_aux", config_.heads, d, config_.hidden_dim, d, rng);
  proj_weight_ = params_.add("proj.weight", Tensor({N, d}));
  proj_bias_ = params_.add("proj.bias", Tensor({N}));
  params_.set_requires_grad(true);
}

AttentionWeights Reranker::bind_attention(Tape& tape, const std::vector<std::size_t>& slots, bool trainable) const {
  const std::size_t h = config_.heads;
  AttentionWeights w;
  for (std::size_t i = 0; i < h; ++i) {
    w.query.push_back(tape.param(params_[slots[i]], trainable));
    w.key.push_back(tape.param(params_[slots[h + i]], trainable));
    w.value.push_back(tape.param(params_[slots[2 * h + i]], trainable));
  }
  w.output = tape.param(params_[slots[3 * h]], trainable);
  return w;
}

Var Reranker::embed_modalities(Tape& tape, const RerankerInput& in, bool trainable) const {
  auto table = [&](ModalityVocab::Kind k) { return tape.param(params_[modality_[k]], trainable); };
  const std::int32_t doctor[] = {in.doctor};
  const std::int32_t dept[] = {in.dept};
  Var total = add(mean_rows(gather_rows(table(ModalityVocab::kDoctor), doctor)),
                  mean_rows(gather_rows(table(ModalityVocab::kDept), dept)));
  if (!in.meds.empty()) total = add(total, mean_rows(gather_rows(table(ModalityVocab::kMedication), in.meds)));
  if (!in.procs.empty()) total = add(total, mean_rows(gather_rows(table(ModalityVocab::kProcedure), in.procs)));
  return total;
}

RerankerOutput Reranker::forward(Tape& tape, const RerankerInput& in, bool trainable) const {
  const auto N = config_.n_labels;
  if (in.base_probs.size() != N) {
    throw DimensionError("reranker expects " + std::to_string(N) + " base probabilities, got " +
                         to_string(in.base_probs.shape()));
  }
  const Var labels = add_row(tape.param(params_[label_embedding_], trainable), embed_modalities(tape, in, trainable));
  const Var note = tape.constant_ref(in.note_hidden);
  Var fused = multi_head_attention(labels, note, note, bind_attention(tape, attn_note_, trainable));
  if (in.aux_hidden) {
    const Var aux = tape.constant_ref(*in.aux_hidden);
    fused = add(fused, multi_head_attention(labels, aux, aux, bind_attention(tape, attn_aux_, trainable)));
  }
  const Var delta = add(rowwise_dot(fused, tape.param(params_[proj_weight_], trainable)),
                        tape.param(params_[proj_bias_], trainable));
  RerankerOutput out;
  out.scores = add(delta, tape.constant_ref(in.base_probs));
  out.probs = clamp(out.scores, 0.0, 1.0);
  return out;
}

std::vector<double> Reranker::predict_scores(const RerankerInput& in) const {
  Tape tape;
  const Var s = forward(tape, in, false).scores;
  return {s.value().values().begin(), s.value().values().end()};
}

RerankerInput make_reranker_input(const BaseModel& base, const Example& example) {
  RerankerInput in;
  Tape tape;
  const BaseOutput out = base.forward(tape, example.tokens, false);
  in.base_probs = out.probs.value();
  in.note_hidden = out.hidden_rows.value();
  in.aux_hidden = base.hidden_rows(example.aux_tokens);
  in.doctor = example.doctor;
  in.dept = example.dept;
  in.meds = example.meds;
  in.procs = example.procs;
  return in;
}

void Reranker::save(const std::filesystem::path& path, const LabelSpace& labels,
                    const ModalityVocab& modalities) const {
  CheckpointMeta meta{
      {"kind", "reranker"},
      {"n_labels", std::to_string(config_.n_labels)},
      {"hidden_dim", std::to_string(config_.hidden_dim)},
      {"model_dim", std::to_string(config_.model_dim)},
      {"heads", std::to_string(config_.heads)},
      {"labels_hash", labels.hash()},
      {"modality_hash", modalities.hash()},
  };
  for (std::size_t k = 0; k < ModalityVocab::kKinds; ++k) {
    meta[std::string(kModalityParams[k]) + ".size"] = std::to_string(config_.modality_sizes[k]);
  }
  save_checkpoint(path, params_, meta);
}

Reranker Reranker::load(const std::filesystem::path& path, const LabelSpace& labels,
                        const ModalityVocab& modalities) {
  Checkpoint ck = load_checkpoint(path);
  auto field = [&](const std::string& key) -> const std::string& {
    auto it = ck.meta.find(key);
    if (it == ck.meta.end()) throw ValidationError("reranker checkpoint lacks '" + key + "'");
    return it->second;
  };
  auto count = [&](const std::string& key) {
    try {
      return static_cast<std::size_t>(std::stoull(field(key)));
    } catch (const std::invalid_argument&) {
      throw ValidationError("reranker checkpoint field '" + key + "' is not a count");
    }
  };
  if (field("kind") != "reranker") throw ValidationError("not a reranker checkpoint");
  if (field("labels_hash") != labels.hash()) throw ValidationError("reranker checkpoint labels_hash mismatch");
  if (field("modality_hash") != modalities.hash()) throw ValidationError("reranker checkpoint modality_hash mismatch");
  RerankerConfig cfg;
  cfg.n_labels = count("n_labels");
  cfg.hidden_dim = count("hidden_dim");
  cfg.model_dim = count("model_dim");
  cfg.heads = count("heads");
  for (std::size_t k = 0; k < ModalityVocab::kKinds; ++k) {
    cfg.modality_sizes[k] = count(std::string(kModalityParams[k]) + ".size");
  }
  Reranker r(cfg);
  assign_parameters(r.params_, ck.params);
  return r;
}

}  // namespace opd
