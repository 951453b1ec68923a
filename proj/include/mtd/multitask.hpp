#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "mtd/corpus.hpp"
#include "mtd/encoder.hpp"
#include "mtd/heads.hpp"
#include "mtd/ops.hpp"

namespace mtd {

enum class HeadKind { binary, multiclass };

// One task of the shared-encoder model. The binary head separates human from
// machine text; a multiclass head predicts the sub-source of samples from one
// source and ignores every other sample.
struct HeadSpec {
  std::string name;
  HeadKind kind = HeadKind::binary;
  std::string source;
  std::vector<std::string> class_names;

  std::size_t num_classes() const { return class_names.size(); }

  static HeadSpec binary() { return {"binary", HeadKind::binary, "", {"human", "machine"}}; }

  static HeadSpec multiclass(const std::string& source, std::vector<std::string> class_names) {
    return {source, HeadKind::multiclass, source, std::move(class_names)};
  }

  // HC3/M4GT use their fixed sub-source lists; other sources take the sorted
  // sub-sources seen in `corpus`.
  static HeadSpec for_source(const Source& source, const Corpus& corpus) {
    std::vector<std::string> names = canonical_sub_sources(source);
    if (names.empty()) {
      std::set<std::string> seen;
      for (const auto& s : corpus.samples) {
        if (s.source == source) seen.insert(s.sub_source);
      }
      names.assign(seen.begin(), seen.end());
    }
    if (names.size() < 2) {
      throw std::invalid_argument("HeadSpec: source '" + source.name() + "' needs at least 2 sub-sources for a head");
    }
    return multiclass(source.name(), std::move(names));
  }

  // Class index of `s` for this head, or -1 when the head does not label it.
  int target_for(const LabeledSample& s) const {
    if (kind == HeadKind::binary) return to_int(s.label);
    if (s.source.name() != source) return -1;
    auto it = std::find(class_names.begin(), class_names.end(), s.sub_source);
    return it == class_names.end() ? -1 : static_cast<int>(it - class_names.begin());
  }

  nlohmann::json to_json() const {
    return {{"name", name},
            {"kind", kind == HeadKind::binary ? "binary" : "multiclass"},
            {"source", source},
            {"class_names", class_names}};
  }

  static HeadSpec from_json(const nlohmann::json& j) {
    HeadSpec h;
    h.name = j.at("name").get<std::string>();
    h.kind = j.at("kind").get<std::string>() == "binary" ? HeadKind::binary : HeadKind::multiclass;
    h.source = j.at("source").get<std::string>();
    h.class_names = j.at("class_names").get<std::vector<std::string>>();
    return h;
  }

  friend bool operator==(const HeadSpec&, const HeadSpec&) = default;
};

struct ModelConfig {
  EncoderConfig encoder;
  std::vector<HeadSpec> heads{HeadSpec::binary()};
  std::size_t head_hidden_layers = 2;
  std::optional<std::size_t> head_hidden_dim;  // defaults to d_model
  double head_dropout = 0.5;
  std::uint64_t head_seed = 0;
  std::map<std::string, double> loss_weights;  // missing heads weigh 1

  void validate() const {
    std::set<std::string> names;
    std::size_t binaries = 0;
    for (const auto& h : heads) {
      if (!names.insert(h.name).second) throw std::invalid_argument("ModelConfig: duplicate head name '" + h.name + "'");
      if (h.kind == HeadKind::binary) ++binaries;
      if (h.num_classes() < 2) throw std::invalid_argument("ModelConfig: head '" + h.name + "' has < 2 classes");
    }
    if (binaries != 1) throw std::invalid_argument("ModelConfig: exactly one binary head is required");
    for (const auto& [name, _] : loss_weights) {
      if (!names.contains(name)) throw std::invalid_argument("ModelConfig: loss weight for unknown head '" + name + "'");
    }
  }

  double loss_weight(const std::string& head) const {
    auto it = loss_weights.find(head);
    return it == loss_weights.end() ? 1.0 : it->second;
  }

  CchConfig head_config(const HeadSpec& h) const {
    CchConfig c;
    c.input_dim = encoder.d_model;
    c.hidden_dim = head_hidden_dim.value_or(encoder.d_model);
    c.num_classes = h.num_classes();
    c.dropout_p = head_dropout;
    c.n_hidden_layers = head_hidden_layers;
    // Depends only on the head's own name so adding or removing other heads
    // leaves its initialization unchanged.
    c.seed = mix_seed(head_seed, hash_string(h.name));
    return c;
  }
};

struct TaskBatch {
  TokenBatch tokens;
  std::vector<std::vector<int>> targets;  // per head, -1 = unlabeled
};

class MtlModel;

struct MtlLoss {
  Tensor total;
  std::vector<double> per_head;
};

// Shared encoder with one classification head per task.
class MtlModel {
 public:
  MtlModel(Vocab vocab, ModelConfig cfg) : vocab_(std::move(vocab)), cfg_(std::move(cfg)) {
    cfg_.encoder.vocab_size = vocab_.size();
    cfg_.validate();
    encoder_.emplace(cfg_.encoder);
    for (const auto& h : cfg_.heads) heads_.emplace_back(h.name, cfg_.head_config(h));
  }

  MtlModel(const MtlModel&) = delete;
  MtlModel& operator=(const MtlModel&) = delete;
  MtlModel(MtlModel&&) = default;
  MtlModel& operator=(MtlModel&&) = default;

  const Vocab& vocab() const { return vocab_; }
  const ModelConfig& config() const { return cfg_; }
  EncoderModel& encoder() { return *encoder_; }
  const EncoderModel& encoder() const { return *encoder_; }
  std::size_t head_count() const { return heads_.size(); }
  const HeadSpec& head_spec(std::size_t i) const { return cfg_.heads.at(i); }
  CchHead& head(std::size_t i) { return heads_.at(i); }
  const CchHead& head(std::size_t i) const { return heads_.at(i); }

  std::optional<std::size_t> head_index(std::string_view name) const {
    for (std::size_t i = 0; i < cfg_.heads.size(); ++i) {
      if (cfg_.heads[i].name == name) return i;
    }
    return std::nullopt;
  }

  std::size_t binary_index() const {
    for (std::size_t i = 0; i < cfg_.heads.size(); ++i) {
      if (cfg_.heads[i].kind == HeadKind::binary) return i;
    }
    throw std::logic_error("model without binary head");
  }

  std::vector<std::string> head_names() const {
    std::vector<std::string> out;
    for (const auto& h : cfg_.heads) out.push_back(h.name);
    return out;
  }

  TokenBatch tokenize(std::span<const std::string> texts) const {
    return tokenize_batch(texts, vocab_, cfg_.encoder.max_len);
  }

  void reseed_dropout(std::uint64_t seed) { dropout_rng_.reseed(seed); }

  Tensor encode(const TokenBatch& batch, bool train_mode) { return encoder_->encode(batch, train_mode, dropout_rng_); }

  // Per-head logits from a single encoder pass.
  std::vector<Tensor> forward(const TokenBatch& batch, bool train_mode) {
    return run_heads(encode(batch, train_mode), train_mode, dropout_rng_);
  }

  // Eval-mode pass that touches no mutable state.
  Tensor encode_eval(const TokenBatch& batch) const {
    Rng unused;
    return encoder_->encode(batch, false, unused);
  }

  std::vector<Tensor> forward_eval(const TokenBatch& batch) const {
    Rng unused;
    return run_heads(encode_eval(batch), false, unused);
  }

  std::vector<std::pair<std::string, Tensor>> encoder_parameters() const {
    return {encoder_->params().entries().begin(), encoder_->params().entries().end()};
  }

  std::vector<std::pair<std::string, Tensor>> head_parameters() const {
    std::vector<std::pair<std::string, Tensor>> out;
    for (const auto& h : heads_) out.insert(out.end(), h.params().entries().begin(), h.params().entries().end());
    return out;
  }

  // Encoder first, then heads in configuration order.
  std::vector<std::pair<std::string, Tensor>> named_parameters() const {
    auto out = encoder_parameters();
    auto heads = head_parameters();
    out.insert(out.end(), heads.begin(), heads.end());
    return out;
  }

  void zero_grad() {
    encoder_->params().zero_grad();
    for (auto& h : heads_) h.params().zero_grad();
  }

 private:
  std::vector<Tensor> run_heads(const Tensor& cls, bool train_mode, Rng& rng) const {
    std::vector<Tensor> out;
    out.reserve(heads_.size());
    for (const auto& h : heads_) out.push_back(h.forward(cls, train_mode, rng));
    return out;
  }

  Vocab vocab_;
  ModelConfig cfg_;
  std::optional<EncoderModel> encoder_;
  std::vector<CchHead> heads_;
  Rng dropout_rng_;
};

inline TaskBatch make_task_batch(const MtlModel& model, std::span<const LabeledSample> samples,
                                 std::span<const std::size_t> indices) {
  TaskBatch b;
  std::vector<TokenizedText> rows;
  rows.reserve(indices.size());
  for (std::size_t i : indices) rows.push_back(tokenize(samples[i].text, model.vocab(), model.config().encoder.max_len));
  b.tokens = make_token_batch(rows);
  b.targets.resize(model.head_count());
  for (std::size_t h = 0; h < model.head_count(); ++h) {
    b.targets[h].reserve(indices.size());
    for (std::size_t i : indices) b.targets[h].push_back(model.head_spec(h).target_for(samples[i]));
  }
  return b;
}

inline TaskBatch make_task_batch(const MtlModel& model, std::span<const LabeledSample> samples) {
  std::vector<std::size_t> all(samples.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return make_task_batch(model, samples, all);
}

// Weighted sum over heads of the mean cross-entropy of each head's labeled
// samples; a head with no labeled sample in the batch contributes 0.
inline MtlLoss mtl_loss(const MtlModel& model, std::span<const Tensor> logits, const TaskBatch& batch) {
  if (logits.size() != model.head_count() || batch.targets.size() != model.head_count()) {
    throw std::invalid_argument("mtl_loss: head count mismatch");
  }
  std::vector<Tensor> terms;
  std::vector<double> weights;
  MtlLoss out;
  for (std::size_t h = 0; h < logits.size(); ++h) {
    Tensor loss = cross_entropy(logits[h], batch.targets[h]);
    out.per_head.push_back(loss.item());
    terms.push_back(loss);
    weights.push_back(model.config().loss_weight(model.head_spec(h).name));
  }
  out.total = weighted_sum(terms, weights);
  return out;
}

struct DecisionRule {
  double threshold = 0.92;

  void validate() const {
    if (!(threshold > 0.0 && threshold < 1.0)) throw std::invalid_argument("DecisionRule: threshold must be in (0, 1)");
  }

  // Ties go to machine.
  Label decide(double p_machine) const { return p_machine >= threshold ? Label::machine : Label::human; }
};

struct Prediction {
  Label label = Label::human;
  double p_machine = 0.0;
};

// Machine-class probability from the binary head, batched, eval mode.
inline std::vector<double> machine_probabilities(const MtlModel& model, std::span<const std::string> texts,
                                                 std::size_t batch_size = 64) {
  NoGradGuard no_grad;
  std::vector<double> out;
  out.reserve(texts.size());
  const std::size_t bin = model.binary_index();
  for (std::size_t start = 0; start < texts.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, texts.size() - start);
    const TokenBatch tokens = model.tokenize(texts.subspan(start, n));
    const Tensor probs = softmax(model.forward_eval(tokens)[bin], 1);
    for (std::size_t i = 0; i < n; ++i) out.push_back(probs.data()[i * 2 + 1]);
  }
  return out;
}

// Only the binary head decides; auxiliary heads are never consulted.
inline std::vector<Prediction> predict(const MtlModel& model, std::span<const std::string> texts, DecisionRule rule) {
  rule.validate();
  std::vector<Prediction> out;
  for (double p : machine_probabilities(model, texts)) out.push_back({rule.decide(p), p});
  return out;
}

inline void write_predictions_jsonl(const Corpus& corpus, std::span<const Prediction> preds, std::ostream& out) {
  if (preds.size() != corpus.size()) throw std::invalid_argument("write_predictions_jsonl: size mismatch");
  for (std::size_t i = 0; i < preds.size(); ++i) {
    nlohmann::json j{{"id", corpus.samples[i].id}, {"label", to_int(preds[i].label)}, {"p_machine", preds[i].p_machine}};
    out << j.dump() << '\n';
  }
}

}  // namespace mtd
