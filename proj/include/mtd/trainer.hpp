#pragma once

#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "mtd/adamw.hpp"
#include "mtd/container.hpp"
#include "mtd/corpus.hpp"
#include "mtd/metrics.hpp"
#include "mtd/multitask.hpp"

namespace mtd {

// --- configuration -------------------------------------------------------

struct EarlyExit {
  std::size_t patience = 1;
  friend bool operator==(const EarlyExit&, const EarlyExit&) = default;
};

struct StageConfig {
  std::size_t epochs = 1;
  double learning_rate = 3e-4;
  std::size_t warmup_steps = 50;
  double weight_decay = 0.01;
  std::size_t batch_size = 32;
  bool freeze_encoder = true;
  std::optional<EarlyExit> early_exit;
  std::uint64_t seed = 0;

  // Heads only, encoder frozen.
  static StageConfig frozen_encoder_stage() { return {1, 3e-4, 50, 0.01, 32, true, std::nullopt, 0}; }
  // Every weight trainable, much lower rate.
  static StageConfig full_finetune_stage() { return {1, 3e-6, 75, 0.01, 16, false, std::nullopt, 0}; }

  void validate() const {
    if (!(learning_rate > 0.0)) throw std::invalid_argument("StageConfig: learning_rate must be > 0");
    if (batch_size < 1) throw std::invalid_argument("StageConfig: batch_size must be >= 1");
    if (epochs < 1) throw std::invalid_argument("StageConfig: epochs must be >= 1");
    if (weight_decay < 0.0) throw std::invalid_argument("StageConfig: weight_decay must be >= 0");
    if (early_exit && early_exit->patience < 1) throw std::invalid_argument("StageConfig: patience must be >= 1");
  }

  friend bool operator==(const StageConfig&, const StageConfig&) = default;
};

inline nlohmann::json to_json(const StageConfig& c) {
  nlohmann::json j{{"epochs", c.epochs},         {"learning_rate", c.learning_rate},
                   {"warmup_steps", c.warmup_steps}, {"weight_decay", c.weight_decay},
                   {"batch_size", c.batch_size},   {"freeze_encoder", c.freeze_encoder},
                   {"seed", c.seed}};
  j["early_exit_patience"] = c.early_exit ? nlohmann::json(c.early_exit->patience) : nlohmann::json(nullptr);
  return j;
}

inline nlohmann::json to_json(const EncoderConfig& c) {
  return {{"vocab_size", c.vocab_size}, {"d_model", c.d_model}, {"n_layers", c.n_layers}, {"n_heads", c.n_heads},
          {"d_ff", c.d_ff},             {"max_len", c.max_len}, {"dropout_p", c.dropout_p}, {"init_std", c.init_std},
          {"seed", c.seed}};
}

inline EncoderConfig encoder_config_from_json(const nlohmann::json& j) {
  EncoderConfig c;
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.d_model = j.at("d_model").get<std::size_t>();
  c.n_layers = j.at("n_layers").get<std::size_t>();
  c.n_heads = j.at("n_heads").get<std::size_t>();
  c.d_ff = j.at("d_ff").get<std::size_t>();
  c.max_len = j.at("max_len").get<std::size_t>();
  c.dropout_p = j.at("dropout_p").get<double>();
  c.init_std = j.at("init_std").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

inline nlohmann::json to_json(const ModelConfig& c) {
  nlohmann::json heads = nlohmann::json::array();
  for (const auto& h : c.heads) heads.push_back(h.to_json());
  return {{"encoder", to_json(c.encoder)},
          {"heads", heads},
          {"head_hidden_layers", c.head_hidden_layers},
          {"head_hidden_dim", c.head_hidden_dim ? nlohmann::json(*c.head_hidden_dim) : nlohmann::json(nullptr)},
          {"head_dropout", c.head_dropout},
          {"head_seed", c.head_seed},
          {"loss_weights", c.loss_weights}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.encoder = encoder_config_from_json(j.at("encoder"));
  c.heads.clear();
  for (const auto& h : j.at("heads")) c.heads.push_back(HeadSpec::from_json(h));
  c.head_hidden_layers = j.at("head_hidden_layers").get<std::size_t>();
  if (!j.at("head_hidden_dim").is_null()) c.head_hidden_dim = j.at("head_hidden_dim").get<std::size_t>();
  c.head_dropout = j.at("head_dropout").get<double>();
  c.head_seed = j.at("head_seed").get<std::uint64_t>();
  c.loss_weights = j.at("loss_weights").get<std::map<std::string, double>>();
  return c;
}

// --- training log --------------------------------------------------------

struct StepRecord {
  int stage = 0;
  std::size_t global_step = 0;
  double learning_rate = 0.0;
  double total_loss = 0.0;
  std::vector<double> head_losses;
};

struct EpochRecord {
  int stage = 0;
  std::size_t epoch = 0;
  double dev_macro_f1 = 0.0;
};

struct TrainLog {
  std::vector<std::string> head_names;
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;

  void write_csv(std::ostream& out) const {
    out << "stage,step,lr,total_loss";
    for (const auto& h : head_names) out << ',' << h;
    out << '\n' << std::setprecision(17);
    for (const auto& s : steps) {
      out << s.stage << ',' << s.global_step << ',' << s.learning_rate << ',' << s.total_loss;
      for (double l : s.head_losses) out << ',' << l;
      out << '\n';
    }
  }
};

// --- checkpoints ---------------------------------------------------------

struct Checkpoint {
  ModelConfig model;
  Vocab vocab;
  std::vector<NamedArray> params;
  DecisionRule rule;
  nlohmann::json metadata = nlohmann::json::object();
};

inline Checkpoint make_checkpoint(const MtlModel& model, DecisionRule rule = {},
                                  nlohmann::json metadata = nlohmann::json::object()) {
  Checkpoint c{model.config(), model.vocab(), {}, rule, std::move(metadata)};
  for (const auto& [name, t] : model.named_parameters()) {
    c.params.push_back({name, t.shape(), std::vector<double>(t.data().begin(), t.data().end())});
  }
  return c;
}

inline MtlModel restore_model(const Checkpoint& c) {
  MtlModel model(c.vocab, c.model);
  auto params = model.named_parameters();
  if (params.size() != c.params.size()) throw FormatError("checkpoint parameter count does not match its config");
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& [name, t] = params[i];
    const auto& saved = c.params[i];
    if (saved.name != name || saved.shape != t.shape()) {
      throw FormatError("checkpoint parameter '" + saved.name + "' does not match model parameter '" + name + "'");
    }
    std::copy(saved.data.begin(), saved.data.end(), t.data().begin());
  }
  return model;
}

inline Container to_container(const Checkpoint& c) {
  Container out;
  out.kind = ContainerKind::model;
  out.meta = {{"model", to_json(c.model)},
              {"vocab", c.vocab.tokens()},
              {"decision_threshold", c.rule.threshold},
              {"metadata", c.metadata}};
  out.arrays = c.params;
  return out;
}

inline Checkpoint checkpoint_from_container(const Container& in) {
  Checkpoint c;
  try {
    c.model = model_config_from_json(in.meta.at("model"));
    auto tokens = in.meta.at("vocab").get<std::vector<std::string>>();
    if (tokens.size() < Vocab::kReserved) throw FormatError("checkpoint vocab is missing reserved tokens");
    c.vocab = Vocab(std::vector<std::string>(tokens.begin() + Vocab::kReserved, tokens.end()));
    c.rule.threshold = in.meta.at("decision_threshold").get<double>();
    c.metadata = in.meta.at("metadata");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad checkpoint header: ") + e.what());
  }
  c.params = in.arrays;
  return c;
}

inline void save_checkpoint(const Checkpoint& c, const std::string& path) { save_container(to_container(c), path); }

inline Checkpoint load_checkpoint(const std::string& path) {
  return checkpoint_from_container(load_container(path, ContainerKind::model));
}

// --- evaluation ----------------------------------------------------------

inline EvalReport evaluate_model(const MtlModel& model, const Corpus& corpus, double threshold = 0.5) {
  const auto texts = corpus.texts();
  const auto probs = machine_probabilities(model, texts);
  return f1_report(apply_threshold(probs, threshold), corpus.labels());
}

// --- stages --------------------------------------------------------------

struct StageOutcome {
  std::size_t steps = 0;
  std::size_t epochs_run = 0;
  bool stopped_early = false;
  double last_dev_macro_f1 = std::numeric_limits<double>::quiet_NaN();
  std::size_t optimizer_states = 0;  // parameter tensors holding AdamW moments
};

// One training stage. With freeze_encoder the encoder takes no gradient and
// gets no optimizer state. `global_step` continues across stages for the log;
// the warmup schedule restarts at every stage.
inline StageOutcome run_stage(MtlModel& model, const Corpus& train, const Corpus& dev, const StageConfig& cfg,
                              TrainLog& log, int stage, std::size_t& global_step) {
  cfg.validate();
  if (train.empty()) throw std::invalid_argument("run_stage: empty training corpus");
  if (log.head_names.empty()) log.head_names = model.head_names();

  for (auto& [_, t] : model.encoder_parameters()) {
    Tensor handle = t;
    handle.set_requires_grad(!cfg.freeze_encoder);
  }
  AdamW optimizer({cfg.learning_rate, cfg.weight_decay, cfg.warmup_steps},
                  cfg.freeze_encoder ? model.head_parameters() : model.named_parameters());
  model.reseed_dropout(mix_seed(cfg.seed, 0xD5));
  Rng shuffler(mix_seed(cfg.seed, 0x5A));

  StageOutcome outcome;
  outcome.optimizer_states = optimizer.state_count();
  double best = -1.0;
  std::size_t since_best = 0;
  std::vector<std::size_t> order(train.size());
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffler.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, order.size() - start);
      const TaskBatch batch = make_task_batch(model, train.samples, std::span(order).subspan(start, n));
      model.zero_grad();
      const auto logits = model.forward(batch.tokens, true);
      const MtlLoss loss = mtl_loss(model, logits, batch);
      loss.total.backward();
      const double lr = optimizer.step(outcome.steps);
      log.steps.push_back({stage, global_step, lr, loss.total.item(), loss.per_head});
      ++global_step;
      ++outcome.steps;
    }
    ++outcome.epochs_run;
    if (!dev.empty()) {
      outcome.last_dev_macro_f1 = evaluate_model(model, dev, 0.5).macro_f1;
      log.epochs.push_back({stage, epoch, outcome.last_dev_macro_f1});
      if (cfg.early_exit) {
        if (outcome.last_dev_macro_f1 > best) {
          best = outcome.last_dev_macro_f1;
          since_best = 0;
        } else if (++since_best >= cfg.early_exit->patience) {
          outcome.stopped_early = true;
          break;
        }
      }
    }
  }
  for (auto& [_, t] : model.encoder_parameters()) {
    Tensor handle = t;
    handle.set_requires_grad(true);
  }
  model.zero_grad();
  return outcome;
}

inline nlohmann::json stage_metadata(int stage, std::size_t global_step, const StageConfig& s1,
                                     const std::optional<StageConfig>& s2) {
  nlohmann::json j{{"stage", stage}, {"global_step", global_step}, {"stage1", to_json(s1)}};
  if (s2) j["stage2"] = to_json(*s2);
  return j;
}

struct TwoStageResult {
  Checkpoint stage1;
  Checkpoint stage2;
  TrainLog log;
};

inline MtlModel init_model(const Corpus& train, const ModelConfig& cfg, std::size_t vocab_max_size) {
  return MtlModel(build_vocab(train, vocab_max_size), cfg);
}

// Stage 2 from a stage-1 checkpoint, e.g. one reloaded from disk.
inline Checkpoint continue_from_stage1(const Checkpoint& stage1, const Corpus& train, const Corpus& dev,
                                       const StageConfig& s2, TrainLog& log) {
  MtlModel model = restore_model(stage1);
  std::size_t global_step = stage1.metadata.value("global_step", std::size_t{0});
  run_stage(model, train, dev, s2, log, 2, global_step);
  const auto s1 = stage1.metadata.contains("stage1") ? stage1.metadata.at("stage1") : nlohmann::json(nullptr);
  nlohmann::json meta{{"stage", 2}, {"global_step", global_step}, {"stage1", s1}, {"stage2", to_json(s2)}};
  return make_checkpoint(model, stage1.rule, meta);
}

// Frozen-encoder stage, then full fine-tune; a checkpoint after each.
inline TwoStageResult two_stage_train(const Corpus& train, const Corpus& dev, const ModelConfig& cfg,
                                      const StageConfig& s1, const StageConfig& s2, std::size_t vocab_max_size = 30000,
                                      DecisionRule rule = {}) {
  rule.validate();
  MtlModel model = init_model(train, cfg, vocab_max_size);
  TwoStageResult out;
  std::size_t global_step = 0;
  run_stage(model, train, dev, s1, out.log, 1, global_step);
  out.stage1 = make_checkpoint(model, rule, stage_metadata(1, global_step, s1, std::nullopt));
  run_stage(model, train, dev, s2, out.log, 2, global_step);
  out.stage2 = make_checkpoint(model, rule, stage_metadata(2, global_step, s1, s2));
  return out;
}

}  // namespace mtd
