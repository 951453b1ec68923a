#pragma once

// Run configuration for the command-line tool. Every section is optional in
// the file; missing keys take the defaults below, unknown keys are errors.

#include <algorithm>
#include <cstdio>
#include <initializer_list>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "mtd/baseline.hpp"
#include "mtd/corpus.hpp"
#include "mtd/multitask.hpp"
#include "mtd/trainer.hpp"

namespace mtd {

inline constexpr int kConfigSchemaVersion = 1;

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void check_keys(const nlohmann::json& j, std::initializer_list<std::string_view> allowed,
                       const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end()) {
      throw ConfigError(where + ": unknown key '" + it.key() + "'");
    }
  }
}

template <class T>
void read(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key) && !j.at(key).is_null()) out = j.at(key).get<T>();
}

template <class T>
void read(const nlohmann::json& j, const char* key, std::optional<T>& out) {
  if (!j.contains(key)) return;
  if (j.at(key).is_null()) {
    out.reset();
  } else {
    out = j.at(key).get<T>();
  }
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace detail

// --- sections ------------------------------------------------------------

struct DataConfig {
  std::optional<std::string> train_path;  // JSONL; when absent the corpus is synthesized
  std::optional<std::string> dev_path;
  std::optional<std::string> test_path;
  SynthSpec synth;
  double dev_fraction = 0.2;
  double test_fraction = 0.0;  // 0 means no test split
  std::uint64_t split_seed = 0;

  void validate() const {
    if (!(dev_fraction > 0.0 && dev_fraction < 1.0)) throw ConfigError("data: dev_fraction must be in (0, 1)");
    if (!(test_fraction >= 0.0 && test_fraction + dev_fraction < 1.0)) {
      throw ConfigError("data: test_fraction must be >= 0 and leave room for training data");
    }
    if (!train_path) synth.validate();
  }
};

struct ModelSection {
  std::size_t d_model = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t d_ff = 128;
  std::size_t max_len = 64;
  double dropout_p = 0.1;
  double init_std = 0.02;
  std::uint64_t encoder_seed = 0;
  std::vector<std::string> aux_heads{"HC3", "M4GT"};  // one multiclass head per listed source
  std::size_t head_hidden_layers = 2;
  std::optional<std::size_t> head_hidden_dim;
  double head_dropout = 0.5;
  std::uint64_t head_seed = 0;
  std::map<std::string, double> loss_weights;
  std::size_t vocab_max_size = 30000;

  // Vocabulary size is filled in when the model is built.
  ModelConfig model_config(const Corpus& train) const {
    ModelConfig c;
    c.encoder.d_model = d_model;
    c.encoder.n_layers = n_layers;
    c.encoder.n_heads = n_heads;
    c.encoder.d_ff = d_ff;
    c.encoder.max_len = max_len;
    c.encoder.dropout_p = dropout_p;
    c.encoder.init_std = init_std;
    c.encoder.seed = encoder_seed;
    c.heads = {HeadSpec::binary()};
    for (const auto& name : aux_heads) c.heads.push_back(HeadSpec::for_source(Source::parse(name), train));
    c.head_hidden_layers = head_hidden_layers;
    c.head_hidden_dim = head_hidden_dim;
    c.head_dropout = head_dropout;
    c.head_seed = head_seed;
    c.loss_weights = loss_weights;
    c.validate();
    return c;
  }
};

struct BaselineSection {
  TfidfConfig tfidf;
  LogRegConfig logreg;
};

struct RunConfig {
  std::uint64_t seed = 0;
  DataConfig data;
  ModelSection model;
  StageConfig stage1 = StageConfig::frozen_encoder_stage();
  StageConfig stage2 = StageConfig::full_finetune_stage();
  DecisionRule decision;
  BaselineSection baseline;
  std::string output_dir = "out";

  // Sets every seed in the run; explicit per-section seeds in a file are
  // applied after this.
  void set_seed(std::uint64_t s) {
    seed = s;
    data.synth.seed = s;
    data.split_seed = s;
    model.encoder_seed = s;
    model.head_seed = s;
    stage1.seed = s;
    stage2.seed = s;
  }

  void validate() const {
    data.validate();
    stage1.validate();
    stage2.validate();
    decision.validate();
    baseline.tfidf.validate();
    baseline.logreg.validate();
    if (model.vocab_max_size < 1) throw ConfigError("model: vocab_max_size must be >= 1");
    for (const auto& h : model.aux_heads) Source::parse(h);
  }
};

// --- json ----------------------------------------------------------------

inline nlohmann::json to_json(const DataConfig& d) {
  auto opt = [](const std::optional<std::string>& s) { return s ? nlohmann::json(*s) : nlohmann::json(nullptr); };
  return {{"train", opt(d.train_path)},        {"dev", opt(d.dev_path)},
          {"test", opt(d.test_path)},          {"synth", d.synth.to_json()},
          {"dev_fraction", d.dev_fraction},    {"test_fraction", d.test_fraction},
          {"split_seed", d.split_seed}};
}

inline nlohmann::json to_json(const ModelSection& m) {
  return {{"d_model", m.d_model},
          {"n_layers", m.n_layers},
          {"n_heads", m.n_heads},
          {"d_ff", m.d_ff},
          {"max_len", m.max_len},
          {"dropout_p", m.dropout_p},
          {"init_std", m.init_std},
          {"encoder_seed", m.encoder_seed},
          {"aux_heads", m.aux_heads},
          {"head_hidden_layers", m.head_hidden_layers},
          {"head_hidden_dim", m.head_hidden_dim ? nlohmann::json(*m.head_hidden_dim) : nlohmann::json(nullptr)},
          {"head_dropout", m.head_dropout},
          {"head_seed", m.head_seed},
          {"loss_weights", m.loss_weights},
          {"vocab_max_size", m.vocab_max_size}};
}

inline nlohmann::json to_json(const RunConfig& c) {
  return {{"schema_version", kConfigSchemaVersion},
          {"seed", c.seed},
          {"data", to_json(c.data)},
          {"model", to_json(c.model)},
          {"stage1", to_json(c.stage1)},
          {"stage2", to_json(c.stage2)},
          {"decision", {{"threshold", c.decision.threshold}}},
          {"baseline",
           {{"tfidf",
             {{"ngram_lo", c.baseline.tfidf.ngram_lo},
              {"ngram_hi", c.baseline.tfidf.ngram_hi},
              {"max_features", c.baseline.tfidf.max_features},
              {"sublinear_tf", c.baseline.tfidf.sublinear_tf}}},
            {"logreg",
             {{"lambda", c.baseline.logreg.lambda},
              {"max_iters", c.baseline.logreg.max_iters},
              {"tol", c.baseline.logreg.tol}}}}},
          {"output_dir", c.output_dir}};
}

namespace detail {

inline void read_synth(const nlohmann::json& j, SynthSpec& s) {
  check_keys(j, {"n_per_cell", "sub_sources", "vocab_skew", "min_tokens", "max_tokens", "seed"}, "data.synth");
  read(j, "n_per_cell", s.n_per_cell);
  read(j, "vocab_skew", s.vocab_skew);
  read(j, "min_tokens", s.min_tokens);
  read(j, "max_tokens", s.max_tokens);
  read(j, "seed", s.seed);
  if (j.contains("sub_sources")) {
    const auto& subs = j.at("sub_sources");
    if (!subs.is_object()) throw ConfigError("data.synth.sub_sources: expected an object of source -> names");
    s.sub_sources.clear();
    for (auto it = subs.begin(); it != subs.end(); ++it) {
      s.sub_sources.emplace_back(Source::parse(it.key()), it.value().get<std::vector<std::string>>());
    }
  }
}

inline void read_stage(const nlohmann::json& j, StageConfig& s, const std::string& where) {
  check_keys(j,
             {"epochs", "learning_rate", "warmup_steps", "weight_decay", "batch_size", "freeze_encoder",
              "early_exit_patience", "seed"},
             where);
  read(j, "epochs", s.epochs);
  read(j, "learning_rate", s.learning_rate);
  read(j, "warmup_steps", s.warmup_steps);
  read(j, "weight_decay", s.weight_decay);
  read(j, "batch_size", s.batch_size);
  read(j, "freeze_encoder", s.freeze_encoder);
  read(j, "seed", s.seed);
  if (j.contains("early_exit_patience")) {
    const auto& p = j.at("early_exit_patience");
    if (p.is_null()) {
      s.early_exit.reset();
    } else {
      s.early_exit = EarlyExit{p.get<std::size_t>()};
    }
  }
}

}  // namespace detail

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  using detail::check_keys;
  using detail::read;
  RunConfig c;
  try {
    check_keys(j,
               {"schema_version", "seed", "data", "model", "stage1", "stage2", "decision", "baseline", "output_dir"},
               "config");
    if (j.contains("schema_version") && j.at("schema_version").get<int>() != kConfigSchemaVersion) {
      throw ConfigError("config: unsupported schema_version " + j.at("schema_version").dump());
    }
    if (j.contains("seed")) c.set_seed(j.at("seed").get<std::uint64_t>());
    read(j, "output_dir", c.output_dir);

    if (j.contains("data")) {
      const auto& d = j.at("data");
      check_keys(d, {"train", "dev", "test", "synth", "dev_fraction", "test_fraction", "split_seed"}, "data");
      read(d, "train", c.data.train_path);
      read(d, "dev", c.data.dev_path);
      read(d, "test", c.data.test_path);
      read(d, "dev_fraction", c.data.dev_fraction);
      read(d, "test_fraction", c.data.test_fraction);
      read(d, "split_seed", c.data.split_seed);
      if (d.contains("synth")) detail::read_synth(d.at("synth"), c.data.synth);
    }
    if (j.contains("model")) {
      const auto& m = j.at("model");
      check_keys(m,
                 {"d_model", "n_layers", "n_heads", "d_ff", "max_len", "dropout_p", "init_std", "encoder_seed",
                  "aux_heads", "head_hidden_layers", "head_hidden_dim", "head_dropout", "head_seed", "loss_weights",
                  "vocab_max_size"},
                 "model");
      auto& s = c.model;
      read(m, "d_model", s.d_model);
      read(m, "n_layers", s.n_layers);
      read(m, "n_heads", s.n_heads);
      read(m, "d_ff", s.d_ff);
      read(m, "max_len", s.max_len);
      read(m, "dropout_p", s.dropout_p);
      read(m, "init_std", s.init_std);
      read(m, "encoder_seed", s.encoder_seed);
      read(m, "aux_heads", s.aux_heads);
      read(m, "head_hidden_layers", s.head_hidden_layers);
      read(m, "head_hidden_dim", s.head_hidden_dim);
      read(m, "head_dropout", s.head_dropout);
      read(m, "head_seed", s.head_seed);
      read(m, "loss_weights", s.loss_weights);
      read(m, "vocab_max_size", s.vocab_max_size);
    }
    if (j.contains("stage1")) detail::read_stage(j.at("stage1"), c.stage1, "stage1");
    if (j.contains("stage2")) detail::read_stage(j.at("stage2"), c.stage2, "stage2");
    if (j.contains("decision")) {
      check_keys(j.at("decision"), {"threshold"}, "decision");
      read(j.at("decision"), "threshold", c.decision.threshold);
    }
    if (j.contains("baseline")) {
      const auto& b = j.at("baseline");
      check_keys(b, {"tfidf", "logreg"}, "baseline");
      if (b.contains("tfidf")) {
        const auto& t = b.at("tfidf");
        check_keys(t, {"ngram_lo", "ngram_hi", "max_features", "sublinear_tf"}, "baseline.tfidf");
        read(t, "ngram_lo", c.baseline.tfidf.ngram_lo);
        read(t, "ngram_hi", c.baseline.tfidf.ngram_hi);
        read(t, "max_features", c.baseline.tfidf.max_features);
        read(t, "sublinear_tf", c.baseline.tfidf.sublinear_tf);
      }
      if (b.contains("logreg")) {
        const auto& l = b.at("logreg");
        check_keys(l, {"lambda", "max_iters", "tol"}, "baseline.logreg");
        read(l, "lambda", c.baseline.logreg.lambda);
        read(l, "max_iters", c.baseline.logreg.max_iters);
        read(l, "tol", c.baseline.logreg.tol);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  try {
    c.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config '" + path + "': " + e.what());
  }
  return run_config_from_json(j);
}

// Hash of everything that affects results; output_dir is left out so moving
// a run does not change it.
inline std::string config_hash(const RunConfig& c) {
  nlohmann::json j = to_json(c);
  j.erase("output_dir");
  return detail::hex64(hash_string(j.dump()));
}

// --- data ----------------------------------------------------------------

struct DataSplits {
  Corpus train;
  Corpus dev;
  std::optional<Corpus> test;
};

inline DataSplits materialize(const DataConfig& d) {
  d.validate();
  DataSplits out;
  Corpus pool = d.train_path ? load_jsonl(*d.train_path) : synth_corpus(d.synth);
  if (d.test_path) {
    out.test = load_jsonl(*d.test_path);
  } else if (d.test_fraction > 0.0) {
    auto [rest, test] = split(pool, d.test_fraction, mix_seed(d.split_seed, 0x7E57));
    pool = std::move(rest);
    out.test = std::move(test);
  }
  if (d.dev_path) {
    out.train = std::move(pool);
    out.dev = load_jsonl(*d.dev_path);
  } else {
    // dev_fraction is relative to the whole corpus.
    const double f = d.dev_fraction / (1.0 - (d.test_path ? 0.0 : d.test_fraction));
    auto [train, dev] = split(pool, f, d.split_seed);
    out.train = std::move(train);
    out.dev = std::move(dev);
  }
  return out;
}

}  // namespace mtd
