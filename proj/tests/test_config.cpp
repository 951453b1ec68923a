#include <catch2/catch_amalgamated.hpp>

#include <fstream>

#include "support.hpp"

using namespace mtd;
using nlohmann::json;

TEST_CASE("config defaults", "[config]") {
  const RunConfig c = run_config_from_json(json::object());
  CHECK(c.stage1 == StageConfig::frozen_encoder_stage());
  CHECK(c.stage2 == StageConfig::full_finetune_stage());
  CHECK(c.decision.threshold == 0.92);
  CHECK(c.model.head_dropout == 0.5);
  CHECK(c.model.head_hidden_layers == 2);
  CHECK(c.model.aux_heads == std::vector<std::string>{"HC3", "M4GT"});
  CHECK(c.model.d_model == 64);
  CHECK(c.model.n_layers == 2);
  CHECK(c.baseline.tfidf.ngram_hi == 2);
  CHECK(c.baseline.logreg.lambda == 1e-4);
  CHECK(c.data.synth.n_per_cell == 100);
  CHECK(c.data.synth.vocab_skew == 0.9);
}

TEST_CASE("unknown keys are rejected", "[config]") {
  CHECK_THROWS_AS(run_config_from_json(json{{"sed", 1}}), ConfigError);
  CHECK_THROWS_WITH(run_config_from_json(json{{"model", {{"dmodel", 8}}}}),
                    Catch::Matchers::ContainsSubstring("model: unknown key 'dmodel'"));
  CHECK_THROWS_AS(run_config_from_json(json{{"stage1", {{"lr", 1e-3}}}}), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(json{{"data", {{"synth", {{"n", 3}}}}}}), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(json{{"schema_version", 2}}), ConfigError);
}

TEST_CASE("invalid values are config errors", "[config]") {
  CHECK_THROWS_AS(run_config_from_json(json{{"decision", {{"threshold", 1.5}}}}), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(json{{"stage2", {{"batch_size", 0}}}}), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(json{{"data", {{"dev_fraction", 0.0}}}}), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(json{{"model", {{"d_model", "big"}}}}), ConfigError);
  CHECK_THROWS_AS(load_run_config("/nonexistent/config.json"), ConfigError);
}

TEST_CASE("seed propagates", "[config]") {
  const RunConfig c = run_config_from_json(json{{"seed", 7}, {"stage2", {{"seed", 9}}}});
  CHECK(c.data.synth.seed == 7);
  CHECK(c.data.split_seed == 7);
  CHECK(c.model.encoder_seed == 7);
  CHECK(c.model.head_seed == 7);
  CHECK(c.stage1.seed == 7);
  CHECK(c.stage2.seed == 9);
}

TEST_CASE("config json round trip and hash", "[config]") {
  const json j{{"seed", 3},
               {"data", {{"synth", {{"n_per_cell", 5}, {"sub_sources", {{"HC3", {"Finance", "Medicine"}}}}}}}},
               {"model", {{"d_model", 8}, {"n_heads", 2}, {"head_hidden_dim", 4}, {"loss_weights", {{"HC3", 0.5}}}}},
               {"stage1", {{"early_exit_patience", 2}}},
               {"output_dir", "somewhere"}};
  const RunConfig a = run_config_from_json(j);
  CHECK(a.stage1.early_exit.has_value());
  CHECK(a.model.head_hidden_dim == std::optional<std::size_t>{4});
  const RunConfig b = run_config_from_json(to_json(a));
  CHECK(to_json(b) == to_json(a));
  CHECK(config_hash(a) == config_hash(b));
  CHECK(config_hash(a).size() == 16);

  RunConfig moved = a;
  moved.output_dir = "elsewhere";
  CHECK(config_hash(moved) == config_hash(a));
  RunConfig changed = a;
  changed.stage2.learning_rate *= 2;
  CHECK(config_hash(changed) != config_hash(a));
}

TEST_CASE("shipped configs load", "[config]") {
  for (const char* name : {"reference.json", "smoke.json", "acceptance.json"}) {
    INFO(name);
    CHECK_NOTHROW(load_run_config(std::string(MTD_SOURCE_DIR) + "/configs/" + name));
  }
  const RunConfig ref = load_run_config(std::string(MTD_SOURCE_DIR) + "/configs/reference.json");
  CHECK(ref.stage1 == StageConfig::frozen_encoder_stage());
  CHECK(ref.stage2 == StageConfig::full_finetune_stage());
  CHECK(ref.decision.threshold == 0.92);
}

TEST_CASE("materialize splits", "[config]") {
  DataConfig d;
  d.synth.n_per_cell = 10;
  d.synth.sub_sources = {{Source::hc3(), {"Finance", "Medicine"}}};
  d.dev_fraction = 0.2;
  d.test_fraction = 0.2;
  const DataSplits s = materialize(d);
  REQUIRE(s.test.has_value());
  CHECK(s.test->size() == 8);
  CHECK(s.dev.size() == 8);
  CHECK(s.train.size() == 24);

  d.test_fraction = 0.0;
  const DataSplits no_test = materialize(d);
  CHECK_FALSE(no_test.test.has_value());
  CHECK(no_test.dev.size() == 8);

  const auto dir = testsupport::scratch_dir("materialize");
  save_jsonl(s.train, (dir / "train.jsonl").string());
  save_jsonl(s.dev, (dir / "dev.jsonl").string());
  DataConfig files;
  files.train_path = (dir / "train.jsonl").string();
  files.dev_path = (dir / "dev.jsonl").string();
  const DataSplits f = materialize(files);
  CHECK(f.train.samples == s.train.samples);
  CHECK(f.dev.samples == s.dev.samples);
}
