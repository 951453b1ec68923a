// mtd: command-line driver. One subcommand per process; every run starts
// from a JSON config (see configs/) and flags override it.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "mtd/mtd.hpp"

namespace fs = std::filesystem;
using namespace mtd;

namespace {

// Usage errors exit 2, everything else 1.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("-c,--config", c.config, "JSON run config (defaults are used when omitted)");
  sub->add_option("--seed", c.seed, "override every seed in the config");
  sub->add_option("-o,--out", c.out, "override output_dir");
}

RunConfig resolve(const Common& c) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : load_run_config(c.config);
  if (c.seed) cfg.set_seed(*c.seed);
  if (!c.out.empty()) cfg.output_dir = c.out;
  cfg.validate();
  fs::create_directories(cfg.output_dir);
  return cfg;
}

std::string out_path(const RunConfig& cfg, const std::string& name) { return (fs::path(cfg.output_dir) / name).string(); }

std::ofstream open_out(const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write '" + path + "'");
  return f;
}

std::ofstream open_csv(const RunConfig& cfg, const std::string& name) {
  auto f = open_out(out_path(cfg, name));
  f << "# config_hash=" << config_hash(cfg) << '\n';
  return f;
}

std::ofstream open_svg(const RunConfig& cfg, const std::string& name) {
  auto f = open_out(out_path(cfg, name));
  f << "<!-- config_hash=" << config_hash(cfg) << " -->\n";
  return f;
}

// JSONL outputs cannot hold a comment, so the hash of a run also goes here.
void write_manifest(const RunConfig& cfg, const std::string& command) {
  auto f = open_out(out_path(cfg, "manifest_" + command + ".json"));
  f << nlohmann::json{{"command", command}, {"config_hash", config_hash(cfg)}, {"config", to_json(cfg)}}.dump(2)
    << '\n';
}

const Corpus& pick_split(const DataSplits& s, const std::string& name) {
  if (name == "train") return s.train;
  if (name == "dev") return s.dev;
  if (name == "test") {
    if (!s.test) throw UsageError("no test split configured (set data.test or data.test_fraction)");
    return *s.test;
  }
  throw UsageError("unknown split '" + name + "' (train, dev or test)");
}

// --data wins over --split.
Corpus eval_corpus(const RunConfig& cfg, const std::string& data, const std::string& split_name) {
  if (!data.empty()) return load_jsonl(data);
  return pick_split(materialize(cfg.data), split_name);
}

std::string default_checkpoint(const RunConfig& cfg, const std::string& given) {
  return given.empty() ? out_path(cfg, "stage2.ckpt") : given;
}

// e.g. "stage2_dev" or "init_myfile"
std::string run_tag(const std::string& ckpt, const std::string& data, const std::string& split_name) {
  return fs::path(ckpt).stem().string() + "_" + (data.empty() ? split_name : fs::path(data).stem().string());
}

// --- subcommands ---------------------------------------------------------

int cmd_prepare(const Common& common) {
  const RunConfig cfg = resolve(common);
  const DataSplits s = materialize(cfg.data);
  save_jsonl(s.train, out_path(cfg, "train.jsonl"));
  save_jsonl(s.dev, out_path(cfg, "dev.jsonl"));
  if (s.test) save_jsonl(*s.test, out_path(cfg, "test.jsonl"));
  auto f = open_csv(cfg, "stats.csv");
  f << "split,source,sub_source,label,count\n";
  auto dump = [&](const std::string& name, const Corpus& c) {
    for (const auto& [key, n] : stats(c).cells) {
      f << name << ',' << std::get<0>(key) << ',' << std::get<1>(key) << ','
        << label_name(static_cast<Label>(std::get<2>(key))) << ',' << n << '\n';
    }
  };
  dump("train", s.train);
  dump("dev", s.dev);
  if (s.test) dump("test", *s.test);
  write_manifest(cfg, "prepare");
  std::cout << "train " << s.train.size() << ", dev " << s.dev.size();
  if (s.test) std::cout << ", test " << s.test->size();
  std::cout << " samples -> " << cfg.output_dir << '\n';
  return 0;
}

int cmd_train(const Common& common, bool init_only) {
  const RunConfig cfg = resolve(common);
  const DataSplits s = materialize(cfg.data);
  const ModelConfig mc = cfg.model.model_config(s.train);
  const std::string hash = config_hash(cfg);
  if (init_only) {
    const MtlModel model = init_model(s.train, mc, cfg.model.vocab_max_size);
    save_checkpoint(make_checkpoint(model, cfg.decision, {{"stage", 0}, {"config_hash", hash}}),
                    out_path(cfg, "init.ckpt"));
    write_manifest(cfg, "train");
    std::cout << "wrote untrained checkpoint " << out_path(cfg, "init.ckpt") << '\n';
    return 0;
  }
  TwoStageResult r = two_stage_train(s.train, s.dev, mc, cfg.stage1, cfg.stage2, cfg.model.vocab_max_size, cfg.decision);
  r.stage1.metadata["config_hash"] = hash;
  r.stage2.metadata["config_hash"] = hash;
  save_checkpoint(r.stage1, out_path(cfg, "stage1.ckpt"));
  save_checkpoint(r.stage2, out_path(cfg, "stage2.ckpt"));
  {
    auto f = open_csv(cfg, "train_log.csv");
    r.log.write_csv(f);
  }
  const double f1 = evaluate_model(restore_model(r.stage1), s.dev).macro_f1;
  const double f2 = evaluate_model(restore_model(r.stage2), s.dev).macro_f1;
  {
    auto f = open_csv(cfg, "train_summary.csv");
    f << std::setprecision(17) << "checkpoint,dev_macro_f1\nstage1," << f1 << "\nstage2," << f2 << '\n';
  }
  write_manifest(cfg, "train");
  std::cout << "dev macro-F1 (tau=0.5): stage1 " << f1 << ", stage2 " << f2 << '\n';
  return 0;
}

int cmd_eval(const Common& common, const std::string& ckpt_path, const std::string& data, const std::string& split_name,
             std::optional<double> threshold) {
  const RunConfig cfg = resolve(common);
  const std::string path = default_checkpoint(cfg, ckpt_path);
  const Checkpoint ckpt = load_checkpoint(path);
  const Corpus corpus = eval_corpus(cfg, data, split_name);
  DecisionRule rule = ckpt.rule;
  if (threshold) rule.threshold = *threshold;
  rule.validate();
  const MtlModel model = restore_model(ckpt);
  const auto preds = predict(model, corpus.texts(), rule);
  std::vector<int> labels = corpus.labels(), predicted;
  for (const auto& p : preds) predicted.push_back(to_int(p.label));
  const EvalReport report = f1_report(predicted, labels);
  const std::string tag = run_tag(path, data, split_name);
  {
    auto f = open_csv(cfg, "eval_" + tag + ".csv");
    f << "# threshold=" << rule.threshold << '\n';
    report.write_csv(f);
  }
  for (GroupKey key : {GroupKey::generator, GroupKey::source, GroupKey::sub_source}) {
    auto f = open_csv(cfg, "breakdown_" + tag + "_" + group_key_name(key) + ".csv");
    group_breakdown(predicted, labels, corpus.samples, key).write_csv(f);
  }
  {
    auto f = open_out(out_path(cfg, "predictions_" + tag + ".jsonl"));
    write_predictions_jsonl(corpus, preds, f);
  }
  write_manifest(cfg, "eval");
  std::cout << "macro-F1 " << report.macro_f1 << ", micro-F1 " << report.micro_f1 << " at tau=" << rule.threshold
            << " over " << report.n << " samples\n";
  return 0;
}

int cmd_sweep(const Common& common, const std::string& ckpt_path, const std::string& data, const std::string& split_name) {
  const RunConfig cfg = resolve(common);
  const std::string path = default_checkpoint(cfg, ckpt_path);
  const Checkpoint ckpt = load_checkpoint(path);
  const Corpus corpus = eval_corpus(cfg, data, split_name);
  const auto probs = machine_probabilities(restore_model(ckpt), corpus.texts());
  const ThresholdCurve curve = threshold_sweep(probs, corpus.labels());
  const std::string tag = run_tag(path, data, split_name);
  {
    auto f = open_csv(cfg, "threshold_curve_" + tag + ".csv");
    f << "# best_threshold=" << curve.best_threshold << '\n';
    curve.write_csv(f);
  }
  {
    auto f = open_svg(cfg, "threshold_curve_" + tag + ".svg");
    curve.write_svg(f);
  }
  write_manifest(cfg, "sweep");
  std::cout << "tau*=" << curve.best_threshold << " macro-F1 " << curve.best_macro_f1 << " (tau=0.5: " << curve.at(0.5)
            << ")\n";
  return 0;
}

int cmd_analyze(const Common& common, const std::string& ckpt_path, const std::string& data,
                const std::string& split_name, const std::string& target, const std::string& color) {
  const RunConfig cfg = resolve(common);
  const std::string path = default_checkpoint(cfg, ckpt_path);
  const Checkpoint ckpt = load_checkpoint(path);
  const Corpus corpus = eval_corpus(cfg, data, split_name);
  const EmbedTarget what = target == "cls" ? EmbedTarget::cls() : EmbedTarget::logits(target);
  if (color != "source" && color != "sub_source" && color != "label") {
    throw UsageError("--color must be source, sub_source or label");
  }
  const Matrix emb = embed_corpus(ckpt, corpus, what);
  const ProjectionTable table = project_2d(emb, corpus, what.describe());
  std::vector<std::string> subs, sources;
  for (const auto& s : corpus.samples) {
    subs.push_back(s.sub_source);
    sources.push_back(s.source.name());
  }
  const auto sub_ids = cluster_ids(subs);
  const auto src_ids = cluster_ids(sources);
  const double sil_sub = silhouette(emb, sub_ids);
  const bool many_sources = *std::max_element(src_ids.begin(), src_ids.end()) > 0;
  const std::string tag = target + "_" + run_tag(path, data, split_name);
  {
    auto f = open_csv(cfg, "projection_" + tag + ".csv");
    table.write_csv(f);
  }
  {
    auto f = open_svg(cfg, "projection_" + tag + ".svg");
    table.write_svg(f, color, "PCA of " + what.describe());
  }
  {
    auto f = open_csv(cfg, "analysis_" + tag + ".csv");
    f << std::setprecision(17) << "metric,value\n";
    f << "silhouette_sub_source," << sil_sub << '\n';
    if (many_sources) f << "silhouette_source," << silhouette(emb, src_ids) << '\n';
    f << "explained_variance_pc1," << table.explained_variance_ratio[0] << '\n';
    f << "explained_variance_pc2," << table.explained_variance_ratio[1] << '\n';
  }
  write_manifest(cfg, "analyze");
  std::cout << "silhouette(sub_source) " << sil_sub << ", PC1/PC2 explain " << table.explained_variance_ratio[0] << " / "
            << table.explained_variance_ratio[1] << '\n';
  return 0;
}

int cmd_baseline(const Common& common) {
  const RunConfig cfg = resolve(common);
  const DataSplits s = materialize(cfg.data);
  LogRegTrace trace;
  const TfidfBaseline b = train_tfidf_baseline(s.train, cfg.baseline.tfidf, cfg.baseline.logreg, &trace);
  save_baseline(b, out_path(cfg, "baseline.bin"));
  auto f = open_csv(cfg, "baseline_report.csv");
  f << std::setprecision(17) << "split,macro_f1,micro_f1,n\n";
  auto score = [&](const std::string& name, const Corpus& c) {
    const auto r = f1_report(apply_threshold(b.p_machine(c.texts()), 0.5), c.labels());
    f << name << ',' << r.macro_f1 << ',' << r.micro_f1 << ',' << r.n << '\n';
    std::cout << name << " macro-F1 " << r.macro_f1 << '\n';
  };
  score("dev", s.dev);
  if (s.test) score("test", *s.test);
  f << "# features=" << b.vectorizer.size() << " iterations=" << trace.iterations
    << " grad_norm=" << trace.final_grad_norm << '\n';
  write_manifest(cfg, "baseline");
  std::cout << "logreg: " << trace.iterations << " iterations, gradient norm " << trace.final_grad_norm << '\n';
  return 0;
}

int cmd_ablate(const Common& common) {
  RunConfig cfg = resolve(common);
  // A MAGE head needs MAGE samples; synthetic runs get the MAGE domains added
  // so all four configurations train on the same corpus.
  if (!cfg.data.train_path) {
    bool has_mage = false;
    for (const auto& [src, _] : cfg.data.synth.sub_sources) has_mage |= src == Source::mage();
    if (!has_mage) cfg.data.synth.sub_sources.emplace_back(Source::mage(), mage_sub_sources());
  }
  if (!cfg.data.test_path && cfg.data.test_fraction == 0.0) cfg.data.test_fraction = cfg.data.dev_fraction;
  cfg.validate();
  const DataSplits s = materialize(cfg.data);
  const Corpus& test = *s.test;

  const std::vector<std::pair<std::string, std::vector<std::string>>> configs{
      {"HC3", {"HC3"}}, {"M4GT", {"M4GT"}}, {"HC3+M4GT", {"HC3", "M4GT"}}, {"HC3+M4GT+MAGE", {"HC3", "M4GT", "MAGE"}}};
  auto f = open_csv(cfg, "ablation.csv");
  f << std::setprecision(17);
  f << "configuration,dev_macro_f1,test_macro_f1,tau_star,dev_macro_f1_tau_star,test_macro_f1_tau_star\n";
  for (const auto& [name, heads] : configs) {
    RunConfig run = cfg;
    run.model.aux_heads = heads;
    const ModelConfig mc = run.model.model_config(s.train);
    const TwoStageResult r = two_stage_train(s.train, s.dev, mc, run.stage1, run.stage2, run.model.vocab_max_size,
                                             run.decision);
    const MtlModel model = restore_model(r.stage2);
    const auto p_dev = machine_probabilities(model, s.dev.texts());
    const auto p_test = machine_probabilities(model, test.texts());
    const ThresholdCurve curve = threshold_sweep(p_dev, s.dev.labels());
    const double dev05 = f1_report(apply_threshold(p_dev, 0.5), s.dev.labels()).macro_f1;
    const double test05 = f1_report(apply_threshold(p_test, 0.5), test.labels()).macro_f1;
    const double test_star = f1_report(apply_threshold(p_test, curve.best_threshold), test.labels()).macro_f1;
    f << name << ',' << dev05 << ',' << test05 << ',' << curve.best_threshold << ',' << curve.best_macro_f1 << ','
      << test_star << '\n';
    std::cout << name << ": dev " << dev05 << ", test " << test05 << '\n';
  }
  write_manifest(cfg, "ablate");
  return 0;
}

const char* module_of(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return "config";
  if (dynamic_cast<const CorpusError*>(&e)) return "corpus";
  if (dynamic_cast<const FormatError*>(&e)) return "checkpoint";
  if (dynamic_cast<const nlohmann::json::exception*>(&e)) return "json";
  if (dynamic_cast<const fs::filesystem_error*>(&e)) return "filesystem";
  return "runtime";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-task machine-generated text detection"};
  app.require_subcommand(1);
  Common common;
  std::string checkpoint, data, split_name = "dev", target = "cls", color = "sub_source";
  std::optional<double> threshold;
  bool init_only = false;

  auto* prepare = app.add_subcommand("prepare", "load or synthesize the corpus, split it, write stats");
  auto* train = app.add_subcommand("train", "two-stage training; writes stage1/stage2 checkpoints and the log");
  auto* eval = app.add_subcommand("eval", "score a checkpoint on a split or a JSONL file");
  auto* sweep = app.add_subcommand("sweep", "macro-F1 over decision thresholds");
  auto* analyze = app.add_subcommand("analyze", "PCA projection and cluster silhouette of embeddings");
  auto* baseline = app.add_subcommand("baseline", "TF-IDF + logistic regression baseline");
  auto* ablate = app.add_subcommand("ablate", "train the four auxiliary head sets and compare");
  for (auto* sub : {prepare, train, eval, sweep, analyze, baseline, ablate}) add_common(sub, common);
  train->add_flag("--init-only", init_only, "write the untrained checkpoint and stop");
  for (auto* sub : {eval, sweep, analyze}) {
    sub->add_option("--checkpoint", checkpoint, "checkpoint file (default <out>/stage2.ckpt)");
    sub->add_option("--data", data, "JSONL corpus to score instead of a configured split");
    sub->add_option("--split", split_name, "train, dev or test");
  }
  eval->add_option("--threshold", threshold, "decision threshold (default: the checkpoint's)");
  analyze->add_option("--target", target, "cls or the name of a head whose logits to project");
  analyze->add_option("--color", color, "source, sub_source or label");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  const char* command = app.get_subcommands().front()->get_name().c_str();
  try {
    if (prepare->parsed()) return cmd_prepare(common);
    if (train->parsed()) return cmd_train(common, init_only);
    if (eval->parsed()) return cmd_eval(common, checkpoint, data, split_name, threshold);
    if (sweep->parsed()) return cmd_sweep(common, checkpoint, data, split_name);
    if (analyze->parsed()) return cmd_analyze(common, checkpoint, data, split_name, target, color);
    if (baseline->parsed()) return cmd_baseline(common);
    if (ablate->parsed()) return cmd_ablate(common);
  } catch (const UsageError& e) {
    std::cerr << "mtd " << command << ": usage: " << e.what() << '\n';
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "mtd " << command << ": config: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "mtd " << command << ": " << module_of(e) << ": " << e.what() << '\n';
    return 1;
  }
  return 2;
}
