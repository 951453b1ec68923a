// Acceptance run: one PASS/FAIL line per criterion, then exit status 0 only
// if every line passed. Training-based criteria share the same five seeded
// runs of configs/acceptance.json.

#include <chrono>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <sys/wait.h>

#include "mtd/mtd.hpp"
#include "oracles.hpp"

using namespace mtd;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

constexpr int kSeeds = 5;

int failures = 0;

void report(int id, bool pass, const std::string& detail) {
  if (!pass) ++failures;
  std::cout << (pass ? "PASS" : "FAIL") << " criterion " << id << ": " << detail << std::endl;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int prec = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(prec) << v;
  return s.str();
}

std::string list(const std::vector<double>& v) {
  std::string out;
  for (double x : v) out += (out.empty() ? "" : " ") + fmt(x, 3);
  return out;
}

Tensor random_tensor(Shape shape, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  std::vector<double> v(shape_size(shape));
  for (double& x : v) x = rng.normal(0.0, scale);
  return Tensor::from_data(std::move(shape), std::move(v), true);
}

Tensor project_scalar(const Tensor& out, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> r(out.size());
  for (double& x : r) x = rng.normal(0.0, 1.0);
  const Tensor rt = Tensor::from_data({out.size(), 1}, std::move(r), false);
  return reshape(linear(reshape(out, {1, out.size()}), rt), {1});
}

bool bit_equal(const NamedArray& a, const NamedArray& b) {
  return a.name == b.name && a.shape == b.shape &&
         std::memcmp(a.data.data(), b.data.data(), sizeof(double) * a.data.size()) == 0;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(MTD_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

RunConfig acceptance_config(int seed) {
  RunConfig cfg = load_run_config(std::string(MTD_SOURCE_DIR) + "/configs/acceptance.json");
  cfg.set_seed(static_cast<std::uint64_t>(seed));
  return cfg;
}

double macro_at(const std::vector<double>& p, const Corpus& c, double t) {
  return f1_report(apply_threshold(p, t), c.labels()).macro_f1;
}

// --- 1 ---------------------------------------------------------------------

void gradients() {
  const auto t0 = Clock::now();
  double worst_op = 0.0;
  auto op = [&](const std::function<Tensor()>& f, std::vector<Tensor> params) {
    worst_op = std::max(worst_op, grad_check(f, std::move(params)).max_rel_error);
  };
  {
    Tensor x = random_tensor({3, 4}, 1, 1.5);
    op([&] { return project_scalar(gelu(x), 1); }, {x});
  }
  {
    Tensor a = random_tensor({2, 3}, 2), b = random_tensor({2, 3}, 3);
    op([&] { return project_scalar(add(a, b), 2); }, {a, b});
  }
  {
    Tensor a = random_tensor({3, 5}, 4), b = random_tensor({5, 2}, 5);
    op([&] { return project_scalar(matmul(a, b), 3); }, {a, b});
  }
  {
    Tensor x = random_tensor({2, 4}, 6), w = random_tensor({4, 3}, 7), b = random_tensor({3}, 8);
    op([&] { return project_scalar(linear(x, w, b), 4); }, {x, w, b});
  }
  {
    Tensor x = random_tensor({3, 6}, 9), g = random_tensor({6}, 10), b = random_tensor({6}, 11);
    op([&] { return project_scalar(layer_norm(x, g, b), 5); }, {x, g, b});
  }
  {
    Tensor table = random_tensor({5, 3}, 12);
    const std::vector<int> rows{4, 0, 4, 2};
    op([&] { return project_scalar(gather_rows(table, rows), 6); }, {table});
  }
  {
    Tensor q = random_tensor({6, 4}, 13), k = random_tensor({6, 4}, 14), v = random_tensor({6, 4}, 15);
    const std::vector<std::uint8_t> mask{1, 1, 0, 1, 1, 1};
    op([&] { return project_scalar(attention(q, k, v, mask, 2, 3, 3, 2), 7); }, {q, k, v});
  }
  {
    Tensor x = random_tensor({3, 3}, 16);
    op(
        [&] {
          Rng rng(9);
          return project_scalar(dropout(x, 0.3, true, rng), 8);
        },
        {x});
  }
  {
    Tensor z = random_tensor({4, 5}, 17, 2.0);
    const std::vector<int> t{4, -1, 0, 2};
    op([&] { return cross_entropy(z, t); }, {z});
  }
  {
    Tensor a = random_tensor({1}, 18), b = random_tensor({1}, 19);
    op(
        [&] {
          const Tensor terms[2] = {gelu(a), gelu(b)};
          const double w[2] = {0.7, 1.3};
          return weighted_sum(terms, w);
        },
        {a, b});
  }

  // whole model: 2 layers, binary + HC3 + M4GT, no dropout, one sample per source
  SynthSpec spec;
  spec.n_per_cell = 2;
  spec.min_tokens = 8;
  spec.max_tokens = 12;
  spec.sub_sources.push_back({Source::mage(), mage_sub_sources()});
  const Corpus c = synth_corpus(spec);
  ModelConfig mc;
  mc.encoder.d_model = 8;
  mc.encoder.n_layers = 2;
  mc.encoder.n_heads = 2;
  mc.encoder.d_ff = 16;
  mc.encoder.max_len = 13;
  mc.encoder.dropout_p = 0.0;
  mc.encoder.init_std = 0.3;
  mc.head_dropout = 0.0;
  mc.heads = {HeadSpec::binary(), HeadSpec::for_source(Source::hc3(), c), HeadSpec::for_source(Source::m4gt(), c)};
  MtlModel m(build_vocab(c, 200), mc);
  std::vector<LabeledSample> four;
  for (const char* src : {"HC3", "M4GT", "MAGE"}) {
    for (const auto& s : c.samples) {
      if (s.source.name() == src) {
        four.push_back(s);
        break;
      }
    }
  }
  four.push_back(c.samples.back());
  const TaskBatch batch = make_task_batch(m, four);
  std::vector<Tensor> params;
  for (auto& [_, t] : m.named_parameters()) params.push_back(t);
  const GradCheckResult full =
      grad_check([&] { return mtl_loss(m, m.forward(batch.tokens, false), batch).total; }, params);
  const double secs = seconds_since(t0);
  report(1, full.max_rel_error < 1e-4 && worst_op < 1e-6 && secs < 30.0,
         "full model max rel err " + fmt(full.max_rel_error, 10) + " over " + std::to_string(full.coordinates) +
             " coords (< 1e-4), worst isolated op " + fmt(worst_op, 10) + " (< 1e-6), " + fmt(secs, 1) +
             " s (< 30 s)");
}

// --- 2 ---------------------------------------------------------------------

bool mage_batch_leaves_aux_heads_alone() {
  SynthSpec spec;
  spec.n_per_cell = 3;
  spec.sub_sources.push_back({Source::mage(), mage_sub_sources()});
  const Corpus c = synth_corpus(spec);
  ModelConfig mc;
  mc.encoder.d_model = 16;
  mc.encoder.n_heads = 2;
  mc.encoder.d_ff = 32;
  mc.heads = {HeadSpec::binary(), HeadSpec::for_source(Source::hc3(), c), HeadSpec::for_source(Source::m4gt(), c)};
  MtlModel m(build_vocab(c, 30000), mc);
  std::vector<LabeledSample> mage;
  for (const auto& s : c.samples) {
    if (s.source == Source::mage()) mage.push_back(s);
  }
  const TaskBatch batch = make_task_batch(m, mage);
  m.zero_grad();
  mtl_loss(m, m.forward(batch.tokens, true), batch).total.backward();
  for (std::size_t h = 1; h < 3; ++h) {
    for (auto& [_, t] : m.head(h).params().entries()) {
      for (double g : t.grad()) {
        if (g != 0.0) return false;
      }
    }
  }
  return true;
}

// --- 4, 5, 7, 8 ----------------------------------------------------------

struct SeedResult {
  double single_dev = 0, mtl_stage1 = 0, mtl_stage2 = 0, tfidf = 0;
  double sil_single = 0, sil_mtl = 0;
  bool encoder_frozen = false;
  double logreg_grad = 0;
  std::vector<double> pca_ratios, pca_oracle;
};

double silhouette_of(const Checkpoint& ckpt, const Corpus& dev) {
  std::vector<std::string> keys;
  for (const auto& s : dev.samples) keys.push_back(s.sub_source);
  return silhouette(embed_corpus(ckpt, dev, EmbedTarget::cls()), cluster_ids(keys));
}

SeedResult run_seed(int seed) {
  SeedResult r;
  const RunConfig cfg = acceptance_config(seed);
  const DataSplits s = materialize(cfg.data);

  const ModelConfig mtl_cfg = cfg.model.model_config(s.train);
  ModelConfig single_cfg = mtl_cfg;
  single_cfg.heads = {HeadSpec::binary()};

  const MtlModel init = init_model(s.train, mtl_cfg, cfg.model.vocab_max_size);
  const Checkpoint init_ckpt = make_checkpoint(init);
  const TwoStageResult mtl =
      two_stage_train(s.train, s.dev, mtl_cfg, cfg.stage1, cfg.stage2, cfg.model.vocab_max_size, cfg.decision);
  const TwoStageResult single =
      two_stage_train(s.train, s.dev, single_cfg, cfg.stage1, cfg.stage2, cfg.model.vocab_max_size, cfg.decision);

  r.encoder_frozen = init_ckpt.params.size() == mtl.stage1.params.size();
  for (std::size_t i = 0; r.encoder_frozen && i < init_ckpt.params.size(); ++i) {
    if (init_ckpt.params[i].name.rfind("encoder.", 0) == 0) r.encoder_frozen = bit_equal(init_ckpt.params[i], mtl.stage1.params[i]);
  }

  r.mtl_stage1 = evaluate_model(restore_model(mtl.stage1), s.dev).macro_f1;
  r.mtl_stage2 = evaluate_model(restore_model(mtl.stage2), s.dev).macro_f1;
  r.single_dev = evaluate_model(restore_model(single.stage2), s.dev).macro_f1;
  r.sil_mtl = silhouette_of(mtl.stage2, s.dev);
  r.sil_single = silhouette_of(single.stage2, s.dev);

  LogRegTrace trace;
  const TfidfBaseline b = train_tfidf_baseline(s.train, cfg.baseline.tfidf, cfg.baseline.logreg, &trace);
  r.tfidf = macro_at(b.p_machine(s.dev.texts()), s.dev, 0.5);
  const auto x = b.vectorizer.transform(s.train.texts());
  r.logreg_grad = l2_norm(logreg_gradient(x, s.train.labels(), b.model.weights, b.model.bias, b.model.lambda));

  const Matrix emb = embed_corpus(mtl.stage2, s.dev, EmbedTarget::cls());
  const PcaModel pca = pca_fit(emb, emb.cols);
  r.pca_ratios = pca.explained_variance_ratio;
  std::vector<std::vector<double>> rows;
  for (std::size_t i = 0; i < emb.rows; ++i) rows.emplace_back(emb.row(i).begin(), emb.row(i).end());
  r.pca_oracle = oracle::pca_ratios(rows, emb.cols);
  return r;
}

// --- 6 ---------------------------------------------------------------------

// The deployment shift the threshold compensates for is modelled as a label
// prior shift: training keeps one human sample in three, dev and test stay
// balanced. τ* comes from dev, the gain is measured on test.
struct ThresholdResult {
  bool curve_dominates = true;
  double tau = 0.5, test_at_half = 0, test_at_tau = 0;
};

ThresholdResult threshold_seed(int seed) {
  RunConfig cfg = acceptance_config(seed);
  cfg.data.test_fraction = 0.2;
  const DataSplits s = materialize(cfg.data);
  Corpus train;
  std::size_t humans = 0;
  for (const auto& x : s.train.samples) {
    if (x.label == Label::human && humans++ % 3 != 0) continue;
    train.samples.push_back(x);
  }
  const ModelConfig mc = cfg.model.model_config(train);
  const TwoStageResult tr =
      two_stage_train(train, s.dev, mc, cfg.stage1, cfg.stage2, cfg.model.vocab_max_size, cfg.decision);
  ThresholdResult r;
  for (const Checkpoint* ck : {&tr.stage1, &tr.stage2}) {
    const MtlModel m = restore_model(*ck);
    const auto p_dev = machine_probabilities(m, s.dev.texts());
    const ThresholdCurve curve = threshold_sweep(p_dev, s.dev.labels());
    r.curve_dominates = r.curve_dominates && curve.best_macro_f1 >= curve.at(0.5);
    if (ck == &tr.stage2) {
      const auto p_test = machine_probabilities(m, s.test->texts());
      r.tau = curve.best_threshold;
      r.test_at_half = macro_at(p_test, *s.test, 0.5);
      r.test_at_tau = macro_at(p_test, *s.test, r.tau);
    }
  }
  return r;
}

}  // namespace

int main() {
  const auto start = Clock::now();
  std::cout << std::setprecision(6);

  gradients();

  // 3: metric oracles
  {
    // labels [0,0,1,1], preds [0,1,1,1]: F1_0 = 2/3, F1_1 = 4/5
    const std::vector<int> pred{0, 1, 1, 1}, gold{0, 0, 1, 1};
    const double hand = f1_report(pred, gold).macro_f1;
    const bool hand_ok = std::abs(hand - (2.0 / 3.0 + 4.0 / 5.0) / 2.0) < 1e-9;
    Rng rng(11);
    bool micro_ok = true;
    for (int t = 0; t < 100; ++t) {
      const std::size_t n = 1 + rng.below(60);
      std::vector<int> p(n), g(n);
      std::size_t correct = 0;
      for (std::size_t i = 0; i < n; ++i) {
        p[i] = static_cast<int>(rng.below(2));
        g[i] = static_cast<int>(rng.below(2));
        correct += p[i] == g[i];
      }
      micro_ok = micro_ok && std::abs(f1_report(p, g).micro_f1 - double(correct) / double(n)) < 1e-12;
    }
    bool sweep_ok = true;
    for (int t = 0; t < 20; ++t) {
      std::vector<double> probs(50);
      std::vector<int> g(50), argmax(50);
      for (std::size_t i = 0; i < 50; ++i) {
        probs[i] = rng.uniform();
        g[i] = static_cast<int>(rng.below(2));
        argmax[i] = probs[i] >= 1.0 - probs[i] ? 1 : 0;
      }
      sweep_ok = sweep_ok && threshold_sweep(probs, g).at(0.5) == f1_report(argmax, g).macro_f1;
    }
    report(3, hand_ok && micro_ok && sweep_ok,
           "hand example macro " + fmt(hand, 12) + " (0.733333333333), micro = accuracy on 100 cases: " + (micro_ok ? "yes" : "no") +
               ", sweep at 0.5 = argmax: " + (sweep_ok ? "yes" : "no"));
  }

  const bool mage_ok = mage_batch_leaves_aux_heads_alone();

  const auto train_t0 = Clock::now();
  std::vector<SeedResult> seeds;
  for (int seed = 0; seed < kSeeds; ++seed) {
    seeds.push_back(run_seed(seed));
    const auto& r = seeds.back();
    std::cout << "  seed " << seed << ": single " << fmt(r.single_dev) << ", mtl stage1 " << fmt(r.mtl_stage1)
              << ", mtl stage2 " << fmt(r.mtl_stage2) << ", tfidf " << fmt(r.tfidf) << ", silhouette single "
              << fmt(r.sil_single) << " mtl " << fmt(r.sil_mtl) << " (" << fmt(seconds_since(train_t0), 1) << " s)"
              << std::endl;
  }
  const double train_secs = seconds_since(train_t0);

  auto count = [&](auto pred) {
    int n = 0;
    for (const auto& r : seeds) n += pred(r) ? 1 : 0;
    return n;
  };

  const int frozen = count([](const SeedResult& r) { return r.encoder_frozen; });
  report(2, frozen == kSeeds && mage_ok,
         "encoder bit-identical after stage 1 in " + std::to_string(frozen) + "/5 seeds, aux-head grads on a MAGE-only batch " +
             (mage_ok ? "exactly zero" : "NOT zero"));

  const int mtl_wins = count([](const SeedResult& r) { return r.mtl_stage2 >= r.single_dev; });
  report(4, mtl_wins >= 4 && train_secs < 600.0,
         "MTL >= single-task dev macro-F1 in " + std::to_string(mtl_wins) + "/5 seeds (need 4), training " +
             fmt(train_secs, 1) + " s (< 600 s)");

  const int stage_wins = count([](const SeedResult& r) { return r.mtl_stage2 >= r.mtl_stage1; });
  report(5, stage_wins >= 4, "stage 2 >= stage 1 dev macro-F1 in " + std::to_string(stage_wins) + "/5 seeds (need 4)");

  {
    const auto t0 = Clock::now();
    int dominates = 0, gains = 0;
    std::vector<double> half, star, taus;
    for (int seed = 0; seed < kSeeds; ++seed) {
      const ThresholdResult r = threshold_seed(seed);
      dominates += r.curve_dominates;
      gains += r.test_at_tau > r.test_at_half;
      half.push_back(r.test_at_half);
      star.push_back(r.test_at_tau);
      taus.push_back(r.tau);
    }
    report(6, dominates == kSeeds && gains >= 3,
           "curve max >= value at 0.5 on " + std::to_string(dominates) + "/5 runs; tau* {" + list(taus) +
               "} lifts held-out macro-F1 {" + list(half) + "} -> {" + list(star) + "} in " + std::to_string(gains) +
               "/5 seeds (need 3), " + fmt(seconds_since(t0), 1) + " s");
  }

  {
    const int wins = count([](const SeedResult& r) { return r.tfidf < r.mtl_stage2; });
    double worst = 0.0;
    for (const auto& r : seeds) worst = std::max(worst, r.logreg_grad);
    report(7, wins >= 4 && worst < 1e-6,
           "TF-IDF < MTL in " + std::to_string(wins) + "/5 seeds (need 4), max logreg gradient norm " + fmt(worst, 10) +
               " (< 1e-6)");
  }

  {
    const int wins = count([](const SeedResult& r) { return r.sil_mtl > r.sil_single; });
    double worst = 0.0;
    for (const auto& r : seeds) {
      for (std::size_t i = 0; i < r.pca_ratios.size(); ++i) worst = std::max(worst, std::abs(r.pca_ratios[i] - r.pca_oracle[i]));
    }
    report(8, wins >= 4 && worst < 1e-6,
           "MTL silhouette > single-task in " + std::to_string(wins) + "/5 seeds (need 4), max PCA ratio gap vs Jacobi oracle " +
               fmt(worst, 12) + " (< 1e-6)");
  }

  const fs::path scratch = fs::temp_directory_path() / "mtd_acceptance";
  fs::remove_all(scratch);
  fs::create_directories(scratch);

  // 9: ablation harness, run twice
  {
    const std::string smoke = std::string(MTD_SOURCE_DIR) + "/configs/smoke.json";
    bool ok = true;
    std::string csv[2];
    for (int i = 0; i < 2; ++i) {
      const fs::path dir = scratch / ("ablate" + std::to_string(i));
      ok = ok && run_cli("ablate -c " + smoke + " -o " + dir.string(), scratch / "ablate.log") == 0;
      csv[i] = slurp(dir / "ablation.csv");
    }
    std::istringstream in(csv[0]);
    std::string line;
    std::vector<std::string> names;
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#' || line.rfind("configuration,", 0) == 0) continue;
      names.push_back(line.substr(0, line.find(',')));
    }
    const bool shape = names == std::vector<std::string>{"HC3", "M4GT", "HC3+M4GT", "HC3+M4GT+MAGE"};
    report(9, ok && shape && csv[0] == csv[1],
           std::string("ablate wrote ") + std::to_string(names.size()) + " configurations with dev/test macro-F1" +
               (shape ? "" : " (wrong rows)") + ", repeat run " + (csv[0] == csv[1] ? "byte-identical" : "DIFFERS"));
  }

  // 10: repeated train on the acceptance config
  {
    const std::string acc = std::string(MTD_SOURCE_DIR) + "/configs/acceptance.json";
    bool ok = true;
    std::string files[2][3];
    for (int i = 0; i < 2; ++i) {
      const fs::path dir = scratch / ("train" + std::to_string(i));
      ok = ok && run_cli("train -c " + acc + " -o " + dir.string(), scratch / "train.log") == 0;
      ok = ok && run_cli("eval -c " + acc + " -o " + dir.string(), scratch / "eval.log") == 0;
      files[i][0] = slurp(dir / "stage1.ckpt");
      files[i][1] = slurp(dir / "stage2.ckpt");
      files[i][2] = slurp(dir / "eval_stage2_dev.csv");
    }
    bool same = true;
    for (int k = 0; k < 3; ++k) same = same && !files[0][k].empty() && files[0][k] == files[1][k];
    report(10, ok && same,
           std::string("two train+eval runs: checkpoints and EvalReport ") + (same ? "byte-identical" : "DIFFER"));
  }
  fs::remove_all(scratch);

  std::cout << "total " << fmt(seconds_since(start), 1) << " s, " << failures << " failing" << std::endl;
  return failures == 0 ? 0 : 1;
}
