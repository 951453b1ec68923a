#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"

#include "mtd/container.hpp"
#include "mtd/corpus.hpp"
#include "mtd/encoder.hpp"

namespace mtd {

// --- TF-IDF --------------------------------------------------------------

struct TfidfConfig {
  std::size_t ngram_lo = 1;
  std::size_t ngram_hi = 2;
  std::size_t max_features = 50000;
  bool sublinear_tf = false;

  void validate() const {
    if (ngram_lo < 1 || ngram_hi < ngram_lo) throw std::invalid_argument("TfidfConfig: bad n-gram range");
    if (max_features < 1) throw std::invalid_argument("TfidfConfig: max_features must be >= 1");
  }

  friend bool operator==(const TfidfConfig&, const TfidfConfig&) = default;
};

// Sorted by feature index.
struct SparseVector {
  std::vector<std::uint32_t> index;
  std::vector<double> value;

  std::size_t nnz() const { return index.size(); }
};

// Word n-grams in text order, tokens joined by a single space.
inline std::vector<std::string> word_ngrams(std::string_view text, std::size_t lo, std::size_t hi) {
  const auto words = word_tokens(text);
  std::vector<std::string> out;
  for (std::size_t n = lo; n <= hi; ++n) {
    for (std::size_t i = 0; i + n <= words.size(); ++i) {
      std::string g = words[i];
      for (std::size_t j = 1; j < n; ++j) g += ' ' + words[i + j];
      out.push_back(std::move(g));
    }
  }
  return out;
}

class TfidfVectorizer {
 public:
  TfidfVectorizer() = default;

  // Keeps the max_features n-grams with the highest document frequency (ties
  // lexicographic); idf = ln((1 + N) / (1 + df)) + 1.
  static TfidfVectorizer fit(std::span<const std::string> texts, TfidfConfig cfg = {}) {
    cfg.validate();
    if (texts.empty()) throw std::invalid_argument("tfidf_fit: empty corpus");
    std::unordered_map<std::string, std::size_t> df;
    for (const auto& t : texts) {
      auto grams = word_ngrams(t, cfg.ngram_lo, cfg.ngram_hi);
      std::sort(grams.begin(), grams.end());
      grams.erase(std::unique(grams.begin(), grams.end()), grams.end());
      for (auto& g : grams) ++df[std::move(g)];
    }
    std::vector<std::pair<std::string, std::size_t>> ranked(df.begin(), df.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
      return a.second != b.second ? a.second > b.second : a.first < b.first;
    });
    if (ranked.size() > cfg.max_features) ranked.resize(cfg.max_features);
    // Feature index follows lexicographic order of the kept n-grams.
    std::sort(ranked.begin(), ranked.end());
    TfidfVectorizer v;
    v.cfg_ = cfg;
    const double n = static_cast<double>(texts.size());
    for (auto& [gram, count] : ranked) {
      v.index_.emplace(gram, static_cast<std::uint32_t>(v.features_.size()));
      v.features_.push_back(gram);
      v.idf_.push_back(std::log((1.0 + n) / (1.0 + static_cast<double>(count))) + 1.0);
    }
    return v;
  }

  static TfidfVectorizer from_parts(TfidfConfig cfg, std::vector<std::string> features, std::vector<double> idf) {
    if (features.size() != idf.size()) throw std::invalid_argument("TfidfVectorizer: features/idf length mismatch");
    TfidfVectorizer v;
    v.cfg_ = cfg;
    v.features_ = std::move(features);
    v.idf_ = std::move(idf);
    for (std::size_t i = 0; i < v.features_.size(); ++i) {
      if (!v.index_.emplace(v.features_[i], static_cast<std::uint32_t>(i)).second) {
        throw std::invalid_argument("TfidfVectorizer: duplicate feature '" + v.features_[i] + "'");
      }
    }
    return v;
  }

  const TfidfConfig& config() const { return cfg_; }
  std::size_t size() const { return features_.size(); }
  const std::vector<std::string>& features() const { return features_; }
  const std::vector<double>& idf() const { return idf_; }

  std::optional<std::size_t> feature_index(const std::string& gram) const {
    auto it = index_.find(gram);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  SparseVector transform(std::string_view text) const {
    std::map<std::uint32_t, double> counts;
    for (const auto& g : word_ngrams(text, cfg_.ngram_lo, cfg_.ngram_hi)) {
      auto it = index_.find(g);
      if (it != index_.end()) counts[it->second] += 1.0;
    }
    SparseVector out;
    double norm2 = 0.0;
    for (const auto& [i, c] : counts) {
      const double tf = cfg_.sublinear_tf ? 1.0 + std::log(c) : c;
      const double v = tf * idf_[i];
      out.index.push_back(i);
      out.value.push_back(v);
      norm2 += v * v;
    }
    if (norm2 > 0.0) {
      const double inv = 1.0 / std::sqrt(norm2);
      for (double& v : out.value) v *= inv;
    }
    return out;
  }

  std::vector<SparseVector> transform(std::span<const std::string> texts) const {
    std::vector<SparseVector> out;
    out.reserve(texts.size());
    for (const auto& t : texts) out.push_back(transform(t));
    return out;
  }

 private:
  TfidfConfig cfg_;
  std::vector<std::string> features_;
  std::vector<double> idf_;
  std::unordered_map<std::string, std::uint32_t> index_;
};

// --- logistic regression -------------------------------------------------

struct LogRegConfig {
  double lambda = 1e-4;
  std::size_t max_iters = 500;
  double tol = 1e-8;

  void validate() const {
    if (!(lambda >= 0.0)) throw std::invalid_argument("LogRegConfig: lambda must be >= 0");
    if (!(tol > 0.0)) throw std::invalid_argument("LogRegConfig: tol must be > 0");
  }
};

struct LogRegModel {
  std::vector<double> weights;
  double bias = 0.0;
  double lambda = 1e-4;
};

struct LogRegTrace {
  std::vector<double> objective;  // after each accepted step, starting with the initial point
  std::size_t iterations = 0;
  double final_grad_norm = 0.0;
  bool converged = false;
};

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// log(1 + exp(z)) without overflow.
inline double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

inline double sparse_dot(const SparseVector& x, std::span<const double> w) {
  double s = 0.0;
  for (std::size_t k = 0; k < x.nnz(); ++k) s += x.value[k] * w[x.index[k]];
  return s;
}

// Mean logistic loss + (lambda/2)|w|^2. The bias is not regularized.
inline double logreg_objective(std::span<const SparseVector> x, std::span<const int> y, std::span<const double> w,
                               double b, double lambda) {
  double loss = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double z = sparse_dot(x[i], w) + b;
    loss += softplus(z) - (y[i] == 1 ? z : 0.0);
  }
  double reg = 0.0;
  for (double v : w) reg += v * v;
  return loss / static_cast<double>(x.size()) + 0.5 * lambda * reg;
}

// Gradient of logreg_objective; the last element is d/db.
inline std::vector<double> logreg_gradient(std::span<const SparseVector> x, std::span<const int> y,
                                           std::span<const double> w, double b, double lambda) {
  std::vector<double> g(w.size() + 1, 0.0);
  const double inv_n = 1.0 / static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = (sigmoid(sparse_dot(x[i], w) + b) - (y[i] == 1 ? 1.0 : 0.0)) * inv_n;
    for (std::size_t k = 0; k < x[i].nnz(); ++k) g[x[i].index[k]] += r * x[i].value[k];
    g.back() += r;
  }
  for (std::size_t j = 0; j < w.size(); ++j) g[j] += lambda * w[j];
  return g;
}

inline double l2_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

// Full-batch gradient descent. Each iteration tries a Barzilai-Borwein step
// and backtracks (Armijo) until the objective decreases enough, so accepted
// objectives never increase.
inline LogRegModel logreg_train(std::span<const SparseVector> x, std::span<const int> y, std::size_t n_features,
                                const LogRegConfig& cfg = {}, LogRegTrace* trace = nullptr) {
  cfg.validate();
  if (x.size() != y.size()) throw std::invalid_argument("logreg_train: features/labels length mismatch");
  bool seen0 = false, seen1 = false;
  for (int v : y) {
    if (v != 0 && v != 1) throw std::invalid_argument("logreg_train: labels must be 0 or 1");
    (v ? seen1 : seen0) = true;
  }
  if (!seen0 || !seen1) throw std::invalid_argument("logreg_train: both classes must be present");
  for (const auto& row : x) {
    for (auto i : row.index) {
      if (i >= n_features) throw std::invalid_argument("logreg_train: feature index out of range");
    }
  }

  const std::size_t p = n_features + 1;  // weights then bias
  std::vector<double> theta(p, 0.0);
  auto w_of = [&](const std::vector<double>& t) { return std::span<const double>(t.data(), n_features); };
  auto objective = [&](const std::vector<double>& t) { return logreg_objective(x, y, w_of(t), t.back(), cfg.lambda); };
  auto gradient = [&](const std::vector<double>& t) { return logreg_gradient(x, y, w_of(t), t.back(), cfg.lambda); };

  double f = objective(theta);
  std::vector<double> g = gradient(theta);
  LogRegTrace local;
  local.objective.push_back(f);
  double step = 1.0;
  std::vector<double> cand(p);
  std::size_t it = 0;
  for (; it < cfg.max_iters; ++it) {
    const double gnorm = l2_norm(g);
    if (gnorm < cfg.tol) {
      local.converged = true;
      break;
    }
    const double g2 = gnorm * gnorm;
    double f_new = f;
    for (int tries = 0; tries < 60; ++tries) {
      for (std::size_t j = 0; j < p; ++j) cand[j] = theta[j] - step * g[j];
      f_new = objective(cand);
      if (f_new <= f - 1e-4 * step * g2) break;
      step *= 0.5;
    }
    if (!(f_new <= f)) break;  // no progress possible at this precision
    std::vector<double> g_new = gradient(cand);
    double ss = 0.0, sy = 0.0;
    for (std::size_t j = 0; j < p; ++j) {
      const double s = cand[j] - theta[j];
      const double yy = g_new[j] - g[j];
      ss += s * s;
      sy += s * yy;
    }
    theta.swap(cand);
    g.swap(g_new);
    f = f_new;
    local.objective.push_back(f);
    step = sy > 0.0 ? ss / sy : 1.0;
  }
  local.iterations = it;
  local.final_grad_norm = l2_norm(g);
  if (local.final_grad_norm < cfg.tol) local.converged = true;
  if (trace) *trace = std::move(local);

  LogRegModel m;
  m.weights.assign(theta.begin(), theta.begin() + static_cast<std::ptrdiff_t>(n_features));
  m.bias = theta.back();
  m.lambda = cfg.lambda;
  return m;
}

struct LogRegPredictions {
  std::vector<int> labels;
  std::vector<double> p_machine;
};

inline LogRegPredictions logreg_predict(const LogRegModel& m, std::span<const SparseVector> x, double threshold = 0.5) {
  LogRegPredictions out;
  for (const auto& row : x) {
    const double p = sigmoid(sparse_dot(row, m.weights) + m.bias);
    out.p_machine.push_back(p);
    out.labels.push_back(p >= threshold ? 1 : 0);
  }
  return out;
}

// --- the combined baseline ------------------------------------------------

struct TfidfBaseline {
  TfidfVectorizer vectorizer;
  LogRegModel model;

  std::vector<double> p_machine(std::span<const std::string> texts) const {
    return logreg_predict(model, vectorizer.transform(texts)).p_machine;
  }
};

inline TfidfBaseline train_tfidf_baseline(const Corpus& train, const TfidfConfig& tcfg = {},
                                          const LogRegConfig& lcfg = {}, LogRegTrace* trace = nullptr) {
  const auto texts = train.texts();
  const auto labels = train.labels();
  TfidfBaseline b;
  b.vectorizer = TfidfVectorizer::fit(texts, tcfg);
  const auto x = b.vectorizer.transform(texts);
  b.model = logreg_train(x, labels, b.vectorizer.size(), lcfg, trace);
  return b;
}

inline Container to_container(const TfidfBaseline& b) {
  Container c;
  c.kind = ContainerKind::baseline;
  const auto& cfg = b.vectorizer.config();
  c.meta = {{"tfidf",
             {{"ngram_lo", cfg.ngram_lo},
              {"ngram_hi", cfg.ngram_hi},
              {"max_features", cfg.max_features},
              {"sublinear_tf", cfg.sublinear_tf}}},
            {"features", b.vectorizer.features()},
            {"lambda", b.model.lambda},
            {"bias", b.model.bias}};
  c.arrays.push_back({"idf", {b.vectorizer.size()}, b.vectorizer.idf()});
  c.arrays.push_back({"weights", {b.model.weights.size()}, b.model.weights});
  return c;
}

inline TfidfBaseline baseline_from_container(const Container& c) {
  TfidfBaseline b;
  try {
    const auto& t = c.meta.at("tfidf");
    TfidfConfig cfg{t.at("ngram_lo").get<std::size_t>(), t.at("ngram_hi").get<std::size_t>(),
                    t.at("max_features").get<std::size_t>(), t.at("sublinear_tf").get<bool>()};
    if (c.arrays.size() != 2 || c.arrays[0].name != "idf" || c.arrays[1].name != "weights") {
      throw FormatError("baseline container must hold 'idf' and 'weights'");
    }
    b.vectorizer =
        TfidfVectorizer::from_parts(cfg, c.meta.at("features").get<std::vector<std::string>>(), c.arrays[0].data);
    b.model.weights = c.arrays[1].data;
    b.model.bias = c.meta.at("bias").get<double>();
    b.model.lambda = c.meta.at("lambda").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad baseline header: ") + e.what());
  }
  if (b.model.weights.size() != b.vectorizer.size()) throw FormatError("baseline weights/features length mismatch");
  return b;
}

inline void save_baseline(const TfidfBaseline& b, const std::string& path) { save_container(to_container(b), path); }

inline TfidfBaseline load_baseline(const std::string& path) {
  return baseline_from_container(load_container(path, ContainerKind::baseline));
}

}  // namespace mtd
