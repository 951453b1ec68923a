#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "support.hpp"

using namespace mtd;

namespace {

SparseVector dense_row(std::initializer_list<double> values) {
  SparseVector v;
  std::uint32_t i = 0;
  for (double x : values) {
    if (x != 0.0) {
      v.index.push_back(i);
      v.value.push_back(x);
    }
    ++i;
  }
  return v;
}

// Dense re-derivation of the regularized logistic gradient, bias included.
double oracle_grad_norm(const std::vector<SparseVector>& x, const std::vector<int>& y, const LogRegModel& m) {
  const std::size_t d = m.weights.size();
  std::vector<double> g(d + 1, 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    std::vector<double> row(d, 0.0);
    for (std::size_t k = 0; k < x[i].nnz(); ++k) row[x[i].index[k]] = x[i].value[k];
    double z = m.bias;
    for (std::size_t j = 0; j < d; ++j) z += row[j] * m.weights[j];
    const double r = 1.0 / (1.0 + std::exp(-z)) - y[i];
    for (std::size_t j = 0; j < d; ++j) g[j] += r * row[j] / static_cast<double>(x.size());
    g[d] += r / static_cast<double>(x.size());
  }
  double s = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    g[j] += m.lambda * m.weights[j];
    s += g[j] * g[j];
  }
  return std::sqrt(s + g[d] * g[d]);
}

}  // namespace

TEST_CASE("idf formula", "[baseline]") {
  std::vector<std::string> docs(10, "common");
  docs[0] = "common rare";
  const auto v = TfidfVectorizer::fit(docs, {1, 1, 100, false});
  CHECK(v.idf()[*v.feature_index("common")] == 1.0);
  CHECK(std::abs(v.idf()[*v.feature_index("rare")] - (std::log(11.0 / 2.0) + 1.0)) < 1e-15);
  CHECK(std::abs(v.idf()[*v.feature_index("rare")] - 2.7047) < 1e-4);
  for (double idf : v.idf()) CHECK(idf > 0.0);
}

TEST_CASE("ngram enumeration", "[baseline]") {
  const std::vector<std::string> docs{"a b"};
  const auto v = TfidfVectorizer::fit(docs);
  CHECK(v.features() == std::vector<std::string>{"a", "a b", "b"});
  CHECK_THROWS(TfidfVectorizer::fit(std::vector<std::string>{}));
}

TEST_CASE("max_features keeps most frequent", "[baseline]") {
  const std::vector<std::string> docs{"x y z", "x y", "x"};
  const auto v = TfidfVectorizer::fit(docs, {1, 1, 2, false});
  CHECK(v.features() == std::vector<std::string>{"x", "y"});
}

TEST_CASE("tfidf transform", "[baseline]") {
  const std::vector<std::string> docs{"a b", "b c", "a a d"};
  const auto v = TfidfVectorizer::fit(docs, {1, 1, 100, false});
  CHECK(v.transform("zzz qqq").nnz() == 0);
  const auto one = v.transform("d");
  REQUIRE(one.nnz() == 1);
  CHECK(one.value[0] == 1.0);
  const auto row = v.transform("a a d");
  double n2 = 0.0;
  for (double x : row.value) n2 += x * x;
  CHECK(std::abs(n2 - 1.0) < 1e-12);
  // raw counts: a twice
  const double ia = v.idf()[*v.feature_index("a")], id = v.idf()[*v.feature_index("d")];
  CHECK(std::abs(row.value[0] / row.value[1] - 2.0 * ia / id) < 1e-12);
  const auto again = v.transform("a a d");
  CHECK(again.index == row.index);
  CHECK(again.value == row.value);

  const auto sub = TfidfVectorizer::fit(docs, {1, 1, 100, true});
  const auto srow = sub.transform("a a d");
  CHECK(std::abs(srow.value[0] / srow.value[1] - (1.0 + std::log(2.0)) * ia / id) < 1e-12);
}

TEST_CASE("tfidf fit is deterministic", "[baseline]") {
  const Corpus c = testsupport::tiny_corpus(3, 1);
  const auto a = TfidfVectorizer::fit(c.texts());
  const auto b = TfidfVectorizer::fit(c.texts());
  CHECK(a.features() == b.features());
  CHECK(a.idf() == b.idf());
}

TEST_CASE("logreg separable pair", "[baseline]") {
  const std::vector<SparseVector> x{dense_row({1.0}), dense_row({-1.0})};
  const std::vector<int> y{1, 0};
  const auto m = logreg_train(x, y, 1, {0.1, 500, 1e-8});
  const auto p = logreg_predict(m, x);
  CHECK(p.labels == y);
}

TEST_CASE("logreg strong regularization", "[baseline]") {
  const std::vector<SparseVector> x{dense_row({1.0, 0.5}), dense_row({-1.0, 0.2}), dense_row({0.3, -1.0}),
                                    dense_row({-0.2, -0.4})};
  const std::vector<int> y{1, 0, 1, 0};
  const auto m = logreg_train(x, y, 2, {1e8, 500, 1e-10});
  CHECK(l2_norm(m.weights) < 1e-7);
  for (double p : logreg_predict(m, x).p_machine) CHECK(std::abs(p - 0.5) < 1e-6);
}

TEST_CASE("logreg optimality and monotone objective", "[baseline]") {
  const Corpus c = testsupport::tiny_corpus(10, 3);
  const auto v = TfidfVectorizer::fit(c.texts());
  const auto x = v.transform(c.texts());
  const auto y = c.labels();
  LogRegTrace trace;
  const auto m = logreg_train(x, y, v.size(), {}, &trace);
  CHECK(trace.final_grad_norm < 1e-6);
  CHECK(oracle_grad_norm(x, y, m) < 1e-6);
  for (std::size_t i = 1; i < trace.objective.size(); ++i) REQUIRE(trace.objective[i] <= trace.objective[i - 1]);
}

TEST_CASE("logreg errors", "[baseline]") {
  const std::vector<SparseVector> x{dense_row({1.0}), dense_row({-1.0})};
  CHECK_THROWS(logreg_train(x, std::vector<int>{1, 1}, 1));
  CHECK_THROWS(logreg_train(x, std::vector<int>{1}, 1));
}

TEST_CASE("logreg predict closed forms", "[baseline]") {
  LogRegModel zero{{0.0, 0.0}, 0.0, 1e-4};
  for (double p : logreg_predict(zero, std::vector<SparseVector>{dense_row({1.0, 2.0}), dense_row({0.0, -3.0})}).p_machine) {
    CHECK(p == 0.5);
  }
  LogRegModel m{{1.0}, 0.0, 1e-4};
  const auto r = logreg_predict(m, std::vector<SparseVector>{dense_row({std::log(3.0)})}, 0.92);
  CHECK(std::abs(r.p_machine[0] - 0.75) < 1e-12);
  // same rule as the neural decision
  CHECK(r.labels[0] == to_int(DecisionRule{0.92}.decide(r.p_machine[0])));
  CHECK(r.labels[0] == 0);
}

TEST_CASE("baseline save and load", "[baseline]") {
  const Corpus c = testsupport::tiny_corpus(4, 3);
  const auto b = train_tfidf_baseline(c);
  const auto dir = testsupport::scratch_dir("baseline");
  const auto path = (dir / "b.bin").string();
  save_baseline(b, path);
  const auto back = load_baseline(path);
  CHECK(back.vectorizer.features() == b.vectorizer.features());
  CHECK(back.vectorizer.idf() == b.vectorizer.idf());
  CHECK(back.model.weights == b.model.weights);
  CHECK(back.model.bias == b.model.bias);
  CHECK(back.p_machine(c.texts()) == b.p_machine(c.texts()));
  CHECK_THROWS_AS(load_checkpoint(path), FormatError);
}
