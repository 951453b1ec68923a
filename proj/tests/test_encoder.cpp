#include <catch2/catch_amalgamated.hpp>

#include "support.hpp"

using namespace mtd;

namespace {

Corpus texts_corpus(std::initializer_list<const char*> texts) {
  Corpus c;
  int i = 0;
  for (const char* t : texts) {
    LabeledSample s;
    s.id = std::to_string(i++);
    s.text = t;
    c.samples.push_back(s);
  }
  return c;
}

EncoderConfig small_config(std::size_t vocab, std::uint64_t seed = 1) {
  EncoderConfig cfg;
  cfg.vocab_size = vocab;
  cfg.d_model = 8;
  cfg.n_layers = 2;
  cfg.n_heads = 2;
  cfg.d_ff = 12;
  cfg.max_len = 10;
  cfg.dropout_p = 0.1;
  cfg.init_std = 0.5;
  cfg.seed = seed;
  return cfg;
}

TokenBatch random_batch(std::size_t batch, std::size_t len, std::size_t vocab, std::uint64_t seed) {
  Rng rng(seed);
  TokenBatch b;
  b.batch = batch;
  b.seq_len = len;
  for (std::size_t r = 0; r < batch; ++r) {
    const std::size_t used = 1 + rng.below(len);
    for (std::size_t i = 0; i < len; ++i) {
      if (i == 0) {
        b.ids.push_back(Vocab::kCls);
      } else {
        b.ids.push_back(i < used ? static_cast<int>(1 + rng.below(vocab - 1)) : Vocab::kPad);
      }
      b.mask.push_back(i < used ? 1 : 0);
    }
  }
  return b;
}

// Same rows with `extra` more [PAD] columns on the right.
TokenBatch pad_more(const TokenBatch& b, std::size_t extra) {
  TokenBatch out;
  out.batch = b.batch;
  out.seq_len = b.seq_len + extra;
  for (std::size_t r = 0; r < b.batch; ++r) {
    for (std::size_t i = 0; i < out.seq_len; ++i) {
      out.ids.push_back(i < b.seq_len ? b.ids[r * b.seq_len + i] : Vocab::kPad);
      out.mask.push_back(i < b.seq_len ? b.mask[r * b.seq_len + i] : 0);
    }
  }
  return out;
}

}  // namespace

TEST_CASE("build_vocab frequency order", "[encoder]") {
  const Vocab v = build_vocab(texts_corpus({"a b", "a"}), 10);
  CHECK(v.size() == 5);
  CHECK(v.id("a") == 3);
  CHECK(v.id("b") == 4);
  CHECK(v.token(0) == "[PAD]");
  CHECK(v.token(1) == "[CLS]");
  CHECK(v.token(2) == "[UNK]");
}

TEST_CASE("build_vocab tie break and truncation", "[encoder]") {
  const Vocab v = build_vocab(texts_corpus({"b a"}), 10);
  CHECK(v.id("a") < v.id("b"));
  const Vocab t = build_vocab(texts_corpus({"c0 c1 c2 c3 c4 c5 c6 c7 c8 c9"}), 5);
  CHECK(t.size() == 5);
  CHECK(t.tokens()[3] == "c0");
  CHECK(t.tokens()[4] == "c1");
  CHECK_THROWS(build_vocab(texts_corpus({"a"}), 3));
  CHECK_THROWS(build_vocab(Corpus{}, 10));
}

TEST_CASE("build_vocab lowercases and splits punctuation", "[encoder]") {
  const Vocab v = build_vocab(texts_corpus({"Hello, world! hello"}), 10);
  CHECK(v.id("hello") == 3);
  CHECK(v.contains("world"));
  CHECK_FALSE(v.contains("Hello"));
}

TEST_CASE("tokenize contract", "[encoder]") {
  const Vocab v(std::vector<std::string>{"a"});
  auto e = tokenize("", v, 5);
  CHECK(e.ids == std::vector<int>{1, 0, 0, 0, 0});
  CHECK(e.mask == std::vector<std::uint8_t>{1, 0, 0, 0, 0});
  auto aa = tokenize("a a", v, 4);
  CHECK(aa.ids == std::vector<int>{1, 3, 3, 0});
  CHECK(aa.mask == std::vector<std::uint8_t>{1, 1, 1, 0});
  CHECK(tokenize("zzz", v, 3).ids == std::vector<int>{1, 2, 0});
  std::string long_text;
  for (int i = 0; i < 100; ++i) long_text += "a ";
  auto t = tokenize(long_text, v, 8);
  CHECK(t.ids.size() == 8);
  CHECK(t.ids[0] == Vocab::kCls);
  CHECK(t.mask == std::vector<std::uint8_t>(8, 1));
}

TEST_CASE("encode shape and eval determinism", "[encoder]") {
  const EncoderModel m(small_config(12));
  const TokenBatch b = random_batch(3, 6, 12, 4);
  Rng rng(0);
  const Tensor a = m.encode(b, false, rng);
  CHECK(a.shape() == Shape{3, 8});
  const Tensor c = m.encode(b, false, rng);
  for (std::size_t i = 0; i < a.size(); ++i) REQUIRE(a.data()[i] == c.data()[i]);
}

TEST_CASE("encode train mode uses dropout", "[encoder]") {
  const EncoderModel m(small_config(12));
  const TokenBatch b = random_batch(3, 6, 12, 4);
  Rng r1(5), r2(5), r3(6);
  const Tensor a = m.encode(b, true, r1);
  const Tensor same = m.encode(b, true, r2);
  const Tensor other = m.encode(b, true, r3);
  bool differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    REQUIRE(a.data()[i] == same.data()[i]);
    differs = differs || a.data()[i] != other.data()[i];
  }
  CHECK(differs);
}

TEST_CASE("encode rejects bad ids", "[encoder]") {
  const EncoderModel m(small_config(12));
  TokenBatch b = random_batch(2, 4, 12, 4);
  b.ids[1] = 12;
  Rng rng;
  CHECK_THROWS_AS(m.encode(b, false, rng), std::out_of_range);
  TokenBatch too_long = random_batch(1, 11, 12, 4);
  CHECK_THROWS(m.encode(too_long, false, rng));
}

TEST_CASE("padding invariance", "[encoder]") {
  const EncoderModel m(small_config(20, 7));
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    const TokenBatch b = random_batch(4, 5, 20, seed);
    const TokenBatch padded = pad_more(b, 1 + seed % 5);
    Rng rng;
    const Tensor x = m.encode(b, false, rng);
    const Tensor y = m.encode(padded, false, rng);
    for (std::size_t i = 0; i < x.size(); ++i) REQUIRE(std::abs(x.data()[i] - y.data()[i]) < 1e-12);
  }
}

TEST_CASE("encoder gradient check", "[encoder]") {
  EncoderConfig cfg = small_config(9, 3);
  cfg.dropout_p = 0.0;
  cfg.max_len = 5;
  cfg.d_ff = 8;
  EncoderModel m(cfg);
  const TokenBatch b = random_batch(2, 5, 9, 8);
  std::vector<Tensor> params;
  for (auto& [_, t] : m.params().entries()) params.push_back(t);
  auto f = [&] {
    Rng rng;
    return testsupport::project_scalar(m.encode(b, false, rng), 77);
  };
  CHECK(grad_check(f, params).max_rel_error < 1e-4);
}

TEST_CASE("encoder parameters", "[encoder]") {
  const EncoderConfig cfg = small_config(12);
  const EncoderModel a(cfg), b(cfg);
  const std::size_t d = 8, ff = 12, L = 2;
  const std::size_t per_layer = 4 * d + 4 * d * d + 3 * d + 2 * d * ff + ff + d;
  CHECK(a.params().parameter_count() == 12 * d + 10 * d + L * per_layer + 2 * d);
  std::set<std::string> names;
  for (const auto& [name, _] : a.params().entries()) names.insert(name);
  CHECK(names.size() == a.params().size());
  REQUIRE(a.params().size() == b.params().size());
  for (std::size_t i = 0; i < a.params().size(); ++i) {
    const auto& x = a.params().entries()[i].second;
    const auto& y = b.params().entries()[i].second;
    CHECK(std::equal(x.data().begin(), x.data().end(), y.data().begin()));
  }
  const EncoderModel c(small_config(12, 2));
  const auto& x = a.params().at("encoder.tok_emb").data();
  const auto& y = c.params().at("encoder.tok_emb").data();
  CHECK_FALSE(std::equal(x.begin(), x.end(), y.begin()));
  CHECK(a.params().at("encoder.layers.0.ln1.gain").data()[0] == 1.0);
  CHECK(a.params().at("encoder.layers.0.ln1.bias").data()[0] == 0.0);
}

TEST_CASE("encoder config validation", "[encoder]") {
  EncoderConfig cfg = small_config(12);
  cfg.n_heads = 3;
  CHECK_THROWS(EncoderModel(cfg));
  cfg = small_config(12);
  cfg.max_len = 1;
  CHECK_THROWS(EncoderModel(cfg));
}
