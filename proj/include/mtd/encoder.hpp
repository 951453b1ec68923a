#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mtd/corpus.hpp"
#include "mtd/ops.hpp"
#include "mtd/rng.hpp"
#include "mtd/tensor.hpp"

namespace mtd {

// Lowercased word tokens. ASCII letters and digits form words; every other
// ASCII byte separates them. Bytes >= 0x80 are kept inside words so UTF-8
// text is never split mid-character.
inline std::vector<std::string> word_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (unsigned char c : text) {
    if (c >= 0x80 || std::isalnum(c)) {
      cur.push_back(static_cast<char>(c < 0x80 ? std::tolower(c) : c));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kCls = 1;
  static constexpr int kUnk = 2;
  static constexpr std::size_t kReserved = 3;

  Vocab() : tokens_{"[PAD]", "[CLS]", "[UNK]"} { rebuild_index(); }

  // Content tokens in id order, after the reserved ones.
  explicit Vocab(std::vector<std::string> content) : Vocab() {
    for (auto& t : content) {
      if (index_.contains(t)) throw std::invalid_argument("Vocab: duplicate token '" + t + "'");
      index_.emplace(t, static_cast<int>(tokens_.size()));
      tokens_.push_back(std::move(t));
    }
  }

  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  int id(std::string_view token) const {
    auto it = index_.find(std::string(token));
    return it == index_.end() ? kUnk : it->second;
  }

  bool contains(std::string_view token) const { return index_.contains(std::string(token)); }
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.tokens_ == b.tokens_; }

 private:
  void rebuild_index() {
    index_.clear();
    for (std::size_t i = 0; i < tokens_.size(); ++i) index_.emplace(tokens_[i], static_cast<int>(i));
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

// Frequency-ranked vocabulary (ties lexicographic), capped at max_size
// entries including the three reserved ids.
inline Vocab build_vocab(const Corpus& corpus, std::size_t max_size) {
  if (max_size < 4) throw std::invalid_argument("build_vocab: max_size must be >= 4");
  if (corpus.empty()) throw std::invalid_argument("build_vocab: empty corpus");
  std::map<std::string, std::size_t> freq;
  for (const auto& s : corpus.samples) {
    for (auto& t : word_tokens(s.text)) ++freq[t];
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(freq.begin(), freq.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  const std::size_t keep = std::min(ranked.size(), max_size - Vocab::kReserved);
  std::vector<std::string> content;
  content.reserve(keep);
  for (std::size_t i = 0; i < keep; ++i) content.push_back(std::move(ranked[i].first));
  return Vocab(std::move(content));
}

struct TokenizedText {
  std::vector<int> ids;
  std::vector<std::uint8_t> mask;
};

// [CLS] + word ids, truncated and [PAD]-padded to max_len.
inline TokenizedText tokenize(std::string_view text, const Vocab& vocab, std::size_t max_len) {
  if (max_len < 1) throw std::invalid_argument("tokenize: max_len must be >= 1");
  TokenizedText out{std::vector<int>(max_len, Vocab::kPad), std::vector<std::uint8_t>(max_len, 0)};
  out.ids[0] = Vocab::kCls;
  out.mask[0] = 1;
  std::size_t pos = 1;
  for (const auto& t : word_tokens(text)) {
    if (pos >= max_len) break;
    out.ids[pos] = vocab.id(t);
    out.mask[pos] = 1;
    ++pos;
  }
  return out;
}

// A rectangular batch of token sequences; ids and mask are [batch x seq_len].
struct TokenBatch {
  std::size_t batch = 0;
  std::size_t seq_len = 0;
  std::vector<int> ids;
  std::vector<std::uint8_t> mask;
};

// Packs tokenized texts, dropping trailing columns that are padding in every
// row. Masked attention makes the [CLS] output independent of that padding.
inline TokenBatch make_token_batch(std::span<const TokenizedText> rows) {
  TokenBatch b;
  b.batch = rows.size();
  for (const auto& r : rows) {
    std::size_t used = 0;
    for (std::size_t i = 0; i < r.mask.size(); ++i) {
      if (r.mask[i]) used = i + 1;
    }
    b.seq_len = std::max(b.seq_len, used);
  }
  b.ids.assign(b.batch * b.seq_len, Vocab::kPad);
  b.mask.assign(b.batch * b.seq_len, 0);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const std::size_t n = std::min(b.seq_len, rows[r].ids.size());
    std::copy_n(rows[r].ids.begin(), n, b.ids.begin() + static_cast<std::ptrdiff_t>(r * b.seq_len));
    std::copy_n(rows[r].mask.begin(), n, b.mask.begin() + static_cast<std::ptrdiff_t>(r * b.seq_len));
  }
  return b;
}

inline TokenBatch tokenize_batch(std::span<const std::string> texts, const Vocab& vocab, std::size_t max_len) {
  std::vector<TokenizedText> rows;
  rows.reserve(texts.size());
  for (const auto& t : texts) rows.push_back(tokenize(t, vocab, max_len));
  return make_token_batch(rows);
}

struct EncoderConfig {
  std::size_t vocab_size = 0;
  std::size_t d_model = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t d_ff = 128;
  std::size_t max_len = 64;
  double dropout_p = 0.1;
  double init_std = 0.02;
  std::uint64_t seed = 0;

  void validate() const {
    if (vocab_size < Vocab::kReserved) throw std::invalid_argument("EncoderConfig: vocab_size too small");
    if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0) {
      throw std::invalid_argument("EncoderConfig: d_model must be a positive multiple of n_heads");
    }
    if (n_layers == 0) throw std::invalid_argument("EncoderConfig: n_layers must be >= 1");
    if (d_ff == 0) throw std::invalid_argument("EncoderConfig: d_ff must be >= 1");
    if (max_len < 2) throw std::invalid_argument("EncoderConfig: max_len must be >= 2");
    if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw std::invalid_argument("EncoderConfig: dropout_p must be in [0, 1)");
    if (!(init_std > 0.0)) throw std::invalid_argument("EncoderConfig: init_std must be > 0");
  }

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

// Pre-norm Transformer encoder over word ids, returning the final hidden
// state at the [CLS] position.
class EncoderModel {
 public:
  explicit EncoderModel(EncoderConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(cfg_.seed);
    const std::size_t d = cfg_.d_model;
    tok_emb_ = param("encoder.tok_emb", {cfg_.vocab_size, d}, rng);
    pos_emb_ = param("encoder.pos_emb", {cfg_.max_len, d}, rng);
    for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
      const std::string p = "encoder.layers." + std::to_string(l) + ".";
      Layer layer;
      layer.ln1_g = constant(p + "ln1.gain", d, 1.0);
      layer.ln1_b = constant(p + "ln1.bias", d, 0.0);
      layer.wq = param(p + "attn.wq", {d, d}, rng);
      layer.bq = constant(p + "attn.bq", d, 0.0);
      layer.wk = param(p + "attn.wk", {d, d}, rng);
      layer.wv = param(p + "attn.wv", {d, d}, rng);
      layer.bv = constant(p + "attn.bv", d, 0.0);
      layer.wo = param(p + "attn.wo", {d, d}, rng);
      layer.bo = constant(p + "attn.bo", d, 0.0);
      layer.ln2_g = constant(p + "ln2.gain", d, 1.0);
      layer.ln2_b = constant(p + "ln2.bias", d, 0.0);
      layer.w1 = param(p + "ff.w1", {d, cfg_.d_ff}, rng);
      layer.b1 = constant(p + "ff.b1", cfg_.d_ff, 0.0);
      layer.w2 = param(p + "ff.w2", {cfg_.d_ff, d}, rng);
      layer.b2 = constant(p + "ff.b2", d, 0.0);
      layers_.push_back(layer);
    }
    lnf_g_ = constant("encoder.final_ln.gain", d, 1.0);
    lnf_b_ = constant("encoder.final_ln.bias", d, 0.0);
  }

  EncoderModel(const EncoderModel&) = delete;
  EncoderModel& operator=(const EncoderModel&) = delete;
  EncoderModel(EncoderModel&&) = default;
  EncoderModel& operator=(EncoderModel&&) = default;

  const EncoderConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  // [batch x d_model] [CLS] vectors. Dropout draws from `rng` only in train mode.
  Tensor encode(const TokenBatch& batch, bool train_mode, Rng& rng) const {
    const std::size_t B = batch.batch, L = batch.seq_len;
    if (B == 0 || L == 0) throw std::invalid_argument("encode: empty batch");
    if (L > cfg_.max_len) throw std::invalid_argument("encode: sequence longer than max_len");
    if (batch.ids.size() != B * L || batch.mask.size() != B * L) throw std::invalid_argument("encode: malformed batch");
    for (int id : batch.ids) {
      if (id < 0 || static_cast<std::size_t>(id) >= cfg_.vocab_size) {
        throw std::out_of_range("encode: token id " + std::to_string(id) + " out of range");
      }
    }
    std::vector<int> positions(B * L);
    for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<int>(i % L);
    std::vector<int> cls_rows(B);
    for (std::size_t b = 0; b < B; ++b) cls_rows[b] = static_cast<int>(b * L);

    const double p = cfg_.dropout_p;
    Tensor x = add(gather_rows(tok_emb_, batch.ids), gather_rows(pos_emb_, positions));
    x = dropout(x, p, train_mode, rng);
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const Layer& ly = layers_[l];
      // The last layer only needs outputs at [CLS]; keys and values still
      // cover every position.
      const bool last = l + 1 == layers_.size();
      Tensor h = layer_norm(x, ly.ln1_g, ly.ln1_b);
      Tensor k = linear(h, ly.wk);  // a key bias only shifts each score row, so there is none
      Tensor v = linear(h, ly.wv, ly.bv);
      Tensor residual = last ? gather_rows(x, cls_rows) : x;
      Tensor q = linear(last ? gather_rows(h, cls_rows) : h, ly.wq, ly.bq);
      Tensor a = attention(q, k, v, batch.mask, B, last ? 1 : L, L, cfg_.n_heads);
      x = add(residual, dropout(linear(a, ly.wo, ly.bo), p, train_mode, rng));
      Tensor h2 = layer_norm(x, ly.ln2_g, ly.ln2_b);
      Tensor f = linear(gelu(linear(h2, ly.w1, ly.b1)), ly.w2, ly.b2);
      x = add(x, dropout(f, p, train_mode, rng));
    }
    return layer_norm(x, lnf_g_, lnf_b_);
  }

 private:
  struct Layer {
    Tensor ln1_g, ln1_b, wq, bq, wk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2;
  };

  Tensor param(std::string name, Shape shape, Rng& rng) {
    Tensor t = Tensor::zeros(std::move(shape), true);
    for (double& v : t.data()) v = rng.normal(0.0, cfg_.init_std);
    params_.add(std::move(name), t);
    return t;
  }

  Tensor constant(std::string name, std::size_t n, double value) {
    Tensor t = Tensor::from_data({n}, std::vector<double>(n, value), true);
    params_.add(std::move(name), t);
    return t;
  }

  EncoderConfig cfg_;
  ParamStore params_;
  Tensor tok_emb_, pos_emb_, lnf_g_, lnf_b_;
  std::vector<Layer> layers_;
};

}  // namespace mtd
