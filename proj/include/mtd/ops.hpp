#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mtd/rng.hpp"
#include "mtd/tensor.hpp"

// Differentiable operations on rank-1/rank-2 tensors. Every op records its
// backward closure through Tensor::make_result; kernels are plain sequential
// loops so reductions happen in a fixed order.
namespace mtd {

namespace detail {

inline void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) throw std::invalid_argument(std::string(op) + ": expected rank-2 tensor, got " + shape_string(t.shape()));
}

inline double std_normal_cdf(double x) { return 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2)); }

inline double std_normal_pdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

}  // namespace detail

// Exact GELU, x * Phi(x).
inline double gelu_value(double x) { return x * detail::std_normal_cdf(x); }

inline double gelu_derivative(double x) { return detail::std_normal_cdf(x) + x * detail::std_normal_pdf(x); }

inline Tensor gelu(const Tensor& x) {
  std::vector<double> out(x.size());
  auto xs = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = gelu_value(xs[i]);
  return Tensor::make_result(x.shape(), std::move(out), {x}, [x](detail::Node& self) mutable {
    auto xs = x.data();
    auto gx = x.grad();
    for (std::size_t i = 0; i < xs.size(); ++i) gx[i] += self.grad[i] * gelu_derivative(xs[i]);
  });
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument("add: shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  std::vector<double> out(a.size());
  auto as = a.data();
  auto bs = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = as[i] + bs[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [a, b](detail::Node& self) mutable {
    if (a.requires_grad()) {
      auto g = a.grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (b.requires_grad()) {
      auto g = b.grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

// x[m x k] * w[k x n] (+ bias[n] broadcast over rows when defined).
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias = {}) {
  detail::require_rank2(x, "linear");
  detail::require_rank2(w, "linear");
  const std::size_t m = x.dim(0), k = x.dim(1), n = w.dim(1);
  if (w.dim(0) != k) {
    throw std::invalid_argument("linear: inner dimension mismatch " + shape_string(x.shape()) + " * " +
                                shape_string(w.shape()));
  }
  if (bias.defined() && bias.size() != n) throw std::invalid_argument("linear: bias length mismatch");
  std::vector<double> out(m * n, 0.0);
  auto xs = x.data();
  auto ws = w.data();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    if (bias.defined()) std::copy(bias.data().begin(), bias.data().end(), row);
    for (std::size_t p = 0; p < k; ++p) {
      const double xv = xs[i * k + p];
      const double* wr = ws.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += xv * wr[j];
    }
  }
  return Tensor::make_result({m, n}, std::move(out), {x, w, bias}, [x, w, bias, m, k, n](detail::Node& self) mutable {
    const double* gy = self.grad.data();
    if (x.requires_grad()) {
      auto gx = x.grad();
      auto ws = w.data();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double* wr = ws.data() + p * n;
          const double* gr = gy + i * n;
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += gr[j] * wr[j];
          gx[i * k + p] += acc;
        }
      }
    }
    if (w.requires_grad()) {
      auto gw = w.grad();
      auto xs = x.data();
      for (std::size_t i = 0; i < m; ++i) {
        const double* gr = gy + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double xv = xs[i * k + p];
          double* gwr = gw.data() + p * n;
          for (std::size_t j = 0; j < n; ++j) gwr[j] += xv * gr[j];
        }
      }
    }
    if (bias.defined() && bias.requires_grad()) {
      auto gb = bias.grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gb[j] += gy[i * n + j];
    }
  });
}

inline Tensor matmul(const Tensor& a, const Tensor& b) { return linear(a, b); }

// Inverted dropout: kept activations are scaled by 1/(1-p). Identity when
// train_mode is false or p == 0.
inline Tensor dropout(const Tensor& x, double p, bool train_mode, Rng& rng) {
  if (!train_mode || p <= 0.0) return x;
  if (p >= 1.0) throw std::invalid_argument("dropout: p must be < 1");
  const double keep_scale = 1.0 / (1.0 - p);
  std::vector<double> mask(x.size());
  for (double& m : mask) m = rng.uniform() >= p ? keep_scale : 0.0;
  std::vector<double> out(x.size());
  auto xs = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xs[i] * mask[i];
  return Tensor::make_result(x.shape(), std::move(out), {x}, [x, mask = std::move(mask)](detail::Node& self) mutable {
    auto gx = x.grad();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * mask[i];
  });
}

// Row-wise layer normalization with learned gain and bias.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5) {
  detail::require_rank2(x, "layer_norm");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (gain.size() != n || bias.size() != n) throw std::invalid_argument("layer_norm: gain/bias length mismatch");
  std::vector<double> xhat(m * n), rstd(m), out(m * n);
  auto xs = x.data();
  auto gs = gain.data();
  auto bs = bias.data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = xs.data() + i * n;
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += row[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(n);
    rstd[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[i * n + j] = (row[j] - mean) * rstd[i];
      out[i * n + j] = gs[j] * xhat[i * n + j] + bs[j];
    }
  }
  return Tensor::make_result(
      {m, n}, std::move(out), {x, gain, bias},
      [x, gain, bias, xhat = std::move(xhat), rstd = std::move(rstd), m, n](detail::Node& self) mutable {
        const double* gy = self.grad.data();
        if (gain.requires_grad()) {
          auto gg = gain.grad();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) gg[j] += gy[i * n + j] * xhat[i * n + j];
        }
        if (bias.requires_grad()) {
          auto gb = bias.grad();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) gb[j] += gy[i * n + j];
        }
        if (x.requires_grad()) {
          auto gx = x.grad();
          auto gs = gain.data();
          const double inv_n = 1.0 / static_cast<double>(n);
          for (std::size_t i = 0; i < m; ++i) {
            double sum_d = 0.0, sum_dx = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              const double d = gy[i * n + j] * gs[j];
              sum_d += d;
              sum_dx += d * xhat[i * n + j];
            }
            for (std::size_t j = 0; j < n; ++j) {
              const double d = gy[i * n + j] * gs[j];
              gx[i * n + j] += rstd[i] * (d - inv_n * sum_d - xhat[i * n + j] * inv_n * sum_dx);
            }
          }
        }
      });
}

// Rows of `table` selected by index: embedding lookup and row slicing.
inline Tensor gather_rows(const Tensor& table, std::span<const int> rows) {
  detail::require_rank2(table, "gather_rows");
  const std::size_t v = table.dim(0), d = table.dim(1);
  std::vector<double> out(rows.size() * d);
  auto ts = table.data();
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] < 0 || static_cast<std::size_t>(rows[r]) >= v) {
      throw std::out_of_range("gather_rows: index " + std::to_string(rows[r]) + " outside [0, " +
                              std::to_string(v) + ")");
    }
    std::copy_n(ts.data() + static_cast<std::size_t>(rows[r]) * d, d, out.data() + r * d);
  }
  std::vector<int> idx(rows.begin(), rows.end());
  return Tensor::make_result({rows.size(), d}, std::move(out), {table},
                             [table, idx = std::move(idx), d](detail::Node& self) mutable {
                               auto gt = table.grad();
                               for (std::size_t r = 0; r < idx.size(); ++r) {
                                 double* dst = gt.data() + static_cast<std::size_t>(idx[r]) * d;
                                 const double* src = self.grad.data() + r * d;
                                 for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
                               }
                             });
}

// Multi-head scaled dot-product attention over a batch.
//
// q is [batch*q_len x d], k and v are [batch*kv_len x d]; heads split d into
// equal slices. key_mask (batch*kv_len, 1 = attend) excludes padded keys,
// which is the same as giving them -inf scores: their probability is exactly
// zero and they never enter a sum.
inline Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::span<const std::uint8_t> key_mask,
                        std::size_t batch, std::size_t q_len, std::size_t kv_len, std::size_t heads) {
  detail::require_rank2(q, "attention");
  const std::size_t d = q.dim(1);
  if (heads == 0 || d % heads != 0) throw std::invalid_argument("attention: d must be divisible by heads");
  if (q.dim(0) != batch * q_len || k.shape() != Shape{batch * kv_len, d} || v.shape() != k.shape() ||
      key_mask.size() != batch * kv_len) {
    throw std::invalid_argument("attention: inconsistent shapes");
  }
  const std::size_t dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  // probs laid out [batch][head][query][key]
  std::vector<double> probs(batch * heads * q_len * kv_len, 0.0);
  std::vector<double> out(batch * q_len * d, 0.0);
  auto qs = q.data();
  auto ks = k.data();
  auto vs = v.data();
  for (std::size_t b = 0; b < batch; ++b) {
    const std::uint8_t* mask = key_mask.data() + b * kv_len;
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < q_len; ++i) {
        const double* qi = qs.data() + (b * q_len + i) * d + h * dh;
        double* p = probs.data() + ((b * heads + h) * q_len + i) * kv_len;
        double max_score = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < kv_len; ++j) {
          if (!mask[j]) continue;
          const double* kj = ks.data() + (b * kv_len + j) * d + h * dh;
          double s = 0.0;
          for (std::size_t t = 0; t < dh; ++t) s += qi[t] * kj[t];
          p[j] = s * scale;
          max_score = std::max(max_score, p[j]);
        }
        if (max_score == -std::numeric_limits<double>::infinity()) continue;  // fully masked row
        double denom = 0.0;
        for (std::size_t j = 0; j < kv_len; ++j) {
          if (!mask[j]) continue;
          p[j] = std::exp(p[j] - max_score);
          denom += p[j];
        }
        double* oi = out.data() + (b * q_len + i) * d + h * dh;
        for (std::size_t j = 0; j < kv_len; ++j) {
          if (!mask[j]) continue;
          p[j] /= denom;
          const double* vj = vs.data() + (b * kv_len + j) * d + h * dh;
          for (std::size_t t = 0; t < dh; ++t) oi[t] += p[j] * vj[t];
        }
      }
    }
  }
  std::vector<std::uint8_t> mask_copy(key_mask.begin(), key_mask.end());
  return Tensor::make_result(
      {batch * q_len, d}, std::move(out), {q, k, v},
      [q, k, v, probs = std::move(probs), mask_copy = std::move(mask_copy), batch, q_len, kv_len, heads, d, dh,
       scale](detail::Node& self) mutable {
        auto qs = q.data();
        auto ks = k.data();
        auto vs = v.data();
        std::span<double> gq, gk, gv;
        if (q.requires_grad()) gq = q.grad();
        if (k.requires_grad()) gk = k.grad();
        if (v.requires_grad()) gv = v.grad();
        std::vector<double> dp(kv_len);
        for (std::size_t b = 0; b < batch; ++b) {
          const std::uint8_t* mask = mask_copy.data() + b * kv_len;
          for (std::size_t h = 0; h < heads; ++h) {
            for (std::size_t i = 0; i < q_len; ++i) {
              const double* p = probs.data() + ((b * heads + h) * q_len + i) * kv_len;
              const double* go = self.grad.data() + (b * q_len + i) * d + h * dh;
              double weighted = 0.0;
              for (std::size_t j = 0; j < kv_len; ++j) {
                dp[j] = 0.0;
                if (!mask[j]) continue;
                const double* vj = vs.data() + (b * kv_len + j) * d + h * dh;
                for (std::size_t t = 0; t < dh; ++t) dp[j] += go[t] * vj[t];
                weighted += p[j] * dp[j];
                if (!gv.empty()) {
                  double* gvj = gv.data() + (b * kv_len + j) * d + h * dh;
                  for (std::size_t t = 0; t < dh; ++t) gvj[t] += p[j] * go[t];
                }
              }
              const double* qi = qs.data() + (b * q_len + i) * d + h * dh;
              double* gqi = gq.empty() ? nullptr : gq.data() + (b * q_len + i) * d + h * dh;
              for (std::size_t j = 0; j < kv_len; ++j) {
                if (!mask[j]) continue;
                const double ds = p[j] * (dp[j] - weighted) * scale;
                const double* kj = ks.data() + (b * kv_len + j) * d + h * dh;
                if (gqi) {
                  for (std::size_t t = 0; t < dh; ++t) gqi[t] += ds * kj[t];
                }
                if (!gk.empty()) {
                  double* gkj = gk.data() + (b * kv_len + j) * d + h * dh;
                  for (std::size_t t = 0; t < dh; ++t) gkj[t] += ds * qi[t];
                }
              }
            }
          }
        }
      });
}

// Mean cross-entropy over the rows that carry a target. A target of -1 marks
// an unlabeled row; with no labeled rows the result is a constant 0.
inline Tensor cross_entropy(const Tensor& logits, std::span<const int> targets) {
  detail::require_rank2(logits, "cross_entropy");
  const std::size_t m = logits.dim(0), c = logits.dim(1);
  if (targets.size() != m) throw std::invalid_argument("cross_entropy: target count does not match batch");
  std::size_t labeled = 0;
  for (int t : targets) {
    if (t < -1 || t >= static_cast<int>(c)) {
      throw std::out_of_range("cross_entropy: target " + std::to_string(t) + " outside [0, " + std::to_string(c) + ")");
    }
    if (t >= 0) ++labeled;
  }
  if (labeled == 0) return Tensor::scalar(0.0);
  auto zs = logits.data();
  std::vector<double> probs(m * c, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    if (targets[i] < 0) continue;
    const double* z = zs.data() + i * c;
    const std::size_t arg = static_cast<std::size_t>(std::max_element(z, z + c) - z);
    const double mx = z[arg];
    // log1p over the non-max terms keeps confident rows accurate
    double rest = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      if (j != arg) rest += std::exp(z[j] - mx);
    }
    const double lse = mx + std::log1p(rest);
    total += (mx - z[targets[i]]) + std::log1p(rest);
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] = std::exp(z[j] - lse);
  }
  const double inv = 1.0 / static_cast<double>(labeled);
  std::vector<int> tgt(targets.begin(), targets.end());
  return Tensor::make_result({1}, {total * inv}, {logits},
                             [logits, probs = std::move(probs), tgt = std::move(tgt), m, c, inv](detail::Node& self) mutable {
                               auto gz = logits.grad();
                               const double g = self.grad[0] * inv;
                               for (std::size_t i = 0; i < m; ++i) {
                                 if (tgt[i] < 0) continue;
                                 for (std::size_t j = 0; j < c; ++j) {
                                   const double onehot = static_cast<int>(j) == tgt[i] ? 1.0 : 0.0;
                                   gz[i * c + j] += g * (probs[i * c + j] - onehot);
                                 }
                               }
                             });
}

// Same data viewed with a new shape of equal size.
inline Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_size(shape) != x.size()) {
    throw std::invalid_argument("reshape: cannot view " + shape_string(x.shape()) + " as " + shape_string(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return Tensor::make_result(std::move(shape), std::move(out), {x}, [x](detail::Node& self) mutable {
    auto g = x.grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

// Loss of a single logit vector against one class.
inline Tensor cross_entropy(const Tensor& logits, int target) {
  if (target < 0) throw std::out_of_range("cross_entropy: negative target");
  const Tensor row = logits.rank() == 2 ? logits : reshape(logits, {1, logits.size()});
  const int t[1] = {target};
  return cross_entropy(row, std::span<const int>(t, 1));
}

// Weighted sum of scalar tensors.
inline Tensor weighted_sum(std::span<const Tensor> terms, std::span<const double> weights) {
  if (terms.size() != weights.size()) throw std::invalid_argument("weighted_sum: size mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < terms.size(); ++i) total += weights[i] * terms[i].item();
  std::vector<Tensor> keep(terms.begin(), terms.end());
  std::vector<double> w(weights.begin(), weights.end());
  return Tensor::make_result({1}, {total}, terms, [keep = std::move(keep), w = std::move(w)](detail::Node& self) mutable {
    for (std::size_t i = 0; i < keep.size(); ++i) {
      if (keep[i].requires_grad()) keep[i].grad()[0] += self.grad[0] * w[i];
    }
  });
}

// Softmax along an axis of a rank-1 or rank-2 tensor. Not differentiable;
// training goes through cross_entropy, which fuses its own gradient.
inline Tensor softmax(const Tensor& logits, std::size_t axis = 1) {
  for (double z : logits.data()) {
    if (std::isnan(z)) throw std::domain_error("softmax: NaN input");
  }
  const bool vector = logits.rank() == 1;
  if (!vector && logits.rank() != 2) throw std::invalid_argument("softmax: rank must be 1 or 2");
  if (!vector && axis > 1) throw std::invalid_argument("softmax: axis out of range");
  const std::size_t rows = vector ? 1 : logits.dim(0);
  const std::size_t cols = vector ? logits.size() : logits.dim(1);
  const bool along_rows = vector || axis == 1;
  const std::size_t lines = along_rows ? rows : cols;
  const std::size_t len = along_rows ? cols : rows;
  auto at = [&](std::size_t line, std::size_t i) { return along_rows ? line * cols + i : i * cols + line; };
  std::vector<double> out(logits.size());
  auto zs = logits.data();
  for (std::size_t line = 0; line < lines; ++line) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < len; ++i) mx = std::max(mx, zs[at(line, i)]);
    double sum = 0.0;
    for (std::size_t i = 0; i < len; ++i) {
      out[at(line, i)] = std::exp(zs[at(line, i)] - mx);
      sum += out[at(line, i)];
    }
    for (std::size_t i = 0; i < len; ++i) out[at(line, i)] /= sum;
  }
  return Tensor::from_data(logits.shape(), std::move(out));
}

}  // namespace mtd
