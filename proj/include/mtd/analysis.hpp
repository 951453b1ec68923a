#pragma once

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mtd/corpus.hpp"
#include "mtd/multitask.hpp"
#include "mtd/trainer.hpp"

namespace mtd {

// Row-major dense matrix.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
  std::span<const double> row(std::size_t i) const { return {data.data() + i * cols, cols}; }
};

struct EigenResult {
  std::vector<double> values;  // descending
  Matrix vectors;              // column j pairs with values[j]
  std::size_t sweeps = 0;
};

// Cyclic Jacobi for a symmetric matrix.
inline EigenResult jacobi_eigen(const Matrix& sym, double tol = 1e-14, std::size_t max_sweeps = 100) {
  if (sym.rows != sym.cols) throw std::invalid_argument("jacobi_eigen: matrix must be square");
  const std::size_t n = sym.rows;
  Matrix a = sym;
  Matrix v(n, n);
  for (std::size_t i = 0; i < n; ++i) v(i, i) = 1.0;
  double scale = 0.0;
  for (double x : a.data) scale += x * x;
  EigenResult out;
  for (; out.sweeps < max_sweeps; ++out.sweeps) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) off += 2.0 * a(p, q) * a(p, q);
    }
    if (off <= tol * tol * std::max(scale, 1e-300)) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        if (a(p, q) == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return a(i, i) > a(j, j); });
  out.vectors = Matrix(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    out.values.push_back(a(order[j], order[j]));
    for (std::size_t i = 0; i < n; ++i) out.vectors(i, j) = v(i, order[j]);
  }
  return out;
}

struct PcaModel {
  std::vector<double> mean;
  Matrix axes;                      // k x d, one unit axis per row
  std::vector<double> eigenvalues;  // variance along each axis (divisor n)
  std::vector<double> explained_variance_ratio;

  std::size_t k() const { return axes.rows; }
  std::size_t dim() const { return mean.size(); }
};

inline Matrix covariance(const Matrix& x, std::span<const double> mean) {
  Matrix c(x.cols, x.cols);
  for (std::size_t r = 0; r < x.rows; ++r) {
    for (std::size_t i = 0; i < x.cols; ++i) {
      const double di = x(r, i) - mean[i];
      for (std::size_t j = i; j < x.cols; ++j) c(i, j) += di * (x(r, j) - mean[j]);
    }
  }
  const double inv = 1.0 / static_cast<double>(x.rows);
  for (std::size_t i = 0; i < x.cols; ++i) {
    for (std::size_t j = i; j < x.cols; ++j) {
      c(i, j) *= inv;
      c(j, i) = c(i, j);
    }
  }
  return c;
}

// Top-k principal axes of the covariance (divisor n). Each axis is flipped so
// its largest-magnitude coordinate is positive.
inline PcaModel pca_fit(const Matrix& x, std::size_t k) {
  if (x.rows < 2) throw std::invalid_argument("pca_fit: need at least 2 vectors");
  if (k < 1 || k > std::min(x.rows, x.cols)) throw std::invalid_argument("pca_fit: k out of range");
  PcaModel m;
  m.mean.assign(x.cols, 0.0);
  for (std::size_t r = 0; r < x.rows; ++r) {
    for (std::size_t j = 0; j < x.cols; ++j) m.mean[j] += x(r, j);
  }
  for (double& v : m.mean) v /= static_cast<double>(x.rows);
  const EigenResult eig = jacobi_eigen(covariance(x, m.mean));
  double total = 0.0;
  for (double ev : eig.values) total += std::max(ev, 0.0);
  if (!(total > 0.0)) throw std::invalid_argument("pca_fit: input has zero variance");
  m.axes = Matrix(k, x.cols);
  for (std::size_t a = 0; a < k; ++a) {
    std::size_t big = 0;
    for (std::size_t i = 1; i < x.cols; ++i) {
      if (std::abs(eig.vectors(i, a)) > std::abs(eig.vectors(big, a))) big = i;
    }
    const double sign = eig.vectors(big, a) < 0.0 ? -1.0 : 1.0;
    for (std::size_t i = 0; i < x.cols; ++i) m.axes(a, i) = sign * eig.vectors(i, a);
    const double ev = std::max(eig.values[a], 0.0);
    m.eigenvalues.push_back(ev);
    m.explained_variance_ratio.push_back(ev / total);
  }
  return m;
}

inline Matrix pca_project(const PcaModel& m, const Matrix& x) {
  if (x.cols != m.dim()) throw std::invalid_argument("pca_project: dimension mismatch");
  Matrix out(x.rows, m.k());
  for (std::size_t r = 0; r < x.rows; ++r) {
    for (std::size_t a = 0; a < m.k(); ++a) {
      double s = 0.0;
      for (std::size_t j = 0; j < x.cols; ++j) s += (x(r, j) - m.mean[j]) * m.axes(a, j);
      out(r, a) = s;
    }
  }
  return out;
}

// Mean silhouette with Euclidean distance. Points alone in their cluster
// score 0.
inline double silhouette(const Matrix& points, std::span<const int> labels) {
  if (points.rows != labels.size()) throw std::invalid_argument("silhouette: length mismatch");
  std::map<int, std::size_t> sizes;
  for (int l : labels) ++sizes[l];
  if (sizes.size() < 2) throw std::invalid_argument("silhouette: need at least 2 clusters");
  const std::size_t n = points.rows;
  Matrix dist(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < points.cols; ++c) {
        const double d = points(i, c) - points(j, c);
        s += d * d;
      }
      dist(i, j) = dist(j, i) = std::sqrt(s);
    }
  }
  double total = 0.0;
  std::map<int, double> sum_to;
  for (std::size_t i = 0; i < n; ++i) {
    if (sizes[labels[i]] == 1) continue;
    sum_to.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) sum_to[labels[j]] += dist(i, j);
    }
    const double a = sum_to[labels[i]] / static_cast<double>(sizes[labels[i]] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (const auto& [label, s] : sum_to) {
      if (label != labels[i]) b = std::min(b, s / static_cast<double>(sizes[label]));
    }
    const double denom = std::max(a, b);
    total += denom > 0.0 ? (b - a) / denom : 0.0;
  }
  return total / static_cast<double>(n);
}

// Integer cluster ids from string keys, in order of first appearance.
inline std::vector<int> cluster_ids(std::span<const std::string> keys) {
  std::map<std::string, int> ids;
  std::vector<int> out;
  for (const auto& k : keys) out.push_back(ids.emplace(k, static_cast<int>(ids.size())).first->second);
  return out;
}

// --- embeddings ----------------------------------------------------------

struct EmbedTarget {
  // Empty head name means [CLS] vectors; otherwise that head's logits.
  std::string head;

  static EmbedTarget cls() { return {}; }
  static EmbedTarget logits(std::string name) { return {std::move(name)}; }
  bool is_cls() const { return head.empty(); }
  std::string describe() const { return is_cls() ? "cls" : "logits:" + head; }
};

inline Matrix embed_corpus(const MtlModel& model, const Corpus& corpus, const EmbedTarget& target,
                           std::size_t batch_size = 64) {
  std::optional<std::size_t> head;
  if (!target.is_cls()) {
    head = model.head_index(target.head);
    if (!head) throw std::invalid_argument("embed_corpus: unknown head '" + target.head + "'");
  }
  NoGradGuard no_grad;
  const auto texts = corpus.texts();
  const std::size_t width = head ? model.head_spec(*head).num_classes() : model.config().encoder.d_model;
  Matrix out(texts.size(), width);
  Rng unused;  // eval mode draws nothing
  for (std::size_t start = 0; start < texts.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, texts.size() - start);
    const TokenBatch tokens = model.tokenize(std::span(texts).subspan(start, n));
    const Tensor cls = model.encode_eval(tokens);
    const Tensor v = head ? model.head(*head).forward(cls, false, unused) : cls;
    std::copy(v.data().begin(), v.data().end(), out.data.begin() + static_cast<std::ptrdiff_t>(start * width));
  }
  return out;
}

inline Matrix embed_corpus(const Checkpoint& ckpt, const Corpus& corpus, const EmbedTarget& target) {
  return embed_corpus(restore_model(ckpt), corpus, target);
}

// --- projection table ----------------------------------------------------

struct ProjectionRow {
  std::string id;
  double pc1 = 0.0;
  double pc2 = 0.0;
  std::string source;
  std::string sub_source;
  int label = 0;
};

struct ProjectionTable {
  std::vector<ProjectionRow> rows;
  std::vector<double> explained_variance_ratio;
  std::string note;  // written as a '#' comment line

  void write_csv(std::ostream& out) const {
    if (!note.empty()) out << "# " << note << '\n';
    out << std::setprecision(17) << "id,pc1,pc2,source,sub_source,label\n";
    for (const auto& r : rows) {
      out << r.id << ',' << r.pc1 << ',' << r.pc2 << ',' << r.source << ',' << r.sub_source << ',' << r.label << '\n';
    }
  }

  // Scatter plot; `color_by` is "source", "sub_source" or "label".
  void write_svg(std::ostream& out, const std::string& color_by = "source", const std::string& title = "PCA") const {
    static const char* palette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
                                    "#e377c2", "#7f7f7f", "#bcbd22", "#17becf", "#393b79", "#637939",
                                    "#8c6d31", "#843c39", "#7b4173", "#3182bd"};
    auto key = [&](const ProjectionRow& r) {
      if (color_by == "sub_source") return r.sub_source;
      if (color_by == "label") return std::string(r.label ? "machine" : "human");
      return r.source;
    };
    std::map<std::string, std::size_t> colors;
    for (const auto& r : rows) colors.emplace(key(r), 0);
    std::size_t next = 0;
    for (auto& [_, c] : colors) c = next++ % std::size(palette);
    double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    if (!rows.empty()) {
      x0 = x1 = rows[0].pc1;
      y0 = y1 = rows[0].pc2;
      for (const auto& r : rows) {
        x0 = std::min(x0, r.pc1), x1 = std::max(x1, r.pc1);
        y0 = std::min(y0, r.pc2), y1 = std::max(y1, r.pc2);
      }
      if (x1 <= x0) x1 = x0 + 1;
      if (y1 <= y0) y1 = y0 + 1;
    }
    const double w = 640, h = 480, m = 40, legend = 150;
    auto sx = [&](double x) { return m + (x - x0) / (x1 - x0) * (w - 2 * m - legend); };
    auto sy = [&](double y) { return h - m - (y - y0) / (y1 - y0) * (h - 2 * m); };
    out << std::fixed << std::setprecision(2);
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<text x=\"" << (w - legend) / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << title
        << "</text>\n";
    for (const auto& r : rows) {
      out << "<circle cx=\"" << sx(r.pc1) << "\" cy=\"" << sy(r.pc2) << "\" r=\"2.5\" fill-opacity=\"0.7\" fill=\""
          << palette[colors[key(r)]] << "\"/>\n";
    }
    double ly = m;
    for (const auto& [name, c] : colors) {
      out << "<rect x=\"" << w - legend + 10 << "\" y=\"" << ly - 9 << "\" width=\"10\" height=\"10\" fill=\""
          << palette[c] << "\"/>\n";
      out << "<text x=\"" << w - legend + 26 << "\" y=\"" << ly << "\" font-size=\"11\">" << name << "</text>\n";
      ly += 16;
    }
    out << "<text x=\"" << (w - legend) / 2 << "\" y=\"" << h - 8 << "\" text-anchor=\"middle\" font-size=\"12\">PC1 ("
        << std::setprecision(1) << (explained_variance_ratio.empty() ? 0.0 : 100 * explained_variance_ratio[0])
        << "%)</text>\n";
    out << "<text x=\"14\" y=\"" << h / 2 << "\" font-size=\"12\" transform=\"rotate(-90 14 " << h / 2
        << ")\" text-anchor=\"middle\">PC2 ("
        << (explained_variance_ratio.size() < 2 ? 0.0 : 100 * explained_variance_ratio[1]) << "%)</text>\n";
    out << "</svg>\n";
  }
};

// Fits a 2-axis PCA on `vectors` and pairs the coordinates with sample metadata.
inline ProjectionTable project_2d(const Matrix& vectors, const Corpus& corpus, const std::string& what) {
  if (vectors.rows != corpus.size()) throw std::invalid_argument("project_2d: vectors/corpus length mismatch");
  const PcaModel pca = pca_fit(vectors, 2);
  const Matrix xy = pca_project(pca, vectors);
  ProjectionTable t;
  t.explained_variance_ratio = pca.explained_variance_ratio;
  t.note = "PCA of " + what + ", fit on these " + std::to_string(vectors.rows) + " samples only";
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& s = corpus.samples[i];
    t.rows.push_back({s.id, xy(i, 0), xy(i, 1), s.source.name(), s.sub_source, to_int(s.label)});
  }
  return t;
}

}  // namespace mtd
