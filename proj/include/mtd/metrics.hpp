#pragma once

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mtd/corpus.hpp"

namespace mtd {

struct ClassScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;
};

struct EvalReport {
  double macro_f1 = 0.0;
  double micro_f1 = 0.0;
  std::vector<ClassScores> per_class;
  // confusion[true][predicted]
  std::vector<std::vector<std::size_t>> confusion;
  std::size_t n = 0;

  void write_csv(std::ostream& out) const {
    out << std::setprecision(17);
    out << "metric,class,value\n";
    out << "macro_f1,*," << macro_f1 << '\n';
    out << "micro_f1,*," << micro_f1 << '\n';
    out << "n,*," << n << '\n';
    for (std::size_t c = 0; c < per_class.size(); ++c) {
      out << "precision," << c << ',' << per_class[c].precision << '\n';
      out << "recall," << c << ',' << per_class[c].recall << '\n';
      out << "f1," << c << ',' << per_class[c].f1 << '\n';
      out << "support," << c << ',' << per_class[c].support << '\n';
    }
    for (std::size_t t = 0; t < confusion.size(); ++t) {
      for (std::size_t p = 0; p < confusion[t].size(); ++p) {
        out << "confusion_true" << t << "_pred" << p << ",*," << confusion[t][p] << '\n';
      }
    }
  }
};

// Per-class and macro/micro F1. A class with P + R = 0 scores F1 = 0, and
// every class in [0, num_classes) counts toward the macro mean even when
// absent from the labels.
inline EvalReport f1_report(std::span<const int> predictions, std::span<const int> labels, std::size_t num_classes = 2) {
  if (predictions.size() != labels.size()) throw std::invalid_argument("f1_report: length mismatch");
  if (labels.empty()) throw std::invalid_argument("f1_report: empty input");
  EvalReport r;
  r.n = labels.size();
  r.confusion.assign(num_classes, std::vector<std::size_t>(num_classes, 0));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int t = labels[i], p = predictions[i];
    if (t < 0 || p < 0 || static_cast<std::size_t>(t) >= num_classes || static_cast<std::size_t>(p) >= num_classes) {
      throw std::out_of_range("f1_report: class id out of range");
    }
    ++r.confusion[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)];
  }
  std::size_t tp_all = 0, fp_all = 0, fn_all = 0;
  double f1_sum = 0.0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    std::size_t tp = r.confusion[c][c], fp = 0, fn = 0;
    for (std::size_t o = 0; o < num_classes; ++o) {
      if (o == c) continue;
      fp += r.confusion[o][c];
      fn += r.confusion[c][o];
    }
    ClassScores s;
    s.support = tp + fn;
    s.precision = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    s.recall = tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    s.f1 = s.precision + s.recall > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
    f1_sum += s.f1;
    r.per_class.push_back(s);
    tp_all += tp;
    fp_all += fp;
    fn_all += fn;
  }
  r.macro_f1 = f1_sum / static_cast<double>(num_classes);
  const double p = tp_all + fp_all ? static_cast<double>(tp_all) / static_cast<double>(tp_all + fp_all) : 0.0;
  const double rec = tp_all + fn_all ? static_cast<double>(tp_all) / static_cast<double>(tp_all + fn_all) : 0.0;
  r.micro_f1 = p + rec > 0.0 ? 2.0 * p * rec / (p + rec) : 0.0;
  return r;
}

inline std::vector<int> apply_threshold(std::span<const double> p_machine, double threshold) {
  std::vector<int> out;
  out.reserve(p_machine.size());
  for (double p : p_machine) out.push_back(p >= threshold ? 1 : 0);
  return out;
}

struct ThresholdCurve {
  std::vector<double> grid;
  std::vector<double> macro_f1;
  double best_threshold = 0.5;
  double best_macro_f1 = 0.0;

  double at(double threshold) const {
    for (std::size_t i = 0; i < grid.size(); ++i) {
      if (std::abs(grid[i] - threshold) < 1e-12) return macro_f1[i];
    }
    throw std::out_of_range("ThresholdCurve: threshold not on grid");
  }

  void write_csv(std::ostream& out) const {
    out << std::setprecision(17) << "threshold,macro_f1\n";
    for (std::size_t i = 0; i < grid.size(); ++i) out << grid[i] << ',' << macro_f1[i] << '\n';
  }

  // Line plot of the curve with the selected threshold marked.
  void write_svg(std::ostream& out, const std::string& title = "macro-F1 vs threshold") const {
    const double w = 640, h = 400, ml = 60, mr = 20, mt = 40, mb = 50;
    const double x0 = grid.empty() ? 0.5 : grid.front(), x1 = grid.empty() ? 1.0 : grid.back();
    double y0 = 1.0, y1 = 0.0;
    for (double v : macro_f1) {
      y0 = std::min(y0, v);
      y1 = std::max(y1, v);
    }
    if (y1 <= y0) {
      y0 = std::max(0.0, y0 - 0.05);
      y1 = std::min(1.0, y1 + 0.05);
      if (y1 <= y0) y1 = y0 + 0.1;
    }
    auto sx = [&](double x) { return ml + (x - x0) / (x1 - x0 > 0 ? x1 - x0 : 1.0) * (w - ml - mr); };
    auto sy = [&](double y) { return h - mb - (y - y0) / (y1 - y0) * (h - mt - mb); };
    out << std::fixed << std::setprecision(2);
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<text x=\"" << w / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" << title << "</text>\n";
    out << "<line x1=\"" << ml << "\" y1=\"" << h - mb << "\" x2=\"" << w - mr << "\" y2=\"" << h - mb
        << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << h - mb << "\" stroke=\"black\"/>\n";
    out << "<text x=\"" << w / 2 << "\" y=\"" << h - 12 << "\" text-anchor=\"middle\" font-size=\"13\">threshold</text>\n";
    out << "<text x=\"16\" y=\"" << h / 2 << "\" font-size=\"13\" transform=\"rotate(-90 16 " << h / 2
        << ")\" text-anchor=\"middle\">macro-F1</text>\n";
    for (int i = 0; i <= 4; ++i) {
      const double xv = x0 + (x1 - x0) * i / 4.0, yv = y0 + (y1 - y0) * i / 4.0;
      out << "<text x=\"" << sx(xv) << "\" y=\"" << h - mb + 18 << "\" text-anchor=\"middle\" font-size=\"11\">"
          << std::setprecision(2) << xv << "</text>\n";
      out << "<text x=\"" << ml - 6 << "\" y=\"" << sy(yv) + 4 << "\" text-anchor=\"end\" font-size=\"11\">"
          << std::setprecision(3) << yv << "</text>\n";
    }
    out << std::setprecision(2) << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < grid.size(); ++i) out << sx(grid[i]) << ',' << sy(macro_f1[i]) << ' ';
    out << "\"/>\n";
    out << "<circle cx=\"" << sx(best_threshold) << "\" cy=\"" << sy(best_macro_f1)
        << "\" r=\"4\" fill=\"crimson\"/>\n";
    out << "</svg>\n";
  }
};

// 0.50, 0.51, ..., 0.99. Each point is i/100 so 0.92 is exact.
inline std::vector<double> default_threshold_grid() {
  std::vector<double> g;
  for (int i = 50; i <= 99; ++i) g.push_back(static_cast<double>(i) / 100.0);
  return g;
}

// Macro-F1 at each grid threshold; ties resolve to the smallest threshold.
inline ThresholdCurve threshold_sweep(std::span<const double> p_machine, std::span<const int> labels,
                                      std::vector<double> grid = default_threshold_grid()) {
  if (p_machine.size() != labels.size()) throw std::invalid_argument("threshold_sweep: length mismatch");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (!(grid[i] > 0.0 && grid[i] < 1.0)) throw std::invalid_argument("threshold_sweep: grid must lie in (0, 1)");
    if (i && grid[i] <= grid[i - 1]) throw std::invalid_argument("threshold_sweep: grid must be strictly increasing");
  }
  ThresholdCurve c;
  c.grid = std::move(grid);
  c.best_macro_f1 = -1.0;
  for (double t : c.grid) {
    const double f = f1_report(apply_threshold(p_machine, t), labels).macro_f1;
    c.macro_f1.push_back(f);
    if (f > c.best_macro_f1) {
      c.best_macro_f1 = f;
      c.best_threshold = t;
    }
  }
  return c;
}

enum class GroupKey { generator, source, sub_source };

inline std::string group_key_name(GroupKey k) {
  switch (k) {
    case GroupKey::generator: return "generator";
    case GroupKey::source: return "source";
    default: return "sub_source";
  }
}

struct GroupRow {
  std::string key;
  std::size_t size = 0;
  std::size_t correct = 0;
  std::size_t incorrect = 0;
  double pct_incorrect = 0.0;  // 0..100
  double share = 0.0;          // fraction of all samples
};

struct GroupBreakdown {
  GroupKey key = GroupKey::generator;
  std::vector<GroupRow> rows;  // sorted by size, descending; ties by key

  void write_csv(std::ostream& out) const {
    out << std::setprecision(17) << group_key_name(key) << ",size,correct,incorrect,pct_incorrect,share\n";
    for (const auto& r : rows) {
      out << r.key << ',' << r.size << ',' << r.correct << ',' << r.incorrect << ',' << r.pct_incorrect << ','
          << r.share << '\n';
    }
  }
};

inline GroupBreakdown group_breakdown(std::span<const int> predictions, std::span<const int> labels,
                                      std::span<const LabeledSample> samples, GroupKey key) {
  if (predictions.size() != labels.size() || labels.size() != samples.size()) {
    throw std::invalid_argument("group_breakdown: length mismatch");
  }
  std::map<std::string, GroupRow> groups;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    std::string k;
    switch (key) {
      case GroupKey::generator: k = samples[i].generator.value_or("unknown"); break;
      case GroupKey::source: k = samples[i].source.name(); break;
      case GroupKey::sub_source: k = samples[i].sub_source; break;
    }
    GroupRow& row = groups[k];
    row.key = k;
    ++row.size;
    if (predictions[i] == labels[i]) {
      ++row.correct;
    } else {
      ++row.incorrect;
    }
  }
  GroupBreakdown out;
  out.key = key;
  for (auto& [_, row] : groups) {
    row.pct_incorrect = 100.0 * static_cast<double>(row.incorrect) / static_cast<double>(row.size);
    row.share = static_cast<double>(row.size) / static_cast<double>(samples.size());
    out.rows.push_back(row);
  }
  std::stable_sort(out.rows.begin(), out.rows.end(), [](const GroupRow& a, const GroupRow& b) { return a.size > b.size; });
  return out;
}

}  // namespace mtd
