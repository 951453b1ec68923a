#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mtd/tensor.hpp"

namespace mtd {

struct AdamWConfig {
  double learning_rate = 1e-3;
  double weight_decay = 0.01;
  std::size_t warmup_steps = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Linear warmup to the base rate, constant afterwards.
inline double warmup_learning_rate(double base, std::size_t step, std::size_t warmup_steps) {
  if (warmup_steps == 0) return base;
  return base * std::min(1.0, static_cast<double>(step + 1) / static_cast<double>(warmup_steps));
}

// One AdamW update of a flat parameter array. `t` is the 1-based step count
// after this update; weight decay is decoupled from the adaptive term.
inline void adamw_update(std::span<double> w, std::span<const double> g, std::span<double> m, std::span<double> v,
                         std::size_t t, double lr, const AdamWConfig& cfg) {
  if (g.size() != w.size() || m.size() != w.size() || v.size() != w.size()) {
    throw std::invalid_argument("adamw_update: shape mismatch");
  }
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < w.size(); ++i) {
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
    const double m_hat = m[i] / bc1;
    const double v_hat = v[i] / bc2;
    w[i] -= lr * (m_hat / (std::sqrt(v_hat) + cfg.eps) + cfg.weight_decay * w[i]);
  }
}

// AdamW over a fixed set of named parameters. Moments are allocated only for
// the parameters handed to the constructor, so frozen weights carry no state.
class AdamW {
 public:
  AdamW(AdamWConfig cfg, std::vector<std::pair<std::string, Tensor>> params) : cfg_(cfg) {
    for (auto& [name, tensor] : params) {
      slots_.push_back({std::move(name), tensor, std::vector<double>(tensor.size(), 0.0),
                        std::vector<double>(tensor.size(), 0.0)});
    }
  }

  const AdamWConfig& config() const { return cfg_; }
  std::size_t step_count() const { return t_; }
  std::size_t state_count() const { return slots_.size(); }

  bool has_state(std::string_view name) const {
    return std::any_of(slots_.begin(), slots_.end(), [&](const Slot& s) { return s.name == name; });
  }

  double learning_rate_at(std::size_t step) const {
    return warmup_learning_rate(cfg_.learning_rate, step, cfg_.warmup_steps);
  }

  // Applies one update from the accumulated grads; `step` is the 0-based
  // index within this optimizer's schedule. Returns the rate used.
  double step(std::size_t step) {
    const double lr = learning_rate_at(step);
    ++t_;
    for (Slot& s : slots_) {
      std::span<const double> g = s.param.grad();
      adamw_update(s.param.data(), g, s.m, s.v, t_, lr, cfg_);
    }
    return lr;
  }

  double step() { return step(t_); }

 private:
  struct Slot {
    std::string name;
    Tensor param;
    std::vector<double> m;
    std::vector<double> v;
  };
  AdamWConfig cfg_;
  std::vector<Slot> slots_;
  std::size_t t_ = 0;
};

}  // namespace mtd
