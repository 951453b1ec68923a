#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "mtd/ops.hpp"
#include "mtd/rng.hpp"
#include "mtd/tensor.hpp"

namespace mtd {

struct CchConfig {
  std::size_t input_dim = 64;
  std::size_t hidden_dim = 64;
  std::size_t num_classes = 2;
  double dropout_p = 0.5;
  std::size_t n_hidden_layers = 2;
  std::uint64_t seed = 0;

  void validate() const {
    if (input_dim == 0 || hidden_dim == 0) throw std::invalid_argument("CchConfig: dimensions must be positive");
    if (num_classes < 2) throw std::invalid_argument("CchConfig: num_classes must be >= 2");
    if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw std::invalid_argument("CchConfig: dropout_p must be in [0, 1)");
  }

  friend bool operator==(const CchConfig&, const CchConfig&) = default;
};

// Classification head: (Dense -> GELU -> Dropout) x n_hidden_layers -> Dense.
class CchHead {
 public:
  CchHead(const std::string& name, CchConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(cfg_.seed);
    const std::string prefix = "heads." + name + ".";
    std::size_t in = cfg_.input_dim;
    for (std::size_t i = 0; i < cfg_.n_hidden_layers; ++i) {
      const std::string p = prefix + "hidden." + std::to_string(i) + ".";
      hidden_.push_back({weight(p + "weight", in, cfg_.hidden_dim, rng), bias(p + "bias", cfg_.hidden_dim)});
      in = cfg_.hidden_dim;
    }
    out_ = {weight(prefix + "out.weight", in, cfg_.num_classes, rng), bias(prefix + "out.bias", cfg_.num_classes)};
  }

  CchHead(const CchHead&) = delete;
  CchHead& operator=(const CchHead&) = delete;
  CchHead(CchHead&&) = default;
  CchHead& operator=(CchHead&&) = default;

  const CchConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  Tensor forward(const Tensor& cls, bool train_mode, Rng& rng) const {
    if (cls.rank() != 2 || cls.dim(1) != cfg_.input_dim) {
      throw std::invalid_argument("cch_forward: expected [batch x " + std::to_string(cfg_.input_dim) + "], got " +
                                  shape_string(cls.shape()));
    }
    Tensor x = cls;
    for (const Dense& layer : hidden_) {
      x = dropout(gelu(linear(x, layer.w, layer.b)), cfg_.dropout_p, train_mode, rng);
    }
    return linear(x, out_.w, out_.b);
  }

 private:
  struct Dense {
    Tensor w, b;
  };

  Tensor weight(std::string name, std::size_t in, std::size_t out, Rng& rng) {
    Tensor t = Tensor::zeros({in, out}, true);
    // LeCun normal, so the head reacts to its input from the first step
    const double sd = 1.0 / std::sqrt(static_cast<double>(in));
    for (double& v : t.data()) v = rng.normal(0.0, sd);
    params_.add(std::move(name), t);
    return t;
  }

  Tensor bias(std::string name, std::size_t n) {
    Tensor t = Tensor::zeros({n}, true);
    params_.add(std::move(name), t);
    return t;
  }

  CchConfig cfg_;
  ParamStore params_;
  std::vector<Dense> hidden_;
  Dense out_;
};

}  // namespace mtd
