#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mtd/mtd.hpp"

namespace testsupport {

inline mtd::Tensor random_tensor(mtd::Shape shape, std::uint64_t seed, double scale = 1.0, bool grad = true) {
  mtd::Rng rng(seed);
  std::vector<double> v(mtd::shape_size(shape));
  for (double& x : v) x = rng.normal(0.0, scale);
  return mtd::Tensor::from_data(std::move(shape), std::move(v), grad);
}

// Scalar <out, R> with fixed random R, so non-scalar ops can be grad-checked.
inline mtd::Tensor project_scalar(const mtd::Tensor& out, std::uint64_t seed) {
  const mtd::Tensor flat = mtd::reshape(out, {1, out.size()});
  const mtd::Tensor r = random_tensor({out.size(), 1}, seed, 1.0, false);
  return mtd::reshape(mtd::linear(flat, r), {1});
}

// Tiny synthetic corpus with HC3, M4GT and MAGE samples.
inline mtd::Corpus tiny_corpus(std::size_t n_per_cell, std::uint64_t seed, bool with_mage = true) {
  mtd::SynthSpec spec;
  spec.n_per_cell = n_per_cell;
  spec.min_tokens = 8;
  spec.max_tokens = 12;
  spec.seed = seed;
  if (with_mage) spec.sub_sources.push_back({mtd::Source::mage(), {"cmv", "eli5", "yelp"}});
  return mtd::synth_corpus(spec);
}

inline mtd::ModelConfig tiny_model_config(bool aux_heads = true, std::size_t n_layers = 1) {
  mtd::ModelConfig cfg;
  cfg.encoder.d_model = 8;
  cfg.encoder.n_layers = n_layers;
  cfg.encoder.n_heads = 2;
  cfg.encoder.d_ff = 16;
  cfg.encoder.max_len = 13;
  cfg.encoder.seed = 1;
  cfg.head_seed = 2;
  if (aux_heads) {
    cfg.heads.push_back(mtd::HeadSpec::multiclass("HC3", mtd::hc3_sub_sources()));
    cfg.heads.push_back(mtd::HeadSpec::multiclass("M4GT", mtd::m4gt_sub_sources()));
  }
  return cfg;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("mtd_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testsupport
