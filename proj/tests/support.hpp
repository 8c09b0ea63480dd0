// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The SimCR Authors

#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "simcr/autodiff.hpp"
#include "simcr/corpus.hpp"
#include "simcr/model.hpp"
#include "simcr/pipeline.hpp"
#include "simcr/rng.hpp"

namespace simcr::testing {

inline ad::Tensor random_tensor(const ad::Shape& shape, Rng& rng, bool requires_grad = true,
                                double scale = 1.0) {
  std::vector<double> v(ad::numel(shape));
  for (double& x : v) x = rng.normal(0.0, scale);
  return ad::Tensor::from(shape, std::move(v), requires_grad);
}

/// sum(w * t) for fixed random weights, so every output element matters.
class Probe {
 public:
  Probe(const ad::Shape& shape, std::uint64_t seed) {
    Rng rng(seed);
    weights_ = random_tensor(shape, rng, false);
  }
  ad::Tensor operator()(const ad::Tensor& t) const {
    return ad::reduce_sum(ad::multiply(t, weights_));
  }

 private:
  ad::Tensor weights_;
};

using ScalarFn = std::function<ad::Tensor(const std::vector<ad::Tensor>&)>;

/// Central differences at `h` over `coords` (all elements when empty).
inline std::vector<double> numeric_grad(std::vector<ad::Tensor>& inputs, std::size_t which,
                                        const ScalarFn& f, const std::vector<std::size_t>& coords,
                                        double h) {
  ad::NoGradGuard guard;
  std::vector<double> out;
  auto data = inputs[which].mutable_data();
  for (std::size_t i : coords) {
    const double keep = data[i];
    data[i] = keep + h;
    const double up = f(inputs).item();
    data[i] = keep - h;
    const double down = f(inputs).item();
    data[i] = keep;
    out.push_back((up - down) / (2.0 * h));
  }
  return out;
}

inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::max(std::sqrt(na), std::sqrt(nb));
  if (denom < 1e-8) return std::sqrt(diff);  // below finite-difference round-off
  return std::sqrt(diff) / denom;
}

/// Worst relative error between backward() and central differences over all
/// inputs that require grad. At most `max_coords` coordinates per input.
inline double grad_check(std::vector<ad::Tensor> inputs, const ScalarFn& f, double h = 1e-5,
                         std::size_t max_coords = 64, std::uint64_t seed = 7) {
  for (auto& t : inputs) t.zero_grad();
  f(inputs).backward();
  Rng pick(seed);
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    if (!inputs[k].requires_grad()) continue;
    std::vector<std::size_t> coords(inputs[k].numel());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (coords.size() > max_coords) {
      std::shuffle(coords.begin(), coords.end(), pick.engine());
      coords.resize(max_coords);
    }
    const std::vector<double> full = inputs[k].grad();
    std::vector<double> analytic;
    for (std::size_t i : coords) analytic.push_back(full[i]);
    const auto numeric = numeric_grad(inputs, k, f, coords, h);
    worst = std::max(worst, relative_error(analytic, numeric));
  }
  return worst;
}

/// A model small enough for finite differences and seconds-long training.
inline ModelConfig tiny_model_config(std::size_t src_vocab = 6, std::size_t tgt_vocab = 6,
                                     std::size_t frame_dim = 4) {
  ModelConfig c;
  c.d_model = 8;
  c.n_heads = 2;
  c.n_enc_layers = 1;
  c.n_dec_layers = 1;
  c.d_ffn = 16;
  c.dropout_p = 0.1;
  c.vocab_size = Vocab::kFirstWord + src_vocab + tgt_vocab;
  c.max_positions = 64;
  c.frame_dim = frame_dim;
  c.conv_channels = 8;
  return c;
}

inline TaskSpec tiny_task(std::uint64_t seed = 3) {
  TaskSpec s;
  s.src_vocab_size = 6;
  s.tgt_vocab_size = 6;
  s.min_len = 2;
  s.max_len = 5;
  s.frame_dim = 4;
  s.min_repeat = 2;
  s.max_repeat = 3;
  s.jitter_std = 0.2;
  s.seed = seed;
  return s;
}

inline SplitSizes tiny_sizes() {
  SplitSizes s;
  s.train = 60;
  s.valid = 12;
  s.test = 12;
  s.external = 60;
  return s;
}

inline Corpus tiny_corpus(std::uint64_t seed = 3) {
  return generate_corpus(tiny_task(seed), tiny_sizes());
}

inline StageConfig tiny_stage(const std::string& name, std::vector<Task> tasks,
                              std::uint64_t steps, std::string init = "scratch") {
  StageConfig s;
  s.name = name;
  s.tasks = std::move(tasks);
  s.init = std::move(init);
  s.max_steps = steps;
  s.peak_lr = 3e-3;
  s.warmup_steps = 4;
  s.eval_every = 4;
  s.text_budget = 60;
  s.speech_budget = 120;
  return s;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("simcr-test-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline bool same_params(const ModelParams& a, const ModelParams& b) {
  const auto ta = a.tensors();
  const auto tb = b.tensors();
  if (ta.size() != tb.size()) return false;
  for (std::size_t i = 0; i < ta.size(); ++i) {
    if (ta[i].shape() != tb[i].shape()) return false;
    if (!std::equal(ta[i].data().begin(), ta[i].data().end(), tb[i].data().begin())) {
      return false;
    }
  }
  return true;
}

}  // namespace simcr::testing
