// SPDX-License-Identifier: Apache-2.0
//
// Training, evaluation and the perturbation sweep, plus the metrics CSV.

#pragma once

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstdint>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "stt/autodiff.hpp"
#include "stt/config.hpp"
#include "stt/data.hpp"
#include "stt/nn.hpp"
#include "stt/perturb.hpp"

namespace stt {

struct MetricsRecord {
  std::string model;
  std::string perturbation;  ///< clean, noise, rotate, flip_<mode>
  double magnitude = 0.0;
  double accuracy = 0.0;
  std::size_t n = 0;
  std::uint64_t seed = 0;
  double wall_ms = 0.0;
};

struct EpochMetrics {
  std::size_t epoch = 0;  ///< 1-based
  double loss = 0.0;      ///< mean training loss over the epoch
  double train_accuracy = 0.0;  ///< running accuracy of the epoch's forward passes
  double test_accuracy = 0.0;
};

/// Loads the configured train/test split.
inline Split load_data(const ExperimentConfig& c) {
  if (c.data.source == DataSection::Source::Synthetic) return generate_synthetic(c.data.synthetic);
  Split s;
  for (const std::string& f : c.data.train_files) s.train.append(load_cifar10(f));
  for (const std::string& f : c.data.test_files) s.test.append(load_cifar10(f));
  auto limit = [](Dataset& d, std::size_t n) {
    if (n == 0 || n >= d.size()) return;
    d.images.resize(n);
    d.labels.resize(n);
  };
  limit(s.train, c.data.train_limit);
  limit(s.test, c.data.test_limit);
  return s;
}

/// Fraction of `data` classified correctly after applying `p` to each image.
/// Ties between logits go to the lowest class index.
inline double accuracy(const Model& model, std::span<const Tensor> params, const Dataset& data,
                       const Perturbation& p = {}, std::uint64_t seed = 0) {
  if (data.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Tensor img = apply(p, data.images[i], seed, i);
    correct += model.predict(params, img) == data.labels[i];
  }
  return double(correct) / double(data.size());
}

struct TrainResult {
  Model model;
  std::vector<Tensor> params;
  std::vector<EpochMetrics> history;
};

struct TrainOptions {
  /// Called after every epoch; returning false stops training early.
  std::function<bool(const EpochMetrics&)> on_epoch;
  bool evaluate_test = true;
};

/// Parameter initialization and epoch shuffling use independent streams
/// derived from the training seed.
inline std::mt19937_64 init_rng(std::uint64_t seed) {
  std::seed_seq s{std::uint32_t(seed), std::uint32_t(seed >> 32), 0u};
  return std::mt19937_64(s);
}
inline std::mt19937_64 shuffle_rng(std::uint64_t seed) {
  std::seed_seq s{std::uint32_t(seed), std::uint32_t(seed >> 32), 1u};
  return std::mt19937_64(s);
}

/// Mean cross-entropy of one batch, with gradients accumulated into `grads`.
/// Returns the batch loss and the number of correct predictions.
inline std::pair<double, std::size_t> batch_gradient(const Model& model,
                                                     std::span<const Tensor> params,
                                                     const Dataset& data,
                                                     std::span<const std::size_t> batch,
                                                     std::vector<Tensor>& grads) {
  ad::Tape tape;
  std::vector<ad::Var> vars;
  vars.reserve(params.size());
  for (std::size_t k = 0; k < params.size(); ++k)
    vars.push_back(tape.leaf(params[k], model.layout()[k].trainable));
  ad::Var total;
  std::size_t correct = 0;
  for (std::size_t idx : batch) {
    const ad::Var logits = model.forward(vars, tape.constant(data.images[idx]));
    correct += argmax(logits.value()) == data.labels[idx];
    const ad::Var loss = ad::cross_entropy(logits, data.labels[idx]);
    total = total.valid() ? ad::add(total, loss) : loss;
  }
  const ad::Var mean = ad::scale(total, 1.0 / double(batch.size()));
  tape.backward(mean);
  grads.clear();
  for (const ad::Var& v : vars) grads.push_back(v.grad());
  return {mean.value()[0], correct};
}

/// Seeded minibatch SGD. epochs == 0 returns the initialized model.
inline TrainResult train(const ExperimentConfig& config, const Split& data,
                         const TrainOptions& opts = {}) {
  validate(config);
  Model model = build_model(config);
  for (std::size_t i = 0; i < data.train.size(); ++i)
    if (data.train.images[i].shape() != model.input_shape() ||
        data.train.labels[i] >= model.spec().classes)
      throw ConfigError("training example " + std::to_string(i) +
                        " does not match the model input or class count");
  auto rng = init_rng(config.training.seed);
  std::vector<Tensor> params = model.init(rng);
  std::vector<bool> trainable;
  for (const ParamInfo& p : model.layout()) trainable.push_back(p.trainable);

  Sgd opt(config.training.lr, config.training.momentum);
  auto shuffler = shuffle_rng(config.training.seed);
  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<Tensor> grads;
  std::vector<EpochMetrics> history;
  const std::size_t bs = config.training.batch_size;

  for (std::size_t epoch = 1; epoch <= config.training.epochs && !order.empty(); ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffler);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::size_t len = std::min(bs, order.size() - start);
      const auto batch = std::span<const std::size_t>(order).subspan(start, len);
      const auto [loss, ok] = batch_gradient(model, params, data.train, batch, grads);
      loss_sum += loss * double(len);
      correct += ok;
      opt.step(params, grads, &trainable);
    }
    EpochMetrics m;
    m.epoch = epoch;
    m.loss = loss_sum / double(order.size());
    m.train_accuracy = double(correct) / double(order.size());
    if (opts.evaluate_test) m.test_accuracy = accuracy(model, params, data.test);
    history.push_back(m);
    if (opts.on_epoch && !opts.on_epoch(m)) break;
  }
  return {std::move(model), std::move(params), std::move(history)};
}

/// Clean accuracy plus one record per (perturbation, magnitude) in the grid.
/// wall_ms stays 0 unless `wall_time` is set, so output bytes depend only on
/// the inputs.
inline std::vector<MetricsRecord> perturb_sweep(const Model& model, std::span<const Tensor> params,
                                                const Dataset& test, const std::string& tag,
                                                const EvaluationSection& grid,
                                                std::uint64_t seed, bool wall_time = false) {
  std::vector<Perturbation> plan{Perturbation::none()};
  for (double s : grid.noise) plan.push_back(Perturbation::noise(s));
  for (double d : grid.rotations) plan.push_back(Perturbation::rotation(d));
  for (FlipMode f : grid.flips) plan.push_back(Perturbation::flipping(f));

  std::vector<MetricsRecord> out;
  for (const Perturbation& p : plan) {
    const auto t0 = std::chrono::steady_clock::now();
    MetricsRecord r;
    r.model = tag;
    r.perturbation = p.tag();
    r.magnitude = p.magnitude;
    r.accuracy = accuracy(model, params, test, p, grid.seed);
    r.n = test.size();
    r.seed = seed;
    if (wall_time)
      r.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                      .count();
    const bool dup = std::any_of(out.begin(), out.end(), [&](const MetricsRecord& o) {
      return o.perturbation == r.perturbation && o.magnitude == r.magnitude;
    });
    if (!dup) out.push_back(std::move(r));
  }
  return out;
}

inline constexpr std::string_view kCsvHeader = "model,perturbation,magnitude,accuracy,n,seed,wall_ms";

/// Shortest decimal text that reads back to the same double.
inline std::string format_number(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::string to_csv(std::span<const MetricsRecord> records) {
  std::string s(kCsvHeader);
  s += '\n';
  for (const MetricsRecord& r : records) {
    s += r.model + ',' + r.perturbation + ',' + format_number(r.magnitude) + ',' +
         format_number(r.accuracy) + ',' + std::to_string(r.n) + ',' + std::to_string(r.seed) +
         ',' + format_number(r.wall_ms) + '\n';
  }
  return s;
}

inline void write_csv(const std::string& path, std::span<const MetricsRecord> records) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << to_csv(records);
  if (!out) throw std::runtime_error("write failed for " + path);
}

}  // namespace stt
