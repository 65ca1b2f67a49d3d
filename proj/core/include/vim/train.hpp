// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "vim/dataset.hpp"
#include "vim/model.hpp"
#include "vim/optim.hpp"

namespace vim::train {

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 64;
  double base_lr = 1e-3;
  double min_lr = 1e-5;
  std::size_t warmup_epochs = 3;
  double weight_decay = 0.05;
  double label_smoothing = 0.1;
  bool flip_augment = false;
  double flip_probability = 0.5;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

// Independent RNG streams derived from TrainConfig::seed.
inline constexpr std::uint64_t kInitStream = 1;
inline constexpr std::uint64_t kDataOrderStream = 2;
inline constexpr std::uint64_t kAugmentStream = 3;

struct EpochMetrics {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0;
  double val_top1 = 0;
  double lr = 0;
  double wall_s = 0;
};

template <typename T>
struct TrainResult {
  model::VimModel<T> model;
  OptimState<T> optim;
  std::vector<EpochMetrics> metrics;
};

// Called after every epoch; returning false stops training early.
using EpochCallback = std::function<bool(const EpochMetrics&)>;

template <typename T>
Tensor<T> label_smoothing_ce(const Tensor<T>& logits, std::span<const int> labels, T epsilon);

// Fraction of rows whose argmax (lowest index on ties) equals the label.
template <typename T>
double top1_accuracy(const Tensor<T>& logits, std::span<const int> labels);

template <typename T>
double evaluate(const model::VimModel<T>& model, const Dataset& ds, std::span<const std::size_t> indices,
                std::size_t batch_size = 128);

// Trains a copy of `initial` with AdamW on the cosine schedule. The flip
// augmentation is active when cfg.flip_augment is set or the model uses the
// BidirSequence strategy.
template <typename T>
TrainResult<T> train_loop(const model::VimModel<T>& initial, const Dataset& ds, const TrainConfig& cfg,
                          const EpochCallback& on_epoch = {});

// init_model from the config's init stream, then train_loop.
template <typename T>
TrainResult<T> train_model(const model::ModelConfig& config, const Dataset& ds, const TrainConfig& cfg,
                           const EpochCallback& on_epoch = {});

struct FinetuneConfig {
  std::size_t epochs = 3;
  std::size_t batch_size = 64;
  double lr = 1e-4;  // constant
  double weight_decay = 1e-8;
  double label_smoothing = 0.1;
  std::uint64_t seed = 0;
};

// Re-grids a model trained at stride == P to `new_stride` (position table
// interpolated) and trains it at constant lr.
template <typename T>
TrainResult<T> finetune_long_sequence(const model::VimModel<T>& model, const Dataset& ds, std::size_t new_stride,
                                      const FinetuneConfig& cfg, const EpochCallback& on_epoch = {});

}  // namespace vim::train
