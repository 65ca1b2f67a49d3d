// SPDX-License-Identifier: Apache-2.0
#include "vim/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

#include "vim/error.hpp"
#include "vim/ops.hpp"
#include "vim/random.hpp"
#include "vim/tape.hpp"

namespace vim::train {

void TrainConfig::validate() const {
  require(epochs >= 1, ErrorKind::ConfigInvalid, "train.epochs must be positive");
  require(batch_size >= 1, ErrorKind::ConfigInvalid, "train.batch_size must be positive");
  require(std::isfinite(base_lr) && std::isfinite(min_lr) && min_lr >= 0 && base_lr > min_lr,
          ErrorKind::ConfigInvalid, "train needs base_lr > min_lr >= 0");
  require(std::isfinite(weight_decay) && weight_decay >= 0, ErrorKind::ConfigInvalid,
          "train.weight_decay must be non-negative");
  require(label_smoothing >= 0 && label_smoothing < 0.5, ErrorKind::ConfigInvalid,
          "train.label_smoothing must be in [0, 0.5)");
  require(flip_probability >= 0 && flip_probability <= 1, ErrorKind::ConfigInvalid,
          "train.flip_probability must be in [0, 1]");
}

template <typename T>
Tensor<T> label_smoothing_ce(const Tensor<T>& logits, std::span<const int> labels, T epsilon) {
  return softmax_cross_entropy(logits, labels, epsilon);
}

template <typename T>
double top1_accuracy(const Tensor<T>& logits, std::span<const int> labels) {
  require(logits.dim() == 2 && logits.size(0) == labels.size(), ErrorKind::ShapeMismatch,
          "logits " + shape_string(logits.shape()) + " for " + std::to_string(labels.size()) + " labels");
  if (labels.empty()) return 0.0;
  const std::size_t K = logits.size(1);
  const T* L = logits.data().data();
  std::size_t hits = 0;
  for (std::size_t b = 0; b < labels.size(); ++b) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < K; ++k)
      if (L[b * K + k] > L[b * K + best]) best = k;
    if (static_cast<int>(best) == labels[b]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

template <typename T>
double evaluate(const model::VimModel<T>& model, const Dataset& ds, std::span<const std::size_t> indices,
                std::size_t batch_size) {
  if (indices.empty()) return 0.0;
  NoGradScope<T> no_grad;
  std::size_t hits = 0;
  for (std::size_t start = 0; start < indices.size(); start += batch_size) {
    const auto chunk = indices.subspan(start, std::min(batch_size, indices.size() - start));
    const auto labels = gather_labels(ds, chunk);
    const auto logits = model::forward(model, gather_images<T>(ds, chunk));
    hits += static_cast<std::size_t>(std::lround(top1_accuracy(logits, labels) * static_cast<double>(chunk.size())));
  }
  return static_cast<double>(hits) / static_cast<double>(indices.size());
}

namespace {

struct LoopSettings {
  std::size_t epochs;
  std::size_t batch_size;
  double label_smoothing;
  bool flip;
  double flip_probability;
  std::uint64_t seed;
  std::function<double(std::size_t step, std::size_t total)> lr;
};

template <typename T>
void run_epochs(model::VimModel<T>& model, OptimState<T>& optim, std::vector<EpochMetrics>& metrics, const Dataset& ds,
                const LoopSettings& s, const EpochCallback& on_epoch) {
  require(!ds.train_indices.empty(), ErrorKind::ConfigInvalid, "dataset has an empty training split");
  auto order_rng = make_stream(s.seed, kDataOrderStream);
  auto aug_rng = make_stream(s.seed, kAugmentStream);
  std::bernoulli_distribution coin(s.flip_probability);

  std::vector<std::size_t> order = ds.train_indices;
  const std::size_t steps_per_epoch = (order.size() + s.batch_size - 1) / s.batch_size;
  const std::size_t total = steps_per_epoch * s.epochs;
  std::size_t step = 0;
  auto params = model::named_parameters(model);
  for (auto& [name, p] : params) p.set_requires_grad(true);

  for (std::size_t epoch = 1; epoch <= s.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), order_rng);
    double loss_sum = 0;
    double lr = 0;
    for (std::size_t start = 0; start < order.size(); start += s.batch_size) {
      const std::span<const std::size_t> batch(order.data() + start, std::min(s.batch_size, order.size() - start));
      const auto images = gather_images<T>(ds, batch);
      const auto labels = gather_labels(ds, batch);
      std::vector<std::uint8_t> flip;
      if (s.flip) {
        flip.resize(batch.size());
        for (auto& f : flip) f = coin(aug_rng) ? 1 : 0;
      }

      GradientTape<T> tape;
      Tensor<T> loss;
      try {
        TapeScope<T> scope(tape);
        model::ForwardOptions fo;
        fo.flip = flip;
        loss = label_smoothing_ce(model::forward(model, images, fo), labels, static_cast<T>(s.label_smoothing));
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::NonFinite) throw;
        fail(ErrorKind::NonFiniteLoss, "forward pass diverged at epoch " + std::to_string(epoch) + " step " +
                                           std::to_string(step) + ": " + e.what());
      }
      const double loss_value = static_cast<double>(loss.item());
      if (!std::isfinite(loss_value))
        fail(ErrorKind::NonFiniteLoss, "non-finite loss at epoch " + std::to_string(epoch) + " step " +
                                           std::to_string(step) + " (lr " + std::to_string(optim.lr) + ")");
      tape.backward(loss);

      lr = s.lr(step, total);
      optim.lr = lr;
      adamw_step(params, optim);
      for (auto& [name, p] : params) p.clear_grad();
      loss_sum += loss_value * static_cast<double>(batch.size());
      ++step;
    }
    EpochMetrics em;
    em.epoch = metrics.size() + 1;
    em.train_loss = loss_sum / static_cast<double>(order.size());
    em.val_top1 = evaluate(model, ds, ds.val_indices);
    em.lr = lr;
    em.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    metrics.push_back(em);
    if (on_epoch && !on_epoch(em)) break;
  }
  for (auto& [name, p] : params) p.set_requires_grad(false);
}

}  // namespace

template <typename T>
TrainResult<T> train_loop(const model::VimModel<T>& initial, const Dataset& ds, const TrainConfig& cfg,
                          const EpochCallback& on_epoch) {
  cfg.validate();
  TrainResult<T> r{model::clone_model(initial), {}, {}};
  r.optim = init_optim(model::named_parameters(r.model), cfg.base_lr, cfg.weight_decay);
  const std::size_t steps_per_epoch = (ds.train_indices.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t warmup = cfg.warmup_epochs * steps_per_epoch;
  LoopSettings s{cfg.epochs,
                 cfg.batch_size,
                 cfg.label_smoothing,
                 cfg.flip_augment || initial.config.bidir_strategy == model::BidirStrategy::BidirSequence,
                 cfg.flip_probability,
                 cfg.seed,
                 [&cfg, warmup](std::size_t step, std::size_t total) {
                   return cosine_lr(step, total, cfg.base_lr, cfg.min_lr, std::min(warmup, total));
                 }};
  run_epochs(r.model, r.optim, r.metrics, ds, s, on_epoch);
  return r;
}

template <typename T>
TrainResult<T> train_model(const model::ModelConfig& config, const Dataset& ds, const TrainConfig& cfg,
                           const EpochCallback& on_epoch) {
  auto rng = make_stream(cfg.seed, kInitStream);
  const auto initial = model::init_model<T>(config, rng);
  return train_loop(initial, ds, cfg, on_epoch);
}

template <typename T>
TrainResult<T> finetune_long_sequence(const model::VimModel<T>& model, const Dataset& ds, std::size_t new_stride,
                                      const FinetuneConfig& cfg, const EpochCallback& on_epoch) {
  require(model.config.stride == model.config.P, ErrorKind::GridMismatch,
          "long-sequence fine-tuning starts from a model trained at stride == patch size");
  require(cfg.epochs >= 1 && cfg.batch_size >= 1 && cfg.lr >= 0, ErrorKind::ConfigInvalid,
          "invalid fine-tuning settings");
  TrainResult<T> r{model::with_patch_stride(model, new_stride), {}, {}};
  r.optim = init_optim(model::named_parameters(r.model), cfg.lr, cfg.weight_decay);
  const double lr = cfg.lr;
  LoopSettings s{cfg.epochs, cfg.batch_size, cfg.label_smoothing, false, 0.0, cfg.seed,
                 [lr](std::size_t, std::size_t) { return lr; }};
  run_epochs(r.model, r.optim, r.metrics, ds, s, on_epoch);
  return r;
}

#define VIM_INSTANTIATE_TRAIN(T)                                                                                  \
  template Tensor<T> label_smoothing_ce(const Tensor<T>&, std::span<const int>, T);                               \
  template double top1_accuracy(const Tensor<T>&, std::span<const int>);                                          \
  template double evaluate(const model::VimModel<T>&, const Dataset&, std::span<const std::size_t>, std::size_t); \
  template TrainResult<T> train_loop(const model::VimModel<T>&, const Dataset&, const TrainConfig&,               \
                                     const EpochCallback&);                                                       \
  template TrainResult<T> train_model<T>(const model::ModelConfig&, const Dataset&, const TrainConfig&,           \
                                         const EpochCallback&);                                                   \
  template TrainResult<T> finetune_long_sequence(const model::VimModel<T>&, const Dataset&, std::size_t,          \
                                                 const FinetuneConfig&, const EpochCallback&);

VIM_INSTANTIATE_TRAIN(float)
VIM_INSTANTIATE_TRAIN(double)

}  // namespace vim::train
