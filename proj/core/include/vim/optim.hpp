// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "vim/tensor.hpp"

namespace vim::train {

template <typename T>
struct OptimState {
  std::vector<std::string> names;
  std::vector<Tensor<T>> m;  // first moments, shaped like their parameters
  std::vector<Tensor<T>> v;  // second moments
  std::vector<std::uint8_t> decay;  // 1 where weight decay applies
  std::uint64_t step = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;
};

// Matrices decay; vectors, A_log, position tables and class tokens do not.
bool applies_weight_decay(const std::string& name, const Shape& shape);

template <typename T>
OptimState<T> init_optim(const std::vector<std::pair<std::string, Tensor<T>>>& params, double lr,
                         double weight_decay);

// One decoupled-decay AdamW update of a single tensor at (1-based) step `t`:
//   p <- p (1 - lr wd);  p <- p - lr mhat / (sqrt(vhat) + eps)
template <typename T>
void adamw_update(Tensor<T>& param, std::span<const T> grad, Tensor<T>& m, Tensor<T>& v, std::uint64_t t, double lr,
                  double beta1, double beta2, double eps, double weight_decay);

// Advances state.step and updates every parameter from its accumulated
// gradient (parameters without a gradient see a zero gradient).
template <typename T>
void adamw_step(std::vector<std::pair<std::string, Tensor<T>>>& params, OptimState<T>& state);

// Linear warmup from min_lr to base_lr over warmup_steps, then cosine decay
// to min_lr at total_steps.
double cosine_lr(std::size_t step, std::size_t total_steps, double base_lr, double min_lr, std::size_t warmup_steps);

}  // namespace vim::train
