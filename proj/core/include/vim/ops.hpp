// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

#include "vim/tensor.hpp"

namespace vim {

// Scan direction along the sequence axis.
enum class Direction { Forward, Backward };

// [.., m, k] x [k, n] -> [.., m, n]. Each output element accumulates over k
// in index order.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

// x W (+ bias when defined).
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias = {});

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor);

// x[.., n] + bias[n]
template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias);

// x[B, rest...] + rows[rest...], the same rows for every leading index.
template <typename T>
Tensor<T> add_rows(const Tensor<T>& x, const Tensor<T>& rows);

// Normalizes over the last axis, then applies gamma/beta.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps);

template <typename T>
Tensor<T> silu(const Tensor<T>& x);

// max(x, 0) + log1p(exp(-|x|)), strictly positive for finite x.
template <typename T>
Tensor<T> softplus(const Tensor<T>& x);

// Per-channel 1-D convolution over axis 1 of x[B, M, E] with kernel[E, k].
// Forward: out[t] = bias + sum_j kernel[j] * x[t - j] (zeros before the start).
// Backward: out[t] = bias + sum_j kernel[j] * x[t + j] (zeros past the end).
template <typename T>
Tensor<T> conv1d_depthwise(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias,
                           Direction direction);

// Reverses axis 1. With a non-empty mask only the batch rows whose mask
// entry is non-zero are reversed.
template <typename T>
Tensor<T> reverse_seq(const Tensor<T>& x, std::span<const std::uint8_t> mask = {});

template <typename T>
Tensor<T> sum(const Tensor<T>& x);

template <typename T>
Tensor<T> mean(const Tensor<T>& x);

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

// x[B, J, D] with token[D] inserted at sequence index `position` -> [B, J+1, D].
template <typename T>
Tensor<T> insert_token(const Tensor<T>& x, const Tensor<T>& token, std::size_t position);

// x[B, M, D] -> x[:, position, :]
template <typename T>
Tensor<T> select_token(const Tensor<T>& x, std::size_t position);

// x[B, M, D] -> mean over M
template <typename T>
Tensor<T> mean_seq(const Tensor<T>& x);

// x[B, M, K] -> max over M; ties go to the lowest sequence index.
template <typename T>
Tensor<T> max_seq(const Tensor<T>& x);

// Batch-mean cross-entropy of logits[B, K] against (1 - eps) onehot + eps / K.
template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels, T smoothing);

}  // namespace vim
