// SPDX-License-Identifier: Apache-2.0
// Brute-force reference implementations. They use plain vectors and direct
// loops only, never library kernels.
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "vim/dataset.hpp"
#include "vim/tensor.hpp"

namespace vim::oracle {

using Vec = std::vector<double>;

Vec to_vec(const Tensor<double>& t);

// Triple-loop a[R, K] @ b[K, C].
Vec matmul(const Vec& a, const Vec& b, std::size_t R, std::size_t K, std::size_t C);

// Recurrence h_t = exp(d A) h + Bbar x, y_t = <C_t, h_t>; A = -exp(A_log).
// zoh selects Bbar = (exp(dA) - 1)/A B, otherwise Bbar = d B.
// Shapes: x, delta [B, M, E]; A_log [E, N]; Bt, Ct [B, M, N].
Vec selective_scan(const Vec& x, const Vec& delta, const Vec& A_log, const Vec& Bt, const Vec& Ct, std::size_t B,
                   std::size_t M, std::size_t E, std::size_t N, bool zoh);

// Depthwise convolution with explicit zero padding. Causal:
// y[t] = bias + sum_j k[j] x[t - j]; anticausal: y[t] = bias + sum_j k[j] x[t + j].
Vec depthwise_conv(const Vec& x, const Vec& kernel, const Vec& bias, std::size_t B, std::size_t M, std::size_t E,
                   std::size_t K, bool anticausal);

// Single-head softmax attention, 1/sqrt(D) scaling, explicit double loop.
Vec attention(const Vec& x, const Vec& Wq, const Vec& Wk, const Vec& Wv, const Vec& Wo, std::size_t B, std::size_t M,
              std::size_t D);

// Counts P x P windows whose top-left corner lies on the stride lattice.
std::size_t enumerate_patches(std::size_t H, std::size_t W, std::size_t P, std::size_t stride);

// Layer norm over the last axis of rows[R, D] (biased variance).
Vec layer_norm(const Vec& x, const Vec& gamma, const Vec& beta, std::size_t R, std::size_t D, double eps);

// Nearest-class-mean classifier fitted on the train split, scored on val.
double nearest_class_mean_accuracy(const train::Dataset& ds);

// Same classifier scored on its own training split.
double nearest_class_mean_train_accuracy(const train::Dataset& ds);

// Relative error max_i |a_i - b_i| / max_i |b_i|.
double rel_err(std::span<const double> a, std::span<const double> b);

}  // namespace vim::oracle
