// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "vim/ops.hpp"
#include "vim/ssm.hpp"
#include "vim/tensor.hpp"

namespace vim::model {

// How the forward and backward sequence directions are combined.
enum class BidirStrategy {
  NoneForwardOnly,
  BidirSequence,  // forward-only blocks; training flips token order at random
  BidirBlock,     // even layers forward-only, odd layers backward-only
  BidirSSM,       // backward SSM shares the forward convolution
  BidirSSMConv1d, // backward SSM with its own backward convolution
};

// What a single block runs once the strategy is resolved for its layer.
enum class Directionality { ForwardOnly, BackwardOnly, Bidirectional, BidirectionalSharedConv };

Directionality block_for_layer(std::size_t layer_index, BidirStrategy strategy);

bool needs_backward_params(BidirStrategy strategy);

template <typename T>
struct ConvParams {
  Tensor<T> kernel;  // [E, k]
  Tensor<T> bias;    // [E]
};

// Parameters of one scan direction: convolution, B/C/delta projections and A.
template <typename T>
struct SsmDirectionParams {
  std::optional<ConvParams<T>> conv;  // absent when the direction reuses the forward convolution
  Tensor<T> W_B;         // [E, N]
  Tensor<T> W_C;         // [E, N]
  Tensor<T> W_delta;     // [E, dt_rank]
  Tensor<T> W_delta_up;  // [dt_rank, E]
  Tensor<T> delta_bias;  // [E]
  Tensor<T> A_log;       // [E, N]
};

template <typename T>
struct VimBlockParams {
  Tensor<T> norm_gamma;  // [D]
  Tensor<T> norm_beta;   // [D]
  Tensor<T> W_x;         // [D, E]
  Tensor<T> b_x;         // [E] or undefined
  Tensor<T> W_z;         // [D, E]
  Tensor<T> b_z;         // [E] or undefined
  SsmDirectionParams<T> dir_fwd;
  std::optional<SsmDirectionParams<T>> dir_bwd;
  Tensor<T> W_T;  // [E, D]
  Tensor<T> b_T;  // [D] or undefined
};

struct BlockShape {
  std::size_t D = 0;
  std::size_t E = 0;
  std::size_t N = 0;
  std::size_t conv_kernel = 4;
  std::size_t dt_rank = 0;  // 0 selects ceil(D / 16)
  bool linear_bias = true;

  std::size_t resolved_dt_rank() const { return dt_rank != 0 ? dt_rank : (D + 15) / 16; }
};

struct BlockOptions {
  ssm::ScanOptions scan{};
  double norm_eps = 1e-5;
};

// Draws block parameters: truncated normal (std 0.02) projections, unit
// gamma, zero biases, A from ssm::init_A_log, and delta_bias such that
// softplus(delta_bias) is log-uniform in [1e-3, 1e-1].
template <typename T>
VimBlockParams<T> init_block(const BlockShape& shape, BidirStrategy strategy, std::mt19937_64& rng);

// Single-direction pass: SiLU(Conv1d(x)), B/C/delta projections, softplus,
// Euler-B discretization and the scan, all in `direction`. When
// `shared_conv` is given it replaces SiLU(Conv1d(x)).
template <typename T>
Tensor<T> direction_pass(const Tensor<T>& x, const SsmDirectionParams<T>& dir, Direction direction,
                         const Tensor<T>* shared_conv = nullptr, const BlockOptions& options = {});

// T_prev [B, M, D] -> T_next [B, M, D] with the residual included.
template <typename T>
Tensor<T> vim_block_forward(const Tensor<T>& T_prev, const VimBlockParams<T>& p, BidirStrategy strategy,
                            std::size_t layer_index = 0, const BlockOptions& options = {});

// Calls f(name, tensor&) for every parameter in a stable order.
template <typename T, typename F>
void visit_parameters(SsmDirectionParams<T>& d, const std::string& prefix, F&& f) {
  if (d.conv) {
    f(prefix + "conv.kernel", d.conv->kernel);
    f(prefix + "conv.bias", d.conv->bias);
  }
  f(prefix + "W_B", d.W_B);
  f(prefix + "W_C", d.W_C);
  f(prefix + "W_delta", d.W_delta);
  f(prefix + "W_delta_up", d.W_delta_up);
  f(prefix + "delta_bias", d.delta_bias);
  f(prefix + "A_log", d.A_log);
}

template <typename T, typename F>
void visit_parameters(VimBlockParams<T>& p, const std::string& prefix, F&& f) {
  f(prefix + "norm.gamma", p.norm_gamma);
  f(prefix + "norm.beta", p.norm_beta);
  f(prefix + "W_x", p.W_x);
  if (p.b_x.defined()) f(prefix + "b_x", p.b_x);
  f(prefix + "W_z", p.W_z);
  if (p.b_z.defined()) f(prefix + "b_z", p.b_z);
  visit_parameters(p.dir_fwd, prefix + "fwd.", f);
  if (p.dir_bwd) visit_parameters(*p.dir_bwd, prefix + "bwd.", f);
  f(prefix + "W_T", p.W_T);
  if (p.b_T.defined()) f(prefix + "b_T", p.b_T);
}

// Name/tensor pairs in a stable order, prefixed with `prefix`.
template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> block_parameters(const VimBlockParams<T>& p, const std::string& prefix);

// Parameter shapes a block of `shape` carries under `strategy`.
std::vector<std::pair<std::string, Shape>> block_parameter_shapes(const BlockShape& shape, BidirStrategy strategy,
                                                                  const std::string& prefix);

// Exchanges the forward and backward direction parameters.
template <typename T>
VimBlockParams<T> swap_directions(const VimBlockParams<T>& p);

}  // namespace vim::model
