// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "vim/block.hpp"
#include "vim/config.hpp"
#include "vim/tensor.hpp"

namespace vim::model {

template <typename T>
struct PatchEmbedParams {
  Tensor<T> W_proj;    // [P*P*C_in, D]
  Tensor<T> pos;       // [num_tokens, D]
  Tensor<T> cls;       // [D], undefined for pooling strategies
  Tensor<T> cls_tail;  // [D], DoubleClassToken only
};

template <typename T>
struct VimModel {
  ModelConfig config;
  PatchEmbedParams<T> embed;
  std::vector<VimBlockParams<T>> blocks;
  Tensor<T> final_gamma;  // [D]
  Tensor<T> final_beta;   // [D]
  Tensor<T> head_W;       // [D, num_classes]
  Tensor<T> head_b;       // [num_classes]
};

template <typename T, typename F>
void visit_parameters(VimModel<T>& m, F&& f) {
  f(std::string("embed.W_proj"), m.embed.W_proj);
  f(std::string("embed.pos"), m.embed.pos);
  if (m.embed.cls.defined()) f(std::string("embed.cls"), m.embed.cls);
  if (m.embed.cls_tail.defined()) f(std::string("embed.cls_tail"), m.embed.cls_tail);
  for (std::size_t l = 0; l < m.blocks.size(); ++l)
    visit_parameters(m.blocks[l], "blocks." + std::to_string(l) + ".", f);
  f(std::string("final_norm.gamma"), m.final_gamma);
  f(std::string("final_norm.beta"), m.final_beta);
  f(std::string("head.W"), m.head_W);
  f(std::string("head.b"), m.head_b);
}

// Aliases of every parameter tensor, in checkpoint order.
template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> named_parameters(const VimModel<T>& m);

// Deep copy.
template <typename T>
VimModel<T> clone_model(const VimModel<T>& m);

struct Grid {
  std::size_t h = 0;
  std::size_t w = 0;
  std::size_t count() const { return h * w; }
  bool operator==(const Grid&) const = default;
};

// Token grid of an H x W image cut into P x P patches every `stride` pixels.
Grid token_grid(std::size_t H, std::size_t W, std::size_t P, std::size_t stride);

std::size_t class_token_count(ClsStrategy s);

// Sequence indices of the class tokens for J patch tokens.
std::vector<std::size_t> class_token_positions(ClsStrategy s, std::size_t J);

inline std::size_t num_tokens(ClsStrategy s, std::size_t J) { return J + class_token_count(s); }

// image [B, H, W, C] -> patches [B, J, P*P*C], patches in row-major grid
// order, each flattened as (row, column, channel).
template <typename T>
Tensor<T> patchify(const Tensor<T>& image, std::size_t P, std::size_t stride);

// patches [B, J, P*P*C] -> tokens [B, num_tokens, D] with class tokens
// inserted, then position embeddings added.
template <typename T>
Tensor<T> embed(const Tensor<T>& patches, const PatchEmbedParams<T>& pe, ClsStrategy cls);

// Bilinear (corner-aligned) resampling of the patch rows of a position
// table from `old_grid` to `new_grid`; class-token rows are copied through.
template <typename T>
Tensor<T> interp_pos_embed(const Tensor<T>& pos, Grid old_grid, Grid new_grid, ClsStrategy cls);

template <typename T>
Tensor<T> encoder_forward(const Tensor<T>& T0, const VimModel<T>& model, const BlockOptions& options = {});

template <typename T>
Tensor<T> classify(const Tensor<T>& TL, const VimModel<T>& model, ClsStrategy cls);

struct ForwardOptions {
  // Per-sample sequence reversal applied after embedding and undone after
  // the encoder. Empty means no flipping.
  std::span<const std::uint8_t> flip;
  BlockOptions block{};
};

// image [B, H, W, C] -> logits [B, num_classes]
template <typename T>
Tensor<T> forward(const VimModel<T>& model, const Tensor<T>& images, const ForwardOptions& options = {});

// Truncated-normal (std 0.02) projections, embeddings and head; unit
// gammas; zero betas and biases.
template <typename T>
VimModel<T> init_model(const ModelConfig& config, std::mt19937_64& rng);

std::vector<std::pair<std::string, Shape>> parameter_shapes(const ModelConfig& config);

std::size_t param_count(const ModelConfig& config);

template <typename T>
std::size_t param_count(const VimModel<T>& model);

// Copy of `model` re-gridded for a new patch stride; the position table is
// resampled with interp_pos_embed.
template <typename T>
VimModel<T> with_patch_stride(const VimModel<T>& model, std::size_t stride);

// Copy whose every block has its forward/backward directions exchanged.
template <typename T>
VimModel<T> swap_all_directions(const VimModel<T>& model);

}  // namespace vim::model
