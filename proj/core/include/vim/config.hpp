// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>
#include <string_view>

#include "vim/block.hpp"

namespace vim::model {

enum class ClsStrategy { MeanPool, MaxPool, HeadClassToken, DoubleClassToken, MiddleClassToken };

enum class Variant { Tiny, Small, Base, Micro };

struct ModelConfig {
  std::size_t L = 4;  // blocks
  std::size_t D = 64;
  std::size_t E = 128;
  std::size_t N = 8;
  std::size_t P = 4;       // patch size
  std::size_t stride = 4;  // patch stride
  std::size_t img_h = 16;
  std::size_t img_w = 16;
  std::size_t in_channels = 1;
  std::size_t num_classes = 10;
  ClsStrategy cls_strategy = ClsStrategy::MiddleClassToken;
  BidirStrategy bidir_strategy = BidirStrategy::BidirSSMConv1d;
  std::size_t conv_kernel = 4;
  std::size_t dt_rank = 0;  // 0 selects ceil(D / 16)
  bool linear_bias = true;
  double norm_eps = 1e-5;

  BlockShape block_shape() const { return {D, E, N, conv_kernel, dt_rank, linear_bias}; }

  // Throws ConfigInvalid (or IndivisibleImage for the patch grid) when the
  // configuration cannot describe a model.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

ModelConfig build_config(Variant variant);

std::string_view to_string(ClsStrategy s);
std::string_view to_string(BidirStrategy s);
std::string_view to_string(Variant v);
ClsStrategy parse_cls_strategy(std::string_view s);
BidirStrategy parse_bidir_strategy(std::string_view s);
Variant parse_variant(std::string_view s);

// Compact JSON object with every field.
std::string to_json(const ModelConfig& config);

// Parses a JSON object. Missing fields keep the defaults of `base` (or of
// the preset named by an optional "variant" key); unknown keys are rejected
// with ConfigInvalid.
ModelConfig model_config_from_json(std::string_view json, const ModelConfig& base = {});

}  // namespace vim::model
