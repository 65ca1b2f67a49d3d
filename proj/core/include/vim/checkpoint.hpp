// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "vim/model.hpp"
#include "vim/optim.hpp"

namespace vim::train {

// File layout: "VIMC", u32 LE version, u64 LE manifest length, JSON manifest,
// then little-endian tensor payloads. Manifest byte offsets are relative to
// the start of the payload section.
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
struct Checkpoint {
  model::VimModel<T> model;
  std::optional<OptimState<T>> optim;
};

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const model::VimModel<T>& model,
                     const OptimState<T>* optim = nullptr);

// Tensors stored in the other precision are converted.
template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path);

// "f32" or "f64": dtype of the first stored tensor.
std::string checkpoint_dtype(const std::filesystem::path& path);

}  // namespace vim::train
