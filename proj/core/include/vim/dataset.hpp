// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "vim/tensor.hpp"

namespace vim::train {

enum class ClassGeometry { GaussianBlobs, OrientedBars, RingPatterns };

std::string_view to_string(ClassGeometry g);
ClassGeometry parse_class_geometry(std::string_view s);

struct ToyDatasetSpec {
  std::size_t num_classes = 10;
  std::size_t img_size = 16;
  std::size_t channels = 1;
  std::size_t samples_per_class = 100;
  std::uint64_t generator_seed = 0;
  ClassGeometry class_geometry = ClassGeometry::GaussianBlobs;
  double noise = 0.0;   // std of additive Gaussian pixel noise
  double jitter = 0.0;  // pattern offset range, as a fraction of img_size

  void validate() const;
  bool operator==(const ToyDatasetSpec&) const = default;
};

struct Dataset {
  std::size_t height = 0, width = 0, channels = 0, num_classes = 0;
  std::vector<double> pixels;  // [count, H, W, C]
  std::vector<int> labels;
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> val_indices;

  std::size_t size() const { return labels.size(); }
  std::size_t image_numel() const { return height * width * channels; }
};

// Equal ToyDatasetSpec values produce bit-identical datasets.
// Each class contributes exactly samples_per_class images; per class, the
// fifth of the samples with the smallest index hash forms the validation split.
Dataset generate_dataset(const ToyDatasetSpec& spec);

template <typename T>
Tensor<T> gather_images(const Dataset& ds, std::span<const std::size_t> indices);

std::vector<int> gather_labels(const Dataset& ds, std::span<const std::size_t> indices);

}  // namespace vim::train
