// SPDX-License-Identifier: Apache-2.0
#include "vim/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include "vim/error.hpp"
#include "vim/random.hpp"

namespace vim::train {

std::string_view to_string(ClassGeometry g) {
  switch (g) {
    case ClassGeometry::GaussianBlobs:
      return "gaussian_blobs";
    case ClassGeometry::OrientedBars:
      return "oriented_bars";
    case ClassGeometry::RingPatterns:
      return "ring_patterns";
  }
  return "?";
}

ClassGeometry parse_class_geometry(std::string_view s) {
  for (auto g : {ClassGeometry::GaussianBlobs, ClassGeometry::OrientedBars, ClassGeometry::RingPatterns})
    if (to_string(g) == s) return g;
  fail(ErrorKind::ConfigInvalid, "unknown class_geometry '" + std::string(s) + "'");
}

void ToyDatasetSpec::validate() const {
  require(num_classes >= 2, ErrorKind::ConfigInvalid, "data.num_classes must be at least 2");
  require(img_size >= 4, ErrorKind::ConfigInvalid, "data.img_size must be at least 4");
  require(channels >= 1, ErrorKind::ConfigInvalid, "data.channels must be positive");
  require(samples_per_class >= 5, ErrorKind::ConfigInvalid, "data.samples_per_class must be at least 5");
  require(std::isfinite(noise) && noise >= 0, ErrorKind::ConfigInvalid, "data.noise must be non-negative");
  require(std::isfinite(jitter) && jitter >= 0 && jitter <= 0.5, ErrorKind::ConfigInvalid,
          "data.jitter must be in [0, 0.5]");
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Intensity in [0, 1] of class `c` at pixel (y, x), pattern shifted by (oy, ox).
double pattern(const ToyDatasetSpec& s, std::size_t c, double y, double x, double oy, double ox) {
  const double S = static_cast<double>(s.img_size);
  const double K = static_cast<double>(s.num_classes);
  const double cy = (S - 1) / 2 + oy, cx = (S - 1) / 2 + ox;
  switch (s.class_geometry) {
    case ClassGeometry::GaussianBlobs: {
      // Class centers evenly spaced on a circle around the image center.
      const double a = 2 * std::numbers::pi * static_cast<double>(c) / K;
      const double r = 0.3 * S;
      const double by = cy + r * std::sin(a), bx = cx + r * std::cos(a);
      const double sigma = S / 8;
      const double d2 = (y - by) * (y - by) + (x - bx) * (x - bx);
      return std::exp(-d2 / (2 * sigma * sigma));
    }
    case ClassGeometry::OrientedBars: {
      const double a = std::numbers::pi * static_cast<double>(c) / K;
      const double dist = -(y - cy) * std::cos(a) + (x - cx) * std::sin(a);
      const double w = S / 16;
      return std::exp(-dist * dist / (2 * w * w));
    }
    case ClassGeometry::RingPatterns: {
      const double radius = S * (0.08 + 0.36 * static_cast<double>(c) / std::max(1.0, K - 1));
      const double d = std::sqrt((y - cy) * (y - cy) + (x - cx) * (x - cx)) - radius;
      const double w = S / 20;
      return std::exp(-d * d / (2 * w * w));
    }
  }
  return 0;
}

}  // namespace

Dataset generate_dataset(const ToyDatasetSpec& spec) {
  spec.validate();
  Dataset ds;
  ds.height = ds.width = spec.img_size;
  ds.channels = spec.channels;
  ds.num_classes = spec.num_classes;
  const std::size_t K = spec.num_classes, S = spec.img_size, C = spec.channels;
  const std::size_t count = K * spec.samples_per_class;
  ds.pixels.resize(count * S * S * C);
  ds.labels.resize(count);
  const double shift = spec.jitter * static_cast<double>(S);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t c = i % K;
    ds.labels[i] = static_cast<int>(c);
    auto rng = make_stream(spec.generator_seed, i);
    std::uniform_real_distribution<double> offset(-shift, shift);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const double oy = shift > 0 ? offset(rng) : 0.0;
    const double ox = shift > 0 ? offset(rng) : 0.0;
    double* img = ds.pixels.data() + i * S * S * C;
    for (std::size_t y = 0; y < S; ++y)
      for (std::size_t x = 0; x < S; ++x) {
        const double v = pattern(spec, c, static_cast<double>(y), static_cast<double>(x), oy, ox);
        for (std::size_t ch = 0; ch < C; ++ch) {
          const double n = spec.noise > 0 ? spec.noise * gauss(rng) : 0.0;
          img[(y * S + x) * C + ch] = v * (1.0 - 0.25 * static_cast<double>(ch) / static_cast<double>(C)) + n;
        }
      }
  }

  const std::size_t n_val = spec.samples_per_class / 5;
  for (std::size_t c = 0; c < K; ++c) {
    std::vector<std::pair<std::uint64_t, std::size_t>> keyed;
    for (std::size_t j = 0; j < spec.samples_per_class; ++j) {
      const std::size_t idx = j * K + c;
      keyed.emplace_back(splitmix64(spec.generator_seed ^ splitmix64(idx)), idx);
    }
    std::sort(keyed.begin(), keyed.end());
    for (std::size_t j = 0; j < keyed.size(); ++j)
      (j < n_val ? ds.val_indices : ds.train_indices).push_back(keyed[j].second);
  }
  std::sort(ds.train_indices.begin(), ds.train_indices.end());
  std::sort(ds.val_indices.begin(), ds.val_indices.end());
  return ds;
}

template <typename T>
Tensor<T> gather_images(const Dataset& ds, std::span<const std::size_t> indices) {
  const std::size_t F = ds.image_numel();
  Tensor<T> out({indices.size(), ds.height, ds.width, ds.channels});
  T* dst = out.data_mut().data();
  for (std::size_t b = 0; b < indices.size(); ++b) {
    require(indices[b] < ds.size(), ErrorKind::InvalidArgument, "sample index out of range");
    const double* src = ds.pixels.data() + indices[b] * F;
    for (std::size_t k = 0; k < F; ++k) dst[b * F + k] = static_cast<T>(src[k]);
  }
  return out;
}

std::vector<int> gather_labels(const Dataset& ds, std::span<const std::size_t> indices) {
  std::vector<int> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(ds.labels.at(i));
  return out;
}

template Tensor<float> gather_images<float>(const Dataset&, std::span<const std::size_t>);
template Tensor<double> gather_images<double>(const Dataset&, std::span<const std::size_t>);

}  // namespace vim::train
