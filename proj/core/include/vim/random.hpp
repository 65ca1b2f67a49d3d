// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>

#include "vim/tensor.hpp"

namespace vim {

// Independent generator for (seed, stream); used so that data order,
// augmentation and initialization never share a sequence.
std::mt19937_64 make_stream(std::uint64_t seed, std::uint64_t stream);

// Normal(0, std) samples redrawn until they fall inside +-2 std.
template <typename T>
void fill_trunc_normal(Tensor<T>& t, double std, std::mt19937_64& rng);

template <typename T>
void fill_uniform(Tensor<T>& t, double lo, double hi, std::mt19937_64& rng);

template <typename T>
void fill_normal(Tensor<T>& t, double mean, double std, std::mt19937_64& rng);

}  // namespace vim
