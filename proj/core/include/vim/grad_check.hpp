// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "vim/tensor.hpp"

namespace vim {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t coordinates_checked = 0;
  // "param <i> [<flat index>]: analytic <a> numeric <n>" for the worst coordinate.
  std::string worst;
};

// Compares tape gradients of the scalar `f` against central differences
// (f(p + eps) - f(p - eps)) / (2 eps), one coordinate at a time. The
// relative error uses max(|analytic|, |numeric|, 1e-8) as denominator.
// With max_coords_per_param > 0 a seeded random subset of each parameter's
// coordinates is probed instead of all of them.
template <typename T>
GradCheckResult grad_check(const std::function<Tensor<T>()>& f, std::vector<Tensor<T>> params, T eps,
                           std::size_t max_coords_per_param = 0, std::uint64_t seed = 0);

}  // namespace vim
