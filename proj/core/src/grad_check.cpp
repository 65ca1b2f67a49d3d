// SPDX-License-Identifier: Apache-2.0
#include "vim/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "vim/tape.hpp"

namespace vim {

template <typename T>
GradCheckResult grad_check(const std::function<Tensor<T>()>& f, std::vector<Tensor<T>> params, T eps,
                           std::size_t max_coords_per_param, std::uint64_t seed) {
  std::vector<bool> previous(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    previous[i] = params[i].requires_grad();
    params[i].set_requires_grad(true);
    params[i].clear_grad();
  }

  std::vector<std::vector<T>> analytic(params.size());
  {
    GradientTape<T> tape;
    TapeScope<T> scope(tape);
    const auto loss = f();
    tape.backward(loss);
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (params[i].has_grad())
        analytic[i].assign(params[i].grad().begin(), params[i].grad().end());
      else
        analytic[i].assign(params[i].numel(), T(0));
    }
  }

  GradCheckResult result;
  std::mt19937_64 rng(seed);
  NoGradScope<T> no_grad;
  for (std::size_t i = 0; i < params.size(); ++i) {
    std::vector<std::size_t> coords(params[i].numel());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (max_coords_per_param > 0 && coords.size() > max_coords_per_param) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(max_coords_per_param);
      std::sort(coords.begin(), coords.end());
    }
    auto values = params[i].data_mut();
    for (const std::size_t c : coords) {
      const T original = values[c];
      values[c] = original + eps;
      const double plus = static_cast<double>(f().item());
      values[c] = original - eps;
      const double minus = static_cast<double>(f().item());
      values[c] = original;
      const double numeric = (plus - minus) / (2.0 * static_cast<double>(eps));
      const double a = static_cast<double>(analytic[i][c]);
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double rel = std::abs(a - numeric) / denom;
      ++result.coordinates_checked;
      if (result.coordinates_checked == 1 || rel > result.max_relative_error) {
        std::ostringstream os;
        os << "param " << i << " [" << c << "]: analytic " << a << " numeric " << numeric;
        result.worst = os.str();
        result.max_relative_error = rel;
      }
    }
  }

  for (std::size_t i = 0; i < params.size(); ++i) {
    params[i].clear_grad();
    params[i].set_requires_grad(previous[i]);
  }
  return result;
}

template GradCheckResult grad_check<float>(const std::function<Tensor<float>()>&, std::vector<Tensor<float>>, float,
                                           std::size_t, std::uint64_t);
template GradCheckResult grad_check<double>(const std::function<Tensor<double>()>&, std::vector<Tensor<double>>,
                                            double, std::size_t, std::uint64_t);

}  // namespace vim
