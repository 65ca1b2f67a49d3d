// SPDX-License-Identifier: Apache-2.0
#include "vim/random.hpp"

#include <cmath>

namespace vim {

std::mt19937_64 make_stream(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32), 0x5eedu};
  return std::mt19937_64(seq);
}

template <typename T>
void fill_trunc_normal(Tensor<T>& t, double std, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, std);
  for (auto& v : t.data_mut()) {
    double s;
    do {
      s = dist(rng);
    } while (std::abs(s) > 2.0 * std);
    v = static_cast<T>(s);
  }
}

template <typename T>
void fill_uniform(Tensor<T>& t, double lo, double hi, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& v : t.data_mut()) v = static_cast<T>(dist(rng));
}

template <typename T>
void fill_normal(Tensor<T>& t, double mean, double std, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(mean, std);
  for (auto& v : t.data_mut()) v = static_cast<T>(dist(rng));
}

template void fill_trunc_normal(Tensor<float>&, double, std::mt19937_64&);
template void fill_trunc_normal(Tensor<double>&, double, std::mt19937_64&);
template void fill_uniform(Tensor<float>&, double, double, std::mt19937_64&);
template void fill_uniform(Tensor<double>&, double, double, std::mt19937_64&);
template void fill_normal(Tensor<float>&, double, double, std::mt19937_64&);
template void fill_normal(Tensor<double>&, double, double, std::mt19937_64&);

}  // namespace vim
