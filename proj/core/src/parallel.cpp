// SPDX-License-Identifier: Apache-2.0
#include "vim/parallel.hpp"

#include <omp.h>

#include <cstdlib>
#include <string>

namespace vim {

void set_num_threads(int n) { omp_set_num_threads(n < 1 ? 1 : n); }

int num_threads() { return omp_get_max_threads(); }

int configure_threads_from_env() {
  if (const char* env = std::getenv("VIM_THREADS"); env != nullptr && *env != '\0') {
    try {
      set_num_threads(std::stoi(env));
    } catch (const std::exception&) {
      // Unparseable values fall back to the default.
    }
  }
  return num_threads();
}

}  // namespace vim
