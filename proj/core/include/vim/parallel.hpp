// SPDX-License-Identifier: Apache-2.0
#pragma once

namespace vim {

// Caps the worker count used by the internal parallel loops.
void set_num_threads(int n);
int num_threads();

// Applies VIM_THREADS when set; otherwise leaves the OpenMP default
// (one worker per core). Returns the effective count.
int configure_threads_from_env();

}  // namespace vim
