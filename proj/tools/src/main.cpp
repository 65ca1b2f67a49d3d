// SPDX-License-Identifier: Apache-2.0
#include <iostream>
#include <string>
#include <vector>

#include "vim/parallel.hpp"
#include "vim_cli/cli.hpp"

int main(int argc, char** argv) {
  vim::configure_threads_from_env();
  std::vector<std::string> args(argv + 1, argv + argc);
  return vim::cli::run_cli(args, std::cout, std::cerr);
}
