// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vim/tensor.hpp"

namespace vim::verify {

enum class Suite { Grad, Scan, Equivalence, All };

std::string_view to_string(Suite s);
Suite parse_suite(std::string_view s);

struct CheckResult {
  std::string name;
  bool ok = false;
  std::string detail;
};

struct VerifyOptions {
  bool inject_scan_fault = false;  // perturb the sequential scan while the suite runs
  std::uint64_t seed = 0;
};

// max_i |a_i - b_i| / max_i |b_i| (0 when both are all-zero).
double normwise_relative_error(std::span<const double> a, std::span<const double> b);
double normwise_relative_error(const Tensor<double>& a, const Tensor<double>& b);

// Runs every check of the suite in 64-bit precision.
std::vector<CheckResult> run_suite(Suite suite, const VerifyOptions& options = {});

// "1..n" then "ok k - name" / "not ok k - name # detail" lines.
void write_tap(std::ostream& out, const std::vector<CheckResult>& results);

bool all_passed(const std::vector<CheckResult>& results);

}  // namespace vim::verify
