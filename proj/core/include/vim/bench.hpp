// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "vim/tensor.hpp"

namespace vim::bench {

// 4 M D^2 + 2 M^2 D
std::uint64_t flops_attention(std::uint64_t M, std::uint64_t D);
// 3 M (2D) N + M (2D) N
std::uint64_t flops_ssm(std::uint64_t M, std::uint64_t D, std::uint64_t N);

struct FlopReport {
  std::uint64_t M = 0, D = 0, N = 0;
  std::uint64_t flops_attention = 0;
  std::uint64_t flops_ssm = 0;
};

FlopReport flop_report(std::uint64_t M, std::uint64_t D, std::uint64_t N);

// Smallest M* such that flops_ssm(M) < flops_attention(M) for every M >= M*.
std::uint64_t flops_crossover(std::uint64_t D, std::uint64_t N);

template <typename T>
struct AttentionParams {
  Tensor<T> W_q, W_k, W_v, W_o;  // [D, D]
};

template <typename T>
AttentionParams<T> init_attention(std::size_t D, std::mt19937_64& rng);

// Single-head softmax attention with 1/sqrt(D) scaling; no autodiff.
template <typename T>
Tensor<T> reference_attention_forward(const Tensor<T>& x, const AttentionParams<T>& p);

enum class ScalingTarget { VimBlock, AttentionBlock };
std::string_view to_string(ScalingTarget t);
ScalingTarget parse_scaling_target(std::string_view s);

struct ScalingOptions {
  std::size_t repeats = 7;
  std::size_t warmup = 2;
  std::size_t D = 64;
  std::size_t N = 16;
  std::size_t batch = 1;
  bool parallel = false;
  std::uint64_t seed = 0;
};

struct SlopeFit {
  double slope = 0;
  double stderr_ = 0;
  std::size_t points = 0;
};

// Least-squares slope of log(y) against log(x); drops the first point when
// `drop_smallest` is set.
SlopeFit fit_loglog(const std::vector<double>& x, const std::vector<double>& y, bool drop_smallest = true);

struct ScalingMeasurement {
  std::vector<std::size_t> seq_lens;
  std::vector<std::uint64_t> wall_times_ns;
  std::vector<std::int64_t> peak_bytes;
  double fitted_slope = 0;
  double slope_stderr = 0;
  double memory_slope = 0;
  double memory_slope_stderr = 0;
  std::size_t fit_points = 0;
  std::size_t repeats = 0;
  int threads = 1;
};

// prepare(M) builds inputs for one sequence length and returns the timed body.
using Workload = std::function<std::function<void()>(std::size_t M)>;

ScalingMeasurement measure_workload(const Workload& prepare, const std::vector<std::size_t>& seq_lens,
                                    const ScalingOptions& options);

ScalingMeasurement measure_scaling(ScalingTarget target, const std::vector<std::size_t>& seq_lens,
                                   const ScalingOptions& options = {});

// Workloads with known complexity for validating the harness.
Workload linear_calibration_workload(std::size_t work_per_item = 4096);
Workload quadratic_calibration_workload(std::size_t work_per_pair = 4);

enum class CsvMetric { Runtime, Memory };

// Header, one row per M, then a "# slope=..." footer line for the metric.
void write_scaling_csv(std::ostream& out, std::string_view target, const ScalingOptions& options,
                       const ScalingMeasurement& m, CsvMetric metric);

void write_flops_csv(std::ostream& out, std::string_view target, const std::vector<FlopReport>& rows);

}  // namespace vim::bench
