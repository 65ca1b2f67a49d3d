// SPDX-License-Identifier: Apache-2.0
#include "vim/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <memory>
#include <ostream>

#include "vim/alloc_stats.hpp"
#include "vim/block.hpp"
#include "vim/error.hpp"
#include "vim/ops.hpp"
#include "vim/parallel.hpp"
#include "vim/random.hpp"
#include "vim/tape.hpp"

namespace vim::bench {

std::uint64_t flops_attention(std::uint64_t M, std::uint64_t D) { return 4 * M * D * D + 2 * M * M * D; }

std::uint64_t flops_ssm(std::uint64_t M, std::uint64_t D, std::uint64_t N) {
  return 3 * M * (2 * D) * N + M * (2 * D) * N;
}

FlopReport flop_report(std::uint64_t M, std::uint64_t D, std::uint64_t N) {
  return {M, D, N, flops_attention(M, D), flops_ssm(M, D, N)};
}

std::uint64_t flops_crossover(std::uint64_t D, std::uint64_t N) {
  // Per token the SSM costs 8DN and attention 4D^2 + 2MD, which grows with M,
  // so the first M where the SSM wins is the crossover.
  std::uint64_t M = 1;
  while (flops_ssm(M, D, N) >= flops_attention(M, D)) ++M;
  return M;
}

template <typename T>
AttentionParams<T> init_attention(std::size_t D, std::mt19937_64& rng) {
  AttentionParams<T> p{Tensor<T>({D, D}), Tensor<T>({D, D}), Tensor<T>({D, D}), Tensor<T>({D, D})};
  for (auto* t : {&p.W_q, &p.W_k, &p.W_v, &p.W_o}) fill_trunc_normal(*t, 0.02, rng);
  return p;
}

template <typename T>
Tensor<T> reference_attention_forward(const Tensor<T>& x, const AttentionParams<T>& p) {
  require(x.dim() == 3, ErrorKind::ShapeMismatch, "attention input must be [B, M, D], got " + shape_string(x.shape()));
  const std::size_t B = x.size(0), M = x.size(1), D = x.size(2);
  for (const auto* w : {&p.W_q, &p.W_k, &p.W_v, &p.W_o})
    require(w->shape() == Shape{D, D}, ErrorKind::ShapeMismatch, "attention weight " + shape_string(w->shape()));
  NoGradScope<T> no_grad;
  const auto q = matmul(x, p.W_q);
  const auto k = matmul(x, p.W_k);
  const auto v = matmul(x, p.W_v);
  Tensor<T> ctx({B, M, D});
  Buffer<T> scores(M * M);
  const T inv_sqrt_d = T(1) / std::sqrt(static_cast<T>(D));
  const T* Q = q.data().data();
  const T* K = k.data().data();
  const T* V = v.data().data();
  T* O = ctx.data_mut().data();
  for (std::size_t b = 0; b < B; ++b) {
    const T* Qb = Q + b * M * D;
    const T* Kb = K + b * M * D;
    const T* Vb = V + b * M * D;
    T* Ob = O + b * M * D;
#pragma omp parallel for if (M * M * D > (1u << 18))
    for (std::size_t i = 0; i < M; ++i) {
      T* s = scores.data() + i * M;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < M; ++j) {
        T acc = 0;
        for (std::size_t d = 0; d < D; ++d) acc += Qb[i * D + d] * Kb[j * D + d];
        s[j] = acc * inv_sqrt_d;
        mx = std::max(mx, s[j]);
      }
      T denom = 0;
      for (std::size_t j = 0; j < M; ++j) {
        s[j] = std::exp(s[j] - mx);
        denom += s[j];
      }
      T* o = Ob + i * D;
      for (std::size_t j = 0; j < M; ++j) {
        const T w = s[j] / denom;
        for (std::size_t d = 0; d < D; ++d) o[d] += w * Vb[j * D + d];
      }
    }
  }
  return matmul(ctx, p.W_o);
}

std::string_view to_string(ScalingTarget t) { return t == ScalingTarget::VimBlock ? "vim" : "attention"; }

ScalingTarget parse_scaling_target(std::string_view s) {
  if (s == "vim" || s == "vim_block") return ScalingTarget::VimBlock;
  if (s == "attention" || s == "attention_block") return ScalingTarget::AttentionBlock;
  fail(ErrorKind::ConfigInvalid, "unknown bench target '" + std::string(s) + "'");
}

SlopeFit fit_loglog(const std::vector<double>& x, const std::vector<double>& y, bool drop_smallest) {
  require(x.size() == y.size(), ErrorKind::ShapeMismatch, "fit_loglog needs paired samples");
  const std::size_t first = drop_smallest ? 1 : 0;
  require(x.size() >= first + 2, ErrorKind::InsufficientPoints, "slope fit needs at least two points");
  std::vector<double> lx, ly;
  for (std::size_t i = first; i < x.size(); ++i) {
    require(x[i] > 0 && y[i] > 0, ErrorKind::InvalidArgument, "log-log fit needs positive samples");
    lx.push_back(std::log(x[i]));
    ly.push_back(std::log(y[i]));
  }
  const double n = static_cast<double>(lx.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    mx += lx[i];
    my += ly[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
  }
  require(sxx > 0, ErrorKind::InvalidArgument, "log-log fit needs distinct x values");
  SlopeFit fit;
  fit.slope = sxy / sxx;
  fit.points = lx.size();
  if (lx.size() > 2) {
    const double intercept = my - fit.slope * mx;
    double ssr = 0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
      const double r = ly[i] - (intercept + fit.slope * lx[i]);
      ssr += r * r;
    }
    fit.stderr_ = std::sqrt(ssr / (n - 2) / sxx);
  }
  return fit;
}

namespace {

class ThreadGuard {
 public:
  explicit ThreadGuard(bool parallel) : saved_(num_threads()) {
    if (!parallel) set_num_threads(1);
  }
  ~ThreadGuard() { set_num_threads(saved_); }
  ThreadGuard(const ThreadGuard&) = delete;
  ThreadGuard& operator=(const ThreadGuard&) = delete;

 private:
  int saved_;
};

}  // namespace

ScalingMeasurement measure_workload(const Workload& prepare, const std::vector<std::size_t>& seq_lens,
                                    const ScalingOptions& options) {
  require(seq_lens.size() >= 4, ErrorKind::InsufficientPoints,
          "scaling needs at least 4 sequence lengths, got " + std::to_string(seq_lens.size()));
  for (std::size_t i = 0; i < seq_lens.size(); ++i)
    require(seq_lens[i] >= 1 && (i == 0 || seq_lens[i] > seq_lens[i - 1]), ErrorKind::ConfigInvalid,
            "sequence lengths must be positive and strictly increasing");
  require(options.repeats >= 5, ErrorKind::ConfigInvalid, "scaling needs at least 5 repeats");
  require(options.warmup >= 2, ErrorKind::ConfigInvalid, "scaling needs at least 2 warmup runs");

  ThreadGuard threads(options.parallel);
  ScalingMeasurement out;
  out.seq_lens = seq_lens;
  out.repeats = options.repeats;
  out.threads = num_threads();
  for (const std::size_t M : seq_lens) {
    auto run = prepare(M);
    for (std::size_t w = 0; w < options.warmup; ++w) run();
    std::vector<std::uint64_t> times;
    std::int64_t peak = 0;
    for (std::size_t r = 0; r < options.repeats; ++r) {
      const auto baseline = alloc_stats().current_bytes;
      reset_peak_bytes();
      const auto t0 = std::chrono::steady_clock::now();
      run();
      const auto t1 = std::chrono::steady_clock::now();
      peak = std::max(peak, alloc_stats().peak_bytes - baseline);
      times.push_back(static_cast<std::uint64_t>(std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count()));
    }
    std::sort(times.begin(), times.end());
    const std::size_t n = times.size();
    out.wall_times_ns.push_back(n % 2 == 1 ? times[n / 2] : (times[n / 2 - 1] + times[n / 2]) / 2);
    out.peak_bytes.push_back(peak);
  }

  std::vector<double> xs(seq_lens.begin(), seq_lens.end());
  std::vector<double> ts(out.wall_times_ns.begin(), out.wall_times_ns.end());
  const auto tfit = fit_loglog(xs, ts, true);
  out.fitted_slope = tfit.slope;
  out.slope_stderr = tfit.stderr_;
  out.fit_points = tfit.points;
  if (std::all_of(out.peak_bytes.begin(), out.peak_bytes.end(), [](std::int64_t b) { return b > 0; })) {
    std::vector<double> ms(out.peak_bytes.begin(), out.peak_bytes.end());
    const auto mfit = fit_loglog(xs, ms, true);
    out.memory_slope = mfit.slope;
    out.memory_slope_stderr = mfit.stderr_;
  }
  return out;
}

ScalingMeasurement measure_scaling(ScalingTarget target, const std::vector<std::size_t>& seq_lens,
                                   const ScalingOptions& options) {
  using T = float;
  auto rng = make_stream(options.seed, 0);
  const std::size_t D = options.D, B = options.batch;
  Workload prepare;
  if (target == ScalingTarget::VimBlock) {
    model::BlockShape shape{D, 2 * D, options.N};
    auto params = std::make_shared<model::VimBlockParams<T>>(
        model::init_block<T>(shape, model::BidirStrategy::BidirSSMConv1d, rng));
    prepare = [params, B, D, &rng](std::size_t M) {
      auto x = std::make_shared<Tensor<T>>(Shape{B, M, D});
      fill_normal(*x, 0.0, 1.0, rng);
      return std::function<void()>([params, x] {
        NoGradScope<T> no_grad;
        auto y = model::vim_block_forward(*x, *params, model::BidirStrategy::BidirSSMConv1d);
        (void)y;
      });
    };
  } else {
    auto params = std::make_shared<AttentionParams<T>>(init_attention<T>(D, rng));
    prepare = [params, B, D, &rng](std::size_t M) {
      auto x = std::make_shared<Tensor<T>>(Shape{B, M, D});
      fill_normal(*x, 0.0, 1.0, rng);
      return std::function<void()>([params, x] {
        auto y = reference_attention_forward(*x, *params);
        (void)y;
      });
    };
  }
  return measure_workload(prepare, seq_lens, options);
}

Workload linear_calibration_workload(std::size_t work_per_item) {
  return [work_per_item](std::size_t M) {
    return std::function<void()>([M, work_per_item] {
      // Dependent chain seeded through a volatile read, so it can be neither
      // vectorized nor folded.
      volatile double seed = 0.5;
      volatile double sink = 0;
      double acc = seed;
      const std::size_t n = M * work_per_item;
      for (std::size_t i = 0; i < n; ++i) acc = acc * 0.999999 + 1e-6;
      sink = acc;
      (void)sink;
    });
  };
}

Workload quadratic_calibration_workload(std::size_t work_per_pair) {
  return [work_per_pair](std::size_t M) {
    return std::function<void()>([M, work_per_pair] {
      volatile double seed = 0.5;
      volatile double sink = 0;
      double acc = seed;
      for (std::size_t i = 0; i < M; ++i)
        for (std::size_t j = 0; j < M * work_per_pair; ++j) acc = acc * 0.999999 + 1e-6;
      sink = acc;
      (void)sink;
    });
  };
}

void write_scaling_csv(std::ostream& out, std::string_view target, const ScalingOptions& options,
                       const ScalingMeasurement& m, CsvMetric metric) {
  out << "target,M,D,N,median_ns,peak_bytes,repeats\n";
  for (std::size_t i = 0; i < m.seq_lens.size(); ++i)
    out << target << ',' << m.seq_lens[i] << ',' << options.D << ',' << options.N << ',' << m.wall_times_ns[i] << ','
        << m.peak_bytes[i] << ',' << m.repeats << '\n';
  const bool runtime = metric == CsvMetric::Runtime;
  char buf[160];
  std::snprintf(buf, sizeof buf, "# metric=%s slope=%.6f stderr=%.6f points=%zu threads=%d\n",
                runtime ? "runtime" : "memory", runtime ? m.fitted_slope : m.memory_slope,
                runtime ? m.slope_stderr : m.memory_slope_stderr, m.fit_points, m.threads);
  out << buf;
}

void write_flops_csv(std::ostream& out, std::string_view target, const std::vector<FlopReport>& rows) {
  out << "target,M,D,N,flops\n";
  for (const auto& r : rows)
    out << target << ',' << r.M << ',' << r.D << ',' << r.N << ','
        << (target == "attention" ? r.flops_attention : r.flops_ssm) << '\n';
}

template AttentionParams<float> init_attention<float>(std::size_t, std::mt19937_64&);
template AttentionParams<double> init_attention<double>(std::size_t, std::mt19937_64&);
template Tensor<float> reference_attention_forward(const Tensor<float>&, const AttentionParams<float>&);
template Tensor<double> reference_attention_forward(const Tensor<double>&, const AttentionParams<double>&);

}  // namespace vim::bench
