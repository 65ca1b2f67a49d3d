// SPDX-License-Identifier: Apache-2.0
#include "vim/ssm.hpp"

#include <atomic>
#include <cmath>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "vim/error.hpp"
#include "vim/tape.hpp"

namespace vim::ssm {
namespace {

std::atomic<bool> g_scan_fault{false};

struct Dims {
  std::size_t B, M, E, N;
};

template <typename T>
Dims check_discrete(const DiscreteParams<T>& dp, const Tensor<T>& C_t, const Tensor<T>& x) {
  require(x.dim() == 3, ErrorKind::ShapeMismatch, "scan input x " + shape_string(x.shape()));
  const std::size_t B = x.size(0), M = x.size(1), E = x.size(2);
  require(dp.A_bar.dim() == 4 && dp.A_bar.size(0) == B && dp.A_bar.size(1) == M && dp.A_bar.size(2) == E,
          ErrorKind::ShapeMismatch, "A_bar " + shape_string(dp.A_bar.shape()) + " vs x " + shape_string(x.shape()));
  const std::size_t N = dp.A_bar.size(3);
  require(dp.B_bar.shape() == dp.A_bar.shape(), ErrorKind::ShapeMismatch,
          "B_bar " + shape_string(dp.B_bar.shape()) + " vs A_bar " + shape_string(dp.A_bar.shape()));
  require(C_t.shape() == Shape{B, M, N}, ErrorKind::ShapeMismatch,
          "C_t " + shape_string(C_t.shape()) + ", expected " + shape_string({B, M, N}));
  return {B, M, E, N};
}

template <typename T>
struct AffineMap {
  T a;
  T b;
};

// Apply `first`, then `second`.
template <typename T>
AffineMap<T> compose(const AffineMap<T>& first, const AffineMap<T>& second) {
  return {first.a * second.a, second.a * first.b + second.b};
}

template <typename T>
Dims check_fused(const Tensor<T>& x, const Tensor<T>& delta, const Tensor<T>& A_log, const Tensor<T>& B_t,
                 const Tensor<T>& C_t) {
  require(x.dim() == 3, ErrorKind::ShapeMismatch, "scan input x " + shape_string(x.shape()));
  const std::size_t B = x.size(0), M = x.size(1), E = x.size(2);
  require(A_log.dim() == 2 && A_log.size(0) == E, ErrorKind::ShapeMismatch,
          "A_log " + shape_string(A_log.shape()) + " for E=" + std::to_string(E));
  const std::size_t N = A_log.size(1);
  require(delta.shape() == x.shape(), ErrorKind::ShapeMismatch,
          "delta " + shape_string(delta.shape()) + " vs x " + shape_string(x.shape()));
  require(B_t.shape() == Shape{B, M, N} && C_t.shape() == Shape{B, M, N}, ErrorKind::ShapeMismatch,
          "B_t/C_t " + shape_string(B_t.shape()) + "/" + shape_string(C_t.shape()) + ", expected " +
              shape_string({B, M, N}));
  for (const T d : delta.data())
    require(d > T(0), ErrorKind::NonPositiveDelta, "delta must be strictly positive");
  return {B, M, E, N};
}

template <typename T>
std::vector<T> continuous_A(const Tensor<T>& A_log) {
  std::vector<T> A(A_log.numel());
  for (std::size_t i = 0; i < A.size(); ++i) {
    A[i] = -std::exp(A_log[i]);
    require(std::isfinite(A[i]), ErrorKind::NonFinite, "exp(A_log) overflowed");
  }
  return A;
}

// Discretized input coefficient for one (step, channel, state) triple.
template <typename T>
T input_coeff(Discretization mode, T d, T A, T Bv) {
  if (mode == Discretization::EulerB) return d * Bv;
  return std::expm1(d * A) / A * Bv;
}

// Forward recurrence for one (b, e) lane. `hist`, when non-null, receives
// h_i for every step as [M, N].
template <typename T>
void lane_forward(const Dims& dims, Discretization mode, std::size_t b, std::size_t e, const T* x, const T* delta,
                  const T* A, const T* Bt, const T* Ct, T* y, T* h, T* hist) {
  const std::size_t M = dims.M, E = dims.E, N = dims.N;
  for (std::size_t n = 0; n < N; ++n) h[n] = T(0);
  for (std::size_t i = 0; i < M; ++i) {
    const std::size_t row = b * M + i;
    const T d = delta[row * E + e];
    const T xv = x[row * E + e];
    T acc = 0;
    for (std::size_t n = 0; n < N; ++n) {
      const T Aen = A[e * N + n];
      const T a = std::exp(d * Aen);
      h[n] = a * h[n] + input_coeff(mode, d, Aen, Bt[row * N + n]) * xv;
      acc += h[n] * Ct[row * N + n];
    }
    if (hist != nullptr) std::copy(h, h + N, hist + i * N);
    y[row * E + e] = acc;
  }
}

}  // namespace

namespace testing {
void set_scan_fault(bool on) { g_scan_fault.store(on); }
bool scan_fault() { return g_scan_fault.load(); }
}  // namespace testing

template <typename T>
Tensor<T> init_A_log(std::size_t channels, std::size_t state_dim) {
  Tensor<T> A_log({channels, state_dim});
  auto v = A_log.data_mut();
  for (std::size_t e = 0; e < channels; ++e)
    for (std::size_t n = 0; n < state_dim; ++n) v[e * state_dim + n] = std::log(T(n + 1));
  return A_log;
}

template <typename T>
DiscreteParams<T> discretize(const ContinuousParams<T>& cp, Discretization mode) {
  require(cp.delta.dim() == 3, ErrorKind::ShapeMismatch, "delta " + shape_string(cp.delta.shape()));
  const std::size_t B = cp.delta.size(0), M = cp.delta.size(1), E = cp.delta.size(2);
  require(cp.A_log.dim() == 2 && cp.A_log.size(0) == E, ErrorKind::ShapeMismatch,
          "A_log " + shape_string(cp.A_log.shape()) + " for E=" + std::to_string(E));
  const std::size_t N = cp.A_log.size(1);
  require(cp.B_t.shape() == Shape{B, M, N}, ErrorKind::ShapeMismatch,
          "B_t " + shape_string(cp.B_t.shape()) + ", expected " + shape_string({B, M, N}));
  for (const T d : cp.delta.data())
    require(d > T(0), ErrorKind::NonPositiveDelta, "delta must be strictly positive");
  const auto A = continuous_A(cp.A_log);

  DiscreteParams<T> dp{Tensor<T>({B, M, E, N}), Tensor<T>({B, M, E, N})};
  auto Ab = dp.A_bar.data_mut();
  auto Bb = dp.B_bar.data_mut();
  for (std::size_t row = 0; row < B * M; ++row)
    for (std::size_t e = 0; e < E; ++e) {
      const T d = cp.delta[row * E + e];
      for (std::size_t n = 0; n < N; ++n) {
        const std::size_t k = (row * E + e) * N + n;
        Ab[k] = std::exp(d * A[e * N + n]);
        Bb[k] = input_coeff(mode, d, A[e * N + n], cp.B_t[row * N + n]);
      }
    }
  return dp;
}

template <typename T>
Tensor<T> selective_scan_seq(const DiscreteParams<T>& dp, const Tensor<T>& C_t, const Tensor<T>& x,
                             ScanState<T>* final_state) {
  const auto [B, M, E, N] = check_discrete(dp, C_t, x);
  Tensor<T> y({B, M, E});
  Tensor<T> state({B, E, N});
  auto yv = y.data_mut();
  auto hv = state.data_mut();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t e = 0; e < E; ++e) {
      T* h = hv.data() + (b * E + e) * N;
      for (std::size_t i = 0; i < M; ++i) {
        const std::size_t row = b * M + i;
        const T xv = x[row * E + e];
        T acc = 0;
        for (std::size_t n = 0; n < N; ++n) {
          const std::size_t k = (row * E + e) * N + n;
          h[n] = dp.A_bar[k] * h[n] + dp.B_bar[k] * xv;
          acc += h[n] * C_t[row * N + n];
        }
        yv[row * E + e] = acc;
      }
    }
  if (testing::scan_fault() && !yv.empty()) yv[0] += T(1e-3) * (T(1) + std::abs(yv[0]));
  if (final_state != nullptr) final_state->h = state;
  return y;
}

template <typename T>
Tensor<T> selective_scan_chunked(const DiscreteParams<T>& dp, const Tensor<T>& C_t, const Tensor<T>& x,
                                 std::size_t chunk) {
  require(chunk >= 1, ErrorKind::InvalidArgument, "chunk must be >= 1");
  const auto [B, M, E, N] = check_discrete(dp, C_t, x);
  const std::size_t chunks = (M + chunk - 1) / chunk;
  Tensor<T> y({B, M, E});
  auto yv = y.data_mut();

  std::vector<AffineMap<T>> local(M);
  std::vector<T> carry(chunks);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t e = 0; e < E; ++e)
      for (std::size_t n = 0; n < N; ++n) {
        auto step = [&](std::size_t i) {
          const std::size_t k = ((b * M + i) * E + e) * N + n;
          return AffineMap<T>{dp.A_bar[k], dp.B_bar[k] * x[(b * M + i) * E + e]};
        };
        // Phase 1: independent inclusive scans inside every chunk.
        for (std::size_t c = 0; c < chunks; ++c) {
          const std::size_t lo = c * chunk, hi = std::min(M, lo + chunk);
          for (std::size_t i = lo; i < hi; ++i) local[i] = step(i);
          std::inclusive_scan(local.begin() + lo, local.begin() + hi, local.begin() + lo, compose<T>);
        }
        // Phase 2: state entering each chunk from the previous chunk totals.
        carry[0] = T(0);
        for (std::size_t c = 1; c < chunks; ++c) {
          const auto& total = local[std::min(M, c * chunk) - 1];
          carry[c] = total.a * carry[c - 1] + total.b;
        }
        // Phase 3: expand every prefix against its carry and contract with C.
        for (std::size_t i = 0; i < M; ++i) {
          const T h = local[i].a * carry[i / chunk] + local[i].b;
          yv[(b * M + i) * E + e] += h * C_t[(b * M + i) * N + n];
        }
      }
  return y;
}

template <typename T>
Tensor<T> lti_kernel(const Tensor<T>& A_bar0, const Tensor<T>& B_bar0, const Tensor<T>& C0, std::size_t M) {
  require(A_bar0.dim() == 2 && B_bar0.shape() == A_bar0.shape(), ErrorKind::ShapeMismatch,
          "lti_kernel A_bar/B_bar " + shape_string(A_bar0.shape()) + "/" + shape_string(B_bar0.shape()));
  const std::size_t E = A_bar0.size(0), N = A_bar0.size(1);
  require(C0.shape() == Shape{N}, ErrorKind::ShapeMismatch, "lti_kernel C " + shape_string(C0.shape()));
  require(M >= 1, ErrorKind::InvalidArgument, "lti_kernel needs M >= 1");
  Tensor<T> K({E, M});
  auto kv = K.data_mut();
  std::vector<T> power(N);
  for (std::size_t e = 0; e < E; ++e) {
    for (std::size_t n = 0; n < N; ++n) power[n] = B_bar0[e * N + n];
    for (std::size_t j = 0; j < M; ++j) {
      T acc = 0;
      for (std::size_t n = 0; n < N; ++n) {
        acc += C0[n] * power[n];
        power[n] *= A_bar0[e * N + n];
      }
      kv[e * M + j] = acc;
    }
  }
  return K;
}

template <typename T>
Tensor<T> conv_mode_apply(const Tensor<T>& x, const Tensor<T>& K) {
  require(x.dim() == 3, ErrorKind::ShapeMismatch, "conv_mode_apply x " + shape_string(x.shape()));
  const std::size_t B = x.size(0), M = x.size(1), E = x.size(2);
  require(K.dim() == 2 && K.size(0) == E && K.size(1) >= M, ErrorKind::ShapeMismatch,
          "conv_mode_apply kernel " + shape_string(K.shape()) + " for x " + shape_string(x.shape()));
  const std::size_t KM = K.size(1);
  Tensor<T> y(x.shape());
  auto yv = y.data_mut();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < M; ++t)
      for (std::size_t e = 0; e < E; ++e) {
        T acc = 0;
        for (std::size_t j = 0; j <= t; ++j) acc += K[e * KM + j] * x[(b * M + t - j) * E + e];
        yv[(b * M + t) * E + e] = acc;
      }
  return y;
}

template <typename T>
Tensor<T> selective_scan(const Tensor<T>& x, const Tensor<T>& delta, const Tensor<T>& A_log, const Tensor<T>& B_t,
                         const Tensor<T>& C_t, const ScanOptions& options) {
  const Dims dims = check_fused(x, delta, A_log, B_t, C_t);
  const auto [B, M, E, N] = dims;
  const auto A = continuous_A(A_log);
  auto* tape = recording_tape<T>({&x, &delta, &A_log, &B_t, &C_t});
  const bool keep_history = tape != nullptr && !tape->recompute();

  Tensor<T> y({B, M, E});
  if (options.algorithm == ScanAlgorithm::Chunked) {
    ContinuousParams<T> cp{A_log, B_t, C_t, delta};
    y = selective_scan_chunked(discretize(cp, options.mode), C_t, x, options.chunk);
  }

  auto history = std::make_shared<Buffer<T>>();
  if (keep_history) history->assign(B * M * E * N, T(0));
  if (options.algorithm == ScanAlgorithm::Sequential || keep_history) {
    Tensor<T> scratch({B, M, E});
    T* yout = options.algorithm == ScanAlgorithm::Sequential ? y.data_mut().data() : scratch.data_mut().data();
    std::vector<T> h(N);
    Buffer<T> lane_hist(keep_history ? M * N : 0);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t e = 0; e < E; ++e) {
        lane_forward(dims, options.mode, b, e, x.data().data(), delta.data().data(), A.data(), B_t.data().data(),
                     C_t.data().data(), yout, h.data(), keep_history ? lane_hist.data() : nullptr);
        if (keep_history)
          for (std::size_t i = 0; i < M; ++i)
            std::copy_n(lane_hist.data() + i * N, N, history->data() + (((b * M + i) * E) + e) * N);
      }
  }

  if (tape == nullptr) return y;

  auto xs = x.storage();
  auto ds = delta.storage();
  auto as = A_log.storage();
  auto bs = B_t.storage();
  auto cs = C_t.storage();
  auto ys = y.storage();
  const auto mode = options.mode;
  tape->record(
      "selective_scan", {xs, ds, as, bs, cs}, {ys},
      [xs, ds, as, bs, cs, ys, history, dims, mode, A, keep_history] {
        const auto [B, M, E, N] = dims;
        const T* x = xs->data.data();
        const T* delta = ds->data.data();
        const T* Bt = bs->data.data();
        const T* Ct = cs->data.data();
        const T* gy = ys->grad.data();
        T* gx = xs->requires_grad ? xs->grad_buffer().data() : nullptr;
        T* gd = ds->requires_grad ? ds->grad_buffer().data() : nullptr;
        T* gB = bs->requires_grad ? bs->grad_buffer().data() : nullptr;
        T* gC = cs->requires_grad ? cs->grad_buffer().data() : nullptr;
        std::vector<T> gA(E * N, T(0));

        Buffer<T> lane_hist(M * N);
        std::vector<T> h(N), dh(N);
        std::vector<T> scratch_y(keep_history ? 0 : B * M * E);
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t e = 0; e < E; ++e) {
            // h_i for this lane, either stored or regenerated.
            auto hist_at = [&](std::size_t i, std::size_t n) -> T {
              if (keep_history) return (*history)[((b * M + i) * E + e) * N + n];
              return lane_hist[i * N + n];
            };
            if (!keep_history)
              lane_forward(dims, mode, b, e, x, delta, A.data(), Bt, Ct, scratch_y.data(), h.data(),
                           lane_hist.data());

            std::fill(dh.begin(), dh.end(), T(0));
            for (std::size_t ii = M; ii-- > 0;) {
              const std::size_t row = b * M + ii;
              const T d = delta[row * E + e];
              const T xv = x[row * E + e];
              const T g = gy[row * E + e];
              T dx = 0, dd = 0;
              for (std::size_t n = 0; n < N; ++n) {
                const T Aen = A[e * N + n];
                const T a = std::exp(d * Aen);
                const T Bv = Bt[row * N + n];
                const T hi = hist_at(ii, n);
                const T hprev = ii > 0 ? hist_at(ii - 1, n) : T(0);
                dh[n] += g * Ct[row * N + n];
                if (gC) gC[row * N + n] += g * hi;
                const T da = dh[n] * hprev;
                const T dcoef = dh[n] * xv;
                dx += dh[n] * input_coeff(mode, d, Aen, Bv);
                T dA = da * a * d;
                dd += da * a * Aen;
                if (mode == Discretization::EulerB) {
                  dd += dcoef * Bv;
                  if (gB) gB[row * N + n] += dcoef * d;
                } else {
                  const T em1 = std::expm1(d * Aen);
                  dd += dcoef * a * Bv;
                  dA += dcoef * Bv * (d * a * Aen - em1) / (Aen * Aen);
                  if (gB) gB[row * N + n] += dcoef * em1 / Aen;
                }
                gA[e * N + n] += dA;
                dh[n] *= a;
              }
              if (gx) gx[row * E + e] += dx;
              if (gd) gd[row * E + e] += dd;
            }
          }
        if (as->requires_grad) {
          auto gl = as->grad_buffer();
          for (std::size_t k = 0; k < E * N; ++k) gl[k] += gA[k] * A[k];
        }
      },
      !keep_history);
  return y;
}

#define VIM_INSTANTIATE_SSM(T)                                                                              \
  template Tensor<T> init_A_log<T>(std::size_t, std::size_t);                                               \
  template DiscreteParams<T> discretize(const ContinuousParams<T>&, Discretization);                        \
  template Tensor<T> selective_scan_seq(const DiscreteParams<T>&, const Tensor<T>&, const Tensor<T>&,       \
                                        ScanState<T>*);                                                     \
  template Tensor<T> selective_scan_chunked(const DiscreteParams<T>&, const Tensor<T>&, const Tensor<T>&,   \
                                            std::size_t);                                                   \
  template Tensor<T> lti_kernel(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t);         \
  template Tensor<T> conv_mode_apply(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> selective_scan(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                    const Tensor<T>&, const ScanOptions&);

VIM_INSTANTIATE_SSM(float)
VIM_INSTANTIATE_SSM(double)

}  // namespace vim::ssm
