// SPDX-License-Identifier: Apache-2.0
#include "vim/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "vim/error.hpp"
#include "vim/tape.hpp"

namespace vim {
namespace {

constexpr std::size_t kParallelWork = std::size_t{1} << 15;

template <typename T>
void check_finite(const Tensor<T>& t, const char* op) {
  for (const T v : t.data())
    if (!std::isfinite(v)) fail(ErrorKind::NonFinite, std::string(op) + " produced a non-finite value");
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  require(a.shape() == b.shape(), ErrorKind::ShapeMismatch,
          std::string(op) + ": " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
}

template <typename T>
T sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

// Elementwise op with derivative df(x, y) = dy/dx.
template <typename T, typename F, typename DF>
Tensor<T> unary(const char* name, const Tensor<T>& x, F f, DF df) {
  Tensor<T> out(x.shape());
  auto o = out.data_mut();
  const auto xv = x.data();
  for (std::size_t i = 0; i < xv.size(); ++i) o[i] = f(xv[i]);
  if (auto* tape = recording_tape<T>({&x})) {
    auto xs = x.storage();
    auto os = out.storage();
    tape->record(name, {xs}, {os}, [xs, os, df] {
      auto gx = xs->grad_buffer();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += os->grad[i] * df(xs->data[i], os->data[i]);
    });
  }
  return out;
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.dim() >= 1 && b.dim() == 2, ErrorKind::ShapeMismatch,
          "matmul: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  const std::size_t k = a.shape().back();
  require(k >= 1 && b.size(0) == k, ErrorKind::ShapeMismatch,
          "matmul inner extents: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  const std::size_t n = b.size(1);
  const std::size_t rows = a.numel() / k;
  Shape out_shape = a.shape();
  out_shape.back() = n;
  Tensor<T> out(out_shape);

  const T* A = a.data().data();
  const T* Bm = b.data().data();
  T* C = out.data_mut().data();
#pragma omp parallel for schedule(static) if (rows * k * n > kParallelWork)
  for (std::size_t r = 0; r < rows; ++r) {
    T* crow = C + r * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = A[r * k + p];
      const T* brow = Bm + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  check_finite(out, "matmul");

  if (auto* tape = recording_tape<T>({&a, &b})) {
    auto as = a.storage();
    auto bs = b.storage();
    auto os = out.storage();
    tape->record("matmul", {as, bs}, {os}, [as, bs, os, rows, k, n] {
      const T* G = os->grad.data();
      if (as->requires_grad) {
        // dA = G B^T, accumulated over n in index order.
        Buffer<T> bt(n * k);
        for (std::size_t p = 0; p < k; ++p)
          for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = bs->data[p * n + j];
        T* dA = as->grad_buffer().data();
#pragma omp parallel for schedule(static) if (rows * k * n > kParallelWork)
        for (std::size_t r = 0; r < rows; ++r) {
          T* drow = dA + r * k;
          for (std::size_t j = 0; j < n; ++j) {
            const T g = G[r * n + j];
            const T* btrow = bt.data() + j * k;
            for (std::size_t p = 0; p < k; ++p) drow[p] += g * btrow[p];
          }
        }
      }
      if (bs->requires_grad) {
        // dB = A^T G, accumulated over rows in index order.
        T* dB = bs->grad_buffer().data();
        const T* Av = as->data.data();
#pragma omp parallel for schedule(static) if (rows * k * n > kParallelWork)
        for (std::size_t p = 0; p < k; ++p) {
          T* drow = dB + p * n;
          for (std::size_t r = 0; r < rows; ++r) {
            const T av = Av[r * k + p];
            const T* grow = G + r * n;
            for (std::size_t j = 0; j < n; ++j) drow[j] += av * grow[j];
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  auto y = matmul(x, weight);
  return bias.defined() ? add_bias(y, bias) : y;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  Tensor<T> out(a.shape());
  auto o = out.data_mut();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = a[i] + b[i];
  if (auto* tape = recording_tape<T>({&a, &b})) {
    auto as = a.storage();
    auto bs = b.storage();
    auto os = out.storage();
    tape->record("add", {as, bs}, {os}, [as, bs, os] {
      for (auto* s : {as.get(), bs.get()}) {
        if (!s->requires_grad) continue;
        auto g = s->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += os->grad[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  Tensor<T> out(a.shape());
  auto o = out.data_mut();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = a[i] * b[i];
  if (auto* tape = recording_tape<T>({&a, &b})) {
    auto as = a.storage();
    auto bs = b.storage();
    auto os = out.storage();
    tape->record("mul", {as, bs}, {os}, [as, bs, os] {
      if (as->requires_grad) {
        auto g = as->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += os->grad[i] * bs->data[i];
      }
      if (bs->requires_grad) {
        auto g = bs->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += os->grad[i] * as->data[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  return unary<T>("scale", x, [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  require(x.dim() >= 1 && bias.dim() == 1 && bias.size(0) == x.shape().back(), ErrorKind::ShapeMismatch,
          "add_bias: " + shape_string(x.shape()) + " + " + shape_string(bias.shape()));
  const std::size_t n = bias.numel();
  const std::size_t rows = x.numel() / n;
  Tensor<T> out(x.shape());
  auto o = out.data_mut();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < n; ++j) o[r * n + j] = x[r * n + j] + bias[j];
  if (auto* tape = recording_tape<T>({&x, &bias})) {
    auto xs = x.storage();
    auto bs = bias.storage();
    auto os = out.storage();
    tape->record("add_bias", {xs, bs}, {os}, [xs, bs, os, rows, n] {
      if (xs->requires_grad) {
        auto g = xs->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += os->grad[i];
      }
      if (bs->requires_grad) {
        auto g = bs->grad_buffer();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < n; ++j) g[j] += os->grad[r * n + j];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> add_rows(const Tensor<T>& x, const Tensor<T>& rows) {
  const bool ok = x.dim() == rows.dim() + 1 && std::equal(rows.shape().begin(), rows.shape().end(), x.shape().begin() + 1);
  require(ok, ErrorKind::ShapeMismatch, "add_rows: " + shape_string(x.shape()) + " + " + shape_string(rows.shape()));
  const std::size_t inner = rows.numel();
  const std::size_t outer = x.size(0);
  Tensor<T> out(x.shape());
  auto o = out.data_mut();
  for (std::size_t b = 0; b < outer; ++b)
    for (std::size_t i = 0; i < inner; ++i) o[b * inner + i] = x[b * inner + i] + rows[i];
  if (auto* tape = recording_tape<T>({&x, &rows})) {
    auto xs = x.storage();
    auto rs = rows.storage();
    auto os = out.storage();
    tape->record("add_rows", {xs, rs}, {os}, [xs, rs, os, outer, inner] {
      if (xs->requires_grad) {
        auto g = xs->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += os->grad[i];
      }
      if (rs->requires_grad) {
        auto g = rs->grad_buffer();
        for (std::size_t b = 0; b < outer; ++b)
          for (std::size_t i = 0; i < inner; ++i) g[i] += os->grad[b * inner + i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  require(x.dim() >= 1 && x.shape().back() >= 1, ErrorKind::ShapeMismatch, "layer_norm on empty last axis");
  const std::size_t d = x.shape().back();
  require(gamma.shape() == Shape{d} && beta.shape() == Shape{d}, ErrorKind::ShapeMismatch,
          "layer_norm affine shape " + shape_string(gamma.shape()) + "/" + shape_string(beta.shape()) +
              " for feature dim " + std::to_string(d));
  require(eps > T(0), ErrorKind::InvalidArgument, "layer_norm eps must be positive");
  const std::size_t rows = x.numel() / d;
  Tensor<T> out(x.shape());
  auto o = out.data_mut();
  const T* xv = x.data().data();

  auto row_stats = [d, eps](const T* row, T& mu, T& rstd) {
    T s = 0;
    for (std::size_t j = 0; j < d; ++j) s += row[j];
    mu = s / T(d);
    T v = 0;
    for (std::size_t j = 0; j < d; ++j) v += (row[j] - mu) * (row[j] - mu);
    rstd = T(1) / std::sqrt(v / T(d) + eps);
  };

  for (std::size_t r = 0; r < rows; ++r) {
    T mu, rstd;
    row_stats(xv + r * d, mu, rstd);
    for (std::size_t j = 0; j < d; ++j) o[r * d + j] = (xv[r * d + j] - mu) * rstd * gamma[j] + beta[j];
  }

  if (auto* tape = recording_tape<T>({&x, &gamma, &beta})) {
    auto xs = x.storage();
    auto gs = gamma.storage();
    auto bs = beta.storage();
    auto os = out.storage();
    tape->record("layer_norm", {xs, gs, bs}, {os}, [xs, gs, bs, os, rows, d, row_stats] {
      Buffer<T> xhat(d), dxhat(d);
      for (std::size_t r = 0; r < rows; ++r) {
        const T* row = xs->data.data() + r * d;
        const T* g = os->grad.data() + r * d;
        T mu, rstd;
        row_stats(row, mu, rstd);
        T mean_dxhat = 0, mean_dxhat_xhat = 0;
        for (std::size_t j = 0; j < d; ++j) {
          xhat[j] = (row[j] - mu) * rstd;
          dxhat[j] = g[j] * gs->data[j];
          mean_dxhat += dxhat[j];
          mean_dxhat_xhat += dxhat[j] * xhat[j];
        }
        mean_dxhat /= T(d);
        mean_dxhat_xhat /= T(d);
        if (xs->requires_grad) {
          auto gx = xs->grad_buffer();
          for (std::size_t j = 0; j < d; ++j)
            gx[r * d + j] += rstd * (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat);
        }
        if (gs->requires_grad) {
          auto gg = gs->grad_buffer();
          for (std::size_t j = 0; j < d; ++j) gg[j] += g[j] * xhat[j];
        }
        if (bs->requires_grad) {
          auto gb = bs->grad_buffer();
          for (std::size_t j = 0; j < d; ++j) gb[j] += g[j];
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
  return unary<T>(
      "silu", x, [](T v) { return v * sigmoid(v); },
      [](T v, T) {
        const T s = sigmoid(v);
        return s * (T(1) + v * (T(1) - s));
      });
}

template <typename T>
Tensor<T> softplus(const Tensor<T>& x) {
  return unary<T>(
      "softplus", x, [](T v) { return std::max(v, T(0)) + std::log1p(std::exp(-std::abs(v))); },
      [](T v, T) { return sigmoid(v); });
}

template <typename T>
Tensor<T> conv1d_depthwise(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias, Direction direction) {
  require(x.dim() == 3 && x.size(1) >= 1, ErrorKind::ShapeMismatch, "conv1d input " + shape_string(x.shape()));
  const std::size_t B = x.size(0), M = x.size(1), E = x.size(2);
  require(kernel.dim() == 2 && kernel.size(0) == E && kernel.size(1) >= 1, ErrorKind::ShapeMismatch,
          "conv1d kernel " + shape_string(kernel.shape()) + " for channels " + std::to_string(E));
  require(bias.shape() == Shape{E}, ErrorKind::ShapeMismatch, "conv1d bias " + shape_string(bias.shape()));
  const std::size_t K = kernel.size(1);
  const bool fwd = direction == Direction::Forward;

  // Source index of tap j for output position t, or M when it falls in padding.
  auto source = [M, fwd](std::size_t t, std::size_t j) -> std::size_t {
    if (fwd) return j <= t ? t - j : M;
    return t + j < M ? t + j : M;
  };

  Tensor<T> out(x.shape());
  auto o = out.data_mut();
  const T* xv = x.data().data();
  const T* kv = kernel.data().data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < M; ++t)
      for (std::size_t e = 0; e < E; ++e) {
        T acc = bias[e];
        for (std::size_t j = 0; j < K; ++j) {
          const std::size_t s = source(t, j);
          if (s < M) acc += kv[e * K + j] * xv[(b * M + s) * E + e];
        }
        o[(b * M + t) * E + e] = acc;
      }

  if (auto* tape = recording_tape<T>({&x, &kernel, &bias})) {
    auto xs = x.storage();
    auto ks = kernel.storage();
    auto bs = bias.storage();
    auto os = out.storage();
    tape->record("conv1d_depthwise", {xs, ks, bs}, {os}, [xs, ks, bs, os, B, M, E, K, source] {
      const T* g = os->grad.data();
      T* gx = xs->requires_grad ? xs->grad_buffer().data() : nullptr;
      T* gk = ks->requires_grad ? ks->grad_buffer().data() : nullptr;
      T* gb = bs->requires_grad ? bs->grad_buffer().data() : nullptr;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t t = 0; t < M; ++t)
          for (std::size_t e = 0; e < E; ++e) {
            const T go = g[(b * M + t) * E + e];
            if (gb) gb[e] += go;
            for (std::size_t j = 0; j < K; ++j) {
              const std::size_t s = source(t, j);
              if (s >= M) continue;
              if (gx) gx[(b * M + s) * E + e] += ks->data[e * K + j] * go;
              if (gk) gk[e * K + j] += xs->data[(b * M + s) * E + e] * go;
            }
          }
    });
  }
  return out;
}

template <typename T>
Tensor<T> reverse_seq(const Tensor<T>& x, std::span<const std::uint8_t> mask) {
  require(x.dim() >= 2, ErrorKind::ShapeMismatch, "reverse_seq needs rank >= 2, got " + shape_string(x.shape()));
  const std::size_t B = x.size(0), M = x.size(1);
  require(mask.empty() || mask.size() == B, ErrorKind::ShapeMismatch, "reverse_seq mask length");
  const std::size_t inner = B * M == 0 ? 0 : x.numel() / (B * M);
  std::vector<std::uint8_t> flip(mask.begin(), mask.end());
  if (flip.empty()) flip.assign(B, 1);

  auto permute = [B, M, inner, flip](const T* src, T* dst, bool accumulate) {
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t m = 0; m < M; ++m) {
        const std::size_t sm = flip[b] ? M - 1 - m : m;
        const T* s = src + (b * M + sm) * inner;
        T* d = dst + (b * M + m) * inner;
        for (std::size_t i = 0; i < inner; ++i) d[i] = accumulate ? d[i] + s[i] : s[i];
      }
  };

  Tensor<T> out(x.shape());
  permute(x.data().data(), out.data_mut().data(), false);
  if (auto* tape = recording_tape<T>({&x})) {
    auto xs = x.storage();
    auto os = out.storage();
    tape->record("reverse_seq", {xs}, {os}, [xs, os, permute] {
      permute(os->grad.data(), xs->grad_buffer().data(), true);
    });
  }
  return out;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T s = 0;
  for (const T v : x.data()) s += v;
  auto out = Tensor<T>::scalar(s);
  if (auto* tape = recording_tape<T>({&x})) {
    auto xs = x.storage();
    auto os = out.storage();
    tape->record("sum", {xs}, {os}, [xs, os] {
      auto g = xs->grad_buffer();
      for (auto& v : g) v += os->grad[0];
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  require(x.numel() > 0, ErrorKind::ShapeMismatch, "mean of empty tensor");
  return scale(sum(x), T(1) / T(x.numel()));
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  require(shape_numel(shape) == x.numel(), ErrorKind::ShapeMismatch,
          "reshape " + shape_string(x.shape()) + " -> " + shape_string(shape));
  Tensor<T> out(std::move(shape), x.data());
  if (auto* tape = recording_tape<T>({&x})) {
    auto xs = x.storage();
    auto os = out.storage();
    tape->record("reshape", {xs}, {os}, [xs, os] {
      auto g = xs->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += os->grad[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> insert_token(const Tensor<T>& x, const Tensor<T>& token, std::size_t position) {
  require(x.dim() == 3, ErrorKind::ShapeMismatch, "insert_token input " + shape_string(x.shape()));
  const std::size_t B = x.size(0), J = x.size(1), D = x.size(2);
  require(token.shape() == Shape{D}, ErrorKind::ShapeMismatch, "insert_token token " + shape_string(token.shape()));
  require(position <= J, ErrorKind::InvalidArgument, "insert_token position past end of sequence");
  Tensor<T> out({B, J + 1, D});
  auto o = out.data_mut();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t m = 0; m <= J; ++m) {
      T* dst = o.data() + (b * (J + 1) + m) * D;
      const T* src = m == position ? token.data().data()
                                   : x.data().data() + (b * J + (m < position ? m : m - 1)) * D;
      std::copy(src, src + D, dst);
    }
  if (auto* tape = recording_tape<T>({&x, &token})) {
    auto xs = x.storage();
    auto ts = token.storage();
    auto os = out.storage();
    tape->record("insert_token", {xs, ts}, {os}, [xs, ts, os, B, J, D, position] {
      T* gx = xs->requires_grad ? xs->grad_buffer().data() : nullptr;
      T* gt = ts->requires_grad ? ts->grad_buffer().data() : nullptr;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t m = 0; m <= J; ++m) {
          const T* g = os->grad.data() + (b * (J + 1) + m) * D;
          T* dst = m == position ? gt : (gx ? gx + (b * J + (m < position ? m : m - 1)) * D : nullptr);
          if (dst == nullptr) continue;
          for (std::size_t i = 0; i < D; ++i) dst[i] += g[i];
        }
    });
  }
  return out;
}

template <typename T>
Tensor<T> select_token(const Tensor<T>& x, std::size_t position) {
  require(x.dim() == 3 && position < x.size(1), ErrorKind::ShapeMismatch,
          "select_token " + std::to_string(position) + " from " + shape_string(x.shape()));
  const std::size_t B = x.size(0), M = x.size(1), D = x.size(2);
  Tensor<T> out({B, D});
  auto o = out.data_mut();
  for (std::size_t b = 0; b < B; ++b)
    std::copy_n(x.data().data() + (b * M + position) * D, D, o.data() + b * D);
  if (auto* tape = recording_tape<T>({&x})) {
    auto xs = x.storage();
    auto os = out.storage();
    tape->record("select_token", {xs}, {os}, [xs, os, B, M, D, position] {
      auto g = xs->grad_buffer();
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < D; ++i) g[(b * M + position) * D + i] += os->grad[b * D + i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean_seq(const Tensor<T>& x) {
  require(x.dim() == 3 && x.size(1) >= 1, ErrorKind::ShapeMismatch, "mean_seq input " + shape_string(x.shape()));
  const std::size_t B = x.size(0), M = x.size(1), D = x.size(2);
  Tensor<T> out({B, D});
  auto o = out.data_mut();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t m = 0; m < M; ++m)
      for (std::size_t i = 0; i < D; ++i) o[b * D + i] += x[(b * M + m) * D + i];
  for (auto& v : o) v /= T(M);
  if (auto* tape = recording_tape<T>({&x})) {
    auto xs = x.storage();
    auto os = out.storage();
    tape->record("mean_seq", {xs}, {os}, [xs, os, B, M, D] {
      auto g = xs->grad_buffer();
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t m = 0; m < M; ++m)
          for (std::size_t i = 0; i < D; ++i) g[(b * M + m) * D + i] += os->grad[b * D + i] / T(M);
    });
  }
  return out;
}

template <typename T>
Tensor<T> max_seq(const Tensor<T>& x) {
  require(x.dim() == 3 && x.size(1) >= 1, ErrorKind::ShapeMismatch, "max_seq input " + shape_string(x.shape()));
  const std::size_t B = x.size(0), M = x.size(1), K = x.size(2);
  Tensor<T> out({B, K});
  std::vector<std::size_t> arg(B * K, 0);
  auto o = out.data_mut();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < K; ++c) {
      std::size_t best = 0;
      for (std::size_t m = 1; m < M; ++m)
        if (x[(b * M + m) * K + c] > x[(b * M + best) * K + c]) best = m;
      arg[b * K + c] = best;
      o[b * K + c] = x[(b * M + best) * K + c];
    }
  if (auto* tape = recording_tape<T>({&x})) {
    auto xs = x.storage();
    auto os = out.storage();
    tape->record("max_seq", {xs}, {os}, [xs, os, arg = std::move(arg), B, M, K] {
      auto g = xs->grad_buffer();
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < K; ++c) g[(b * M + arg[b * K + c]) * K + c] += os->grad[b * K + c];
    });
  }
  return out;
}

template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels, T smoothing) {
  require(logits.dim() == 2 && logits.size(0) == labels.size() && logits.size(1) >= 1, ErrorKind::ShapeMismatch,
          "cross entropy logits " + shape_string(logits.shape()) + " with " + std::to_string(labels.size()) +
              " labels");
  require(smoothing >= T(0) && smoothing < T(0.5), ErrorKind::InvalidArgument, "label smoothing must be in [0, 0.5)");
  const std::size_t B = logits.size(0), K = logits.size(1);
  for (const int l : labels)
    require(l >= 0 && static_cast<std::size_t>(l) < K, ErrorKind::InvalidArgument, "label out of range");

  Buffer<T> prob(B * K);
  T total = 0;
  for (std::size_t b = 0; b < B; ++b) {
    const T* z = logits.data().data() + b * K;
    const T zmax = *std::max_element(z, z + K);
    T denom = 0;
    for (std::size_t c = 0; c < K; ++c) denom += std::exp(z[c] - zmax);
    const T log_denom = std::log(denom);
    T loss = 0;
    for (std::size_t c = 0; c < K; ++c) {
      const T logp = z[c] - zmax - log_denom;
      prob[b * K + c] = std::exp(logp);
      const T target = (static_cast<int>(c) == labels[b] ? T(1) - smoothing : T(0)) + smoothing / T(K);
      loss -= target * logp;
    }
    total += loss;
  }
  auto out = Tensor<T>::scalar(total / T(B));
  if (auto* tape = recording_tape<T>({&logits})) {
    auto ls = logits.storage();
    auto os = out.storage();
    std::vector<int> lab(labels.begin(), labels.end());
    tape->record("softmax_cross_entropy", {ls}, {os},
                 [ls, os, prob = std::move(prob), lab = std::move(lab), B, K, smoothing] {
                   auto g = ls->grad_buffer();
                   const T up = os->grad[0] / T(B);
                   for (std::size_t b = 0; b < B; ++b)
                     for (std::size_t c = 0; c < K; ++c) {
                       const T target =
                           (static_cast<int>(c) == lab[b] ? T(1) - smoothing : T(0)) + smoothing / T(K);
                       g[b * K + c] += up * (prob[b * K + c] - target);
                     }
                 });
  }
  return out;
}

#define VIM_INSTANTIATE_OPS(T)                                                                          \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                        \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                      \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                           \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                           \
  template Tensor<T> scale(const Tensor<T>&, T);                                                        \
  template Tensor<T> add_bias(const Tensor<T>&, const Tensor<T>&);                                      \
  template Tensor<T> add_rows(const Tensor<T>&, const Tensor<T>&);                                      \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);               \
  template Tensor<T> silu(const Tensor<T>&);                                                            \
  template Tensor<T> softplus(const Tensor<T>&);                                                        \
  template Tensor<T> conv1d_depthwise(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Direction); \
  template Tensor<T> reverse_seq(const Tensor<T>&, std::span<const std::uint8_t>);                      \
  template Tensor<T> sum(const Tensor<T>&);                                                             \
  template Tensor<T> mean(const Tensor<T>&);                                                            \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                                  \
  template Tensor<T> insert_token(const Tensor<T>&, const Tensor<T>&, std::size_t);                     \
  template Tensor<T> select_token(const Tensor<T>&, std::size_t);                                       \
  template Tensor<T> mean_seq(const Tensor<T>&);                                                        \
  template Tensor<T> max_seq(const Tensor<T>&);                                                         \
  template Tensor<T> softmax_cross_entropy(const Tensor<T>&, std::span<const int>, T);

VIM_INSTANTIATE_OPS(float)
VIM_INSTANTIATE_OPS(double)

}  // namespace vim
