// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "gen.hpp"
#include "oracles.hpp"
#include "vim/error.hpp"
#include "vim/grad_check.hpp"
#include "vim/ops.hpp"
#include "vim/ssm.hpp"
#include "vim/tape.hpp"

namespace vim::ssm {
namespace {

using vim::testing::Gen;
using T64 = Tensor<double>;

struct Instance {
  std::size_t B, M, E, N;
  T64 x, delta, A_log, Bt, Ct;
};

Instance random_instance(Gen& g, std::size_t B, std::size_t M, std::size_t E, std::size_t N) {
  return {B,
          M,
          E,
          N,
          g.randn({B, M, E}),
          g.uniform({B, M, E}, 0.01, 1.0),
          g.uniform({E, N}, -1.0, 1.5),
          g.randn({B, M, N}),
          g.randn({B, M, N})};
}

DiscreteParams<double> disc(const Instance& in, Discretization mode) {
  return discretize<double>({in.A_log, in.Bt, in.Ct, in.delta}, mode);
}

// Copies time steps [0, len) of a [B, M, ...] tensor.
T64 prefix(const T64& t, std::size_t len) {
  Shape s = t.shape();
  const std::size_t inner = t.numel() / (s[0] * s[1]);
  T64 out([&] {
    Shape r = s;
    r[1] = len;
    return r;
  }());
  auto o = out.data_mut();
  for (std::size_t b = 0; b < s[0]; ++b)
    for (std::size_t i = 0; i < len * inner; ++i) o[b * len * inner + i] = t[b * s[1] * inner + i];
  return out;
}

TEST(InitALog, NegativeRamp) {
  const auto a = init_A_log<double>(3, 4);
  for (std::size_t e = 0; e < 3; ++e)
    for (std::size_t n = 0; n < 4; ++n) EXPECT_NEAR(-std::exp(a[e * 4 + n]), -static_cast<double>(n + 1), 1e-14);
}

TEST(Discretize, ScalarClosedForm) {
  const T64 A_log({1, 1}, {0.0});  // A = -1
  const T64 Bt({1, 1, 1}, {1.0});
  const T64 delta({1, 1, 1}, {std::log(2.0)});
  const ContinuousParams<double> cp{A_log, Bt, Bt, delta};
  const auto zoh = discretize(cp, Discretization::ZohExact);
  const auto eul = discretize(cp, Discretization::EulerB);
  EXPECT_NEAR(zoh.A_bar[0], 0.5, 1e-15);
  EXPECT_NEAR(zoh.B_bar[0], 0.5, 1e-15);
  EXPECT_NEAR(eul.A_bar[0], 0.5, 1e-15);
  EXPECT_NEAR(eul.B_bar[0], std::log(2.0), 1e-15);
  EXPECT_EQ(zoh.A_bar.shape(), (Shape{1, 1, 1, 1}));
}

TEST(Discretize, ModesAgreeInSmallALimit) {
  Gen g(31);
  auto in = random_instance(g, 2, 5, 3, 4);
  for (auto& v : in.A_log.data_mut()) v = -30.0;
  const auto zoh = disc(in, Discretization::ZohExact);
  const auto eul = disc(in, Discretization::EulerB);
  EXPECT_LE(oracle::rel_err(oracle::to_vec(zoh.B_bar), oracle::to_vec(eul.B_bar)), 1e-10);
}

TEST(Discretize, RejectsNonPositiveDelta) {
  Gen g(32);
  auto in = random_instance(g, 1, 3, 2, 2);
  for (const double bad : {0.0, -0.1}) {
    auto d = in.delta.clone();
    d.data_mut()[2] = bad;
    try {
      (void)discretize<double>({in.A_log, in.Bt, in.Ct, d}, Discretization::EulerB);
      ADD_FAILURE() << "accepted delta " << bad;
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::NonPositiveDelta);
    }
  }
}

TEST(Discretize, ABarStrictlyInsideUnitInterval) {
  Gen g(33);
  for (int trial = 0; trial < 50; ++trial) {
    auto in = random_instance(g, g.size(1, 3), g.size(1, 16), g.size(1, 4), g.size(1, 8));
    for (const auto mode : {Discretization::ZohExact, Discretization::EulerB}) {
      const auto dp = disc(in, mode);
      for (const double a : dp.A_bar.data()) {
        EXPECT_GT(a, 0.0);
        EXPECT_LT(a, 1.0);
      }
    }
  }
}

TEST(SequentialScan, ZeroInputGivesZeroOutput) {
  Gen g(34);
  auto in = random_instance(g, 2, 9, 3, 4);
  const auto y = selective_scan_seq(disc(in, Discretization::EulerB), in.Ct, T64({2, 9, 3}));
  for (const double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(SequentialScan, SingleStepClosedForm) {
  Gen g(35);
  auto in = random_instance(g, 1, 1, 2, 3);
  const auto dp = disc(in, Discretization::EulerB);
  const auto y = selective_scan_seq(dp, in.Ct, in.x);
  for (std::size_t e = 0; e < 2; ++e) {
    double want = 0;
    for (std::size_t n = 0; n < 3; ++n) want += dp.B_bar[e * 3 + n] * in.x[e] * in.Ct[n];
    EXPECT_NEAR(y[e], want, 1e-15);
  }
}

TEST(SequentialScan, MatchesScalarLoopOracle) {
  Gen g(36);
  for (const bool zoh : {false, true}) {
    auto in = random_instance(g, 1, 5, 2, 3);
    const auto y = selective_scan_seq(disc(in, zoh ? Discretization::ZohExact : Discretization::EulerB), in.Ct, in.x);
    const auto want = oracle::selective_scan(oracle::to_vec(in.x), oracle::to_vec(in.delta), oracle::to_vec(in.A_log),
                                             oracle::to_vec(in.Bt), oracle::to_vec(in.Ct), 1, 5, 2, 3, zoh);
    EXPECT_LE(oracle::rel_err(oracle::to_vec(y), want), 1e-12);
  }
}

TEST(SequentialScan, StateStaysWithinGeometricBound) {
  Gen g(37);
  for (int trial = 0; trial < 20; ++trial) {
    const auto B = g.size(1, 2), M = g.size(2, 24), E = g.size(1, 3), N = g.size(1, 4);
    auto in = random_instance(g, B, M, E, N);
    in.x = g.uniform({B, M, E}, -1.0, 1.0);
    const auto dp = disc(in, Discretization::EulerB);
    const double a_max = *std::max_element(dp.A_bar.data().begin(), dp.A_bar.data().end());
    double b_max = 0;
    for (const double v : dp.B_bar.data()) b_max = std::max(b_max, std::abs(v));
    const double bound = b_max / (1.0 - a_max);
    double h_max = 0;
    for (std::size_t len = 1; len <= M; ++len) {
      const DiscreteParams<double> part{prefix(dp.A_bar, len), prefix(dp.B_bar, len)};
      ScanState<double> st;
      (void)selective_scan_seq(part, prefix(in.Ct, len), prefix(in.x, len), &st);
      for (const double v : st.h.data()) h_max = std::max(h_max, std::abs(v));
    }
    EXPECT_LE(h_max, bound * (1 + 1e-12));
  }
}

TEST(SequentialScan, ShapeMismatch) {
  Gen g(38);
  auto in = random_instance(g, 1, 4, 2, 3);
  try {
    (void)selective_scan_seq(disc(in, Discretization::EulerB), in.Ct, T64({1, 4, 3}));
    ADD_FAILURE();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ShapeMismatch);
  }
}

TEST(ChunkedScan, DegenerateAndFullChunks) {
  Gen g(39);
  for (int trial = 0; trial < 10; ++trial) {
    auto in = random_instance(g, 2, g.size(1, 40), 3, 4);
    const auto dp = disc(in, Discretization::EulerB);
    const auto seq = oracle::to_vec(selective_scan_seq(dp, in.Ct, in.x));
    EXPECT_LE(oracle::rel_err(oracle::to_vec(selective_scan_chunked(dp, in.Ct, in.x, 1)), seq), 1e-14);
    EXPECT_LE(oracle::rel_err(oracle::to_vec(selective_scan_chunked(dp, in.Ct, in.x, in.M)), seq), 1e-12);
  }
}

TEST(ChunkedScan, NonDivisorChunksProperty) {
  Gen g(40);
  for (int trial = 0; trial < 50; ++trial) {
    const auto M = trial == 0 ? 64 : g.size(1, 130);
    auto in = random_instance(g, g.size(1, 2), M, g.size(1, 4), g.size(1, 8));
    const auto dp = disc(in, Discretization::EulerB);
    const auto seq = oracle::to_vec(selective_scan_seq(dp, in.Ct, in.x));
    for (const std::size_t chunk : {std::size_t{7}, std::size_t{64}, g.size(1, M + 3)})
      EXPECT_LE(oracle::rel_err(oracle::to_vec(selective_scan_chunked(dp, in.Ct, in.x, chunk)), seq), 1e-10)
          << "M=" << M << " chunk=" << chunk;
  }
}

TEST(LtiKernel, Examples) {
  const auto k = lti_kernel(T64({1, 1}, {0.5}), T64({1, 1}, {1.0}), T64({1}, {1.0}), 4);
  EXPECT_EQ(oracle::to_vec(k), (std::vector<double>{1, 0.5, 0.25, 0.125}));

  Gen g(41);
  const auto Bb = g.randn({2, 3});
  const auto C = g.randn({3});
  const auto memoryless = lti_kernel(T64({2, 3}), Bb, C, 5);
  for (std::size_t e = 0; e < 2; ++e) {
    double tap0 = 0;
    for (std::size_t n = 0; n < 3; ++n) tap0 += C[n] * Bb[e * 3 + n];
    EXPECT_NEAR(memoryless[e * 5], tap0, 1e-15);
    for (std::size_t j = 1; j < 5; ++j) EXPECT_EQ(memoryless[e * 5 + j], 0.0);
  }
}

TEST(ConvMode, ImpulseCases) {
  Gen g(42);
  const auto x = g.randn({2, 6, 3});
  T64 impulse({3, 6});
  for (std::size_t e = 0; e < 3; ++e) impulse.data_mut()[e * 6] = 1.0;
  EXPECT_EQ(oracle::to_vec(conv_mode_apply(x, impulse)), oracle::to_vec(x));

  const auto K = g.randn({3, 6});
  T64 xi({1, 6, 3});
  for (std::size_t e = 0; e < 3; ++e) xi.data_mut()[e] = 1.0;
  const auto y = conv_mode_apply(xi, K);
  for (std::size_t t = 0; t < 6; ++t)
    for (std::size_t e = 0; e < 3; ++e) EXPECT_EQ(y[t * 3 + e], K[e * 6 + t]);
}

// Time-invariant parameters replicated over M: the recurrence equals the
// causal convolution with the kernel (C B, C A B, ...).
TEST(ConvMode, MatchesScanForLtiParameters) {
  Gen g(43);
  for (int trial = 0; trial < 50; ++trial) {
    const auto B = g.size(1, 2), M = g.size(1, 128), E = g.size(1, 4), N = g.size(1, 8);
    const auto A_log = g.uniform({E, N}, -1.0, 1.0);
    const double d = g.real(0.05, 0.5);
    const auto b0 = g.randn({N});
    const auto c0 = g.randn({N});
    T64 delta = T64::full({B, M, E}, d), Bt({B, M, N}), Ct({B, M, N});
    for (std::size_t i = 0; i < B * M; ++i)
      for (std::size_t n = 0; n < N; ++n) {
        Bt.data_mut()[i * N + n] = b0[n];
        Ct.data_mut()[i * N + n] = c0[n];
      }
    const auto x = g.randn({B, M, E});
    const auto dp = discretize<double>({A_log, Bt, Ct, delta}, Discretization::ZohExact);
    const auto y_scan = selective_scan_seq(dp, Ct, x);
    T64 A0({E, N}), B0({E, N});
    for (std::size_t i = 0; i < E * N; ++i) {
      A0.data_mut()[i] = dp.A_bar[i];
      B0.data_mut()[i] = dp.B_bar[i];
    }
    const auto y_conv = conv_mode_apply(x, lti_kernel(A0, B0, c0, M));
    EXPECT_LE(oracle::rel_err(oracle::to_vec(y_conv), oracle::to_vec(y_scan)), 1e-8);
  }
}

TEST(FusedScan, MatchesOracleInBothAlgorithms) {
  Gen g(44);
  for (int trial = 0; trial < 10; ++trial) {
    auto in = random_instance(g, g.size(1, 2), g.size(1, 20), g.size(1, 3), g.size(1, 4));
    for (const bool zoh : {false, true})
      for (const auto algo : {ScanAlgorithm::Sequential, ScanAlgorithm::Chunked}) {
        ScanOptions opt{zoh ? Discretization::ZohExact : Discretization::EulerB, algo, 5};
        const auto y = selective_scan(in.x, in.delta, in.A_log, in.Bt, in.Ct, opt);
        const auto want =
            oracle::selective_scan(oracle::to_vec(in.x), oracle::to_vec(in.delta), oracle::to_vec(in.A_log),
                                   oracle::to_vec(in.Bt), oracle::to_vec(in.Ct), in.B, in.M, in.E, in.N, zoh);
        EXPECT_LE(oracle::rel_err(oracle::to_vec(y), want), 1e-10);
      }
  }
}

TEST(FusedScan, GradientsMatchFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    Gen g(500 + seed);
    auto in = random_instance(g, 2, g.size(1, 6), g.size(1, 3), g.size(1, 4));
    in.delta = g.uniform({in.B, in.M, in.E}, 0.1, 0.8);
    in.A_log = g.uniform({in.E, in.N}, -0.5, 0.5);
    for (const bool zoh : {false, true})
      for (const auto algo : {ScanAlgorithm::Sequential, ScanAlgorithm::Chunked}) {
        ScanOptions opt{zoh ? Discretization::ZohExact : Discretization::EulerB, algo, 2};
        const auto w = g.randn({in.B, in.M, in.E});
        auto f = [&] { return sum(mul(selective_scan(in.x, in.delta, in.A_log, in.Bt, in.Ct, opt), w)); };
        const auto r = grad_check<double>(f, {in.x, in.delta, in.A_log, in.Bt, in.Ct}, 1e-5);
        EXPECT_LE(r.max_relative_error, 1e-4) << "seed " << seed << " zoh " << zoh << " " << r.worst;
      }
  }
}

TEST(FusedScan, RecomputeGradientsAreBitIdentical) {
  Gen g(45);
  auto in = random_instance(g, 2, 11, 3, 4);
  std::vector<T64*> inputs{&in.x, &in.delta, &in.A_log, &in.Bt, &in.Ct};
  auto grads = [&](bool recompute) {
    for (auto* t : inputs) {
      t->set_requires_grad(true);
      t->clear_grad();
    }
    GradientTape<double> tape;
    tape.set_recompute(recompute);
    TapeScope<double> scope(tape);
    tape.backward(sum(selective_scan(in.x, in.delta, in.A_log, in.Bt, in.Ct)));
    std::vector<std::vector<double>> out;
    for (auto* t : inputs) out.emplace_back(t->grad().begin(), t->grad().end());
    bool flagged = false;
    for (const bool f : tape.recompute_flags()) flagged = flagged || f;
    EXPECT_EQ(flagged, recompute);
    return out;
  };
  EXPECT_EQ(grads(false), grads(true));
}

}  // namespace
}  // namespace vim::ssm
