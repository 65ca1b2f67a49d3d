// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <optional>

#include "gen.hpp"
#include "vim/alloc_stats.hpp"
#include "vim/error.hpp"
#include "vim/ops.hpp"
#include "vim/tape.hpp"
#include "vim/tensor.hpp"

namespace vim {
namespace {

using testing::Gen;

TEST(Tensor, NumelMatchesShapeProduct) {
  Gen g(1);
  for (int trial = 0; trial < 50; ++trial) {
    Shape s;
    const auto rank = g.size(0, 4);
    for (std::size_t i = 0; i < rank; ++i) s.push_back(g.size(0, 5));
    const Tensor<double> t(s);
    EXPECT_EQ(t.numel(), shape_numel(s));
    for (const double v : t.data()) EXPECT_EQ(v, 0.0);
  }
}

TEST(Tensor, ScalarAndItem) {
  const auto s = Tensor<float>::scalar(2.5f);
  EXPECT_EQ(s.dim(), 0u);
  EXPECT_EQ(s.numel(), 1u);
  EXPECT_EQ(s.item(), 2.5f);
}

TEST(Tensor, ValueConstructorRejectsWrongLength) {
  EXPECT_THROW((Tensor<double>({2, 2}, {1.0, 2.0, 3.0})), Error);
}

TEST(Tensor, CloneIsDeepDetachIsGradFree) {
  Tensor<double> a({3}, {1.0, 2.0, 3.0});
  a.set_requires_grad(true);
  auto c = a.clone();
  c.data_mut()[0] = 7.0;
  EXPECT_EQ(a[0], 1.0);
  const auto d = a.detach();
  EXPECT_FALSE(d.requires_grad());
  EXPECT_TRUE(bit_equal(d, a));
}

TEST(Tensor, GradBufferMatchesShape) {
  Tensor<double> a({2, 3});
  EXPECT_FALSE(a.has_grad());
  a.grad_mut()[4] = 1.0;
  EXPECT_TRUE(a.has_grad());
  EXPECT_EQ(a.grad().size(), a.numel());
  a.zero_grad();
  EXPECT_EQ(a.grad()[4], 0.0);
  a.clear_grad();
  EXPECT_FALSE(a.has_grad());
}

TEST(Tensor, BitEqualDistinguishesShapeAndBits) {
  const Tensor<double> a({2}, {0.0, 1.0});
  const Tensor<double> b({2}, {-0.0, 1.0});
  const Tensor<double> c({2, 1}, {0.0, 1.0});
  EXPECT_TRUE(bit_equal(a, a.clone()));
  EXPECT_FALSE(bit_equal(a, b));
  EXPECT_FALSE(bit_equal(a, c));
}

TEST(AllocStats, ScriptedPeakSequence) {
  reset_peak_bytes();
  const auto base = alloc_stats();
  EXPECT_EQ(base.peak_bytes, base.current_bytes);
  std::int64_t last_peak = base.peak_bytes;
  auto check = [&](std::int64_t expected_current, std::int64_t expected_peak) {
    const auto s = alloc_stats();
    EXPECT_EQ(s.current_bytes - base.current_bytes, expected_current);
    EXPECT_EQ(s.peak_bytes - base.current_bytes, expected_peak);
    EXPECT_GE(s.peak_bytes, s.current_bytes);
    EXPECT_GE(s.peak_bytes, last_peak);
    last_peak = s.peak_bytes;
  };
  {
    std::optional<Buffer<char>> a(std::in_place, 1000);
    check(1000, 1000);
    Buffer<char> b(500);
    check(1500, 1500);
    a.reset();
    check(500, 1500);
    Buffer<char> c(800);
    check(1300, 1500);
    Buffer<char> d(300);
    check(1600, 1600);
  }
  check(0, 1600);
  reset_peak_bytes();
  const auto after = alloc_stats();
  EXPECT_EQ(after.peak_bytes, after.current_bytes);
}

TEST(AllocStats, TensorsAreInstrumented) {
  reset_peak_bytes();
  const auto before = alloc_stats();
  {
    const Tensor<double> t({128});
    EXPECT_GE(alloc_stats().current_bytes - before.current_bytes, 128 * 8);
  }
  EXPECT_GE(alloc_stats().peak_bytes - before.current_bytes, 128 * 8);
}

TEST(Tape, LinearMapGradientIsOuterProduct) {
  // loss = sum(x W) for x [R, K], W [K, C]: dW[k, c] = sum_r x[r, k], dx[r, k] = sum_c W[k, c].
  Gen g(2);
  auto x = g.randn({3, 4});
  auto W = g.randn({4, 2});
  x.set_requires_grad(true);
  W.set_requires_grad(true);
  GradientTape<double> tape;
  {
    TapeScope<double> scope(tape);
    tape.backward(sum(matmul(x, W)));
  }
  for (std::size_t k = 0; k < 4; ++k)
    for (std::size_t c = 0; c < 2; ++c) {
      double e = 0;
      for (std::size_t r = 0; r < 3; ++r) e += x[r * 4 + k];
      EXPECT_DOUBLE_EQ(W.grad()[k * 2 + c], e);
    }
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t k = 0; k < 4; ++k) EXPECT_DOUBLE_EQ(x.grad()[r * 4 + k], W[k * 2] + W[k * 2 + 1]);
}

TEST(Tape, UnusedParameterGetsExactZero) {
  Gen g(3);
  auto x = g.randn({2, 2});
  auto W = g.randn({2, 2});
  x.set_requires_grad(true);
  W.set_requires_grad(true);
  W.zero_grad();
  GradientTape<double> tape;
  {
    TapeScope<double> scope(tape);
    tape.backward(sum(silu(x)));
  }
  for (const double v : W.grad()) EXPECT_EQ(v, 0.0);
}

TEST(Tape, DetachedLossIsRejected) {
  GradientTape<double> tape;
  const auto loose = Tensor<double>::scalar(1.0);
  EXPECT_THROW(
      {
        try {
          tape.backward(loose);
        } catch (const Error& e) {
          EXPECT_EQ(e.kind(), ErrorKind::DetachedTensor);
          throw;
        }
      },
      Error);
}

TEST(Tape, BackwardVisitsNodesInReverseOrder) {
  Gen g(4);
  auto x = g.randn({2, 3});
  x.set_requires_grad(true);
  GradientTape<double> tape;
  {
    TapeScope<double> scope(tape);
    const auto a = silu(x);
    const auto b = softplus(a);
    const auto c = mul(a, b);
    tape.backward(sum(c));
  }
  const auto& order = tape.visit_order();
  ASSERT_EQ(order.size(), tape.size());
  for (std::size_t i = 0; i < order.size(); ++i)
    EXPECT_EQ(order[i], static_cast<std::int64_t>(tape.size() - 1 - i));
}

TEST(Tape, NoGradScopeRecordsNothing) {
  Gen g(5);
  auto x = g.randn({2, 3});
  x.set_requires_grad(true);
  GradientTape<double> tape;
  TapeScope<double> scope(tape);
  {
    NoGradScope<double> off;
    (void)silu(x);
  }
  EXPECT_EQ(tape.size(), 0u);
  (void)silu(x);
  EXPECT_EQ(tape.size(), 1u);
}

}  // namespace
}  // namespace vim
