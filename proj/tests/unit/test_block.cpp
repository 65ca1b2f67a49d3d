// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>

#include "gen.hpp"
#include "oracles.hpp"
#include "vim/block.hpp"
#include "vim/config.hpp"
#include "vim/error.hpp"
#include "vim/grad_check.hpp"
#include "vim/ops.hpp"
#include "vim/random.hpp"

namespace vim::model {
namespace {

using vim::testing::Gen;
using T64 = Tensor<double>;

constexpr BidirStrategy kAll[] = {BidirStrategy::NoneForwardOnly, BidirStrategy::BidirSequence,
                                  BidirStrategy::BidirBlock, BidirStrategy::BidirSSM, BidirStrategy::BidirSSMConv1d};

// Default init keeps the SSM path tiny; scale everything up so comparisons
// are not dominated by the residual.
void perturb(VimBlockParams<double>& p, Gen& g, double std) {
  visit_parameters(p, "", [&](const std::string& name, T64& t) {
    if (name.find("A_log") != std::string::npos || name.find("gamma") != std::string::npos) return;
    for (auto& v : t.data_mut()) v = g.normal(std);
  });
}

TEST(BlockForLayer, Examples) {
  EXPECT_EQ(block_for_layer(0, BidirStrategy::BidirBlock), Directionality::ForwardOnly);
  EXPECT_EQ(block_for_layer(1, BidirStrategy::BidirBlock), Directionality::BackwardOnly);
  EXPECT_EQ(block_for_layer(6, BidirStrategy::BidirBlock), Directionality::ForwardOnly);
  for (std::size_t l = 0; l < 5; ++l) {
    EXPECT_EQ(block_for_layer(l, BidirStrategy::BidirSSMConv1d), Directionality::Bidirectional);
    EXPECT_EQ(block_for_layer(l, BidirStrategy::BidirSSM), Directionality::BidirectionalSharedConv);
    EXPECT_EQ(block_for_layer(l, BidirStrategy::NoneForwardOnly), Directionality::ForwardOnly);
    EXPECT_EQ(block_for_layer(l, BidirStrategy::BidirSequence), Directionality::ForwardOnly);
  }
}

TEST(InitBlock, BackwardParamsOnlyWhenNeeded) {
  Gen g(51);
  const BlockShape s{8, 16, 4};
  for (const auto strat : kAll) {
    const auto p = init_block<double>(s, strat, g.engine());
    EXPECT_EQ(p.dir_bwd.has_value(), needs_backward_params(strat));
    if (strat == BidirStrategy::BidirSSM) {
      EXPECT_FALSE(p.dir_bwd->conv.has_value());
    }
    if (strat == BidirStrategy::BidirSSMConv1d) {
      EXPECT_TRUE(p.dir_bwd->conv.has_value());
    }
    EXPECT_EQ(p.dir_fwd.W_delta.shape(), (Shape{16, 1}));
    // Init: softplus(delta_bias) in [1e-3, 1e-1], -A ramps 1..N.
    const auto bias = softplus(p.dir_fwd.delta_bias);
    for (const double b : bias.data()) {
      EXPECT_GE(b, 1e-3 * (1 - 1e-9));
      EXPECT_LE(b, 1e-1 * (1 + 1e-9));
    }
    auto copy = p;
    std::vector<std::pair<std::string, Shape>> visited;
    visit_parameters(copy, "", [&](const std::string& n, T64& t) { visited.emplace_back(n, t.shape()); });
    auto expected = block_parameter_shapes(s, strat, "");
    std::sort(visited.begin(), visited.end());
    std::sort(expected.begin(), expected.end());
    EXPECT_EQ(visited, expected);
  }
}

TEST(DirectionPass, ZeroOutputProjectionOfStateAnnihilates) {
  Gen g(52);
  auto p = init_block<double>({8, 16, 4}, BidirStrategy::BidirSSMConv1d, g.engine());
  perturb(p, g, 0.3);
  p.dir_fwd.W_C = T64({16, 4});
  const auto x = g.randn({2, 5, 16});
  for (const auto d : {Direction::Forward, Direction::Backward}) {
    const auto y = direction_pass(x, p.dir_fwd, d);
    for (const double v : y.data()) EXPECT_EQ(v, 0.0);
  }
}

TEST(DirectionPass, BackwardIsReversedForward) {
  Gen g(53);
  for (int trial = 0; trial < 10; ++trial) {
    auto p = init_block<double>({8, 16, 4, g.size(1, 4)}, BidirStrategy::BidirSSMConv1d, g.engine());
    perturb(p, g, 0.3);
    const auto x = g.randn({2, g.size(1, 9), 16});
    const auto bwd = direction_pass(x, p.dir_fwd, Direction::Backward);
    const auto ref = reverse_seq(direction_pass(reverse_seq(x), p.dir_fwd, Direction::Forward));
    EXPECT_LE(oracle::rel_err(oracle::to_vec(bwd), oracle::to_vec(ref)), 1e-12);
  }
}

TEST(DirectionPass, SingleTokenDirectionsAgree) {
  Gen g(54);
  auto p = init_block<double>({8, 16, 4}, BidirStrategy::BidirSSMConv1d, g.engine());
  perturb(p, g, 0.3);
  const auto x = g.randn({3, 1, 16});
  EXPECT_TRUE(bit_equal(direction_pass(x, p.dir_fwd, Direction::Forward),
                        direction_pass(x, p.dir_fwd, Direction::Backward)));
}

TEST(VimBlock, ShapeContractAllStrategies) {
  Gen g(55);
  for (int trial = 0; trial < 20; ++trial) {
    const BlockShape s{g.size(1, 8), g.size(1, 12), g.size(1, 5), g.size(1, 4), 0, g.coin()};
    for (const auto strat : kAll) {
      const auto p = init_block<double>(s, strat, g.engine());
      const Shape in{g.size(1, 3), g.size(1, 7), s.D};
      for (std::size_t layer = 0; layer < 2; ++layer)
        EXPECT_EQ(vim_block_forward(g.randn(in), p, strat, layer).shape(), in);
    }
  }
}

TEST(VimBlock, ZeroOutputProjectionIsResidualIdentity) {
  Gen g(56);
  for (const auto strat : kAll) {
    auto p = init_block<double>({8, 16, 4}, strat, g.engine());
    perturb(p, g, 0.3);
    p.W_T = T64({16, 8});
    if (p.b_T.defined()) p.b_T = T64({8});
    const auto x = g.randn({2, 6, 8});
    EXPECT_TRUE(bit_equal(vim_block_forward(x, p, strat), x));
  }
}

TEST(VimBlock, MissingBackwardParamsIsStrategyMismatch) {
  Gen g(57);
  const auto p = init_block<double>({8, 16, 4}, BidirStrategy::NoneForwardOnly, g.engine());
  try {
    (void)vim_block_forward(g.randn({1, 4, 8}), p, BidirStrategy::BidirSSMConv1d);
    ADD_FAILURE();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::StrategyMismatch);
  }
}

TEST(VimBlock, Deterministic) {
  Gen g(58);
  for (const auto strat : kAll) {
    auto p = init_block<double>({8, 16, 4}, strat, g.engine());
    perturb(p, g, 0.3);
    const auto x = g.randn({2, 9, 8});
    EXPECT_TRUE(bit_equal(vim_block_forward(x, p, strat, 1), vim_block_forward(x, p, strat, 1)));
    const auto pf = init_block<float>({8, 16, 4}, strat, g.engine());
    const auto xf = g.randn<float>({2, 9, 8});
    EXPECT_TRUE(bit_equal(vim_block_forward(xf, pf, strat), vim_block_forward(xf, pf, strat)));
  }
}

TEST(VimBlock, FlipEquivarianceTwentySeeds) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Gen g(600 + seed);
    auto p = init_block<double>({8, 16, 4}, BidirStrategy::BidirSSMConv1d, g.engine());
    perturb(p, g, 0.3);
    const auto x = g.randn({2, g.size(1, 12), 8});
    const auto base = vim_block_forward(x, p, BidirStrategy::BidirSSMConv1d);
    const auto flipped = vim_block_forward(reverse_seq(x), swap_directions(p), BidirStrategy::BidirSSMConv1d);
    EXPECT_LE(oracle::rel_err(oracle::to_vec(reverse_seq(flipped)), oracle::to_vec(base)), 1e-10);
  }
}

TEST(VimBlock, GradientCheckMicroConfig) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    Gen g(700 + seed);
    auto p = init_block<double>({8, 16, 4, 2}, BidirStrategy::BidirSSMConv1d, g.engine());
    visit_parameters(p, "", [&](const std::string& name, T64& t) {
      if (name.find("gamma") == std::string::npos)
        for (auto& v : t.data_mut()) v = g.normal(0.3);
    });
    auto x = g.randn({2, 6, 8});
    const auto w = g.randn({2, 6, 8});
    auto f = [&] { return sum(mul(vim_block_forward(x, p, BidirStrategy::BidirSSMConv1d), w)); };
    std::vector<T64> params{x};
    for (auto& [name, t] : block_parameters(p, "")) params.push_back(t);
    const auto r = grad_check<double>(f, params, 1e-4);
    EXPECT_LE(r.max_relative_error, 1e-4) << r.worst;
  }
}

TEST(VimBlock, GradientCheckOtherStrategies) {
  for (const auto strat : {BidirStrategy::NoneForwardOnly, BidirStrategy::BidirBlock, BidirStrategy::BidirSSM}) {
    Gen g(800 + static_cast<int>(strat));
    auto p = init_block<double>({4, 8, 2, 2}, strat, g.engine());
    visit_parameters(p, "", [&](const std::string& name, T64& t) {
      if (name.find("gamma") == std::string::npos)
        for (auto& v : t.data_mut()) v = g.normal(0.3);
    });
    auto x = g.randn({2, 4, 4});
    const auto w = g.randn({2, 4, 4});
    auto f = [&] { return sum(mul(vim_block_forward(x, p, strat, 1), w)); };
    std::vector<T64> params{x};
    for (auto& [name, t] : block_parameters(p, "")) params.push_back(t);
    const auto r = grad_check<double>(f, params, 1e-4);
    EXPECT_LE(r.max_relative_error, 1e-4) << to_string(strat) << " " << r.worst;
  }
}

}  // namespace
}  // namespace vim::model
