// SPDX-License-Identifier: Apache-2.0
#include "vim/block.hpp"

#include <cmath>

#include "vim/error.hpp"
#include "vim/random.hpp"

namespace vim::model {

Directionality block_for_layer(std::size_t layer_index, BidirStrategy strategy) {
  switch (strategy) {
    case BidirStrategy::NoneForwardOnly:
    case BidirStrategy::BidirSequence:
      return Directionality::ForwardOnly;
    case BidirStrategy::BidirBlock:
      return layer_index % 2 == 0 ? Directionality::ForwardOnly : Directionality::BackwardOnly;
    case BidirStrategy::BidirSSM:
      return Directionality::BidirectionalSharedConv;
    case BidirStrategy::BidirSSMConv1d:
      return Directionality::Bidirectional;
  }
  return Directionality::ForwardOnly;
}

bool needs_backward_params(BidirStrategy strategy) {
  return strategy == BidirStrategy::BidirSSM || strategy == BidirStrategy::BidirSSMConv1d;
}

namespace {

template <typename T>
SsmDirectionParams<T> init_direction(const BlockShape& s, bool with_conv, std::mt19937_64& rng) {
  const std::size_t E = s.E, N = s.N, R = s.resolved_dt_rank();
  SsmDirectionParams<T> d;
  if (with_conv) {
    ConvParams<T> conv{Tensor<T>({E, s.conv_kernel}), Tensor<T>({E})};
    const double bound = 1.0 / std::sqrt(static_cast<double>(s.conv_kernel));
    fill_uniform(conv.kernel, -bound, bound, rng);
    fill_uniform(conv.bias, -bound, bound, rng);
    d.conv = std::move(conv);
  }
  d.W_B = Tensor<T>({E, N});
  d.W_C = Tensor<T>({E, N});
  d.W_delta = Tensor<T>({E, R});
  d.W_delta_up = Tensor<T>({R, E});
  fill_trunc_normal(d.W_B, 0.02, rng);
  fill_trunc_normal(d.W_C, 0.02, rng);
  fill_trunc_normal(d.W_delta, 0.02, rng);
  fill_trunc_normal(d.W_delta_up, 0.02, rng);

  d.delta_bias = Tensor<T>({E});
  std::uniform_real_distribution<double> log_dt(std::log(1e-3), std::log(1e-1));
  for (auto& v : d.delta_bias.data_mut()) {
    const double dt = std::exp(log_dt(rng));
    v = static_cast<T>(dt + std::log(-std::expm1(-dt)));  // softplus^-1(dt)
  }
  d.A_log = ssm::init_A_log<T>(E, N);
  return d;
}

void append_direction_shapes(std::vector<std::pair<std::string, Shape>>& out, const BlockShape& s, bool with_conv,
                             const std::string& prefix) {
  const std::size_t E = s.E, N = s.N, R = s.resolved_dt_rank();
  if (with_conv) {
    out.emplace_back(prefix + "conv.kernel", Shape{E, s.conv_kernel});
    out.emplace_back(prefix + "conv.bias", Shape{E});
  }
  out.emplace_back(prefix + "W_B", Shape{E, N});
  out.emplace_back(prefix + "W_C", Shape{E, N});
  out.emplace_back(prefix + "W_delta", Shape{E, R});
  out.emplace_back(prefix + "W_delta_up", Shape{R, E});
  out.emplace_back(prefix + "delta_bias", Shape{E});
  out.emplace_back(prefix + "A_log", Shape{E, N});
}

}  // namespace

template <typename T>
VimBlockParams<T> init_block(const BlockShape& s, BidirStrategy strategy, std::mt19937_64& rng) {
  require(s.D >= 1 && s.E >= 1 && s.N >= 1 && s.conv_kernel >= 1, ErrorKind::InvalidArgument,
          "block dimensions must be positive");
  VimBlockParams<T> p;
  p.norm_gamma = Tensor<T>::full({s.D}, T(1));
  p.norm_beta = Tensor<T>({s.D});
  p.W_x = Tensor<T>({s.D, s.E});
  p.W_z = Tensor<T>({s.D, s.E});
  p.W_T = Tensor<T>({s.E, s.D});
  fill_trunc_normal(p.W_x, 0.02, rng);
  fill_trunc_normal(p.W_z, 0.02, rng);
  fill_trunc_normal(p.W_T, 0.02, rng);
  if (s.linear_bias) {
    p.b_x = Tensor<T>({s.E});
    p.b_z = Tensor<T>({s.E});
    p.b_T = Tensor<T>({s.D});
  }
  p.dir_fwd = init_direction<T>(s, true, rng);
  if (needs_backward_params(strategy))
    p.dir_bwd = init_direction<T>(s, strategy == BidirStrategy::BidirSSMConv1d, rng);
  return p;
}

template <typename T>
Tensor<T> direction_pass(const Tensor<T>& x, const SsmDirectionParams<T>& dir, Direction direction,
                         const Tensor<T>* shared_conv, const BlockOptions& options) {
  Tensor<T> xc;
  if (shared_conv != nullptr) {
    xc = *shared_conv;
  } else {
    require(dir.conv.has_value(), ErrorKind::StrategyMismatch, "direction has no convolution of its own");
    xc = silu(conv1d_depthwise(x, dir.conv->kernel, dir.conv->bias, direction));
  }
  // The projections are position-wise, so a backward pass can reverse
  // first and run the whole remainder as a forward scan.
  const bool backward = direction == Direction::Backward;
  if (backward) xc = reverse_seq(xc);
  const auto Bt = matmul(xc, dir.W_B);
  const auto Ct = matmul(xc, dir.W_C);
  const auto delta = softplus(add_bias(matmul(matmul(xc, dir.W_delta), dir.W_delta_up), dir.delta_bias));
  auto y = ssm::selective_scan(xc, delta, dir.A_log, Bt, Ct, options.scan);
  return backward ? reverse_seq(y) : y;
}

template <typename T>
Tensor<T> vim_block_forward(const Tensor<T>& T_prev, const VimBlockParams<T>& p, BidirStrategy strategy,
                            std::size_t layer_index, const BlockOptions& options) {
  require(T_prev.dim() == 3 && T_prev.size(2) == p.W_x.size(0), ErrorKind::ShapeMismatch,
          "block input " + shape_string(T_prev.shape()) + " for D=" + std::to_string(p.W_x.size(0)));
  const auto mode = block_for_layer(layer_index, strategy);
  const bool two_way = mode == Directionality::Bidirectional || mode == Directionality::BidirectionalSharedConv;
  require(!two_way || p.dir_bwd.has_value(), ErrorKind::StrategyMismatch,
          "bidirectional strategy needs backward direction parameters");

  const auto normed = layer_norm(T_prev, p.norm_gamma, p.norm_beta, static_cast<T>(options.norm_eps));
  const auto x = linear(normed, p.W_x, p.b_x);
  const auto gate = silu(linear(normed, p.W_z, p.b_z));

  Tensor<T> merged;
  switch (mode) {
    case Directionality::ForwardOnly:
      merged = mul(direction_pass<T>(x, p.dir_fwd, Direction::Forward, nullptr, options), gate);
      break;
    case Directionality::BackwardOnly:
      merged = mul(direction_pass<T>(x, p.dir_fwd, Direction::Backward, nullptr, options), gate);
      break;
    case Directionality::Bidirectional: {
      const auto yf = mul(direction_pass<T>(x, p.dir_fwd, Direction::Forward, nullptr, options), gate);
      const auto yb = mul(direction_pass<T>(x, *p.dir_bwd, Direction::Backward, nullptr, options), gate);
      merged = add(yf, yb);
      break;
    }
    case Directionality::BidirectionalSharedConv: {
      require(p.dir_fwd.conv.has_value(), ErrorKind::StrategyMismatch, "forward direction has no convolution");
      const auto xc = silu(conv1d_depthwise(x, p.dir_fwd.conv->kernel, p.dir_fwd.conv->bias, Direction::Forward));
      const auto yf = mul(direction_pass<T>(x, p.dir_fwd, Direction::Forward, &xc, options), gate);
      const auto yb = mul(direction_pass<T>(x, *p.dir_bwd, Direction::Backward, &xc, options), gate);
      merged = add(yf, yb);
      break;
    }
  }
  return add(linear(merged, p.W_T, p.b_T), T_prev);
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> block_parameters(const VimBlockParams<T>& p,
                                                                const std::string& prefix) {
  std::vector<std::pair<std::string, Tensor<T>>> out;
  auto view = p;
  visit_parameters(view, prefix, [&](const std::string& name, Tensor<T>& t) { out.emplace_back(name, t); });
  return out;
}

std::vector<std::pair<std::string, Shape>> block_parameter_shapes(const BlockShape& s, BidirStrategy strategy,
                                                                  const std::string& prefix) {
  std::vector<std::pair<std::string, Shape>> out;
  out.emplace_back(prefix + "norm.gamma", Shape{s.D});
  out.emplace_back(prefix + "norm.beta", Shape{s.D});
  out.emplace_back(prefix + "W_x", Shape{s.D, s.E});
  if (s.linear_bias) out.emplace_back(prefix + "b_x", Shape{s.E});
  out.emplace_back(prefix + "W_z", Shape{s.D, s.E});
  if (s.linear_bias) out.emplace_back(prefix + "b_z", Shape{s.E});
  append_direction_shapes(out, s, true, prefix + "fwd.");
  if (needs_backward_params(strategy))
    append_direction_shapes(out, s, strategy == BidirStrategy::BidirSSMConv1d, prefix + "bwd.");
  out.emplace_back(prefix + "W_T", Shape{s.E, s.D});
  if (s.linear_bias) out.emplace_back(prefix + "b_T", Shape{s.D});
  return out;
}

template <typename T>
VimBlockParams<T> swap_directions(const VimBlockParams<T>& p) {
  require(p.dir_bwd.has_value(), ErrorKind::StrategyMismatch, "swap_directions needs two directions");
  VimBlockParams<T> q = p;
  q.dir_fwd = *p.dir_bwd;
  q.dir_bwd = p.dir_fwd;
  return q;
}

#define VIM_INSTANTIATE_BLOCK(T)                                                                                \
  template VimBlockParams<T> init_block<T>(const BlockShape&, BidirStrategy, std::mt19937_64&);                 \
  template Tensor<T> direction_pass(const Tensor<T>&, const SsmDirectionParams<T>&, Direction, const Tensor<T>*, \
                                    const BlockOptions&);                                                       \
  template Tensor<T> vim_block_forward(const Tensor<T>&, const VimBlockParams<T>&, BidirStrategy, std::size_t,  \
                                       const BlockOptions&);                                                    \
  template std::vector<std::pair<std::string, Tensor<T>>> block_parameters(const VimBlockParams<T>&,            \
                                                                           const std::string&);                 \
  template VimBlockParams<T> swap_directions(const VimBlockParams<T>&);

VIM_INSTANTIATE_BLOCK(float)
VIM_INSTANTIATE_BLOCK(double)

}  // namespace vim::model
