// SPDX-License-Identifier: Apache-2.0
#include "vim/optim.hpp"

#include <cmath>
#include <numbers>

#include "vim/error.hpp"

namespace vim::train {

namespace {
bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}
}  // namespace

bool applies_weight_decay(const std::string& name, const Shape& shape) {
  if (shape.size() <= 1) return false;
  if (ends_with(name, "A_log")) return false;
  if (name == "embed.pos" || name == "embed.cls" || name == "embed.cls_tail") return false;
  return true;
}

template <typename T>
OptimState<T> init_optim(const std::vector<std::pair<std::string, Tensor<T>>>& params, double lr,
                         double weight_decay) {
  OptimState<T> s;
  s.lr = lr;
  s.weight_decay = weight_decay;
  for (const auto& [name, p] : params) {
    s.names.push_back(name);
    s.m.emplace_back(p.shape());
    s.v.emplace_back(p.shape());
    s.decay.push_back(applies_weight_decay(name, p.shape()) ? 1 : 0);
  }
  return s;
}

template <typename T>
void adamw_update(Tensor<T>& param, std::span<const T> grad, Tensor<T>& m, Tensor<T>& v, std::uint64_t t, double lr,
                  double beta1, double beta2, double eps, double weight_decay) {
  require(grad.size() == param.numel() && m.shape() == param.shape() && v.shape() == param.shape(),
          ErrorKind::ShapeMismatch, "adamw shapes disagree for parameter " + shape_string(param.shape()));
  require(t >= 1, ErrorKind::InvalidArgument, "adamw step counter starts at 1");
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  const T decay = static_cast<T>(1.0 - lr * weight_decay);
  const T b1 = static_cast<T>(beta1), b2 = static_cast<T>(beta2);
  auto P = param.data_mut();
  auto Mm = m.data_mut();
  auto Vv = v.data_mut();
  for (std::size_t i = 0; i < P.size(); ++i) {
    const T g = grad[i];
    Mm[i] = b1 * Mm[i] + (T(1) - b1) * g;
    Vv[i] = b2 * Vv[i] + (T(1) - b2) * g * g;
    const double mhat = static_cast<double>(Mm[i]) / bc1;
    const double vhat = static_cast<double>(Vv[i]) / bc2;
    if (weight_decay != 0.0) P[i] *= decay;
    P[i] = static_cast<T>(static_cast<double>(P[i]) - lr * mhat / (std::sqrt(vhat) + eps));
  }
}

template <typename T>
void adamw_step(std::vector<std::pair<std::string, Tensor<T>>>& params, OptimState<T>& state) {
  require(params.size() == state.names.size(), ErrorKind::ShapeMismatch,
          "optimizer tracks " + std::to_string(state.names.size()) + " tensors, got " + std::to_string(params.size()));
  ++state.step;
  std::vector<T> zeros;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k].second;
    require(params[k].first == state.names[k], ErrorKind::ShapeMismatch,
            "optimizer parameter order mismatch at " + params[k].first);
    std::span<const T> g;
    if (p.has_grad()) {
      g = p.grad();
    } else {
      zeros.assign(p.numel(), T(0));
      g = zeros;
    }
    adamw_update(p, g, state.m[k], state.v[k], state.step, state.lr, state.beta1, state.beta2, state.eps,
                 state.decay[k] ? state.weight_decay : 0.0);
  }
}

double cosine_lr(std::size_t step, std::size_t total_steps, double base_lr, double min_lr, std::size_t warmup_steps) {
  require(step <= total_steps, ErrorKind::InvalidArgument, "lr schedule step past the end");
  if (step < warmup_steps)
    return min_lr + (base_lr - min_lr) * static_cast<double>(step) / static_cast<double>(warmup_steps);
  if (total_steps <= warmup_steps) return base_lr;
  const double progress = static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - warmup_steps);
  if (progress >= 1.0) return min_lr;
  return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + std::cos(std::numbers::pi * progress));
}

template OptimState<float> init_optim(const std::vector<std::pair<std::string, Tensor<float>>>&, double, double);
template OptimState<double> init_optim(const std::vector<std::pair<std::string, Tensor<double>>>&, double, double);
template void adamw_update(Tensor<float>&, std::span<const float>, Tensor<float>&, Tensor<float>&, std::uint64_t,
                           double, double, double, double, double);
template void adamw_update(Tensor<double>&, std::span<const double>, Tensor<double>&, Tensor<double>&, std::uint64_t,
                           double, double, double, double, double);
template void adamw_step(std::vector<std::pair<std::string, Tensor<float>>>&, OptimState<float>&);
template void adamw_step(std::vector<std::pair<std::string, Tensor<double>>>&, OptimState<double>&);

}  // namespace vim::train
