// SPDX-License-Identifier: Apache-2.0
#include "vim/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <ostream>
#include <random>

#include "vim/block.hpp"
#include "vim/error.hpp"
#include "vim/grad_check.hpp"
#include "vim/model.hpp"
#include "vim/ops.hpp"
#include "vim/random.hpp"
#include "vim/ssm.hpp"
#include "vim/tape.hpp"

namespace vim::verify {

using D64 = Tensor<double>;

std::string_view to_string(Suite s) {
  switch (s) {
    case Suite::Grad:
      return "grad";
    case Suite::Scan:
      return "scan";
    case Suite::Equivalence:
      return "equivalence";
    case Suite::All:
      return "all";
  }
  return "?";
}

Suite parse_suite(std::string_view s) {
  for (auto v : {Suite::Grad, Suite::Scan, Suite::Equivalence, Suite::All})
    if (to_string(v) == s) return v;
  fail(ErrorKind::ConfigInvalid, "unknown verify suite '" + std::string(s) + "'");
}

double normwise_relative_error(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), ErrorKind::ShapeMismatch, "relative error of differently sized arrays");
  double diff = 0, scale = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::abs(a[i] - b[i]));
    scale = std::max(scale, std::abs(b[i]));
  }
  if (diff == 0) return 0;
  return scale > 0 ? diff / scale : std::numeric_limits<double>::infinity();
}

double normwise_relative_error(const D64& a, const D64& b) {
  require(a.shape() == b.shape(), ErrorKind::ShapeMismatch,
          "relative error of " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  return normwise_relative_error(a.data(), b.data());
}

namespace {

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

CheckResult bounded(std::string name, double err, double tol) {
  return {std::move(name), std::isfinite(err) && err <= tol, fmt("max relative error %.3e", err) + fmt(" (tolerance %.0e)", tol)};
}

D64 randn(Shape s, std::mt19937_64& rng, double std = 1.0) {
  D64 t(std::move(s));
  fill_normal(t, 0.0, std, rng);
  return t;
}

D64 uniform(Shape s, double lo, double hi, std::mt19937_64& rng) {
  D64 t(std::move(s));
  fill_uniform(t, lo, hi, rng);
  return t;
}

// --- scan -----------------------------------------------------------------

CheckResult check_lti_conv(std::uint64_t seed) {
  double worst = 0;
  for (std::uint64_t k = 0; k < 20; ++k) {
    auto rng = make_stream(seed, 100 + k);
    std::uniform_int_distribution<std::size_t> Md(1, 128), Ed(1, 4), Nd(1, 8);
    const std::size_t M = Md(rng), E = Ed(rng), N = Nd(rng);
    ssm::ContinuousParams<double> cp;
    cp.A_log = uniform({E, N}, -1.0, 1.0, rng);
    const auto b0 = randn({N}, rng), c0 = randn({N}, rng), d0 = uniform({E}, 0.01, 0.5, rng);
    cp.B_t = D64({1, M, N});
    cp.C_t = D64({1, M, N});
    cp.delta = D64({1, M, E});
    for (std::size_t i = 0; i < M; ++i) {
      std::copy_n(b0.data().data(), N, cp.B_t.data_mut().data() + i * N);
      std::copy_n(c0.data().data(), N, cp.C_t.data_mut().data() + i * N);
      std::copy_n(d0.data().data(), E, cp.delta.data_mut().data() + i * E);
    }
    const auto x = randn({1, M, E}, rng);
    const auto mode = k % 2 == 0 ? ssm::Discretization::ZohExact : ssm::Discretization::EulerB;
    const auto dp = ssm::discretize(cp, mode);
    const auto y_scan = ssm::selective_scan_seq(dp, cp.C_t, x);
    D64 a0({E, N}), bb0({E, N});
    std::copy_n(dp.A_bar.data().data(), E * N, a0.data_mut().data());
    std::copy_n(dp.B_bar.data().data(), E * N, bb0.data_mut().data());
    const auto K = ssm::lti_kernel(a0, bb0, c0, M);
    const auto y_conv = ssm::conv_mode_apply(x, K);
    worst = std::max(worst, normwise_relative_error(y_scan, y_conv));
  }
  return bounded("scan.lti_convolution_equivalence", worst, 1e-8);
}

CheckResult check_chunked(std::uint64_t seed) {
  double worst = 0;
  for (std::uint64_t k = 0; k < 20; ++k) {
    auto rng = make_stream(seed, 200 + k);
    std::uniform_int_distribution<std::size_t> Bd(1, 2), Md(1, 96), Ed(1, 4), Nd(1, 8);
    const std::size_t B = Bd(rng), M = Md(rng), E = Ed(rng), N = Nd(rng);
    ssm::ContinuousParams<double> cp{uniform({E, N}, -1.0, 1.0, rng), randn({B, M, N}, rng), randn({B, M, N}, rng),
                                     uniform({B, M, E}, 0.01, 0.5, rng)};
    const auto x = randn({B, M, E}, rng);
    const auto dp = ssm::discretize(cp, ssm::Discretization::ZohExact);
    const auto ref = ssm::selective_scan_seq(dp, cp.C_t, x);
    for (std::size_t chunk : {std::size_t{1}, std::size_t{7}, std::size_t{64}, M})
      worst = std::max(worst, normwise_relative_error(ssm::selective_scan_chunked(dp, cp.C_t, x, chunk), ref));
  }
  return bounded("scan.chunked_matches_sequential", worst, 1e-10);
}

// --- grad -----------------------------------------------------------------

CheckResult check_scan_grad(std::uint64_t seed, ssm::Discretization mode, const char* name) {
  auto rng = make_stream(seed, 300);
  const std::size_t B = 2, M = 5, E = 3, N = 4;
  auto x = randn({B, M, E}, rng);
  auto delta = uniform({B, M, E}, 0.05, 0.6, rng);
  auto A_log = uniform({E, N}, -0.5, 0.5, rng);
  auto Bt = randn({B, M, N}, rng);
  auto Ct = randn({B, M, N}, rng);
  const auto w = randn({B, M, E}, rng);
  ssm::ScanOptions opt{mode, ssm::ScanAlgorithm::Sequential, ssm::kDefaultChunk};
  auto f = [&] { return sum(mul(ssm::selective_scan(x, delta, A_log, Bt, Ct, opt), w)); };
  const auto r = grad_check<double>(f, {x, delta, A_log, Bt, Ct}, 1e-4);
  auto c = bounded(name, r.max_relative_error, 1e-4);
  c.detail += "; worst " + r.worst;
  return c;
}

CheckResult check_block_grad(std::uint64_t seed) {
  auto rng = make_stream(seed, 301);
  const model::BlockShape shape{8, 16, 4, 2};
  auto p = model::init_block<double>(shape, model::BidirStrategy::BidirSSMConv1d, rng);
  // Larger weights and timescales than the default init, and |A| near 1,
  // so every path carries a gradient well above finite-difference noise.
  model::visit_parameters(p, "", [&](const std::string& name, D64& t) {
    if (name.find("gamma") == std::string::npos) fill_normal(t, 0.0, 0.3, rng);
  });
  auto x = randn({2, 6, 8}, rng);
  const auto w = randn({2, 6, 8}, rng);
  auto f = [&] { return sum(mul(model::vim_block_forward(x, p, model::BidirStrategy::BidirSSMConv1d), w)); };
  std::vector<D64> params{x};
  for (auto& [name, t] : model::block_parameters(p, "")) params.push_back(t);
  const auto r = grad_check<double>(f, params, 1e-4);
  auto c = bounded("grad.vim_block", r.max_relative_error, 1e-4);
  c.detail += "; worst " + r.worst;
  return c;
}

CheckResult check_model_grad(std::uint64_t seed) {
  auto rng = make_stream(seed, 302);
  model::ModelConfig cfg;  // micro preset
  auto m = model::init_model<double>(cfg, rng);
  // Evaluated away from the tiny-timescale init, as in check_block_grad.
  model::visit_parameters(m, [&](const std::string& name, D64& t) {
    if (name.find("gamma") == std::string::npos) fill_normal(t, 0.0, 0.2, rng);
  });
  const auto images = randn({2, cfg.img_h, cfg.img_w, cfg.in_channels}, rng);
  std::uniform_int_distribution<int> lab(0, static_cast<int>(cfg.num_classes) - 1);
  const std::vector<int> labels{lab(rng), lab(rng)};
  auto f = [&] { return softmax_cross_entropy(model::forward(m, images), labels, 0.0); };
  std::vector<D64> params;
  for (auto& [name, t] : model::named_parameters(m)) params.push_back(t);
  const auto r = grad_check<double>(f, params, 1e-4, 3, seed);
  auto c = bounded("grad.micro_model_end_to_end", r.max_relative_error, 1e-4);
  c.detail += "; " + std::to_string(r.coordinates_checked) + " coordinates; worst " + r.worst;
  return c;
}

// --- equivalence ----------------------------------------------------------

CheckResult check_flip(std::uint64_t seed) {
  double worst = 0;
  for (std::uint64_t k = 0; k < 20; ++k) {
    auto rng = make_stream(seed, 400 + k);
    const model::BlockShape shape{8, 16, 4, 2};
    const auto p = model::init_block<double>(shape, model::BidirStrategy::BidirSSMConv1d, rng);
    const auto q = model::swap_directions(p);
    const auto x = randn({2, 9, 8}, rng);
    NoGradScope<double> ng;
    const auto y = model::vim_block_forward(x, p, model::BidirStrategy::BidirSSMConv1d);
    const auto y_rev = model::vim_block_forward(reverse_seq(x), q, model::BidirStrategy::BidirSSMConv1d);
    worst = std::max(worst, normwise_relative_error(y_rev, reverse_seq(y)));
  }
  return bounded("equivalence.block_flip", worst, 1e-10);
}

CheckResult check_model_flip(std::uint64_t seed) {
  auto rng = make_stream(seed, 420);
  model::ModelConfig cfg;
  cfg.bidir_strategy = model::BidirStrategy::BidirSSMConv1d;
  const auto m = model::init_model<double>(cfg, rng);
  const auto swapped = model::swap_all_directions(m);
  const auto images = randn({3, cfg.img_h, cfg.img_w, cfg.in_channels}, rng);
  NoGradScope<double> ng;
  const std::vector<std::uint8_t> all(3, 1);
  model::ForwardOptions fo;
  fo.flip = all;
  const auto base = model::forward(m, images);
  const auto flipped = model::forward(swapped, images, fo);
  return bounded("equivalence.model_flip_augment", normwise_relative_error(flipped, base), 1e-10);
}

CheckResult check_recompute(std::uint64_t seed) {
  auto rng = make_stream(seed, 430);
  const std::size_t B = 2, M = 7, E = 3, N = 4;
  auto x = randn({B, M, E}, rng);
  auto delta = uniform({B, M, E}, 0.05, 0.6, rng);
  auto A_log = uniform({E, N}, -0.5, 0.5, rng);
  auto Bt = randn({B, M, N}, rng);
  auto Ct = randn({B, M, N}, rng);
  std::vector<D64*> inputs{&x, &delta, &A_log, &Bt, &Ct};
  auto grads = [&](bool recompute) {
    for (auto* t : inputs) {
      t->set_requires_grad(true);
      t->clear_grad();
    }
    GradientTape<double> tape;
    tape.set_recompute(recompute);
    {
      TapeScope<double> scope(tape);
      const auto loss = sum(ssm::selective_scan(x, delta, A_log, Bt, Ct));
      tape.backward(loss);
    }
    std::vector<std::vector<double>> g;
    for (auto* t : inputs) g.emplace_back(t->grad().begin(), t->grad().end());
    return g;
  };
  const bool same = grads(false) == grads(true);
  return {"equivalence.recompute_gradients_bit_identical", same, same ? "" : "gradients differ"};
}

CheckResult check_identity_interp(std::uint64_t seed) {
  auto rng = make_stream(seed, 440);
  const model::Grid g{4, 4};
  const auto pos = randn({17, 8}, rng);
  const auto out = model::interp_pos_embed(pos, g, g, model::ClsStrategy::MiddleClassToken);
  const bool same = bit_equal(out, pos);
  return {"equivalence.identity_position_interpolation", same, same ? "" : "interpolation changed the table"};
}

template <typename F>
void guarded(std::vector<CheckResult>& out, const char* name, F&& f) {
  try {
    out.push_back(f());
  } catch (const std::exception& e) {
    out.push_back({name, false, std::string("threw: ") + e.what()});
  }
}

}  // namespace

std::vector<CheckResult> run_suite(Suite suite, const VerifyOptions& options) {
  struct FaultGuard {
    explicit FaultGuard(bool on) { ssm::testing::set_scan_fault(on); }
    ~FaultGuard() { ssm::testing::set_scan_fault(false); }
  } fault(options.inject_scan_fault);
  const auto s = options.seed;
  std::vector<CheckResult> out;
  if (suite == Suite::Scan || suite == Suite::All) {
    guarded(out, "scan.lti_convolution_equivalence", [&] { return check_lti_conv(s); });
    guarded(out, "scan.chunked_matches_sequential", [&] { return check_chunked(s); });
  }
  if (suite == Suite::Grad || suite == Suite::All) {
    guarded(out, "grad.selective_scan_zoh",
            [&] { return check_scan_grad(s, ssm::Discretization::ZohExact, "grad.selective_scan_zoh"); });
    guarded(out, "grad.selective_scan_euler",
            [&] { return check_scan_grad(s, ssm::Discretization::EulerB, "grad.selective_scan_euler"); });
    guarded(out, "grad.vim_block", [&] { return check_block_grad(s); });
    guarded(out, "grad.micro_model_end_to_end", [&] { return check_model_grad(s); });
  }
  if (suite == Suite::Equivalence || suite == Suite::All) {
    guarded(out, "equivalence.block_flip", [&] { return check_flip(s); });
    guarded(out, "equivalence.model_flip_augment", [&] { return check_model_flip(s); });
    guarded(out, "equivalence.recompute_gradients_bit_identical", [&] { return check_recompute(s); });
    guarded(out, "equivalence.identity_position_interpolation", [&] { return check_identity_interp(s); });
  }
  return out;
}

void write_tap(std::ostream& out, const std::vector<CheckResult>& results) {
  out << "1.." << results.size() << '\n';
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& r = results[i];
    out << (r.ok ? "ok " : "not ok ") << (i + 1) << " - " << r.name;
    if (!r.detail.empty()) out << " # " << r.detail;
    out << '\n';
  }
}

bool all_passed(const std::vector<CheckResult>& results) {
  return std::all_of(results.begin(), results.end(), [](const CheckResult& r) { return r.ok; });
}

}  // namespace vim::verify
