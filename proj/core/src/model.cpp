// SPDX-License-Identifier: Apache-2.0
#include "vim/model.hpp"

#include <cmath>

#include "vim/error.hpp"
#include "vim/ops.hpp"
#include "vim/random.hpp"

namespace vim::model {

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> named_parameters(const VimModel<T>& m) {
  std::vector<std::pair<std::string, Tensor<T>>> out;
  auto view = m;  // shallow: tensors share storage
  visit_parameters(view, [&](const std::string& name, Tensor<T>& t) { out.emplace_back(name, t); });
  return out;
}

template <typename T>
VimModel<T> clone_model(const VimModel<T>& m) {
  VimModel<T> c = m;
  visit_parameters(c, [](const std::string&, Tensor<T>& t) { t = t.clone(); });
  return c;
}

Grid token_grid(std::size_t H, std::size_t W, std::size_t P, std::size_t stride) {
  require(P >= 1 && stride >= 1, ErrorKind::InvalidArgument, "patch size and stride must be positive");
  require(H >= P && W >= P && (H - P) % stride == 0 && (W - P) % stride == 0, ErrorKind::IndivisibleImage,
          "image " + std::to_string(H) + "x" + std::to_string(W) + " does not tile with patch " + std::to_string(P) +
              " stride " + std::to_string(stride));
  return {(H - P) / stride + 1, (W - P) / stride + 1};
}

std::size_t class_token_count(ClsStrategy s) {
  switch (s) {
    case ClsStrategy::MeanPool:
    case ClsStrategy::MaxPool:
      return 0;
    case ClsStrategy::HeadClassToken:
    case ClsStrategy::MiddleClassToken:
      return 1;
    case ClsStrategy::DoubleClassToken:
      return 2;
  }
  return 0;
}

std::vector<std::size_t> class_token_positions(ClsStrategy s, std::size_t J) {
  switch (s) {
    case ClsStrategy::MeanPool:
    case ClsStrategy::MaxPool:
      return {};
    case ClsStrategy::HeadClassToken:
      return {0};
    case ClsStrategy::MiddleClassToken:
      return {J / 2};
    case ClsStrategy::DoubleClassToken:
      return {0, J + 1};
  }
  return {};
}

template <typename T>
Tensor<T> patchify(const Tensor<T>& image, std::size_t P, std::size_t stride) {
  require(image.dim() == 4, ErrorKind::ShapeMismatch, "patchify expects [B, H, W, C], got " + shape_string(image.shape()));
  const std::size_t B = image.size(0), H = image.size(1), W = image.size(2), C = image.size(3);
  const Grid g = token_grid(H, W, P, stride);
  const std::size_t J = g.count(), F = P * P * C;
  Tensor<T> out({B, J, F});
  const T* src = image.data().data();
  T* dst = out.data_mut().data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t gy = 0; gy < g.h; ++gy)
      for (std::size_t gx = 0; gx < g.w; ++gx) {
        T* row = dst + (b * J + gy * g.w + gx) * F;
        for (std::size_t py = 0; py < P; ++py)
          for (std::size_t px = 0; px < P; ++px) {
            const T* pix = src + ((b * H + gy * stride + py) * W + gx * stride + px) * C;
            std::copy_n(pix, C, row + (py * P + px) * C);
          }
      }
  return out;
}

template <typename T>
Tensor<T> embed(const Tensor<T>& patches, const PatchEmbedParams<T>& pe, ClsStrategy cls) {
  require(patches.dim() == 3, ErrorKind::ShapeMismatch, "embed expects [B, J, F]");
  const std::size_t J = patches.size(1);
  require(class_token_count(cls) < 1 || pe.cls.defined(), ErrorKind::StrategyMismatch, "strategy needs a class token");
  require(class_token_count(cls) < 2 || pe.cls_tail.defined(), ErrorKind::StrategyMismatch,
          "strategy needs a second class token");
  auto tokens = matmul(patches, pe.W_proj);
  switch (cls) {
    case ClsStrategy::MeanPool:
    case ClsStrategy::MaxPool:
      break;
    case ClsStrategy::HeadClassToken:
      tokens = insert_token(tokens, pe.cls, 0);
      break;
    case ClsStrategy::MiddleClassToken:
      tokens = insert_token(tokens, pe.cls, J / 2);
      break;
    case ClsStrategy::DoubleClassToken:
      tokens = insert_token(tokens, pe.cls, 0);
      tokens = insert_token(tokens, pe.cls_tail, J + 1);
      break;
  }
  require(pe.pos.dim() == 2 && pe.pos.size(0) == tokens.size(1), ErrorKind::ShapeMismatch,
          "position table has " + std::to_string(pe.pos.dim() == 2 ? pe.pos.size(0) : 0) + " rows for " +
              std::to_string(tokens.size(1)) + " tokens");
  return add_rows(tokens, pe.pos);
}

template <typename T>
Tensor<T> interp_pos_embed(const Tensor<T>& pos, Grid old_grid, Grid new_grid, ClsStrategy cls) {
  require(pos.dim() == 2, ErrorKind::ShapeMismatch, "position table must be 2-D");
  require(old_grid.count() >= 1 && new_grid.count() >= 1, ErrorKind::InvalidArgument, "empty token grid");
  const std::size_t D = pos.size(1);
  const std::size_t Jo = old_grid.count(), Jn = new_grid.count();
  require(pos.size(0) == num_tokens(cls, Jo), ErrorKind::GridMismatch,
          "position table has " + std::to_string(pos.size(0)) + " rows, grid needs " +
              std::to_string(num_tokens(cls, Jo)));

  // Map sequence index -> patch index (or class slot) for both layouts.
  auto layout = [&](std::size_t J) {
    const auto cpos = class_token_positions(cls, J);
    std::vector<std::ptrdiff_t> slot(num_tokens(cls, J));
    std::size_t k = 0, c = 0;
    for (std::size_t m = 0; m < slot.size(); ++m) {
      if (c < cpos.size() && cpos[c] == m)
        slot[m] = -1 - static_cast<std::ptrdiff_t>(c++);
      else
        slot[m] = static_cast<std::ptrdiff_t>(k++);
    }
    return slot;
  };
  const auto old_slot = layout(Jo);
  const auto new_slot = layout(Jn);
  std::vector<std::size_t> old_patch_row(Jo), old_cls_row;
  for (std::size_t m = 0; m < old_slot.size(); ++m) {
    if (old_slot[m] >= 0)
      old_patch_row[static_cast<std::size_t>(old_slot[m])] = m;
    else
      old_cls_row.push_back(m);
  }

  const T* src = pos.data().data();
  Tensor<T> out({num_tokens(cls, Jn), D});
  T* dst = out.data_mut().data();
  auto coord = [](std::size_t i, std::size_t n_new, std::size_t n_old) {
    if (n_new == 1 || n_old == 1) return 0.0;
    return static_cast<double>(i) * static_cast<double>(n_old - 1) / static_cast<double>(n_new - 1);
  };
  for (std::size_t m = 0; m < new_slot.size(); ++m) {
    T* row = dst + m * D;
    if (new_slot[m] < 0) {
      const std::size_t c = static_cast<std::size_t>(-1 - new_slot[m]);
      std::copy_n(src + old_cls_row[c] * D, D, row);
      continue;
    }
    const std::size_t k = static_cast<std::size_t>(new_slot[m]);
    const double sy = coord(k / new_grid.w, new_grid.h, old_grid.h);
    const double sx = coord(k % new_grid.w, new_grid.w, old_grid.w);
    const std::size_t y0 = std::min(static_cast<std::size_t>(std::floor(sy)), old_grid.h - 1);
    const std::size_t x0 = std::min(static_cast<std::size_t>(std::floor(sx)), old_grid.w - 1);
    const std::size_t y1 = std::min(y0 + 1, old_grid.h - 1), x1 = std::min(x0 + 1, old_grid.w - 1);
    const double fy = sy - static_cast<double>(y0), fx = sx - static_cast<double>(x0);
    const T* p00 = src + old_patch_row[y0 * old_grid.w + x0] * D;
    const T* p01 = src + old_patch_row[y0 * old_grid.w + x1] * D;
    const T* p10 = src + old_patch_row[y1 * old_grid.w + x0] * D;
    const T* p11 = src + old_patch_row[y1 * old_grid.w + x1] * D;
    for (std::size_t d = 0; d < D; ++d) {
      // a + f (b - a) keeps constant tables exact.
      const double top = p00[d] + fx * (static_cast<double>(p01[d]) - p00[d]);
      const double bot = p10[d] + fx * (static_cast<double>(p11[d]) - p10[d]);
      row[d] = static_cast<T>(top + fy * (bot - top));
    }
  }
  return out;
}

template <typename T>
Tensor<T> encoder_forward(const Tensor<T>& T0, const VimModel<T>& model, const BlockOptions& options) {
  require(!model.blocks.empty(), ErrorKind::ConfigInvalid, "model has no blocks");
  Tensor<T> t = T0;
  for (std::size_t l = 0; l < model.blocks.size(); ++l) t = vim_block_forward(t, model.blocks[l], model.config.bidir_strategy, l, options);
  return t;
}

template <typename T>
Tensor<T> classify(const Tensor<T>& TL, const VimModel<T>& model, ClsStrategy cls) {
  require(TL.dim() == 3, ErrorKind::ShapeMismatch, "classify expects [B, M, D]");
  require(cls == model.config.cls_strategy, ErrorKind::StrategyMismatch,
          "classify with " + std::string(to_string(cls)) + " on a model built for " +
              std::string(to_string(model.config.cls_strategy)));
  require(TL.size(1) > class_token_count(cls), ErrorKind::ShapeMismatch, "sequence too short for class tokens");
  const T eps = static_cast<T>(model.config.norm_eps);
  auto norm = [&](const Tensor<T>& x) { return layer_norm(x, model.final_gamma, model.final_beta, eps); };
  auto head = [&](const Tensor<T>& x) { return linear(x, model.head_W, model.head_b); };
  const std::size_t J = TL.size(1) - class_token_count(cls);
  switch (cls) {
    case ClsStrategy::HeadClassToken:
    case ClsStrategy::MiddleClassToken:
      return head(norm(select_token(TL, class_token_positions(cls, J)[0])));
    case ClsStrategy::DoubleClassToken: {
      const auto a = norm(select_token(TL, 0));
      const auto b = norm(select_token(TL, J + 1));
      return head(scale(add(a, b), T(0.5)));
    }
    case ClsStrategy::MeanPool:
      return head(mean_seq(norm(TL)));
    case ClsStrategy::MaxPool:
      return max_seq(head(norm(TL)));
  }
  fail(ErrorKind::ConfigInvalid, "unknown class strategy");
}

template <typename T>
Tensor<T> forward(const VimModel<T>& model, const Tensor<T>& images, const ForwardOptions& options) {
  const auto& c = model.config;
  require(images.dim() == 4 && images.size(3) == c.in_channels, ErrorKind::ShapeMismatch,
          "image batch " + shape_string(images.shape()) + " for " + std::to_string(c.in_channels) + " channels");
  require(options.flip.empty() || options.flip.size() == images.size(0), ErrorKind::ShapeMismatch,
          "flip mask length must equal batch size");
  const auto patches = patchify(images, c.P, c.stride);
  auto t = embed(patches, model.embed, c.cls_strategy);
  if (!options.flip.empty()) t = reverse_seq(t, options.flip);
  t = encoder_forward(t, model, options.block);
  if (!options.flip.empty()) t = reverse_seq(t, options.flip);
  return classify(t, model, c.cls_strategy);
}

std::vector<std::pair<std::string, Shape>> parameter_shapes(const ModelConfig& c) {
  c.validate();
  const std::size_t J = token_grid(c.img_h, c.img_w, c.P, c.stride).count();
  std::vector<std::pair<std::string, Shape>> out;
  out.emplace_back("embed.W_proj", Shape{c.P * c.P * c.in_channels, c.D});
  out.emplace_back("embed.pos", Shape{num_tokens(c.cls_strategy, J), c.D});
  if (class_token_count(c.cls_strategy) >= 1) out.emplace_back("embed.cls", Shape{c.D});
  if (class_token_count(c.cls_strategy) == 2) out.emplace_back("embed.cls_tail", Shape{c.D});
  for (std::size_t l = 0; l < c.L; ++l)
    for (auto& e : block_parameter_shapes(c.block_shape(), c.bidir_strategy, "blocks." + std::to_string(l) + "."))
      out.push_back(std::move(e));
  out.emplace_back("final_norm.gamma", Shape{c.D});
  out.emplace_back("final_norm.beta", Shape{c.D});
  out.emplace_back("head.W", Shape{c.D, c.num_classes});
  out.emplace_back("head.b", Shape{c.num_classes});
  return out;
}

std::size_t param_count(const ModelConfig& config) {
  std::size_t n = 0;
  for (const auto& [name, shape] : parameter_shapes(config)) n += shape_numel(shape);
  return n;
}

template <typename T>
std::size_t param_count(const VimModel<T>& model) {
  std::size_t n = 0;
  for (const auto& [name, t] : named_parameters(model)) n += t.numel();
  return n;
}

template <typename T>
VimModel<T> init_model(const ModelConfig& c, std::mt19937_64& rng) {
  c.validate();
  const std::size_t J = token_grid(c.img_h, c.img_w, c.P, c.stride).count();
  VimModel<T> m;
  m.config = c;
  m.embed.W_proj = Tensor<T>({c.P * c.P * c.in_channels, c.D});
  fill_trunc_normal(m.embed.W_proj, 0.02, rng);
  m.embed.pos = Tensor<T>({num_tokens(c.cls_strategy, J), c.D});
  fill_trunc_normal(m.embed.pos, 0.02, rng);
  if (class_token_count(c.cls_strategy) >= 1) {
    m.embed.cls = Tensor<T>({c.D});
    fill_trunc_normal(m.embed.cls, 0.02, rng);
  }
  if (class_token_count(c.cls_strategy) == 2) {
    m.embed.cls_tail = Tensor<T>({c.D});
    fill_trunc_normal(m.embed.cls_tail, 0.02, rng);
  }
  m.blocks.reserve(c.L);
  for (std::size_t l = 0; l < c.L; ++l) m.blocks.push_back(init_block<T>(c.block_shape(), c.bidir_strategy, rng));
  m.final_gamma = Tensor<T>::full({c.D}, T(1));
  m.final_beta = Tensor<T>({c.D});
  m.head_W = Tensor<T>({c.D, c.num_classes});
  fill_trunc_normal(m.head_W, 0.02, rng);
  m.head_b = Tensor<T>({c.num_classes});
  return m;
}

template <typename T>
VimModel<T> with_patch_stride(const VimModel<T>& model, std::size_t stride) {
  ModelConfig c = model.config;
  c.stride = stride;
  c.validate();
  const Grid old_grid = token_grid(model.config.img_h, model.config.img_w, model.config.P, model.config.stride);
  const Grid new_grid = token_grid(c.img_h, c.img_w, c.P, c.stride);
  VimModel<T> out = clone_model(model);
  out.config = c;
  out.embed.pos = interp_pos_embed(model.embed.pos, old_grid, new_grid, c.cls_strategy);
  return out;
}

template <typename T>
VimModel<T> swap_all_directions(const VimModel<T>& model) {
  VimModel<T> out = clone_model(model);
  for (auto& b : out.blocks) b = swap_directions(b);
  return out;
}

#define VIM_INSTANTIATE_MODEL(T)                                                                           \
  template std::vector<std::pair<std::string, Tensor<T>>> named_parameters(const VimModel<T>&);          \
  template VimModel<T> clone_model(const VimModel<T>&);                                                  \
  template Tensor<T> patchify(const Tensor<T>&, std::size_t, std::size_t);                               \
  template Tensor<T> embed(const Tensor<T>&, const PatchEmbedParams<T>&, ClsStrategy);                   \
  template Tensor<T> interp_pos_embed(const Tensor<T>&, Grid, Grid, ClsStrategy);                        \
  template Tensor<T> encoder_forward(const Tensor<T>&, const VimModel<T>&, const BlockOptions&);         \
  template Tensor<T> classify(const Tensor<T>&, const VimModel<T>&, ClsStrategy);                        \
  template Tensor<T> forward(const VimModel<T>&, const Tensor<T>&, const ForwardOptions&);               \
  template std::size_t param_count(const VimModel<T>&);                                                  \
  template VimModel<T> init_model<T>(const ModelConfig&, std::mt19937_64&);                              \
  template VimModel<T> with_patch_stride(const VimModel<T>&, std::size_t);                               \
  template VimModel<T> swap_all_directions(const VimModel<T>&);

VIM_INSTANTIATE_MODEL(float)
VIM_INSTANTIATE_MODEL(double)

}  // namespace vim::model
