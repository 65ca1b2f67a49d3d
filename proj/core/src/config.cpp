// SPDX-License-Identifier: Apache-2.0
#include "vim/config.hpp"

#include <array>
#include <utility>

#include "json.hpp"
#include "vim/error.hpp"

namespace vim::model {
namespace {

using nlohmann::json;

constexpr std::array<std::pair<ClsStrategy, std::string_view>, 5> kCls{{
    {ClsStrategy::MeanPool, "mean_pool"},
    {ClsStrategy::MaxPool, "max_pool"},
    {ClsStrategy::HeadClassToken, "head_class_token"},
    {ClsStrategy::DoubleClassToken, "double_class_token"},
    {ClsStrategy::MiddleClassToken, "middle_class_token"},
}};

constexpr std::array<std::pair<BidirStrategy, std::string_view>, 5> kBidir{{
    {BidirStrategy::NoneForwardOnly, "none"},
    {BidirStrategy::BidirSequence, "bidir_sequence"},
    {BidirStrategy::BidirBlock, "bidir_block"},
    {BidirStrategy::BidirSSM, "bidir_ssm"},
    {BidirStrategy::BidirSSMConv1d, "bidir_ssm_conv1d"},
}};

constexpr std::array<std::pair<Variant, std::string_view>, 4> kVariant{{
    {Variant::Tiny, "tiny"},
    {Variant::Small, "small"},
    {Variant::Base, "base"},
    {Variant::Micro, "micro"},
}};

template <typename E, std::size_t K>
std::string_view name_of(const std::array<std::pair<E, std::string_view>, K>& table, E value) {
  for (const auto& [v, n] : table)
    if (v == value) return n;
  return "unknown";
}

template <typename E, std::size_t K>
E value_of(const std::array<std::pair<E, std::string_view>, K>& table, std::string_view name, const char* what) {
  for (const auto& [v, n] : table)
    if (n == name) return v;
  std::string options;
  for (const auto& [v, n] : table) options += (options.empty() ? "" : ", ") + std::string(n);
  fail(ErrorKind::ConfigInvalid, std::string("unknown ") + what + " '" + std::string(name) + "' (expected one of " +
                                     options + ")");
}

std::size_t count(const json& j, const char* key) {
  if (!j.is_number_integer() || j.get<long long>() < 0)
    fail(ErrorKind::ConfigInvalid, std::string("model.") + key + " must be a non-negative integer");
  return j.get<std::size_t>();
}

}  // namespace

void ModelConfig::validate() const {
  auto check = [](bool ok, const std::string& msg) { require(ok, ErrorKind::ConfigInvalid, msg); };
  check(L >= 1, "L must be >= 1");
  check(D >= 1 && E >= 1 && N >= 1, "D, E and N must be >= 1");
  check(P >= 1 && stride >= 1 && stride <= P, "patch stride must be in [1, P]");
  check(in_channels >= 1 && num_classes >= 1, "in_channels and num_classes must be >= 1");
  check(conv_kernel >= 1, "conv_kernel must be >= 1");
  check(norm_eps > 0.0, "norm_eps must be positive");
  require(img_h >= P && img_w >= P && (img_h - P) % stride == 0 && (img_w - P) % stride == 0,
          ErrorKind::IndivisibleImage,
          "image " + std::to_string(img_h) + "x" + std::to_string(img_w) + " does not tile with patch " +
              std::to_string(P) + " stride " + std::to_string(stride));
}

ModelConfig build_config(Variant variant) {
  ModelConfig c;
  switch (variant) {
    case Variant::Tiny:
      c.L = 24, c.D = 192, c.E = 384, c.N = 16;
      break;
    case Variant::Small:
      c.L = 24, c.D = 384, c.E = 768, c.N = 16;
      break;
    case Variant::Base:
      c.L = 24, c.D = 768, c.E = 1536, c.N = 16;
      break;
    case Variant::Micro:
      return c;
  }
  c.P = 16;
  c.stride = 16;
  c.img_h = c.img_w = 224;
  c.in_channels = 3;
  c.num_classes = 1000;
  return c;
}

std::string_view to_string(ClsStrategy s) { return name_of(kCls, s); }
std::string_view to_string(BidirStrategy s) { return name_of(kBidir, s); }
std::string_view to_string(Variant v) { return name_of(kVariant, v); }
ClsStrategy parse_cls_strategy(std::string_view s) { return value_of(kCls, s, "cls_strategy"); }
BidirStrategy parse_bidir_strategy(std::string_view s) { return value_of(kBidir, s, "bidir_strategy"); }
Variant parse_variant(std::string_view s) { return value_of(kVariant, s, "variant"); }

std::string to_json(const ModelConfig& c) {
  json j = {
      {"L", c.L},
      {"D", c.D},
      {"E", c.E},
      {"N", c.N},
      {"P", c.P},
      {"stride", c.stride},
      {"img_h", c.img_h},
      {"img_w", c.img_w},
      {"in_channels", c.in_channels},
      {"num_classes", c.num_classes},
      {"cls_strategy", std::string(to_string(c.cls_strategy))},
      {"bidir_strategy", std::string(to_string(c.bidir_strategy))},
      {"conv_kernel", c.conv_kernel},
      {"dt_rank", c.dt_rank},
      {"linear_bias", c.linear_bias},
      {"norm_eps", c.norm_eps},
  };
  return j.dump();
}

ModelConfig model_config_from_json(std::string_view text, const ModelConfig& base) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    fail(ErrorKind::ConfigInvalid, std::string("model config is not valid JSON: ") + e.what());
  }
  require(j.is_object(), ErrorKind::ConfigInvalid, "model config must be a JSON object");

  ModelConfig c = base;
  if (auto it = j.find("variant"); it != j.end()) {
    require(it->is_string(), ErrorKind::ConfigInvalid, "model.variant must be a string");
    c = build_config(parse_variant(it->get<std::string>()));
  }
  for (const auto& [key, value] : j.items()) {
    if (key == "variant") continue;
    if (key == "L") c.L = count(value, "L");
    else if (key == "D") c.D = count(value, "D");
    else if (key == "E") c.E = count(value, "E");
    else if (key == "N") c.N = count(value, "N");
    else if (key == "P") c.P = count(value, "P");
    else if (key == "stride") c.stride = count(value, "stride");
    else if (key == "img_h") c.img_h = count(value, "img_h");
    else if (key == "img_w") c.img_w = count(value, "img_w");
    else if (key == "in_channels") c.in_channels = count(value, "in_channels");
    else if (key == "num_classes") c.num_classes = count(value, "num_classes");
    else if (key == "conv_kernel") c.conv_kernel = count(value, "conv_kernel");
    else if (key == "dt_rank") c.dt_rank = count(value, "dt_rank");
    else if (key == "cls_strategy") {
      require(value.is_string(), ErrorKind::ConfigInvalid, "model.cls_strategy must be a string");
      c.cls_strategy = parse_cls_strategy(value.get<std::string>());
    } else if (key == "bidir_strategy") {
      require(value.is_string(), ErrorKind::ConfigInvalid, "model.bidir_strategy must be a string");
      c.bidir_strategy = parse_bidir_strategy(value.get<std::string>());
    } else if (key == "linear_bias") {
      require(value.is_boolean(), ErrorKind::ConfigInvalid, "model.linear_bias must be a boolean");
      c.linear_bias = value.get<bool>();
    } else if (key == "norm_eps") {
      require(value.is_number(), ErrorKind::ConfigInvalid, "model.norm_eps must be a number");
      c.norm_eps = value.get<double>();
    } else {
      fail(ErrorKind::ConfigInvalid, "unknown model key '" + key + "'");
    }
  }
  return c;
}

}  // namespace vim::model
