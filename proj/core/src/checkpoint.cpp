// SPDX-License-Identifier: Apache-2.0
#include "vim/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include "json.hpp"

#include "vim/error.hpp"

namespace vim::train {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

using json = nlohmann::ordered_json;

namespace {

constexpr char kMagic[4] = {'V', 'I', 'M', 'C'};

template <typename T>
constexpr const char* dtype_name() {
  return sizeof(T) == 4 ? "f32" : "f64";
}

template <typename U>
void put_le(std::string& out, U v) {
  char b[sizeof(U)];
  std::memcpy(b, &v, sizeof(U));
  out.append(b, sizeof(U));
}

struct RawFile {
  json manifest;
  std::string bytes;
  std::size_t payload_start = 0;
};

RawFile read_raw(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::TruncatedPayload, "cannot open checkpoint " + path.string());
  RawFile f;
  f.bytes.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  const auto& b = f.bytes;
  require(b.size() >= 4 && std::memcmp(b.data(), kMagic, 4) == 0, ErrorKind::BadMagic,
          path.string() + " is not a checkpoint (bad magic)");
  require(b.size() >= 16, ErrorKind::TruncatedPayload, path.string() + ": header truncated");
  std::uint32_t version = 0;
  std::uint64_t manifest_len = 0;
  std::memcpy(&version, b.data() + 4, 4);
  std::memcpy(&manifest_len, b.data() + 8, 8);
  require(version == kCheckpointVersion, ErrorKind::VersionUnsupported,
          path.string() + ": unsupported checkpoint version " + std::to_string(version));
  require(manifest_len <= b.size() - 16, ErrorKind::TruncatedPayload, path.string() + ": manifest truncated");
  try {
    f.manifest = json::parse(b.begin() + 16, b.begin() + 16 + static_cast<std::ptrdiff_t>(manifest_len));
  } catch (const json::exception& e) {
    fail(ErrorKind::ManifestCorrupt, path.string() + ": manifest is not valid JSON (" + e.what() + ")");
  }
  require(f.manifest.is_object() && f.manifest.contains("config") && f.manifest.contains("tensors") &&
              f.manifest["tensors"].is_array(),
          ErrorKind::ManifestCorrupt, path.string() + ": manifest lacks config or tensors");
  f.payload_start = 16 + manifest_len;
  return f;
}

struct Entry {
  std::string dtype;
  Shape shape;
  std::uint64_t offset = 0;
  std::uint64_t length = 0;
};

std::map<std::string, Entry> index_entries(const RawFile& f) {
  std::map<std::string, Entry> out;
  const std::size_t payload = f.bytes.size() - f.payload_start;
  for (const auto& t : f.manifest["tensors"]) {
    Entry e;
    std::string name;
    try {
      name = t.at("name").get<std::string>();
      e.dtype = t.at("dtype").get<std::string>();
      e.shape = t.at("shape").get<Shape>();
      e.offset = t.at("byte_offset").get<std::uint64_t>();
      e.length = t.at("byte_length").get<std::uint64_t>();
    } catch (const json::exception& ex) {
      fail(ErrorKind::ManifestCorrupt, std::string("malformed tensor entry: ") + ex.what());
    }
    require(e.dtype == "f32" || e.dtype == "f64", ErrorKind::ManifestCorrupt, name + ": unknown dtype " + e.dtype);
    const std::size_t width = e.dtype == "f32" ? 4 : 8;
    require(shape_numel(e.shape) * width == e.length, ErrorKind::ManifestCorrupt,
            name + ": shape " + shape_string(e.shape) + " disagrees with byte_length " + std::to_string(e.length));
    require(e.offset <= payload && e.length <= payload - e.offset, ErrorKind::TruncatedPayload,
            name + ": payload extends past end of file");
    require(out.emplace(name, e).second, ErrorKind::ManifestCorrupt, "duplicate tensor " + name);
  }
  return out;
}

template <typename T>
Tensor<T> read_tensor(const RawFile& f, const std::map<std::string, Entry>& entries, const std::string& name,
                      const Shape& expected) {
  const auto it = entries.find(name);
  require(it != entries.end(), ErrorKind::ManifestCorrupt, "checkpoint is missing tensor " + name);
  const Entry& e = it->second;
  require(e.shape == expected, ErrorKind::ManifestCorrupt,
          name + ": stored shape " + shape_string(e.shape) + ", model expects " + shape_string(expected));
  Tensor<T> t(expected);
  auto dst = t.data_mut();
  const char* src = f.bytes.data() + f.payload_start + e.offset;
  if (e.dtype == dtype_name<T>()) {
    std::memcpy(dst.data(), src, e.length);
  } else if (e.dtype == "f32") {
    for (std::size_t i = 0; i < dst.size(); ++i) {
      float v;
      std::memcpy(&v, src + 4 * i, 4);
      dst[i] = static_cast<T>(v);
    }
  } else {
    for (std::size_t i = 0; i < dst.size(); ++i) {
      double v;
      std::memcpy(&v, src + 8 * i, 8);
      dst[i] = static_cast<T>(v);
    }
  }
  return t;
}

}  // namespace

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const model::VimModel<T>& model, const OptimState<T>* optim) {
  std::vector<std::pair<std::string, Tensor<T>>> tensors = model::named_parameters(model);
  const std::size_t num_params = tensors.size();
  if (optim != nullptr) {
    require(optim->names.size() == num_params, ErrorKind::ShapeMismatch, "optimizer does not match model");
    for (std::size_t k = 0; k < num_params; ++k) tensors.emplace_back("optim.m." + optim->names[k], optim->m[k]);
    for (std::size_t k = 0; k < num_params; ++k) tensors.emplace_back("optim.v." + optim->names[k], optim->v[k]);
  }

  json manifest;
  manifest["config"] = json::parse(model::to_json(model.config));
  manifest["tensors"] = json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    const std::uint64_t len = t.numel() * sizeof(T);
    manifest["tensors"].push_back(
        {{"name", name}, {"dtype", dtype_name<T>()}, {"shape", t.shape()}, {"byte_offset", offset}, {"byte_length", len}});
    offset += len;
  }
  if (optim != nullptr)
    manifest["optimizer"] = {{"step", optim->step},   {"lr", optim->lr},   {"beta1", optim->beta1},
                             {"beta2", optim->beta2}, {"eps", optim->eps}, {"weight_decay", optim->weight_decay}};

  const std::string text = manifest.dump();
  std::string out;
  out.reserve(16 + text.size() + offset);
  out.append(kMagic, 4);
  put_le(out, kCheckpointVersion);
  put_le(out, static_cast<std::uint64_t>(text.size()));
  out += text;
  for (const auto& [name, t] : tensors)
    out.append(reinterpret_cast<const char*>(t.data().data()), t.numel() * sizeof(T));

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(f), ErrorKind::InvalidArgument, "cannot write checkpoint " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  require(static_cast<bool>(f), ErrorKind::InvalidArgument, "failed writing checkpoint " + path.string());
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
  const RawFile f = read_raw(path);
  model::ModelConfig config;
  try {
    config = model::model_config_from_json(f.manifest["config"].dump());
  } catch (const Error& e) {
    fail(ErrorKind::ManifestCorrupt, path.string() + ": bad config in manifest: " + e.what());
  }
  const auto entries = index_entries(f);

  Checkpoint<T> ck;
  ck.model.config = config;
  // Build the parameter structure without touching an RNG, then fill by name.
  std::map<std::string, Shape> shapes;
  for (auto& [name, shape] : model::parameter_shapes(config)) shapes.emplace(name, shape);
  {
    const auto J = model::token_grid(config.img_h, config.img_w, config.P, config.stride).count();
    auto& m = ck.model;
    const auto ncls = model::class_token_count(config.cls_strategy);
    m.embed.W_proj = Tensor<T>({config.P * config.P * config.in_channels, config.D});
    m.embed.pos = Tensor<T>({model::num_tokens(config.cls_strategy, J), config.D});
    if (ncls >= 1) m.embed.cls = Tensor<T>({config.D});
    if (ncls == 2) m.embed.cls_tail = Tensor<T>({config.D});
    for (std::size_t l = 0; l < config.L; ++l) {
      model::VimBlockParams<T> b;
      b.dir_fwd.conv = model::ConvParams<T>{};
      if (config.linear_bias) b.b_x = b.b_z = b.b_T = Tensor<T>({1});  // placeholders, replaced below
      if (model::needs_backward_params(config.bidir_strategy)) {
        b.dir_bwd = model::SsmDirectionParams<T>{};
        if (config.bidir_strategy == model::BidirStrategy::BidirSSMConv1d) b.dir_bwd->conv = model::ConvParams<T>{};
      }
      m.blocks.push_back(std::move(b));
    }
  }
  std::vector<std::string> names;
  model::visit_parameters(ck.model, [&](const std::string& name, Tensor<T>& t) {
    const auto it = shapes.find(name);
    if (it == shapes.end()) return;  // bias slots absent from this config
    t = read_tensor<T>(f, entries, name, it->second);
    names.push_back(name);
  });
  require(names.size() == shapes.size(), ErrorKind::ManifestCorrupt, "checkpoint parameter set is incomplete");

  if (f.manifest.contains("optimizer")) {
    const auto& o = f.manifest["optimizer"];
    OptimState<T> s;
    try {
      s.step = o.at("step").get<std::uint64_t>();
      s.lr = o.at("lr").get<double>();
      s.beta1 = o.at("beta1").get<double>();
      s.beta2 = o.at("beta2").get<double>();
      s.eps = o.at("eps").get<double>();
      s.weight_decay = o.at("weight_decay").get<double>();
    } catch (const json::exception& e) {
      fail(ErrorKind::ManifestCorrupt, std::string("malformed optimizer section: ") + e.what());
    }
    for (const auto& name : names) {
      const Shape& shape = shapes.at(name);
      s.names.push_back(name);
      s.m.push_back(read_tensor<T>(f, entries, "optim.m." + name, shape));
      s.v.push_back(read_tensor<T>(f, entries, "optim.v." + name, shape));
      s.decay.push_back(applies_weight_decay(name, shape) ? 1 : 0);
    }
    ck.optim = std::move(s);
  }
  return ck;
}

std::string checkpoint_dtype(const std::filesystem::path& path) {
  const RawFile f = read_raw(path);
  const auto entries = index_entries(f);
  require(!entries.empty(), ErrorKind::ManifestCorrupt, "checkpoint holds no tensors");
  return f.manifest["tensors"][0]["dtype"].get<std::string>();
}

template void save_checkpoint(const std::filesystem::path&, const model::VimModel<float>&, const OptimState<float>*);
template void save_checkpoint(const std::filesystem::path&, const model::VimModel<double>&, const OptimState<double>*);
template Checkpoint<float> load_checkpoint<float>(const std::filesystem::path&);
template Checkpoint<double> load_checkpoint<double>(const std::filesystem::path&);

}  // namespace vim::train
