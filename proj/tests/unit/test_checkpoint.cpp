// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>

#include <unistd.h>

#include "gen.hpp"
#include "json.hpp"
#include "vim/checkpoint.hpp"
#include "vim/error.hpp"
#include "vim/random.hpp"
#include "vim/train.hpp"

namespace vim::train {
namespace {

namespace fs = std::filesystem;
using vim::testing::Gen;

class CheckpointTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("vim_ckpt_" + std::to_string(::getpid()) + "_" +
                                        ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path path(const std::string& name) const { return dir_ / name; }

  static std::string read(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
  }
  static void write(const fs::path& p, const std::string& bytes) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  // Splits a file into (manifest json, payload) and reassembles with a new manifest.
  static nlohmann::ordered_json manifest(const std::string& bytes) {
    std::uint64_t len = 0;
    std::memcpy(&len, bytes.data() + 8, 8);
    return nlohmann::ordered_json::parse(bytes.substr(16, len));
  }
  static std::string with_manifest(const std::string& bytes, const nlohmann::ordered_json& j) {
    std::uint64_t len = 0;
    std::memcpy(&len, bytes.data() + 8, 8);
    const std::string text = j.dump();
    std::string out = bytes.substr(0, 8);
    const std::uint64_t n = text.size();
    out.append(reinterpret_cast<const char*>(&n), 8);
    return out + text + bytes.substr(16 + len);
  }

  template <typename T>
  static model::VimModel<T> micro_model(std::uint64_t seed, model::ClsStrategy cls = model::ClsStrategy::MiddleClassToken,
                                        model::BidirStrategy bidir = model::BidirStrategy::BidirSSMConv1d) {
    auto c = model::build_config(model::Variant::Micro);
    c.cls_strategy = cls;
    c.bidir_strategy = bidir;
    auto rng = make_stream(seed, kInitStream);
    return model::init_model<T>(c, rng);
  }

  static ErrorKind load_kind(const fs::path& p) {
    try {
      (void)load_checkpoint<float>(p);
    } catch (const Error& e) {
      return e.kind();
    }
    ADD_FAILURE() << "load succeeded";
    return ErrorKind::InvalidArgument;
  }

  fs::path dir_;
};

template <typename T>
void expect_same_model(const model::VimModel<T>& a, const model::VimModel<T>& b) {
  EXPECT_EQ(a.config, b.config);
  const auto pa = model::named_parameters(a), pb = model::named_parameters(b);
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i].first, pb[i].first);
    EXPECT_TRUE(bit_equal(pa[i].second, pb[i].second)) << pa[i].first;
  }
}

TEST_F(CheckpointTest, RoundTripBitExactAllStrategies) {
  using model::BidirStrategy;
  using model::ClsStrategy;
  for (const auto cls : {ClsStrategy::MeanPool, ClsStrategy::DoubleClassToken, ClsStrategy::MiddleClassToken})
    for (const auto bidir : {BidirStrategy::NoneForwardOnly, BidirStrategy::BidirSSM, BidirStrategy::BidirSSMConv1d}) {
      const auto m = micro_model<float>(3, cls, bidir);
      save_checkpoint(path("m.vimc"), m);
      const auto back = load_checkpoint<float>(path("m.vimc"));
      expect_same_model(m, back.model);
      EXPECT_FALSE(back.optim.has_value());
      EXPECT_EQ(checkpoint_dtype(path("m.vimc")), "f32");
    }
}

TEST_F(CheckpointTest, RoundTripIncludesOptimizerState) {
  Gen g(101);
  auto m = micro_model<double>(4);
  auto params = model::named_parameters(m);
  auto opt = init_optim(params, 3e-4, 0.05);
  for (auto& t : opt.m)
    for (auto& v : t.data_mut()) v = g.normal();
  for (auto& t : opt.v)
    for (auto& v : t.data_mut()) v = g.real(0, 1);
  opt.step = 17;
  opt.beta2 = 0.995;
  save_checkpoint(path("o.vimc"), m, &opt);
  const auto back = load_checkpoint<double>(path("o.vimc"));
  expect_same_model(m, back.model);
  ASSERT_TRUE(back.optim.has_value());
  const auto& o = *back.optim;
  EXPECT_EQ(o.names, opt.names);
  EXPECT_EQ(o.decay, opt.decay);
  EXPECT_EQ(o.step, 17u);
  EXPECT_EQ(o.lr, 3e-4);
  EXPECT_EQ(o.beta2, 0.995);
  EXPECT_EQ(o.weight_decay, 0.05);
  for (std::size_t i = 0; i < opt.m.size(); ++i) {
    EXPECT_TRUE(bit_equal(o.m[i], opt.m[i]));
    EXPECT_TRUE(bit_equal(o.v[i], opt.v[i]));
  }
  // Saving the loaded checkpoint reproduces the file byte for byte.
  save_checkpoint(path("o2.vimc"), back.model, &*back.optim);
  EXPECT_EQ(read(path("o.vimc")), read(path("o2.vimc")));
}

TEST_F(CheckpointTest, ManifestLayout) {
  save_checkpoint(path("m.vimc"), micro_model<float>(5));
  const auto bytes = read(path("m.vimc"));
  EXPECT_EQ(bytes.substr(0, 4), "VIMC");
  std::uint32_t version = 0;
  std::memcpy(&version, bytes.data() + 4, 4);
  EXPECT_EQ(version, kCheckpointVersion);
  const auto j = manifest(bytes);
  ASSERT_TRUE(j.contains("config"));
  ASSERT_TRUE(j.contains("tensors"));
  std::uint64_t expected_offset = 0;
  for (const auto& t : j["tensors"]) {
    EXPECT_EQ(t["dtype"], "f32");
    EXPECT_EQ(t["byte_offset"].get<std::uint64_t>(), expected_offset);
    std::uint64_t n = 4;
    for (const auto& e : t["shape"]) n *= e.get<std::uint64_t>();
    EXPECT_EQ(t["byte_length"].get<std::uint64_t>(), n);
    expected_offset += n;
  }
}

TEST_F(CheckpointTest, PrecisionConversionOnLoad) {
  const auto m = micro_model<float>(6);
  save_checkpoint(path("f.vimc"), m);
  const auto d = load_checkpoint<double>(path("f.vimc"));
  const auto a = model::named_parameters(m);
  const auto b = model::named_parameters(d.model);
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < a[i].second.numel(); ++k)
      EXPECT_EQ(static_cast<double>(a[i].second[k]), b[i].second[k]);
}

TEST_F(CheckpointTest, ErrorTaxonomy) {
  save_checkpoint(path("good.vimc"), micro_model<float>(7));
  const auto good = read(path("good.vimc"));

  auto bad = good;
  bad[0] = 'X';
  write(path("magic.vimc"), bad);
  EXPECT_EQ(load_kind(path("magic.vimc")), ErrorKind::BadMagic);

  bad = good;
  bad[4] = 9;
  write(path("version.vimc"), bad);
  EXPECT_EQ(load_kind(path("version.vimc")), ErrorKind::VersionUnsupported);

  write(path("short.vimc"), good.substr(0, 10));
  EXPECT_EQ(load_kind(path("short.vimc")), ErrorKind::TruncatedPayload);

  write(path("trunc.vimc"), good.substr(0, good.size() - 5));
  EXPECT_EQ(load_kind(path("trunc.vimc")), ErrorKind::TruncatedPayload);

  auto j = manifest(good);
  j["tensors"][0]["shape"][0] = j["tensors"][0]["shape"][0].get<std::uint64_t>() + 1;
  write(path("shape.vimc"), with_manifest(good, j));
  EXPECT_EQ(load_kind(path("shape.vimc")), ErrorKind::ManifestCorrupt);

  j = manifest(good);
  j["tensors"].erase(1);
  write(path("missing.vimc"), with_manifest(good, j));
  EXPECT_EQ(load_kind(path("missing.vimc")), ErrorKind::ManifestCorrupt);

  j = manifest(good);
  j["config"]["D"] = 65;
  write(path("config.vimc"), with_manifest(good, j));
  EXPECT_EQ(load_kind(path("config.vimc")), ErrorKind::ManifestCorrupt);

  bad = good;
  bad[17] = '#';
  write(path("json.vimc"), bad);
  EXPECT_EQ(load_kind(path("json.vimc")), ErrorKind::ManifestCorrupt);

  EXPECT_THROW((void)load_checkpoint<float>(path("absent.vimc")), Error);
}

}  // namespace
}  // namespace vim::train
