// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "vim/config.hpp"
#include "vim/dataset.hpp"
#include "vim/train.hpp"

namespace vim::cli {

enum class Precision { F32, F64 };

struct BenchSection {
  std::vector<std::size_t> seq_lens{256, 512, 1024, 2048, 4096};
  std::size_t repeats = 7;
  std::size_t warmup = 2;
  std::size_t D = 64;
  std::size_t N = 16;
};

// JSON document with optional sections "model", "train", "data", "bench".
// Every key has a default; unknown sections or keys are rejected.
struct RunConfigFile {
  model::ModelConfig model;
  Precision precision = Precision::F32;  // model.precision: "f32" | "f64"
  train::TrainConfig train;
  train::ToyDatasetSpec data;
  BenchSection bench;
};

// Throws Error(ConfigInvalid) for malformed documents, unknown keys and
// inconsistent sections (e.g. data.img_size differing from the model image).
RunConfigFile parse_run_config(std::string_view json_text);
RunConfigFile load_run_config(const std::filesystem::path& path);

std::string to_json(const RunConfigFile& rc);

// "256,512,1024" -> {256, 512, 1024}
std::vector<std::size_t> parse_size_list(std::string_view csv);

}  // namespace vim::cli
