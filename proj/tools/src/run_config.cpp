// SPDX-License-Identifier: Apache-2.0
#include "vim_cli/run_config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "vim/error.hpp"

namespace vim::cli {

using json = nlohmann::ordered_json;

namespace {

[[noreturn]] void bad(const std::string& msg) { fail(ErrorKind::ConfigInvalid, msg); }

std::size_t get_count(const json& v, const std::string& key) {
  if (!v.is_number_integer() || v.get<long long>() < 0) bad(key + " must be a non-negative integer");
  return v.get<std::size_t>();
}

double get_number(const json& v, const std::string& key) {
  if (!v.is_number()) bad(key + " must be a number");
  return v.get<double>();
}

bool get_bool(const json& v, const std::string& key) {
  if (!v.is_boolean()) bad(key + " must be a boolean");
  return v.get<bool>();
}

std::string get_string(const json& v, const std::string& key) {
  if (!v.is_string()) bad(key + " must be a string");
  return v.get<std::string>();
}

void parse_train(const json& j, train::TrainConfig& t) {
  for (const auto& [k, v] : j.items()) {
    const std::string key = "train." + k;
    if (k == "epochs") t.epochs = get_count(v, key);
    else if (k == "batch_size") t.batch_size = get_count(v, key);
    else if (k == "base_lr") t.base_lr = get_number(v, key);
    else if (k == "min_lr") t.min_lr = get_number(v, key);
    else if (k == "warmup_epochs") t.warmup_epochs = get_count(v, key);
    else if (k == "weight_decay") t.weight_decay = get_number(v, key);
    else if (k == "label_smoothing") t.label_smoothing = get_number(v, key);
    else if (k == "flip_augment") t.flip_augment = get_bool(v, key);
    else if (k == "flip_probability") t.flip_probability = get_number(v, key);
    else if (k == "seed") t.seed = get_count(v, key);
    else bad("unknown key '" + key + "'");
  }
}

void parse_data(const json& j, train::ToyDatasetSpec& d) {
  for (const auto& [k, v] : j.items()) {
    const std::string key = "data." + k;
    if (k == "num_classes") d.num_classes = get_count(v, key);
    else if (k == "img_size") d.img_size = get_count(v, key);
    else if (k == "channels") d.channels = get_count(v, key);
    else if (k == "samples_per_class") d.samples_per_class = get_count(v, key);
    else if (k == "generator_seed") d.generator_seed = get_count(v, key);
    else if (k == "class_geometry") d.class_geometry = train::parse_class_geometry(get_string(v, key));
    else if (k == "noise") d.noise = get_number(v, key);
    else if (k == "jitter") d.jitter = get_number(v, key);
    else bad("unknown key '" + key + "'");
  }
}

void parse_bench(const json& j, BenchSection& b) {
  for (const auto& [k, v] : j.items()) {
    const std::string key = "bench." + k;
    if (k == "seq_lens") {
      if (!v.is_array()) bad(key + " must be an array of integers");
      b.seq_lens.clear();
      for (const auto& e : v) b.seq_lens.push_back(get_count(e, key));
    } else if (k == "repeats") b.repeats = get_count(v, key);
    else if (k == "warmup") b.warmup = get_count(v, key);
    else if (k == "D") b.D = get_count(v, key);
    else if (k == "N") b.N = get_count(v, key);
    else bad("unknown key '" + key + "'");
  }
}

}  // namespace

RunConfigFile parse_run_config(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    bad(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) bad("config must be a JSON object");
  RunConfigFile rc;
  // Data defaults follow the model unless the data section overrides them.
  bool data_given = false;
  for (const auto& [section, body] : j.items()) {
    if (!body.is_object()) bad("section '" + section + "' must be an object");
    if (section == "model") {
      json m = body;
      if (auto it = m.find("precision"); it != m.end()) {
        const auto p = get_string(*it, "model.precision");
        if (p == "f32") rc.precision = Precision::F32;
        else if (p == "f64") rc.precision = Precision::F64;
        else bad("model.precision must be \"f32\" or \"f64\"");
        m.erase("precision");
      }
      rc.model = model::model_config_from_json(m.dump());
    } else if (section == "train") {
      parse_train(body, rc.train);
    } else if (section == "data") {
      parse_data(body, rc.data);
      data_given = true;
    } else if (section == "bench") {
      parse_bench(body, rc.bench);
    } else {
      bad("unknown section '" + section + "'");
    }
  }
  if (!data_given) {
    rc.data.img_size = rc.model.img_h;
    rc.data.channels = rc.model.in_channels;
    rc.data.num_classes = rc.model.num_classes;
  }
  rc.model.validate();
  rc.train.validate();
  rc.data.validate();
  if (rc.model.img_h != rc.data.img_size || rc.model.img_w != rc.data.img_size)
    bad("data.img_size " + std::to_string(rc.data.img_size) + " does not match the model image " +
        std::to_string(rc.model.img_h) + "x" + std::to_string(rc.model.img_w));
  if (rc.model.in_channels != rc.data.channels) bad("data.channels does not match model.in_channels");
  if (rc.model.num_classes != rc.data.num_classes) bad("data.num_classes does not match model.num_classes");
  return rc;
}

RunConfigFile load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) bad("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_run_config(ss.str());
  } catch (const Error& e) {
    std::string msg = e.what();
    const std::string prefix = std::string(to_string(e.kind())) + ": ";
    if (msg.rfind(prefix, 0) == 0) msg.erase(0, prefix.size());
    fail(e.kind(), path.string() + ": " + msg);
  }
}

std::string to_json(const RunConfigFile& rc) {
  json j;
  j["model"] = json::parse(model::to_json(rc.model));
  j["model"]["precision"] = rc.precision == Precision::F32 ? "f32" : "f64";
  const auto& t = rc.train;
  j["train"] = {{"epochs", t.epochs},
                {"batch_size", t.batch_size},
                {"base_lr", t.base_lr},
                {"min_lr", t.min_lr},
                {"warmup_epochs", t.warmup_epochs},
                {"weight_decay", t.weight_decay},
                {"label_smoothing", t.label_smoothing},
                {"flip_augment", t.flip_augment},
                {"flip_probability", t.flip_probability},
                {"seed", t.seed}};
  const auto& d = rc.data;
  j["data"] = {{"num_classes", d.num_classes},
               {"img_size", d.img_size},
               {"channels", d.channels},
               {"samples_per_class", d.samples_per_class},
               {"generator_seed", d.generator_seed},
               {"class_geometry", std::string(train::to_string(d.class_geometry))},
               {"noise", d.noise},
               {"jitter", d.jitter}};
  j["bench"] = {{"seq_lens", rc.bench.seq_lens},
                {"repeats", rc.bench.repeats},
                {"warmup", rc.bench.warmup},
                {"D", rc.bench.D},
                {"N", rc.bench.N}};
  return j.dump(2);
}

std::vector<std::size_t> parse_size_list(std::string_view csv) {
  std::vector<std::size_t> out;
  std::size_t start = 0;
  while (start <= csv.size()) {
    const std::size_t end = std::min(csv.find(',', start), csv.size());
    const auto tok = csv.substr(start, end - start);
    std::size_t v = 0;
    const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (tok.empty() || ec != std::errc() || ptr != tok.data() + tok.size() || v == 0)
      bad("'" + std::string(csv) + "' is not a comma-separated list of positive integers");
    out.push_back(v);
    start = end + 1;
  }
  return out;
}

}  // namespace vim::cli
