// SPDX-License-Identifier: Apache-2.0
#include "vim_cli/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "vim/bench.hpp"
#include "vim/checkpoint.hpp"
#include "vim/error.hpp"
#include "vim/train.hpp"
#include "vim/verify.hpp"
#include "vim_cli/run_config.hpp"

namespace vim::cli {

namespace fs = std::filesystem;

namespace {

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::ConfigInvalid:
    case ErrorKind::IndivisibleImage:
    case ErrorKind::InsufficientPoints:
    case ErrorKind::InvalidArgument:
    case ErrorKind::StrategyMismatch:
    case ErrorKind::GridMismatch:
      return kExitConfig;
    case ErrorKind::BadMagic:
    case ErrorKind::VersionUnsupported:
    case ErrorKind::ManifestCorrupt:
    case ErrorKind::TruncatedPayload:
      return kExitPersistence;
    case ErrorKind::NonFinite:
    case ErrorKind::NonPositiveDelta:
    case ErrorKind::NonFiniteLoss:
    case ErrorKind::ShapeMismatch:
    case ErrorKind::DetachedTensor:
      return kExitNumeric;
  }
  return kExitNumeric;
}

std::string fmt_metric(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

void write_metrics(const fs::path& path, const std::vector<train::EpochMetrics>& metrics) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(f), ErrorKind::InvalidArgument, "cannot write " + path.string());
  f << "epoch,train_loss,val_top1,lr,wall_s\n";
  for (const auto& m : metrics)
    f << m.epoch << ',' << fmt_metric("%.9g", m.train_loss) << ',' << fmt_metric("%.6f", m.val_top1) << ','
      << fmt_metric("%.9g", m.lr) << ',' << fmt_metric("%.3f", m.wall_s) << '\n';
}

template <typename T>
void do_train(const RunConfigFile& rc, const fs::path& out_dir, std::ostream& err) {
  const auto ds = train::generate_dataset(rc.data);
  const auto result = train::train_model<T>(rc.model, ds, rc.train, [&](const train::EpochMetrics& m) {
    err << "epoch " << m.epoch << " loss " << fmt_metric("%.6f", m.train_loss) << " val_top1 "
        << fmt_metric("%.6f", m.val_top1) << '\n';
    return true;
  });
  fs::create_directories(out_dir);
  train::save_checkpoint(out_dir / "checkpoint.vimc", result.model, &result.optim);
  write_metrics(out_dir / "metrics.csv", result.metrics);
}

template <typename T>
double do_eval(const fs::path& ckpt, const RunConfigFile& rc) {
  const auto ck = train::load_checkpoint<T>(ckpt);
  const auto& mc = ck.model.config;
  require(mc.img_h == rc.data.img_size && mc.img_w == rc.data.img_size && mc.in_channels == rc.data.channels &&
              mc.num_classes == rc.data.num_classes,
          ErrorKind::ConfigInvalid, "data section does not match the checkpoint's model");
  const auto ds = train::generate_dataset(rc.data);
  return train::evaluate(ck.model, ds, ds.val_indices);
}

struct Handler {
  std::ostream& out;
  std::ostream& err;
  int code = kExitOk;

  template <typename F>
  void run(F&& f) {
    try {
      code = f();
    } catch (const Error& e) {
      err << "error: " << e.what() << '\n';
      code = exit_code_for(e.kind());
    } catch (const fs::filesystem_error& e) {
      err << "error: " << e.what() << '\n';
      code = kExitConfig;
    } catch (const std::exception& e) {
      err << "error: " << e.what() << '\n';
      code = kExitNumeric;
    }
  }
};

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Bidirectional state space vision backbone: train, evaluate, benchmark and verify", "vimcli"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);

  std::string train_config, train_out;
  std::optional<std::uint64_t> train_seed;
  auto* train_cmd = app.add_subcommand("train", "Train on the synthetic dataset; writes checkpoint.vimc and metrics.csv");
  train_cmd->add_option("--config", train_config, "Run configuration JSON")->required();
  train_cmd->add_option("--seed", train_seed, "Overrides train.seed");
  train_cmd->add_option("--out", train_out, "Output directory")->required();

  std::string eval_ckpt, eval_config;
  auto* eval_cmd = app.add_subcommand("eval", "Print validation top-1 of a checkpoint as top1=<float>");
  eval_cmd->add_option("--ckpt", eval_ckpt, "Checkpoint file")->required();
  eval_cmd->add_option("--config", eval_config, "Run configuration JSON (data section is used)")->required();

  std::string bench_mode = "flops", bench_target = "vim", bench_lens = "256,512,1024,2048,4096", bench_out = "-",
              bench_config;
  std::size_t bench_d = 64, bench_n = 16, bench_repeats = 7, bench_warmup = 2;
  bool bench_parallel = false;
  auto* bench_cmd = app.add_subcommand("bench", "FLOP formulas or measured runtime/memory scaling as CSV");
  bench_cmd->add_option("--mode", bench_mode, "flops | runtime | memory")
      ->check(CLI::IsMember({"flops", "runtime", "memory"}));
  bench_cmd->add_option("--target", bench_target, "vim | attention")->check(CLI::IsMember({"vim", "attention"}));
  bench_cmd->add_option("--seq-lens", bench_lens, "Comma-separated sequence lengths (at least 4)");
  bench_cmd->add_option("--out", bench_out, "CSV output path; - for standard output");
  bench_cmd->add_option("--config", bench_config, "Run configuration JSON; its bench section sets defaults");
  bench_cmd->add_option("--d", bench_d, "Hidden dimension D");
  bench_cmd->add_option("--n", bench_n, "SSM state dimension N");
  bench_cmd->add_option("--repeats", bench_repeats, "Timed repeats per point (median reported)");
  bench_cmd->add_option("--warmup", bench_warmup, "Discarded runs per point");
  bench_cmd->add_flag("--parallel", bench_parallel, "Allow internal parallelism while measuring");

  std::string verify_suite = "all", verify_fault = "none";
  std::uint64_t verify_seed = 0;
  auto* verify_cmd = app.add_subcommand("verify", "Run property suites; TAP output, exit 1 on any failure");
  verify_cmd->add_option("--suite", verify_suite, "grad | scan | equivalence | all")
      ->check(CLI::IsMember({"grad", "scan", "equivalence", "all"}));
  verify_cmd->add_option("--inject-fault", verify_fault, "none | scan (harness self-test)")
      ->check(CLI::IsMember({"none", "scan"}));
  verify_cmd->add_option("--seed", verify_seed, "Seed for the generated instances");

  std::vector<std::string> argv(args.rbegin(), args.rend());
  try {
    app.parse(argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    // Subcommand help requests surface here as well.
    if (e.get_exit_code() == 0) {
      for (auto* sub : app.get_subcommands()) out << sub->help();
      if (app.get_subcommands().empty()) out << app.help();
      return kExitOk;
    }
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  }

  Handler h{out, err};
  if (train_cmd->parsed()) {
    h.run([&] {
      auto rc = load_run_config(train_config);
      if (train_seed) rc.train.seed = *train_seed;
      if (rc.precision == Precision::F64)
        do_train<double>(rc, train_out, err);
      else
        do_train<float>(rc, train_out, err);
      return kExitOk;
    });
  } else if (eval_cmd->parsed()) {
    h.run([&] {
      const auto rc = load_run_config(eval_config);
      const double top1 = train::checkpoint_dtype(eval_ckpt) == "f64" ? do_eval<double>(eval_ckpt, rc)
                                                                      : do_eval<float>(eval_ckpt, rc);
      out << fmt_metric("top1=%.6f", top1) << '\n';
      return kExitOk;
    });
  } else if (bench_cmd->parsed()) {
    h.run([&] {
      bench::ScalingOptions opt;
      std::vector<std::size_t> lens;
      if (!bench_config.empty()) {
        const auto rc = load_run_config(bench_config);
        lens = rc.bench.seq_lens;
        opt.repeats = rc.bench.repeats;
        opt.warmup = rc.bench.warmup;
        opt.D = rc.bench.D;
        opt.N = rc.bench.N;
      }
      // Flags given explicitly win over the config file.
      if (lens.empty() || bench_cmd->count("--seq-lens") > 0) lens = parse_size_list(bench_lens);
      if (bench_config.empty() || bench_cmd->count("--d") > 0) opt.D = bench_d;
      if (bench_config.empty() || bench_cmd->count("--n") > 0) opt.N = bench_n;
      if (bench_config.empty() || bench_cmd->count("--repeats") > 0) opt.repeats = bench_repeats;
      if (bench_config.empty() || bench_cmd->count("--warmup") > 0) opt.warmup = bench_warmup;
      opt.parallel = bench_parallel;
      require(lens.size() >= 4, ErrorKind::InsufficientPoints,
              "bench needs at least 4 sequence lengths, got " + std::to_string(lens.size()));
      require(opt.D >= 1 && opt.N >= 1, ErrorKind::ConfigInvalid, "bench D and N must be positive");

      std::ostringstream csv;
      if (bench_mode == "flops") {
        std::vector<bench::FlopReport> rows;
        for (auto M : lens) rows.push_back(bench::flop_report(M, opt.D, opt.N));
        bench::write_flops_csv(csv, bench_target, rows);
      } else {
        const auto m = bench::measure_scaling(bench::parse_scaling_target(bench_target), lens, opt);
        bench::write_scaling_csv(csv, bench_target, opt, m,
                                 bench_mode == "runtime" ? bench::CsvMetric::Runtime : bench::CsvMetric::Memory);
      }
      if (bench_out == "-") {
        out << csv.str();
      } else {
        std::ofstream f(bench_out, std::ios::binary | std::ios::trunc);
        require(static_cast<bool>(f), ErrorKind::InvalidArgument, "cannot write " + bench_out);
        f << csv.str();
      }
      return kExitOk;
    });
  } else if (verify_cmd->parsed()) {
    h.run([&] {
      verify::VerifyOptions vo;
      vo.inject_scan_fault = verify_fault == "scan";
      vo.seed = verify_seed;
      const auto results = verify::run_suite(verify::parse_suite(verify_suite), vo);
      verify::write_tap(out, results);
      if (verify::all_passed(results)) return kExitOk;
      for (const auto& r : results)
        if (!r.ok) err << "failed: " << r.name << '\n';
      return kExitPropertyFailure;
    });
  }
  return h.code;
}

}  // namespace vim::cli
