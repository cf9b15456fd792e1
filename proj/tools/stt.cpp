// SPDX-License-Identifier: Apache-2.0
//
// stt command-line driver: verify, train, eval, perturb-sweep, bench.
// Exit codes: 0 success, 1 failed check, 2 usage or configuration error.

#include <CLI11.hpp>
#include <fmt/core.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>

#include "stt/stt.hpp"

namespace fs = std::filesystem;
using namespace stt;

namespace {

constexpr int kOk = 0;
constexpr int kCheckFailed = 1;
constexpr int kUsage = 2;

void setup_logging() {
  auto log = spdlog::stderr_color_mt("stt");
  spdlog::set_default_logger(log);
  spdlog::set_pattern("[%H:%M:%S.%e] [%^%l%$] %v");
  spdlog::set_level(spdlog::level::info);
  if (const char* lvl = std::getenv("STT_LOG_LEVEL")) spdlog::set_level(spdlog::level::from_str(lvl));
}

int run_verify(std::uint64_t seed) {
  VerifyOptions opts;
  opts.seed = seed;
  const VerifyReport rep = verify(opts);
  fmt::print("{:<34} {:>12} {:>10}  {}\n", "check", "max_error", "tolerance", "result");
  for (const CheckResult& c : rep.checks) {
    fmt::print("{:<34} {:>12.3e} {:>10.1e}  {}", c.name, c.max_error, c.tolerance,
               c.pass ? "PASS" : "FAIL");
    if (!c.detail.empty()) fmt::print("  ({})", c.detail);
    fmt::print("\n");
  }
  fmt::print("{} checks in {:.2f} s: {}\n", rep.checks.size(), rep.seconds,
             rep.ok() ? "all passed" : "FAILED");
  return rep.ok() ? kOk : kCheckFailed;
}

int run_train(const std::string& config_path, const std::string& out_dir) {
  const ExperimentConfig cfg = load_config(config_path);
  const Split data = load_data(cfg);
  spdlog::info("model {}: {} train / {} test images, {} epochs", cfg.model.tag, data.train.size(),
               data.test.size(), cfg.training.epochs);
  fs::create_directories(out_dir);

  TrainOptions opts;
  opts.on_epoch = [](const EpochMetrics& m) {
    spdlog::info("epoch {:>3}  loss {:.5f}  train {:.4f}  test {:.4f}", m.epoch, m.loss,
                 m.train_accuracy, m.test_accuracy);
    return true;
  };
  const auto t0 = std::chrono::steady_clock::now();
  const TrainResult r = train(cfg, data, opts);
  spdlog::info("trained in {:.1f} s",
               std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());

  const fs::path out(out_dir);
  save_checkpoint((out / "model.ckpt").string(), r.model, r.params, cfg);
  {
    std::ofstream epochs(out / "epochs.csv", std::ios::binary | std::ios::trunc);
    epochs << "epoch,loss,train_accuracy,test_accuracy\n";
    for (const EpochMetrics& m : r.history)
      epochs << m.epoch << ',' << format_number(m.loss) << ',' << format_number(m.train_accuracy)
             << ',' << format_number(m.test_accuracy) << '\n';
  }
  std::ofstream(out / "config.json", std::ios::binary | std::ios::trunc) << serialize(cfg);
  spdlog::info("wrote {}", (out / "model.ckpt").string());
  return kOk;
}

struct Loaded {
  ExperimentConfig cfg;
  Model model;
  std::vector<Tensor> params;
};

Loaded load_trained(const std::string& ckpt_path, const std::string& config_path) {
  ExperimentConfig cfg = load_config(config_path);
  Model model = build_model(cfg);
  Checkpoint ck = load_checkpoint(ckpt_path);
  check_compatible(ck, model, cfg);
  return {std::move(cfg), std::move(model), std::move(ck.params)};
}

int run_eval(const std::string& ckpt_path, const std::string& config_path) {
  const Loaded l = load_trained(ckpt_path, config_path);
  const Split data = load_data(l.cfg);
  fmt::print("model {}\n", l.cfg.model.tag);
  fmt::print("train_accuracy {}\n", format_number(accuracy(l.model, l.params, data.train)));
  fmt::print("test_accuracy {}\n", format_number(accuracy(l.model, l.params, data.test)));
  return kOk;
}

int run_sweep(const std::string& ckpt_path, const std::string& config_path,
              const std::string& csv_path, bool wall_time) {
  const Loaded l = load_trained(ckpt_path, config_path);
  const Split data = load_data(l.cfg);
  const auto rows = perturb_sweep(l.model, l.params, data.test, l.cfg.model.tag, l.cfg.evaluation,
                                  l.cfg.training.seed, wall_time);
  write_csv(csv_path, rows);
  spdlog::info("{} records written to {}", rows.size(), csv_path);
  return kOk;
}

int run_bench(std::size_t max_side, std::size_t repeats) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  auto rand_matrix = [&](std::size_t r, std::size_t c) {
    Matrix m(r, c);
    for (double& v : m.data()) v = u(rng);
    return m;
  };
  using clock = std::chrono::steady_clock;
  fmt::print("{:>6} {:>11} {:>14} {:>14} {:>8} {:>12} {:>12}\n", "n", "factors", "dense_madds",
             "factored_madds", "ratio", "dense_us", "factored_us");
  bool contract = true;
  for (std::size_t side = 2; side <= max_side; side *= 2) {
    const std::size_t n = side * side;
    const KroneckerFactoredMap map({rand_matrix(side, side), rand_matrix(side, side)});
    const Matrix dense = map.materialize();
    Tensor x({n});
    for (double& v : x.data()) v = u(rng);

    OpCount dc, fc;
    (void)mode_n_product(x, dense, 0, &dc);
    (void)map.apply(x.data(), &fc);

    double sink = 0.0;
    auto t0 = clock::now();
    for (std::size_t r = 0; r < repeats; ++r) sink += mode_n_product(x, dense, 0)[0];
    const double dense_us =
        std::chrono::duration<double, std::micro>(clock::now() - t0).count() / double(repeats);
    t0 = clock::now();
    for (std::size_t r = 0; r < repeats; ++r) sink += map.apply(x.data())[0];
    const double fact_us =
        std::chrono::duration<double, std::micro>(clock::now() - t0).count() / double(repeats);
    spdlog::debug("checksum {}", sink);

    const double ratio = double(fc.multiply_adds) / double(dc.multiply_adds);
    fmt::print("{:>6} {:>11} {:>14} {:>14} {:>8.4f} {:>12.2f} {:>12.2f}\n", n,
               fmt::format("{0}x{0}(x){0}x{0}", side), dc.multiply_adds, fc.multiply_adds, ratio,
               dense_us, fact_us);
    if (n == 1024 && !(8 * fc.multiply_adds < dc.multiply_adds)) contract = false;
  }
  if (max_side >= 32)
    fmt::print("1024 factored/dense multiply-adds below 1/8: {}\n", contract ? "yes" : "NO");
  return contract ? kOk : kCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"Tensor synthesizer attention experiments"};
  app.require_subcommand(1);

  auto* verify_cmd = app.add_subcommand("verify", "run the numerical oracle suite");
  std::uint64_t verify_seed = 7;
  verify_cmd->add_option("--seed", verify_seed, "RNG seed for the random instances");

  std::string config, out, checkpoint, csv;
  auto* train_cmd = app.add_subcommand("train", "train a model from a config");
  train_cmd->add_option("--config", config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--out", out, "output directory")->required();

  auto* eval_cmd = app.add_subcommand("eval", "clean accuracy of a checkpoint");
  eval_cmd->add_option("--checkpoint", checkpoint, "model.ckpt from train")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--config", config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);

  bool wall_time = false;
  auto* sweep_cmd = app.add_subcommand("perturb-sweep", "accuracy under noise, rotation and flips");
  sweep_cmd->add_option("--checkpoint", checkpoint, "model.ckpt from train")->required()->check(CLI::ExistingFile);
  sweep_cmd->add_option("--config", config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
  sweep_cmd->add_option("--csv", csv, "output CSV path")->required();
  sweep_cmd->add_flag("--wall-time", wall_time, "record wall_ms (makes output nondeterministic)");

  std::size_t max_side = 32, repeats = 50;
  auto* bench_cmd = app.add_subcommand("bench", "factored vs dense Kronecker apply");
  bench_cmd->add_option("--max-side", max_side, "largest factor side (map is side^2 square)")
      ->check(CLI::Range(2, 128));
  bench_cmd->add_option("--repeats", repeats, "timing repetitions")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*verify_cmd) return run_verify(verify_seed);
    if (*train_cmd) return run_train(config, out);
    if (*eval_cmd) return run_eval(checkpoint, config);
    if (*sweep_cmd) return run_sweep(checkpoint, config, csv, wall_time);
    if (*bench_cmd) return run_bench(max_side, repeats);
  } catch (const ConfigError& e) {
    spdlog::error("{}", e.what());
    return kUsage;
  } catch (const CheckpointError& e) {
    spdlog::error("{}", e.what());
    return kUsage;
  } catch (const DataError& e) {
    spdlog::error("{}", e.what());
    return kUsage;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kCheckFailed;
  }
  return kUsage;
}
