#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <spdlog/cfg/helpers.h>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "cubcal/cli.hpp"

namespace {

void setup_logging() {
  auto logger = spdlog::stderr_logger_st("cubcal");
  logger->set_pattern("[%l] %v");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::info);
  // CUB_LOG accepts spdlog level names: trace, debug, info, warn, err, off.
  if (const char* lvl = std::getenv("CUB_LOG")) spdlog::cfg::helpers::load_levels(lvl);
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();

  CLI::App app{"Boundary-curve calibration toolkit: synthetic data, variational training, DTS, metrics."};
  app.require_subcommand(1);
  app.fallthrough();

  cubcal::cli::Context ctx;
  std::string config;
  std::uint64_t seed = 0;
  app.add_option("--config", config, "Run configuration JSON");
  auto* seed_opt = app.add_option("--seed", seed, "Override the configured seed");
  app.add_option("--out", ctx.out_dir, "Output directory")->capture_default_str();
  app.add_option("--workers", ctx.workers, "Threads for per-record inference")->check(CLI::Range(1, 64));

  auto* boundary = app.add_subcommand("boundary", "Write the boundary curve as CSV");
  std::optional<int> k;
  std::optional<double> gamma;
  int points = 101;
  boundary->add_option("--k", k, "Number of classes");
  boundary->add_option("--gamma", gamma, "Confidence threshold");
  boundary->add_option("--points", points, "Number of rows")->capture_default_str();

  auto* synth = app.add_subcommand("synth", "Generate the synthetic corpus as CSV");
  auto* train = app.add_subcommand("train", "Train the variational classifier and dump MC logits");

  auto* calibrate = app.add_subcommand("calibrate", "Fit dual temperatures on a validation dump");
  std::string val_dump;
  std::string test_dump;
  calibrate->add_option("--val", val_dump, "Validation logit dump (JSON Lines)")->required();
  calibrate->add_option("--test", test_dump, "Test logit dump (JSON Lines)")->required();

  auto* eval = app.add_subcommand("eval", "Compute the calibration report for a logit dump");
  std::string eval_dump;
  bool bins_csv = false;
  eval->add_option("--dump", eval_dump, "Logit dump (JSON Lines)")->required();
  eval->add_flag("--bins-csv", bins_csv, "Also write per-bin diagnostics");

  auto* ood = app.add_subcommand("ood", "Score ID vs OOD separation");
  std::string id_dump;
  std::string ood_dump;
  std::optional<std::string> temps;
  ood->add_option("--id", id_dump, "In-distribution logit dump")->required();
  ood->add_option("--ood", ood_dump, "Out-of-distribution logit dump")->required();
  ood->add_option("--temps", temps, "Temperature pair JSON from calibrate");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  if (!config.empty()) ctx.config_path = config;
  if (seed_opt->count() > 0) ctx.seed = seed;

  try {
    if (boundary->parsed()) cubcal::cli::cmd_boundary(ctx, k, gamma, points);
    if (synth->parsed()) cubcal::cli::cmd_synth(ctx);
    if (train->parsed()) cubcal::cli::cmd_train(ctx);
    if (calibrate->parsed()) cubcal::cli::cmd_calibrate(ctx, val_dump, test_dump);
    if (eval->parsed()) cubcal::cli::cmd_eval(ctx, eval_dump, bins_csv);
    if (ood->parsed()) cubcal::cli::cmd_ood(ctx, id_dump, ood_dump, temps);
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return cubcal::cli::exit_code_for(e);
  }
  return 0;
}
