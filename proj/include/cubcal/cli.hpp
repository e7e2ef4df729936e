#pragma once

// Command implementations behind the `cubcal` executable. Each command reads
// its inputs, writes its artifacts under `out_dir`, and reports failures as
// exceptions that the entry point maps to exit codes:
//   SchemaError                        -> 2
//   anything else (numeric, I/O, ...)  -> 3

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <system_error>
#include <vector>

#include <spdlog/spdlog.h>

#include "cubcal/config.hpp"
#include "cubcal/dts.hpp"
#include "cubcal/errors.hpp"
#include "cubcal/io.hpp"
#include "cubcal/metrics.hpp"
#include "cubcal/pipeline.hpp"
#include "cubcal/prob_core.hpp"

namespace cubcal::cli {

struct Context {
  std::optional<std::string> config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir = ".";
  int workers = 1;
};

inline int exit_code_for(const std::exception& e) {
  return dynamic_cast<const SchemaError*>(&e) != nullptr ? 2 : 3;
}

/// Config from --config (or defaults) with --seed applied on top.
inline RunConfig resolve_config(const Context& ctx) {
  RunConfig c = ctx.config_path ? load_run_config(*ctx.config_path) : RunConfig{};
  if (ctx.seed) c.set_seed(*ctx.seed);
  return c;
}

inline std::string out_path(const Context& ctx, const std::string& name) {
  std::error_code ec;
  std::filesystem::create_directories(ctx.out_dir, ec);
  if (ec) throw IoError("cannot create output directory '" + ctx.out_dir + "': " + ec.message());
  return (std::filesystem::path(ctx.out_dir) / name).string();
}

namespace detail {

/// Boundary for a dump with `k` classes: the config's when one was given
/// (and it must agree), else the default gamma at the dump's K.
inline BoundaryConfig boundary_for(const Context& ctx, RunConfig& c, int k) {
  if (ctx.config_path) {
    if (c.k != k) {
      throw SchemaError("dump has K = " + std::to_string(k) + " but the config says boundary.k = " +
                        std::to_string(c.k));
    }
  } else {
    c.k = k;
  }
  try {
    return c.boundary();
  } catch (const std::exception& e) {
    throw SchemaError(std::string("boundary: ") + e.what());
  }
}

inline void require_labels(std::span<const PredictionRecord> rs, const std::string& source) {
  for (const auto& r : rs) {
    if (r.label < 0) throw SchemaError(source + ": record '" + r.id + "' has no label");
  }
}

inline DtsThresholds thresholds_for(const RunConfig& c) {
  try {
    return c.thresholds();
  } catch (const std::exception& e) {
    throw SchemaError(std::string("dts thresholds: ") + e.what());
  }
}

}  // namespace detail

/// Writes boundary.csv with `points` rows spanning confidence [1/K, 1].
inline void cmd_boundary(const Context& ctx, std::optional<int> k, std::optional<double> gamma, int points) {
  RunConfig c = resolve_config(ctx);
  if (k) c.k = *k;
  if (gamma) c.gamma = *gamma;
  BoundaryConfig bc = [&] {
    try {
      return c.boundary();
    } catch (const std::exception& e) {
      throw SchemaError(std::string("boundary: ") + e.what());
    }
  }();
  if (points < 2) throw SchemaError("boundary: --points must be >= 2");
  const auto path = out_path(ctx, "boundary.csv");
  io::write_text(path, io::boundary_csv(boundary_curve(bc, points)));
  spdlog::info("wrote {} ({} rows)", path, points);
}

/// Writes train.csv, val.csv, test.csv and, when enabled, ood.csv.
inline void cmd_synth(const Context& ctx) {
  const RunConfig c = resolve_config(ctx);
  const Corpus corpus = make_corpus(c);
  io::write_text(out_path(ctx, "train.csv"), io::dataset_csv(corpus.train));
  io::write_text(out_path(ctx, "val.csv"), io::dataset_csv(corpus.val));
  io::write_text(out_path(ctx, "test.csv"), io::dataset_csv(corpus.test));
  if (corpus.ood) io::write_text(out_path(ctx, "ood.csv"), io::dataset_csv(*corpus.ood));
  spdlog::info("synth: train {} val {} test {} ood {}", corpus.train.size(), corpus.val.size(), corpus.test.size(),
               corpus.ood ? corpus.ood->size() : 0);
}

/// Trains on the configured corpus and writes checkpoint.json, trace.json,
/// config.json, and MC logit dumps val.jsonl, test.jsonl (and ood.jsonl).
inline void cmd_train(const Context& ctx) {
  const RunConfig c = resolve_config(ctx);
  const std::string hash = config_hash(c);
  spdlog::info("train: config hash {}, seed {}", hash, c.seed);
  const Corpus corpus = make_corpus(c);
  const bnn::TrainResult res = train_model(c, corpus);
  for (const auto& e : res.trace) {
    spdlog::debug("epoch {}: nll {:.4f} kl {:.4f} cub {:.4f} val_acc {:.3f} val_avu {:.3f}", e.epoch, e.nll, e.kl,
                  e.cub, e.val_acc, e.val_avu);
  }

  io::write_text(out_path(ctx, "config.json"), io::dump_json(to_json(c)));
  io::write_text(out_path(ctx, "checkpoint.json"),
                 io::dump_json(io::checkpoint_json(res.net, io::CheckpointMeta{c.seed, hash})));
  io::Json trace = {{"config_hash", hash},
                    {"seed", c.seed},
                    {"pretrain", io::to_json(res.pretrain_trace)},
                    {"epochs", io::to_json(res.trace)}};
  io::write_text(out_path(ctx, "trace.json"), io::dump_json(trace));

  io::write_dump_file(out_path(ctx, "val.jsonl"), infer(c, res.net, corpus.val, ctx.workers));
  const auto test = infer(c, res.net, corpus.test, ctx.workers);
  io::write_dump_file(out_path(ctx, "test.jsonl"), test);
  if (corpus.ood) io::write_dump_file(out_path(ctx, "ood.jsonl"), infer(c, res.net, *corpus.ood, ctx.workers));
  spdlog::info("train: test accuracy {:.4f}", accuracy(test));
}

/// Fits the temperature pair on the validation dump and reports test metrics
/// before and after. Writes temperatures.json, calibration.json and
/// test_calibrated.jsonl.
inline void cmd_calibrate(const Context& ctx, const std::string& val_path, const std::string& test_path) {
  RunConfig c = resolve_config(ctx);
  const auto val = io::read_dump_file(val_path);
  const auto test = io::read_dump_file(test_path);
  detail::require_labels(val, val_path);
  detail::require_labels(test, test_path);
  const int k = batch_class_count(val);
  if (batch_class_count(test) != k) throw SchemaError("calibrate: validation and test dumps differ in K");
  const BoundaryConfig bc = detail::boundary_for(ctx, c, k);
  const DtsThresholds th = detail::thresholds_for(c);

  const TemperaturePair temps = fit_temperatures(val, bc, th, c.metrics.bins, c.fit);
  spdlog::info("calibrate: T_high {:.4f} T_low {:.4f}, val BCCE {:.6f} -> {:.6f}", temps.t_high, temps.t_low,
               temps.bcce_before, temps.bcce_after);

  const auto before = reference_records(test);
  const auto after = calibrate_dataset(test, temps);
  const double acc_before = accuracy(before);
  const double acc_after = accuracy(after);
  if (acc_before != acc_after) throw NumericFailure("calibrate: calibration changed test accuracy");

  io::Json report = {{"temperatures", io::to_json(temps)},
                     {"validation", {{"n", val.size()}, {"bcce_before", io::sig6(temps.bcce_before)},
                                     {"bcce_after", io::sig6(temps.bcce_after)}}},
                     {"test",
                      {{"before", io::to_json(evaluate(before, bc, c.metrics))},
                       {"after", io::to_json(evaluate(after, bc, c.metrics))}}},
                     {"accuracy_unchanged", true}};
  io::write_text(out_path(ctx, "temperatures.json"), io::dump_json(io::to_json(temps)));
  io::write_text(out_path(ctx, "calibration.json"), io::dump_json(report));
  io::write_dump_file(out_path(ctx, "test_calibrated.jsonl"), after);
}

/// Writes report.json and, if requested, bins.csv for one labeled dump.
inline void cmd_eval(const Context& ctx, const std::string& dump_path, bool bins_csv) {
  RunConfig c = resolve_config(ctx);
  const auto records = io::read_dump_file(dump_path);
  detail::require_labels(records, dump_path);
  const BoundaryConfig bc = detail::boundary_for(ctx, c, batch_class_count(records));
  const CalibrationReport rep = evaluate(records, bc, c.metrics);
  io::write_text(out_path(ctx, "report.json"), io::dump_json(io::to_json(rep)));
  if (bins_csv) io::write_text(out_path(ctx, "bins.csv"), io::bins_csv(rep.bins));
  spdlog::info("eval: n {} accuracy {:.4f} AvU {:.4f} BCCE {:.6f}", rep.n, rep.accuracy, rep.avu, rep.bcce);
}

/// Writes ood_report.json: entropy and negative-confidence AUROC/AUPR on the
/// raw records and, given a temperature file, on the calibrated ones.
inline void cmd_ood(const Context& ctx, const std::string& id_path, const std::string& ood_path,
                    const std::optional<std::string>& temps_path) {
  RunConfig c = resolve_config(ctx);
  const auto id = io::read_dump_file(id_path);
  const auto ood = io::read_dump_file(ood_path);
  const int k = batch_class_count(id);
  if (batch_class_count(ood) != k) throw SchemaError("ood: ID and OOD dumps differ in K");
  (void)detail::boundary_for(ctx, c, k);

  io::Json report = {{"n_id", id.size()}, {"n_ood", ood.size()}, {"raw", to_json(ood_scores(id, ood))}};
  if (temps_path) {
    const TemperaturePair temps =
        io::temperature_pair_from_json(io::parse_json(io::read_text(*temps_path), *temps_path), *temps_path);
    try {
      temps.thresholds.validate(k);
    } catch (const std::exception& e) {
      throw SchemaError(*temps_path + ": " + e.what());
    }
    const auto id_cal = calibrate_dataset(id, temps);
    const auto ood_cal = calibrate_dataset(ood, temps);
    report["calibrated"] = to_json(ood_scores(id_cal, ood_cal));
    report["temperatures"] = {{"t_high", io::sig6(temps.t_high)}, {"t_low", io::sig6(temps.t_low)}};
  }
  io::write_text(out_path(ctx, "ood_report.json"), io::dump_json(report));
  spdlog::info("ood: entropy AUROC {}", report["raw"]["entropy"]["auroc"].dump());
}

}  // namespace cubcal::cli
