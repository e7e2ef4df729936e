#pragma once

// Run configuration: one JSON document with sections mirroring the module
// configs. Every section and key is optional (defaults below), unknown keys
// are errors, and messages name the offending field path.
//
// {
//   "seed": 42,
//   "boundary": {"gamma": 0.9, "k": 3},
//   "loss":     {"beta": 0.1, "warmup_epochs": 5},
//   "train":    {"epochs": 30, "batch_size": 32, "learning_rate": 0.01, ...},
//   "dts":      {"gamma_low": 0.9, "gamma_high": null, "eta": 0.325, "t_min": 0.25, "t_max": 8},
//   "metrics":  {"bins": 15, "u_th": 0.325},
//   "data":     {"dim": 8, "radius": 2.5, "n_per_class": [600], "split": {...}, "ood": {...}}
// }

#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "cubcal/bnn.hpp"
#include "cubcal/cub_loss.hpp"
#include "cubcal/dts.hpp"
#include "cubcal/errors.hpp"
#include "cubcal/io.hpp"
#include "cubcal/metrics.hpp"
#include "cubcal/prob_core.hpp"
#include "cubcal/synth_data.hpp"

namespace cubcal {

struct DataConfig {
  int dim = 8;
  double radius = 2.5;
  std::vector<double> centers;  ///< k x dim, empty for the default axis layout
  std::vector<double> spread{1.0};
  std::vector<int> n_per_class{600};
  double imbalance_ratio = 1.0;
  std::string preset;  ///< "" or "skewed7"
  int preset_total = 2000;
  SplitSpec split;
  bool ood = true;
  std::vector<double> ood_center;  ///< empty: next unused axis at `radius`
  double ood_spread = 1.0;
  int ood_n = 200;
  // Pre-split CSV corpora replace the synthetic generator when set.
  std::string train_csv;
  std::string val_csv;
  std::string test_csv;
  std::string ood_csv;
};

struct RunConfig {
  std::uint64_t seed = 42;
  double gamma = 0.9;
  int k = 3;
  LossWeights loss;
  bnn::TrainConfig train;
  double gamma_low = 0.9;
  std::optional<double> gamma_high;  ///< derived from eta when absent
  double eta = 0.325;
  DtsFitOptions fit;
  MetricParams metrics;
  DataConfig data;

  BoundaryConfig boundary() const { return BoundaryConfig(gamma, k); }
  DtsThresholds thresholds() const {
    if (gamma_high) {
      DtsThresholds th{gamma_low, *gamma_high, eta};
      th.validate(k);
      return th;
    }
    return DtsThresholds::derive(eta, gamma_low, k);
  }
  void set_seed(std::uint64_t s) {
    seed = s;
    train.seed = s;
  }
};

namespace config_detail {

inline const char* name(bnn::KlScale v) { return v == bnn::KlScale::PerStep ? "per_step" : "off"; }
inline const char* name(bnn::LrSchedule v) { return v == bnn::LrSchedule::Cosine ? "cosine" : "constant"; }
inline const char* name(bnn::TrainMode v) {
  switch (v) {
    case bnn::TrainMode::TwoStage: return "two_stage";
    case bnn::TrainMode::Moped: return "moped";
    default: return "direct";
  }
}

template <class E>
E parse_enum(const std::string& s, const std::string& where, std::initializer_list<std::pair<const char*, E>> options) {
  std::string allowed;
  for (const auto& [n, v] : options) {
    if (s == n) return v;
    allowed += allowed.empty() ? n : std::string(", ") + n;
  }
  throw SchemaError(where + ": '" + s + "' is not one of " + allowed);
}

inline void read_train(io::ObjectReader& r, bnn::TrainConfig& t) {
  r.read("epochs", t.epochs);
  r.read("batch_size", t.batch_size);
  r.read("learning_rate", t.learning_rate);
  r.read("momentum", t.momentum);
  r.read("weight_decay", t.weight_decay);
  r.read("mc_train", t.mc_train);
  r.read("mc_infer", t.mc_infer);
  r.read("mc_monitor", t.mc_monitor);
  r.read("hidden", t.hidden);
  r.read("prior_std", t.prior_std);
  r.read("rho_init", t.rho_init);
  r.read("class_weighted", t.class_weighted);
  r.read("pretrain_epochs", t.pretrain_epochs);
  r.read("pretrain_lr", t.pretrain_lr);
  r.read("moped_alpha", t.moped_alpha);
  r.read("grad_clip", t.grad_clip);
  if (r.has("kl_scale")) {
    t.kl_scale = parse_enum<bnn::KlScale>(r.require<std::string>("kl_scale"), r.path("kl_scale"),
                                          {{"per_step", bnn::KlScale::PerStep}, {"off", bnn::KlScale::Off}});
  }
  if (r.has("schedule")) {
    t.schedule = parse_enum<bnn::LrSchedule>(
        r.require<std::string>("schedule"), r.path("schedule"),
        {{"constant", bnn::LrSchedule::Constant}, {"cosine", bnn::LrSchedule::Cosine}});
  }
  if (r.has("mode")) {
    t.mode = parse_enum<bnn::TrainMode>(r.require<std::string>("mode"), r.path("mode"),
                                        {{"direct", bnn::TrainMode::Direct},
                                         {"two_stage", bnn::TrainMode::TwoStage},
                                         {"moped", bnn::TrainMode::Moped}});
  }
  r.finish();
}

inline void read_data(io::ObjectReader& r, DataConfig& d) {
  r.read("dim", d.dim);
  r.read("radius", d.radius);
  r.read("centers", d.centers);
  r.read("spread", d.spread);
  r.read("n_per_class", d.n_per_class);
  r.read("imbalance_ratio", d.imbalance_ratio);
  r.read("preset", d.preset);
  r.read("preset_total", d.preset_total);
  r.read("train_csv", d.train_csv);
  r.read("val_csv", d.val_csv);
  r.read("test_csv", d.test_csv);
  r.read("ood_csv", d.ood_csv);
  if (auto s = r.child("split")) {
    s->read("train", d.split.train);
    s->read("val", d.split.val);
    s->read("test", d.split.test);
    s->read("retain_fraction", d.split.retain_fraction);
    s->read("stratified", d.split.stratified);
    s->finish();
  }
  if (auto o = r.child("ood")) {
    o->read("enabled", d.ood);
    o->read("center", d.ood_center);
    o->read("spread", d.ood_spread);
    o->read("n", d.ood_n);
    o->finish();
  }
  r.finish();
  if (!d.preset.empty() && d.preset != "skewed7") throw SchemaError(r.path("preset") + ": unknown preset '" + d.preset + "'");
}

/// Runs the module-level validators, rewording their errors as config errors.
inline void validate(const RunConfig& c, const std::string& source) {
  auto check = [&](const char* section, auto&& fn) {
    try {
      fn();
    } catch (const InvalidInput& e) {
      throw SchemaError(source + "." + section + ": " + e.what());
    } catch (const DomainError& e) {
      throw SchemaError(source + "." + section + ": " + e.what());
    }
  };
  check("boundary", [&] { (void)c.boundary(); });
  check("train", [&] { c.train.validate(); });
  check("loss", [&] {
    if (c.loss.beta < 0.0 || c.loss.warmup_epochs < 0) throw InvalidInput("beta and warmup_epochs must be >= 0");
  });
  check("dts", [&] {
    (void)c.thresholds();
    if (!(c.fit.t_min > 0.0 && c.fit.t_min <= 1.0 && c.fit.t_max >= 1.0 && std::isfinite(c.fit.t_max))) {
      throw InvalidInput("temperature bounds must satisfy 0 < t_min <= 1 <= t_max");
    }
    if (c.fit.max_iterations < 1) throw InvalidInput("max_iterations must be >= 1");
  });
  check("metrics", [&] {
    if (c.metrics.bins < 1 || !(c.metrics.u_th > 0.0)) throw InvalidInput("need bins >= 1 and u_th > 0");
  });
  check("data", [&] {
    const auto& d = c.data;
    if (d.dim < 1 || !(d.radius > 0.0)) throw InvalidInput("need dim >= 1 and radius > 0");
    if (d.preset == "skewed7" && c.k != 7) throw InvalidInput("preset skewed7 requires boundary.k = 7");
    if (!(d.ood_spread > 0.0) || d.ood_n < 1) throw InvalidInput("ood needs spread > 0 and n >= 1");
    if (d.ood && d.ood_center.empty() && d.centers.empty() && c.k >= d.dim && d.ood_csv.empty()) {
      throw InvalidInput("default ood center needs dim > k; set data.ood.center");
    }
    if (!d.ood_center.empty() && static_cast<int>(d.ood_center.size()) != d.dim) {
      throw InvalidInput("ood.center must have dim entries");
    }
    const bool any_csv = !d.train_csv.empty() || !d.val_csv.empty() || !d.test_csv.empty();
    const bool all_csv = !d.train_csv.empty() && !d.val_csv.empty() && !d.test_csv.empty();
    if (any_csv && !all_csv) throw InvalidInput("train_csv, val_csv and test_csv must be given together");
  });
}

}  // namespace config_detail

inline RunConfig parse_run_config(const io::Json& j, const std::string& source = "config") {
  RunConfig c;
  io::ObjectReader root(j, source);
  root.read("seed", c.seed);
  if (auto b = root.child("boundary")) {
    b->read("gamma", c.gamma);
    b->read("k", c.k);
    b->finish();
  }
  if (auto l = root.child("loss")) {
    l->read("beta", c.loss.beta);
    l->read("warmup_epochs", c.loss.warmup_epochs);
    l->finish();
  }
  if (auto t = root.child("train")) config_detail::read_train(*t, c.train);
  if (auto d = root.child("dts")) {
    d->read("gamma_low", c.gamma_low);
    if (d->has("gamma_high") && !d->raw("gamma_high").is_null()) {
      c.gamma_high = io::ObjectReader::as<double>(d->raw("gamma_high"), d->path("gamma_high"));
    }
    d->read("eta", c.eta);
    d->read("t_min", c.fit.t_min);
    d->read("t_max", c.fit.t_max);
    d->read("max_iterations", c.fit.max_iterations);
    d->finish();
  }
  if (auto m = root.child("metrics")) {
    m->read("bins", c.metrics.bins);
    m->read("u_th", c.metrics.u_th);
    m->finish();
  }
  if (auto d = root.child("data")) config_detail::read_data(*d, c.data);
  root.finish();
  c.train.seed = c.seed;
  c.train.u_th = c.metrics.u_th;
  config_detail::validate(c, source);
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  return parse_run_config(io::parse_json(io::read_text(path), path), path);
}

/// Canonical form of a configuration (all defaults spelled out).
inline io::Json to_json(const RunConfig& c) {
  const auto& t = c.train;
  const auto& d = c.data;
  return {{"seed", c.seed},
          {"boundary", {{"gamma", c.gamma}, {"k", c.k}}},
          {"loss", {{"beta", c.loss.beta}, {"warmup_epochs", c.loss.warmup_epochs}}},
          {"train",
           {{"epochs", t.epochs},
            {"batch_size", t.batch_size},
            {"learning_rate", t.learning_rate},
            {"momentum", t.momentum},
            {"weight_decay", t.weight_decay},
            {"mc_train", t.mc_train},
            {"mc_infer", t.mc_infer},
            {"mc_monitor", t.mc_monitor},
            {"hidden", t.hidden},
            {"prior_std", t.prior_std},
            {"rho_init", t.rho_init},
            {"class_weighted", t.class_weighted},
            {"kl_scale", config_detail::name(t.kl_scale)},
            {"schedule", config_detail::name(t.schedule)},
            {"mode", config_detail::name(t.mode)},
            {"pretrain_epochs", t.pretrain_epochs},
            {"pretrain_lr", t.pretrain_lr},
            {"moped_alpha", t.moped_alpha},
            {"grad_clip", t.grad_clip}}},
          {"dts",
           {{"gamma_low", c.gamma_low},
            {"gamma_high", c.gamma_high ? io::Json(*c.gamma_high) : io::Json(nullptr)},
            {"eta", c.eta},
            {"t_min", c.fit.t_min},
            {"t_max", c.fit.t_max},
            {"max_iterations", c.fit.max_iterations}}},
          {"metrics", {{"bins", c.metrics.bins}, {"u_th", c.metrics.u_th}}},
          {"data",
           {{"dim", d.dim},
            {"radius", d.radius},
            {"centers", d.centers},
            {"spread", d.spread},
            {"n_per_class", d.n_per_class},
            {"imbalance_ratio", d.imbalance_ratio},
            {"preset", d.preset},
            {"preset_total", d.preset_total},
            {"train_csv", d.train_csv},
            {"val_csv", d.val_csv},
            {"test_csv", d.test_csv},
            {"ood_csv", d.ood_csv},
            {"split",
             {{"train", d.split.train},
              {"val", d.split.val},
              {"test", d.split.test},
              {"retain_fraction", d.split.retain_fraction},
              {"stratified", d.split.stratified}}},
            {"ood", {{"enabled", d.ood}, {"center", d.ood_center}, {"spread", d.ood_spread}, {"n", d.ood_n}}}}}};
}

/// FNV-1a of the canonical JSON, as 16 hex digits.
inline std::string config_hash(const RunConfig& c) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(bnn::fnv1a(to_json(c).dump())));
  return buf;
}

}  // namespace cubcal
