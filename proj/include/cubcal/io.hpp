#pragma once

// Serialization: JSON reports and checkpoints, JSON-Lines logit dumps, and
// plot-ready CSV tables. Report values carry 6 significant digits; dumps,
// checkpoints and dataset CSVs keep full double precision.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "json.hpp"

#include "cubcal/bnn.hpp"
#include "cubcal/dts.hpp"
#include "cubcal/errors.hpp"
#include "cubcal/metrics.hpp"
#include "cubcal/prediction.hpp"
#include "cubcal/prob_core.hpp"
#include "cubcal/synth_data.hpp"

namespace cubcal::io {

using Json = nlohmann::ordered_json;

/// Rounds to 6 significant digits; non-finite values become null.
inline Json sig6(double x) {
  if (!std::isfinite(x)) return nullptr;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", x);
  return std::strtod(buf, nullptr);
}

inline Json sig6(const std::optional<double>& x) { return x ? sig6(*x) : Json(nullptr); }

inline std::string fixed6(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", x);
  return buf;
}

inline std::string full_precision(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

// ---------------------------------------------------------------- files

inline std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << text;
  out.flush();
  if (!out) throw IoError("write to '" + path + "' failed");
}

inline std::string dump_json(const Json& j) { return j.dump(2) + "\n"; }

// ---------------------------------------------------------------- reports

inline Json to_json(const BinnedDiagnostics& d) {
  Json bins = Json::array();
  for (const auto& b : d.bins) {
    bins.push_back({{"bin_lo", sig6(b.lo)},
                    {"bin_hi", sig6(b.hi)},
                    {"count", b.count},
                    {"mean_u", sig6(b.mean_u)},
                    {"mean_u_ideal", sig6(b.mean_u_ideal)}});
  }
  return bins;
}

inline Json to_json(const CalibrationReport& r) {
  return {{"n", r.n},
          {"k", r.k},
          {"accuracy", sig6(r.accuracy)},
          {"balanced_accuracy", sig6(r.balanced_accuracy)},
          {"avu", sig6(r.avu)},
          {"avu_counts",
           {{"n_ac", r.avu_counts.n_ac}, {"n_au", r.avu_counts.n_au}, {"n_ic", r.avu_counts.n_ic}, {"n_iu", r.avu_counts.n_iu}}},
          {"u_th", sig6(r.u_th)},
          {"delta_u", sig6(r.delta_u)},
          {"u_correct", sig6(r.u_correct)},
          {"u_incorrect", sig6(r.u_incorrect)},
          {"ece", sig6(r.ece)},
          {"bcce", sig6(r.bcce)},
          {"bcce_sum_variant", sig6(r.bcce_sum_variant)},
          {"bins", to_json(r.bins)}};
}

inline Json to_json(const TemperaturePair& t) {
  return {{"t_high", sig6(t.t_high)},
          {"t_low", sig6(t.t_low)},
          {"gamma_low", sig6(t.thresholds.gamma_low)},
          {"gamma_high", sig6(t.thresholds.gamma_high)},
          {"eta", sig6(t.thresholds.eta)},
          {"bcce_before", sig6(t.bcce_before)},
          {"bcce_after", sig6(t.bcce_after)},
          {"iterations", t.iterations},
          {"converged", t.converged}};
}

inline Json to_json(const std::vector<bnn::EpochStats>& trace) {
  Json out = Json::array();
  for (const auto& e : trace) {
    out.push_back({{"epoch", e.epoch},
                   {"nll", sig6(e.nll)},
                   {"kl", sig6(e.kl)},
                   {"cub", sig6(e.cub)},
                   {"beta", sig6(e.beta)},
                   {"total", sig6(e.total)},
                   {"train_acc", sig6(e.train_acc)},
                   {"val_acc", sig6(e.val_acc)},
                   {"val_avu", sig6(e.val_avu)}});
  }
  return out;
}

// ---------------------------------------------------------------- strict JSON objects

/// Reads fields of one JSON object, tracking which keys were consumed so
/// leftovers can be reported as unknown. Error messages carry the field path.
class ObjectReader {
 public:
  ObjectReader(const Json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw SchemaError(path_ + ": expected an object");
  }

  bool has(const std::string& key) const { return obj_.contains(key); }
  std::string path(const std::string& key) const { return path_ + "." + key; }

  const Json& raw(const std::string& key) {
    seen_.push_back(key);
    return obj_.at(key);
  }

  template <class T>
  void read(const std::string& key, T& out) {
    if (!obj_.contains(key)) return;
    out = as<T>(raw(key), path(key));
  }

  template <class T>
  T require(const std::string& key) {
    if (!obj_.contains(key)) throw SchemaError(path(key) + ": required field is missing");
    return as<T>(raw(key), path(key));
  }

  std::optional<ObjectReader> child(const std::string& key) {
    if (!obj_.contains(key)) return std::nullopt;
    return ObjectReader(raw(key), path(key));
  }

  /// Throws on the first key that was never read.
  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it) {
      if (std::find(seen_.begin(), seen_.end(), it.key()) == seen_.end()) {
        throw SchemaError(path(it.key()) + ": unknown key");
      }
    }
  }

  template <class T>
  static T as(const Json& v, const std::string& where) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw SchemaError(where + ": expected a boolean");
      return v.get<bool>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw SchemaError(where + ": expected an integer");
      if constexpr (std::is_unsigned_v<T>) {
        if (v.is_number_unsigned()) return v.get<T>();
        if (v.get<long long>() < 0) throw SchemaError(where + ": expected a non-negative integer");
      }
      return v.get<T>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw SchemaError(where + ": expected a number");
      return v.get<T>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw SchemaError(where + ": expected a string");
      return v.get<std::string>();
    } else if constexpr (std::is_same_v<T, std::vector<double>>) {
      if (!v.is_array()) throw SchemaError(where + ": expected an array of numbers");
      std::vector<double> out;
      for (std::size_t i = 0; i < v.size(); ++i) out.push_back(as<double>(v[i], where + "[" + std::to_string(i) + "]"));
      return out;
    } else if constexpr (std::is_same_v<T, std::vector<int>>) {
      if (!v.is_array()) throw SchemaError(where + ": expected an array of integers");
      std::vector<int> out;
      for (std::size_t i = 0; i < v.size(); ++i) out.push_back(as<int>(v[i], where + "[" + std::to_string(i) + "]"));
      return out;
    } else {
      static_assert(sizeof(T) == 0, "unsupported field type");
    }
  }

 private:
  const Json& obj_;
  std::string path_;
  std::vector<std::string> seen_;
};

inline Json parse_json(const std::string& text, const std::string& source) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw SchemaError(source + ": invalid JSON (" + e.what() + ")");
  }
}

inline TemperaturePair temperature_pair_from_json(const Json& j, const std::string& source) {
  ObjectReader r(j, source);
  TemperaturePair t;
  t.t_high = r.require<double>("t_high");
  t.t_low = r.require<double>("t_low");
  t.thresholds.gamma_low = r.require<double>("gamma_low");
  t.thresholds.gamma_high = r.require<double>("gamma_high");
  t.thresholds.eta = r.require<double>("eta");
  r.read("bcce_before", t.bcce_before);
  r.read("bcce_after", t.bcce_after);
  r.read("iterations", t.iterations);
  r.read("converged", t.converged);
  r.finish();
  if (!(t.t_high > 0.0) || !(t.t_low > 0.0)) throw SchemaError(source + ": temperatures must be > 0");
  return t;
}

// ---------------------------------------------------------------- logit dumps

namespace detail {

inline std::vector<double> logit_row(const Json& v, const std::string& where) {
  auto row = ObjectReader::as<std::vector<double>>(v, where);
  for (double x : row) {
    if (!std::isfinite(x)) throw SchemaError(where + ": logits must be finite");
  }
  return row;
}

}  // namespace detail

/// Parses one dump line. `where` prefixes error messages (e.g. "file:12").
inline PredictionRecord parse_dump_record(const std::string& line, const std::string& where) {
  Json j;
  try {
    j = Json::parse(line);
  } catch (const Json::parse_error& e) {
    throw SchemaError(where + ": invalid JSON (" + e.what() + ")");
  }
  ObjectReader r(j, where);
  const auto id = r.require<std::string>("id");
  const int label = r.require<int>("label");
  if (label < -1) throw SchemaError(where + ".label: must be >= -1 (-1 marks unlabeled)");

  std::optional<PredictionRecord> rec;
  if (r.has("mc_logits")) {
    const Json& mc = r.raw("mc_logits");
    if (!mc.is_array() || mc.empty()) throw SchemaError(where + ".mc_logits: expected a non-empty S x K array");
    std::vector<double> flat;
    std::size_t k = 0;
    for (std::size_t s = 0; s < mc.size(); ++s) {
      const auto row = detail::logit_row(mc[s], where + ".mc_logits[" + std::to_string(s) + "]");
      if (s == 0) k = row.size();
      if (row.size() != k || k < 2) throw SchemaError(where + ".mc_logits: rows must share K >= 2");
      flat.insert(flat.end(), row.begin(), row.end());
    }
    rec = make_record_from_mc(id, label, std::move(flat), mc.size(), k);
  }
  if (r.has("mean_logits")) {
    const auto mean = detail::logit_row(r.raw("mean_logits"), where + ".mean_logits");
    if (mean.size() < 2) throw SchemaError(where + ".mean_logits: need K >= 2");
    if (rec) {
      if (mean.size() != rec->mean_logits.size()) {
        throw SchemaError(where + ": mean_logits length differs from mc_logits K");
      }
      for (std::size_t i = 0; i < mean.size(); ++i) {
        const double ref = rec->mean_logits[i];
        if (std::abs(mean[i] - ref) > 1e-6 * (1.0 + std::abs(ref))) {
          throw SchemaError(where + ": mean_logits is not the mean of mc_logits");
        }
      }
    } else {
      rec = make_record_from_mean(id, label, mean);
    }
  }
  if (!rec) throw SchemaError(where + ": record needs mc_logits or mean_logits");
  r.finish();
  if (rec->label >= static_cast<int>(rec->k)) throw SchemaError(where + ".label: outside [0, K)");
  return *rec;
}

/// Reads a JSON-Lines dump; blank lines are skipped. K (and S, when MC
/// samples are present) must agree across records.
inline std::vector<PredictionRecord> read_dump(std::istream& in, const std::string& source) {
  std::vector<PredictionRecord> out;
  std::string line;
  std::size_t line_no = 0;
  std::size_t mc_s = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const std::string where = source + ":" + std::to_string(line_no);
    auto rec = parse_dump_record(line, where);
    if (!out.empty() && rec.k != out.front().k) {
      throw SchemaError(where + ": record has K=" + std::to_string(rec.k) + " but earlier records have K=" +
                        std::to_string(out.front().k));
    }
    if (!rec.mc_logits.empty()) {
      if (mc_s == 0) mc_s = rec.s;
      if (rec.s != mc_s) {
        throw SchemaError(where + ": record has S=" + std::to_string(rec.s) + " but earlier records have S=" +
                          std::to_string(mc_s));
      }
    }
    out.push_back(std::move(rec));
  }
  if (out.empty()) throw SchemaError(source + ": dump contains no records");
  return out;
}

inline std::vector<PredictionRecord> read_dump_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  return read_dump(in, path);
}

inline std::string dump_line(const PredictionRecord& r) {
  Json j{{"id", r.id}, {"label", r.label}};
  if (!r.mc_logits.empty()) {
    Json mc = Json::array();
    for (std::size_t s = 0; s < r.s; ++s) {
      const auto row = r.mc_row(s);
      mc.push_back(std::vector<double>(row.begin(), row.end()));
    }
    j["mc_logits"] = std::move(mc);
  } else {
    j["mean_logits"] = r.mean_logits;
  }
  return j.dump();
}

inline void write_dump(std::ostream& out, std::span<const PredictionRecord> records) {
  for (const auto& r : records) out << dump_line(r) << '\n';
}

inline void write_dump_file(const std::string& path, std::span<const PredictionRecord> records) {
  std::ostringstream ss;
  write_dump(ss, records);
  write_text(path, ss.str());
}

// ---------------------------------------------------------------- CSV

inline std::string boundary_csv(std::span<const BoundarySample> curve) {
  std::string out = "confidence,u_min,u_max,u_ideal\n";
  for (const auto& s : curve) {
    out += fixed6(s.confidence) + "," + fixed6(s.u_min) + "," + fixed6(s.u_max) + "," + fixed6(s.u_ideal) + "\n";
  }
  return out;
}

inline std::string bins_csv(const BinnedDiagnostics& d) {
  std::string out = "bin_lo,bin_hi,count,mean_u,mean_u_ideal\n";
  for (const auto& b : d.bins) {
    out += fixed6(b.lo) + "," + fixed6(b.hi) + "," + std::to_string(b.count) + "," + fixed6(b.mean_u) + "," +
           fixed6(b.mean_u_ideal) + "\n";
  }
  return out;
}

inline std::string dataset_csv(const Dataset& d) {
  std::string out = "id,label";
  for (int j = 0; j < d.dim; ++j) out += ",f" + std::to_string(j);
  out += "\n";
  for (std::size_t i = 0; i < d.size(); ++i) {
    out += d.ids[i] + "," + std::to_string(d.labels[i]);
    for (double v : d.row(i)) out += "," + full_precision(v);
    out += "\n";
  }
  return out;
}

/// Parses a dataset CSV written by dataset_csv. K is supplied by the caller
/// because unlabeled or partial files cannot reveal it.
inline Dataset parse_dataset_csv(const std::string& text, int k, const std::string& source) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw SchemaError(source + ": empty CSV");
  auto split_line = [](const std::string& s) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(s);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (!s.empty() && s.back() == ',') cells.emplace_back();
    return cells;
  };
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_line(line);
  if (header.size() < 3 || header[0] != "id" || header[1] != "label") {
    throw SchemaError(source + ":1: header must be id,label,f0,...");
  }
  const int dim = static_cast<int>(header.size()) - 2;
  for (int j = 0; j < dim; ++j) {
    if (header[static_cast<std::size_t>(j + 2)] != "f" + std::to_string(j)) {
      throw SchemaError(source + ":1: feature columns must be named f0..f" + std::to_string(dim - 1));
    }
  }
  Dataset d{k, dim, {}, {}, {}};
  std::vector<double> x(static_cast<std::size_t>(dim));
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string where = source + ":" + std::to_string(line_no);
    const auto cells = split_line(line);
    if (cells.size() != header.size()) throw SchemaError(where + ": expected " + std::to_string(header.size()) + " columns");
    std::size_t used = 0;
    int label = 0;
    try {
      label = std::stoi(cells[1], &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != cells[1].size() || label < -1 || label >= k) throw SchemaError(where + ": bad label '" + cells[1] + "'");
    for (int j = 0; j < dim; ++j) {
      const auto& c = cells[static_cast<std::size_t>(j + 2)];
      char* end = nullptr;
      const double v = std::strtod(c.c_str(), &end);
      if (c.empty() || end != c.c_str() + c.size() || !std::isfinite(v)) {
        throw SchemaError(where + ": bad value in column f" + std::to_string(j));
      }
      x[static_cast<std::size_t>(j)] = v;
    }
    d.push(cells[0], label, x);
  }
  return d;
}

// ---------------------------------------------------------------- checkpoints

namespace detail {

inline Json matrix_json(const bnn::Matrix& m) {
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    rows.push_back(std::vector<double>(m.row(i).data(), m.row(i).data() + m.cols()));
  }
  return rows;
}

inline bnn::Matrix matrix_from_json(const Json& j, Eigen::Index rows, Eigen::Index cols, const std::string& where) {
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != rows) {
    throw SchemaError(where + ": expected " + std::to_string(rows) + " rows");
  }
  bnn::Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const auto row = ObjectReader::as<std::vector<double>>(j[static_cast<std::size_t>(i)],
                                                           where + "[" + std::to_string(i) + "]");
    if (static_cast<Eigen::Index>(row.size()) != cols) {
      throw SchemaError(where + "[" + std::to_string(i) + "]: expected " + std::to_string(cols) + " columns");
    }
    for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = row[static_cast<std::size_t>(c)];
  }
  return m;
}

inline bnn::Vector vector_from_json(const Json& j, Eigen::Index n, const std::string& where) {
  const auto v = ObjectReader::as<std::vector<double>>(j, where);
  if (static_cast<Eigen::Index>(v.size()) != n) throw SchemaError(where + ": expected " + std::to_string(n) + " entries");
  return Eigen::Map<const bnn::Vector>(v.data(), n);
}

inline Json layer_json(const bnn::VariationalLayer& l) {
  const bnn::Vector bm = l.bias_mu;
  const bnn::Vector br = l.bias_rho;
  return {{"in", l.in()},
          {"out", l.out()},
          {"mu", matrix_json(l.mu)},
          {"rho", matrix_json(l.rho)},
          {"bias_mu", std::vector<double>(bm.data(), bm.data() + bm.size())},
          {"bias_rho", std::vector<double>(br.data(), br.data() + br.size())}};
}

inline bnn::VariationalLayer layer_from_json(const Json& j, double prior_std, const std::string& where) {
  ObjectReader r(j, where);
  const int in = r.require<int>("in");
  const int out = r.require<int>("out");
  if (in < 1 || out < 1) throw SchemaError(where + ": layer shape must be positive");
  bnn::VariationalLayer l;
  l.prior_std = prior_std;
  l.mu = matrix_from_json(r.raw("mu"), out, in, r.path("mu"));
  l.rho = matrix_from_json(r.raw("rho"), out, in, r.path("rho"));
  l.bias_mu = vector_from_json(r.raw("bias_mu"), out, r.path("bias_mu"));
  l.bias_rho = vector_from_json(r.raw("bias_rho"), out, r.path("bias_rho"));
  r.finish();
  return l;
}

}  // namespace detail

struct CheckpointMeta {
  std::uint64_t seed = 0;
  std::string config_hash;
};

inline Json checkpoint_json(const bnn::Network& net, const CheckpointMeta& meta) {
  return {{"format", "cubcal-checkpoint-1"},
          {"prior_std", net.hidden.prior_std},
          {"layers", Json::array({detail::layer_json(net.hidden), detail::layer_json(net.output)})},
          {"metadata", {{"seed", meta.seed}, {"config_hash", meta.config_hash}}}};
}

inline bnn::Network network_from_checkpoint(const Json& j, const std::string& source) {
  ObjectReader r(j, source);
  if (r.require<std::string>("format") != "cubcal-checkpoint-1") throw SchemaError(source + ".format: unsupported");
  const double prior_std = r.require<double>("prior_std");
  if (!(prior_std > 0.0)) throw SchemaError(source + ".prior_std: must be > 0");
  const Json& layers = r.raw("layers");
  if (!layers.is_array() || layers.size() != 2) throw SchemaError(source + ".layers: expected two layers");
  bnn::Network net;
  net.hidden = detail::layer_from_json(layers[0], prior_std, source + ".layers[0]");
  net.output = detail::layer_from_json(layers[1], prior_std, source + ".layers[1]");
  if (net.output.in() != net.hidden.out()) throw SchemaError(source + ".layers: shapes do not chain");
  if (auto m = r.child("metadata")) {
    std::uint64_t seed = 0;
    std::string hash;
    m->read("seed", seed);
    m->read("config_hash", hash);
    m->finish();
  }
  r.finish();
  return net;
}

}  // namespace cubcal::io
