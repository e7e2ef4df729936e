#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "cubcal/errors.hpp"
#include "cubcal/prob_core.hpp"

namespace cubcal {

/// Per-sample bundle of MC logits and everything derived from them.
///
/// `mc_logits` is S x K row-major (S may be 0 when only mean logits were
/// supplied). `probs` is the MC-averaged softmax when S >= 1, otherwise the
/// softmax of `mean_logits`.
struct PredictionRecord {
  std::string id;
  int label = -1;  ///< true class, -1 when unknown (OOD data)
  std::size_t k = 0;
  std::size_t s = 0;
  std::vector<double> mc_logits;
  std::vector<double> mean_logits;
  std::vector<double> probs;
  std::size_t pred = 0;
  double p_hat = 0.0;
  double uncertainty = 0.0;

  bool correct() const { return label >= 0 && static_cast<std::size_t>(label) == pred; }

  std::span<const double> mc_row(std::size_t i) const {
    return std::span<const double>(mc_logits).subspan(i * k, k);
  }
};

namespace detail {

inline void finish_record(PredictionRecord& r) {
  const Confidence c = confidence_of(r.probs);
  r.pred = c.label;
  r.p_hat = c.p_hat;
  r.uncertainty = entropy_of(r.probs);
}

inline void check_logits(std::span<const double> z) {
  for (double v : z) {
    if (!std::isfinite(v)) throw InvalidInput("non-finite logit");
  }
}

}  // namespace detail

/// Builds a record from S x K Monte Carlo logits (row-major).
inline PredictionRecord make_record_from_mc(std::string id, int label, std::vector<double> mc_logits,
                                            std::size_t s, std::size_t k) {
  if (k < 2) throw InvalidInput("record: need at least 2 classes");
  if (s == 0 || mc_logits.size() != s * k) throw InvalidInput("record: mc_logits shape mismatch");
  detail::check_logits(mc_logits);
  PredictionRecord r;
  r.id = std::move(id);
  r.label = label;
  r.k = k;
  r.s = s;
  r.mc_logits = std::move(mc_logits);
  r.mean_logits.assign(k, 0.0);
  r.probs.assign(k, 0.0);
  std::vector<double> q(k);
  for (std::size_t i = 0; i < s; ++i) {
    const auto row = r.mc_row(i);
    softmax_into(row, q);
    for (std::size_t j = 0; j < k; ++j) {
      r.mean_logits[j] += row[j];
      r.probs[j] += q[j];
    }
  }
  for (std::size_t j = 0; j < k; ++j) {
    r.mean_logits[j] /= static_cast<double>(s);
    r.probs[j] /= static_cast<double>(s);
  }
  detail::finish_record(r);
  return r;
}

/// Builds a record from mean logits only; the predictive distribution is
/// their softmax.
inline PredictionRecord make_record_from_mean(std::string id, int label,
                                              std::vector<double> mean_logits) {
  if (mean_logits.size() < 2) throw InvalidInput("record: need at least 2 classes");
  detail::check_logits(mean_logits);
  PredictionRecord r;
  r.id = std::move(id);
  r.label = label;
  r.k = mean_logits.size();
  r.mean_logits = std::move(mean_logits);
  r.probs.assign(r.k, 0.0);
  softmax_into(r.mean_logits, r.probs);
  detail::finish_record(r);
  return r;
}

/// Record carrying only the derived summary. Used where the logits are not
/// needed (metric computations on externally produced confidences).
inline PredictionRecord make_summary_record(int label, std::size_t pred, double p_hat,
                                            double uncertainty, std::size_t k) {
  PredictionRecord r;
  r.label = label;
  r.k = k;
  r.pred = pred;
  r.p_hat = p_hat;
  r.uncertainty = uncertainty;
  return r;
}

/// Class count shared by a batch; throws on mismatch or empty input.
inline int batch_class_count(std::span<const PredictionRecord> records) {
  if (records.empty()) throw InvalidInput("empty batch");
  const std::size_t k = records.front().k;
  for (const auto& r : records) {
    if (r.k != k) throw InvalidInput("inconsistent class count in batch");
  }
  return static_cast<int>(k);
}

}  // namespace cubcal
