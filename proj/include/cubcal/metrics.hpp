#pragma once

// Accuracy-style metrics, AvU, uncertainty separation, confidence-binned
// calibration errors (ECE and the boundary-curve variant) and OOD ranking
// metrics. All reductions run in index order.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "cubcal/errors.hpp"
#include "cubcal/prediction.hpp"
#include "cubcal/prob_core.hpp"

namespace cubcal {

struct AvUCounts {
  std::size_t n_ac = 0;
  std::size_t n_au = 0;
  std::size_t n_ic = 0;
  std::size_t n_iu = 0;

  std::size_t total() const { return n_ac + n_au + n_ic + n_iu; }
  friend bool operator==(const AvUCounts&, const AvUCounts&) = default;
};

struct BinStat {
  double lo = 0.0;
  double hi = 0.0;
  std::size_t count = 0;
  double mean_u = 0.0;        ///< 0 for empty bins
  double mean_u_ideal = 0.0;  ///< 0 for empty bins
};

struct BinnedDiagnostics {
  int m = 0;
  std::vector<BinStat> bins;
};

struct BcceResult {
  double weighted_avg = 0.0;
  double sum_variant = 0.0;
  BinnedDiagnostics bins;
};

struct MetricParams {
  int bins = 15;
  double u_th = 0.325;
};

struct CalibrationReport {
  std::size_t n = 0;
  int k = 0;
  double accuracy = 0.0;
  std::optional<double> balanced_accuracy;
  double avu = 0.0;
  AvUCounts avu_counts;
  double u_th = 0.0;
  std::optional<double> delta_u;
  std::optional<double> u_correct;
  std::optional<double> u_incorrect;
  double ece = 0.0;
  double bcce = 0.0;
  double bcce_sum_variant = 0.0;
  BinnedDiagnostics bins;
};

/// Equal-width confidence bins over [lo, 1]; the top edge belongs to the last bin.
struct ConfidenceBinning {
  double lo = 0.0;
  int m = 1;

  int index(double c) const {
    const double t = (c - lo) / (1.0 - lo) * m;
    return std::clamp(static_cast<int>(std::floor(t)), 0, m - 1);
  }
  double edge(int i) const { return i == m ? 1.0 : lo + (1.0 - lo) * i / m; }
};

inline AvUCounts avu_counts(std::span<const PredictionRecord> records, double u_th) {
  if (!(u_th > 0.0)) throw InvalidInput("avu_counts: u_th must be > 0");
  AvUCounts c;
  for (const auto& r : records) {
    const bool certain = r.uncertainty < u_th;
    if (r.correct()) {
      ++(certain ? c.n_ac : c.n_au);
    } else {
      ++(certain ? c.n_ic : c.n_iu);
    }
  }
  return c;
}

inline double avu(const AvUCounts& c) {
  if (c.total() == 0) throw InvalidInput("avu: no samples");
  return static_cast<double>(c.n_ac + c.n_iu) / static_cast<double>(c.total());
}

inline double accuracy(std::span<const PredictionRecord> records) {
  if (records.empty()) throw InvalidInput("accuracy: empty batch");
  std::size_t hits = 0;
  for (const auto& r : records) hits += r.correct() ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(records.size());
}

/// Mean uncertainty over correct (first) and incorrect (second) records.
inline std::pair<std::optional<double>, std::optional<double>> mean_uncertainty_split(
    std::span<const PredictionRecord> records) {
  double sc = 0.0;
  double si = 0.0;
  std::size_t nc = 0;
  std::size_t ni = 0;
  for (const auto& r : records) {
    if (r.correct()) {
      sc += r.uncertainty;
      ++nc;
    } else {
      si += r.uncertainty;
      ++ni;
    }
  }
  std::pair<std::optional<double>, std::optional<double>> out;
  if (nc > 0) out.first = sc / static_cast<double>(nc);
  if (ni > 0) out.second = si / static_cast<double>(ni);
  return out;
}

/// Mean incorrect uncertainty minus mean correct uncertainty; absent when
/// either group is empty.
inline std::optional<double> delta_u(std::span<const PredictionRecord> records) {
  const auto [uc, ui] = mean_uncertainty_split(records);
  if (!uc || !ui) return std::nullopt;
  return *ui - *uc;
}

/// Expected calibration error with m bins over [1/K, 1].
inline double ece(std::span<const PredictionRecord> records, int m) {
  if (m < 1) throw InvalidInput("ece: bin count must be >= 1");
  const int k = batch_class_count(records);
  const ConfidenceBinning binning{1.0 / k, m};
  std::vector<double> conf(static_cast<std::size_t>(m), 0.0);
  std::vector<double> hits(static_cast<std::size_t>(m), 0.0);
  std::vector<std::size_t> count(static_cast<std::size_t>(m), 0);
  for (const auto& r : records) {
    const auto b = static_cast<std::size_t>(binning.index(r.p_hat));
    conf[b] += r.p_hat;
    hits[b] += r.correct() ? 1.0 : 0.0;
    ++count[b];
  }
  const double n = static_cast<double>(records.size());
  double e = 0.0;
  for (std::size_t b = 0; b < count.size(); ++b) {
    if (count[b] == 0) continue;
    const double nb = static_cast<double>(count[b]);
    e += nb / n * std::abs(hits[b] / nb - conf[b] / nb);
  }
  return e;
}

/// Boundary-curve calibration error from raw confidence / uncertainty arrays.
inline BcceResult bcce_of(std::span<const double> p_hat, std::span<const double> u,
                          const BoundaryConfig& cfg, int m) {
  if (m < 1) throw InvalidInput("bcce: bin count must be >= 1");
  if (p_hat.size() != u.size()) throw InvalidInput("bcce: size mismatch");
  if (p_hat.empty()) throw InvalidInput("bcce: empty batch");
  const ConfidenceBinning binning{1.0 / cfg.k(), m};
  BcceResult res;
  res.bins.m = m;
  res.bins.bins.resize(static_cast<std::size_t>(m));
  std::vector<double> su(static_cast<std::size_t>(m), 0.0);
  std::vector<double> si(static_cast<std::size_t>(m), 0.0);
  for (std::size_t i = 0; i < p_hat.size(); ++i) {
    const double ideal = u_ideal(p_hat[i], cfg);
    const auto b = static_cast<std::size_t>(binning.index(p_hat[i]));
    su[b] += u[i];
    si[b] += ideal;
    ++res.bins.bins[b].count;
    res.sum_variant += std::abs(u[i] - ideal);
  }
  const double n = static_cast<double>(p_hat.size());
  for (int b = 0; b < m; ++b) {
    auto& bin = res.bins.bins[static_cast<std::size_t>(b)];
    bin.lo = binning.edge(b);
    bin.hi = binning.edge(b + 1);
    if (bin.count == 0) continue;
    const double nb = static_cast<double>(bin.count);
    bin.mean_u = su[static_cast<std::size_t>(b)] / nb;
    bin.mean_u_ideal = si[static_cast<std::size_t>(b)] / nb;
    res.weighted_avg += nb / n * std::abs(bin.mean_u - bin.mean_u_ideal);
  }
  return res;
}

inline BcceResult bcce(std::span<const PredictionRecord> records, const BoundaryConfig& cfg, int m) {
  if (batch_class_count(records) != cfg.k()) throw InvalidInput("bcce: class count mismatch");
  std::vector<double> p(records.size());
  std::vector<double> u(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    p[i] = records[i].p_hat;
    u[i] = records[i].uncertainty;
  }
  return bcce_of(p, u, cfg, m);
}

/// Probability that a random OOD score exceeds a random ID score, ties 1/2.
inline double auroc(std::span<const double> id_scores, std::span<const double> ood_scores) {
  if (id_scores.empty() || ood_scores.empty()) throw InvalidInput("auroc: empty score list");
  struct Item {
    double score;
    bool ood;
  };
  std::vector<Item> all;
  all.reserve(id_scores.size() + ood_scores.size());
  for (double s : id_scores) all.push_back({s, false});
  for (double s : ood_scores) all.push_back({s, true});
  std::stable_sort(all.begin(), all.end(),
                   [](const Item& a, const Item& b) { return a.score < b.score; });
  double rank_sum = 0.0;
  std::size_t i = 0;
  while (i < all.size()) {
    std::size_t j = i;
    while (j < all.size() && all[j].score == all[i].score) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // ranks i+1..j
    for (std::size_t t = i; t < j; ++t) {
      if (all[t].ood) rank_sum += avg_rank;
    }
    i = j;
  }
  const double n_ood = static_cast<double>(ood_scores.size());
  const double n_id = static_cast<double>(id_scores.size());
  return (rank_sum - n_ood * (n_ood + 1.0) / 2.0) / (n_ood * n_id);
}

/// Step-wise area under the precision-recall curve, OOD as the positive class.
inline double aupr(std::span<const double> id_scores, std::span<const double> ood_scores) {
  if (id_scores.empty() || ood_scores.empty()) throw InvalidInput("aupr: empty score list");
  struct Item {
    double score;
    bool ood;
  };
  std::vector<Item> all;
  all.reserve(id_scores.size() + ood_scores.size());
  for (double s : id_scores) all.push_back({s, false});
  for (double s : ood_scores) all.push_back({s, true});
  std::stable_sort(all.begin(), all.end(),
                   [](const Item& a, const Item& b) { return a.score > b.score; });
  const double n_pos = static_cast<double>(ood_scores.size());
  double tp = 0.0;
  double fp = 0.0;
  double prev_recall = 0.0;
  double area = 0.0;
  std::size_t i = 0;
  while (i < all.size()) {
    std::size_t j = i;
    while (j < all.size() && all[j].score == all[i].score) {
      (all[j].ood ? tp : fp) += 1.0;
      ++j;
    }
    const double recall = tp / n_pos;
    area += (recall - prev_recall) * tp / (tp + fp);
    prev_recall = recall;
    i = j;
  }
  return area;
}

/// Mean per-class recall; absent if some class in [0, K) has no samples.
inline std::optional<double> balanced_accuracy(std::span<const PredictionRecord> records) {
  const int k = batch_class_count(records);
  std::vector<std::size_t> total(static_cast<std::size_t>(k), 0);
  std::vector<std::size_t> hits(static_cast<std::size_t>(k), 0);
  for (const auto& r : records) {
    if (r.label < 0 || r.label >= k) return std::nullopt;
    ++total[static_cast<std::size_t>(r.label)];
    if (r.correct()) ++hits[static_cast<std::size_t>(r.label)];
  }
  double sum = 0.0;
  for (std::size_t c = 0; c < total.size(); ++c) {
    if (total[c] == 0) return std::nullopt;
    sum += static_cast<double>(hits[c]) / static_cast<double>(total[c]);
  }
  return sum / k;
}

inline CalibrationReport evaluate(std::span<const PredictionRecord> records,
                                  const BoundaryConfig& cfg, const MetricParams& params) {
  CalibrationReport rep;
  rep.k = batch_class_count(records);
  rep.n = records.size();
  rep.accuracy = accuracy(records);
  rep.balanced_accuracy = balanced_accuracy(records);
  rep.u_th = params.u_th;
  rep.avu_counts = avu_counts(records, params.u_th);
  rep.avu = avu(rep.avu_counts);
  const auto [uc, ui] = mean_uncertainty_split(records);
  rep.u_correct = uc;
  rep.u_incorrect = ui;
  if (uc && ui) rep.delta_u = *ui - *uc;
  rep.ece = ece(records, params.bins);
  BcceResult b = bcce(records, cfg, params.bins);
  rep.bcce = b.weighted_avg;
  rep.bcce_sum_variant = b.sum_variant;
  rep.bins = std::move(b.bins);
  return rep;
}

}  // namespace cubcal
