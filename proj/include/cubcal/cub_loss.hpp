#pragma once

// Boundary deviation, its per-quadrant normalization, the log-barrier loss,
// the ELBO + beta * barrier objective and the tanh-relaxed AvU surrogate.

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "cubcal/errors.hpp"
#include "cubcal/prediction.hpp"
#include "cubcal/prob_core.hpp"

namespace cubcal {

/// Normalized deviations are clamped to [0, 1 - kBarrierEps].
inline constexpr double kBarrierEps = 1e-6;

enum class Quadrant { AccurateCertain, AccurateUncertain, InaccurateCertain, InaccurateUncertain };

struct QuadrantLabel {
  bool accurate = false;
  bool high_confidence = false;

  Quadrant region() const {
    if (accurate) return high_confidence ? Quadrant::AccurateCertain : Quadrant::AccurateUncertain;
    return high_confidence ? Quadrant::InaccurateCertain : Quadrant::InaccurateUncertain;
  }
  /// AC and IU deviations are measured in uncertainty, AU and IC in confidence.
  bool measures_uncertainty() const { return accurate == high_confidence; }

  friend bool operator==(const QuadrantLabel&, const QuadrantLabel&) = default;
};

struct DeviationRecord {
  QuadrantLabel quadrant;
  double delta = 0.0;
  double delta_norm = 0.0;
};

struct LossWeights {
  double beta = 0.1;
  int warmup_epochs = 5;

  /// beta is 0 for epochs before the warm-up ends.
  double effective_beta(int epoch) const { return epoch < warmup_epochs ? 0.0 : beta; }
};

struct ElboTerms {
  double nll = 0.0;
  double kl = 0.0;
};

inline QuadrantLabel classify_quadrant(int true_label, std::size_t pred_label, double p_hat,
                                       const BoundaryConfig& cfg) {
  return {true_label >= 0 && static_cast<std::size_t>(true_label) == pred_label,
          p_hat > cfg.gamma()};
}

/// Raw deviation from the ideal boundary for a sample in quadrant `q`.
inline double raw_deviation(QuadrantLabel q, double p_hat, double u, const BoundaryConfig& cfg) {
  if (q.measures_uncertainty()) return std::abs(u_ideal(p_hat, cfg) - u);
  return std::abs(p_hat - cfg.gamma());
}

/// Largest possible raw deviation in quadrant `q` at confidence `p_hat`.
inline double deviation_scale(QuadrantLabel q, double p_hat, const BoundaryConfig& cfg) {
  switch (q.region()) {
    case Quadrant::AccurateCertain:
    case Quadrant::InaccurateUncertain:
      return std::max(0.0, (1.0 - p_hat) * std::log(cfg.k() - 1.0));
    case Quadrant::AccurateUncertain:
      return cfg.gamma() - 1.0 / cfg.k();
    case Quadrant::InaccurateCertain:
      return 1.0 - cfg.gamma();
  }
  return 0.0;
}

/// Maps a raw deviation to [0, 1 - kBarrierEps]. A zero feasible span
/// (p_hat = 1 or K = 2 in the uncertainty quadrants) yields 0.
inline double normalize_deviation(QuadrantLabel q, double delta, double p_hat,
                                  const BoundaryConfig& cfg) {
  const double scale = deviation_scale(q, p_hat, cfg);
  if (!(scale > 1e-15)) return 0.0;
  if (!std::isfinite(delta)) return 1.0 - kBarrierEps;
  return std::clamp(delta / scale, 0.0, 1.0 - kBarrierEps);
}

inline DeviationRecord boundary_deviation(const PredictionRecord& rec, const BoundaryConfig& cfg) {
  DeviationRecord d;
  d.quadrant = classify_quadrant(rec.label, rec.pred, rec.p_hat, cfg);
  d.delta = raw_deviation(d.quadrant, rec.p_hat, rec.uncertainty, cfg);
  d.delta_norm = normalize_deviation(d.quadrant, d.delta, rec.p_hat, cfg);
  return d;
}

/// Sum of -ln(1 - d) over already-normalized deviations.
inline double barrier_sum(std::span<const double> delta_norm) {
  double total = 0.0;
  for (double d : delta_norm) total += -std::log1p(-std::clamp(d, 0.0, 1.0 - kBarrierEps));
  return total;
}

inline double cub_loss(std::span<const PredictionRecord> records, const BoundaryConfig& cfg) {
  if (records.empty()) throw InvalidInput("cub_loss: empty batch");
  double total = 0.0;
  for (const auto& r : records) {
    total += -std::log1p(-boundary_deviation(r, cfg).delta_norm);
  }
  return total;
}

/// Gradient of one record's barrier term with respect to its predictive
/// distribution p. Quadrant and predicted index are held fixed; d|x|/dx at
/// x = 0 is taken as 0, and a clamped deviation contributes nothing.
inline std::vector<double> cub_term_grad_probs(const PredictionRecord& rec,
                                               const BoundaryConfig& cfg) {
  std::vector<double> g(rec.k, 0.0);
  const DeviationRecord d = boundary_deviation(rec, cfg);
  const double scale = deviation_scale(d.quadrant, rec.p_hat, cfg);
  if (!(scale > 1e-15)) return g;
  if (d.delta / scale >= 1.0 - kBarrierEps) return g;
  const double outer = 1.0 / (1.0 - d.delta_norm);
  const std::size_t c = rec.pred;

  if (!d.quadrant.measures_uncertainty()) {
    const double diff = rec.p_hat - cfg.gamma();
    const double sgn = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
    g[c] = outer * sgn / scale;
    return g;
  }

  // f = u_ideal(p_hat) - U(p); delta_norm = |f| / ((1 - p_hat) ln(K - 1)).
  const double f = u_ideal(rec.p_hat, cfg) - rec.uncertainty;
  const double sgn = f > 0.0 ? 1.0 : (f < 0.0 ? -1.0 : 0.0);
  const double slope = d.quadrant.high_confidence ? u_min_slope(rec.p_hat)
                                                  : u_max_slope(rec.p_hat, cfg.k());
  const double log_km1 = std::log(cfg.k() - 1.0);
  for (std::size_t i = 0; i < rec.k; ++i) {
    const double dU = -(std::log(std::max(rec.probs[i], kLogFloor)) + 1.0);
    double df = -dU;
    if (i == c) df += slope;
    g[i] = outer * sgn * df / scale;
  }
  g[c] += outer * std::abs(f) * log_km1 / (scale * scale);
  return g;
}

/// Per-record gradient of the batch CUB loss with respect to the logits.
/// The result for record i has shape S_i x K (row-major); records without
/// MC logits are treated as a single pass through their mean logits.
inline std::vector<std::vector<double>> cub_loss_gradient(std::span<const PredictionRecord> records,
                                                          const BoundaryConfig& cfg) {
  std::vector<std::vector<double>> out;
  out.reserve(records.size());
  std::vector<double> q;
  for (const auto& rec : records) {
    const std::vector<double> g = cub_term_grad_probs(rec, cfg);
    const std::size_t k = rec.k;
    const std::size_t s = rec.s == 0 ? 1 : rec.s;
    std::vector<double> grad(s * k, 0.0);
    q.resize(k);
    for (std::size_t si = 0; si < s; ++si) {
      const auto row = rec.s == 0 ? std::span<const double>(rec.mean_logits) : rec.mc_row(si);
      softmax_into(row, q);
      double dot = 0.0;
      for (std::size_t j = 0; j < k; ++j) dot += g[j] * q[j];
      for (std::size_t j = 0; j < k; ++j) {
        grad[si * k + j] = q[j] * (g[j] - dot) / static_cast<double>(s);
      }
    }
    out.push_back(std::move(grad));
  }
  return out;
}

inline double total_loss(const ElboTerms& elbo, double cub_value, const LossWeights& weights,
                         int epoch) {
  if (epoch < 0) throw InvalidInput("total_loss: epoch must be >= 0");
  return elbo.nll + elbo.kl + weights.effective_beta(epoch) * cub_value;
}

/// Soft state counts for the AvU surrogate.
struct SoftAvUCounts {
  double ac = 0.0;
  double au = 0.0;
  double ic = 0.0;
  double iu = 0.0;
};

/// tanh-relaxed AvU counts: correctness weighted by p_hat (accurate) or
/// 1 - p_hat (inaccurate), certainty by 1 - tanh(U) below u_th and tanh(U)
/// at or above it.
inline SoftAvUCounts soft_avu_counts(std::span<const PredictionRecord> records, double u_th) {
  SoftAvUCounts n;
  for (const auto& r : records) {
    const double t = std::tanh(r.uncertainty);
    const bool certain = r.uncertainty < u_th;
    if (r.correct()) {
      (certain ? n.ac : n.au) += r.p_hat * (certain ? 1.0 - t : t);
    } else {
      (certain ? n.ic : n.iu) += (1.0 - r.p_hat) * (certain ? 1.0 - t : t);
    }
  }
  return n;
}

/// -ln((n_AC + n_IU) / total) on soft counts; 0 when every count is 0.
inline double avuc_loss(std::span<const PredictionRecord> records, double u_th) {
  if (!(u_th > 0.0)) throw InvalidInput("avuc_loss: u_th must be > 0");
  const SoftAvUCounts n = soft_avu_counts(records, u_th);
  const double good = n.ac + n.iu;
  const double bad = n.au + n.ic;
  if (good + bad <= 0.0) return 0.0;
  return std::log1p(bad / (good + 1e-10));
}

}  // namespace cubcal
