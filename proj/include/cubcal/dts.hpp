#pragma once

// Dual temperature scaling: records are split into a sharpening and a
// softening region by confidence / uncertainty thresholds, and each region's
// mean logits are divided by its own temperature. The two temperatures are
// fitted post hoc by minimizing the boundary-curve calibration error.
//
// Calibrated distributions are softmax(mean_logits / T). The uncalibrated
// reference is the same map at T = 1, so regions, "before" metrics and the
// identity temperature pair all refer to softmax(mean_logits).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "cubcal/errors.hpp"
#include "cubcal/metrics.hpp"
#include "cubcal/optimize.hpp"
#include "cubcal/prediction.hpp"
#include "cubcal/prob_core.hpp"

namespace cubcal {

struct DtsThresholds {
  double gamma_low = 0.9;
  double gamma_high = 0.923;
  double eta = 0.325;

  /// Checks 1/K < gamma_low < gamma_high < 1 and 0 < eta < ln K.
  void validate(int k) const {
    if (!(1.0 / k < gamma_low && gamma_low < gamma_high && gamma_high < 1.0)) {
      throw InvalidInput("DtsThresholds: need 1/K < gamma_low < gamma_high < 1");
    }
    if (!(eta > 0.0 && eta < std::log(static_cast<double>(k)))) {
      throw InvalidInput("DtsThresholds: need 0 < eta < ln K");
    }
  }

  /// gamma_high taken where u_max crosses eta.
  static DtsThresholds derive(double eta, double gamma_low, int k) {
    DtsThresholds th{gamma_low, invert_u_max(eta, k), eta};
    th.validate(k);
    return th;
  }
};

enum class Region { Sharpen, Soften };

struct TemperaturePair {
  double t_high = 1.0;
  double t_low = 1.0;
  DtsThresholds thresholds;
  double bcce_before = 0.0;
  double bcce_after = 0.0;
  int iterations = 0;
  bool converged = true;  ///< false if some start hit the iteration cap
};

/// BCCE tends to zero as both temperatures go to 0 (one-hot outputs) or to
/// infinity (uniform outputs), so the search is confined to [t_min, t_max].
struct DtsFitOptions {
  int max_iterations = 50;  ///< per start
  std::vector<double> starts{0.5, 1.0, 2.0, 4.0};
  double t_min = 0.25;
  double t_max = 8.0;
};

inline Region assign_region(double p_hat, double u, const DtsThresholds& th) {
  if (p_hat > th.gamma_high) return Region::Sharpen;
  if (p_hat <= th.gamma_low) return Region::Soften;
  return u < th.eta ? Region::Sharpen : Region::Soften;
}

inline LogitVector apply_dts(const LogitVector& z, Region region, const TemperaturePair& temps) {
  const double t = region == Region::Sharpen ? temps.t_high : temps.t_low;
  if (!(t > 0.0) || !std::isfinite(t)) throw InvalidInput("apply_dts: temperature must be > 0");
  std::vector<double> out(z.values().begin(), z.values().end());
  for (auto& v : out) v /= t;
  return LogitVector(std::move(out));
}

/// Records re-derived from their mean logits (the T = 1 state).
inline std::vector<PredictionRecord> reference_records(std::span<const PredictionRecord> records) {
  std::vector<PredictionRecord> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(make_record_from_mean(r.id, r.label, r.mean_logits));
  return out;
}

inline std::vector<Region> assign_regions(std::span<const PredictionRecord> reference,
                                          const DtsThresholds& th) {
  std::vector<Region> regions;
  regions.reserve(reference.size());
  for (const auto& r : reference) regions.push_back(assign_region(r.p_hat, r.uncertainty, th));
  return regions;
}

/// Scales each record's mean logits by the temperature of its pre-calibration
/// region and recomputes the predictive quantities.
inline std::vector<PredictionRecord> calibrate_dataset(std::span<const PredictionRecord> records,
                                                       const TemperaturePair& temps) {
  const auto reference = reference_records(records);
  const auto regions = assign_regions(reference, temps.thresholds);
  std::vector<PredictionRecord> out;
  out.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const LogitVector z(records[i].mean_logits);
    const LogitVector scaled = apply_dts(z, regions[i], temps);
    out.push_back(make_record_from_mean(
        records[i].id, records[i].label,
        std::vector<double>(scaled.values().begin(), scaled.values().end())));
  }
  return out;
}

namespace detail {

/// BCCE of a validation set as a function of (ln T_high, ln T_low) with
/// frozen regions.
class DtsObjective {
 public:
  DtsObjective(std::span<const PredictionRecord> reference, std::vector<Region> regions,
               const BoundaryConfig& cfg, int m_bins, double t_min, double t_max)
      : cfg_(cfg), m_(m_bins), lo_(std::log(t_min)), hi_(std::log(t_max)), regions_(std::move(regions)) {
    k_ = reference.front().k;
    logits_.reserve(reference.size() * k_);
    for (const auto& r : reference) logits_.insert(logits_.end(), r.mean_logits.begin(), r.mean_logits.end());
    p_.resize(reference.size());
    u_.resize(reference.size());
  }

  /// Outside the temperature box the value at the nearest feasible point plus
  /// the distance to it is returned.
  double operator()(const std::vector<double>& log_t) {
    const double a = std::clamp(log_t[0], lo_, hi_);
    const double b = std::clamp(log_t[1], lo_, hi_);
    const double penalty = std::abs(log_t[0] - a) + std::abs(log_t[1] - b);
    const double inv_high = std::exp(-a);
    const double inv_low = std::exp(-b);
    std::vector<double> z(k_);
    std::vector<double> q(k_);
    for (std::size_t i = 0; i < regions_.size(); ++i) {
      const double s = regions_[i] == Region::Sharpen ? inv_high : inv_low;
      for (std::size_t j = 0; j < k_; ++j) z[j] = logits_[i * k_ + j] * s;
      softmax_into(z, q);
      p_[i] = confidence_of(q).p_hat;
      u_[i] = entropy_of(q);
    }
    return bcce_of(p_, u_, cfg_, m_).weighted_avg + penalty;
  }

 private:
  BoundaryConfig cfg_;
  int m_;
  double lo_;
  double hi_;
  std::size_t k_ = 0;
  std::vector<Region> regions_;
  std::vector<double> logits_;
  std::vector<double> p_;
  std::vector<double> u_;
};

}  // namespace detail

inline constexpr double kFitTolerance = 1e-10;

/// Fits (T_high, T_low) on validation records by multi-start quasi-Newton in
/// log-temperature space followed by a compass-search polish. The identity
/// start is evaluated first; a candidate replaces the incumbent only when it
/// improves BCCE by more than kFitTolerance, so flat objectives keep (1, 1).
inline TemperaturePair fit_temperatures(std::span<const PredictionRecord> val_records,
                                        const BoundaryConfig& cfg, const DtsThresholds& th,
                                        int m_bins, const DtsFitOptions& opts = {}) {
  if (batch_class_count(val_records) != cfg.k()) throw InvalidInput("fit: class count mismatch");
  th.validate(cfg.k());
  if (!(opts.t_min > 0.0 && opts.t_min <= 1.0 && opts.t_max >= 1.0 && std::isfinite(opts.t_max))) {
    throw InvalidInput("fit: temperature bounds must satisfy 0 < t_min <= 1 <= t_max");
  }
  const double lo = std::log(opts.t_min);
  const double hi = std::log(opts.t_max);
  const auto reference = reference_records(val_records);
  detail::DtsObjective objective(reference, assign_regions(reference, th), cfg, m_bins, opts.t_min,
                                 opts.t_max);

  TemperaturePair best;
  best.thresholds = th;
  std::vector<double> best_x{0.0, 0.0};
  double best_value = objective(best_x);
  best.bcce_before = best_value;

  std::vector<std::vector<double>> starts{{0.0, 0.0}};
  for (double a : opts.starts) {
    for (double b : opts.starts) {
      if (a == 1.0 && b == 1.0) continue;
      starts.push_back({std::clamp(std::log(a), lo, hi), std::clamp(std::log(b), lo, hi)});
    }
  }
  optimize::QuasiNewtonOptions qn;
  qn.max_iterations = opts.max_iterations;
  for (const auto& x0 : starts) {
    const auto r = optimize::minimize_bfgs(objective, x0, qn);
    best.iterations += r.iterations;
    if (!r.converged) best.converged = false;
    if (r.value < best_value - kFitTolerance) {
      best_value = r.value;
      best_x = r.x;
    }
  }
  const auto polished = optimize::minimize_compass(objective, best_x, best_value);
  if (polished.value < best_value - kFitTolerance) {
    best_value = polished.value;
    best_x = polished.x;
  }

  best.t_high = std::exp(std::clamp(best_x[0], lo, hi));
  best.t_low = std::exp(std::clamp(best_x[1], lo, hi));
  best.bcce_after = best_value;

  const auto after = calibrate_dataset(val_records, best);
  if (accuracy(after) != accuracy(reference)) {
    throw NumericFailure("fit_temperatures: calibration changed validation accuracy");
  }
  return best;
}

}  // namespace cubcal
