#pragma once

// Probability-vector primitives, predictive entropy, the analytic entropy
// bounds at fixed confidence, and the ideal confidence-uncertainty boundary.
//
// All logarithms are natural; uncertainties are in nats.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "cubcal/errors.hpp"

namespace cubcal {

/// Probabilities below this are clamped before taking a log.
inline constexpr double kLogFloor = 1e-12;
/// Tolerance on sum-to-one for ProbVector.
inline constexpr double kSimplexTol = 1e-9;

namespace detail {

/// x * ln(x) with 0 ln 0 := 0.
inline double xlogx(double x) {
  if (x <= 0.0) return 0.0;
  return x * std::log(std::max(x, kLogFloor));
}

/// Clamps p_hat into [1/k, 1] after checking it is there up to rounding.
inline double checked_confidence(double p_hat, int k, const char* what) {
  if (k < 2) throw DomainError(std::string(what) + ": class count must be >= 2");
  const double lo = 1.0 / static_cast<double>(k);
  constexpr double slack = 1e-12;
  if (!(p_hat >= lo - slack && p_hat <= 1.0 + slack)) {
    throw DomainError(std::string(what) + ": confidence " + std::to_string(p_hat) +
                      " outside [1/k, 1]");
  }
  return std::clamp(p_hat, lo, 1.0);
}

}  // namespace detail

/// Numerically stable softmax of a raw score span into `out` (same length).
inline void softmax_into(std::span<const double> z, std::span<double> out) {
  const double zmax = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    out[i] = std::exp(z[i] - zmax);
    sum += out[i];
  }
  for (auto& v : out) v /= sum;
}

/// Shannon entropy (nats) of a raw probability span.
inline double entropy_of(std::span<const double> p) {
  double h = 0.0;
  for (double v : p) h -= detail::xlogx(v);
  return std::max(h, 0.0);
}

/// A discrete distribution over K >= 2 classes.
class ProbVector {
 public:
  explicit ProbVector(std::vector<double> probs) : probs_(std::move(probs)) {
    if (probs_.size() < 2) throw InvalidInput("ProbVector: need at least 2 classes");
    double sum = 0.0;
    for (double v : probs_) {
      if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
        throw InvalidInput("ProbVector: entry outside [0, 1]");
      }
      sum += v;
    }
    if (std::abs(sum - 1.0) > kSimplexTol) {
      throw InvalidInput("ProbVector: entries sum to " + std::to_string(sum));
    }
  }

  std::span<const double> values() const { return probs_; }
  std::size_t size() const { return probs_.size(); }
  double operator[](std::size_t i) const { return probs_[i]; }

 private:
  std::vector<double> probs_;
};

/// K >= 2 finite pre-softmax scores.
class LogitVector {
 public:
  explicit LogitVector(std::vector<double> logits) : logits_(std::move(logits)) {
    if (logits_.size() < 2) throw InvalidInput("LogitVector: need at least 2 classes");
    for (double v : logits_) {
      if (!std::isfinite(v)) throw InvalidInput("LogitVector: non-finite logit");
    }
  }

  std::span<const double> values() const { return logits_; }
  std::size_t size() const { return logits_.size(); }
  double operator[](std::size_t i) const { return logits_[i]; }

 private:
  std::vector<double> logits_;
};

/// Confidence threshold gamma in (1/k, 1) and class count k.
class BoundaryConfig {
 public:
  BoundaryConfig(double gamma, int k) : gamma_(gamma), k_(k) {
    if (k < 2) throw InvalidInput("BoundaryConfig: k must be >= 2");
    if (!(gamma > 1.0 / k && gamma < 1.0)) {
      throw InvalidInput("BoundaryConfig: gamma must lie in (1/k, 1)");
    }
  }

  double gamma() const { return gamma_; }
  int k() const { return k_; }

 private:
  double gamma_;
  int k_;
};

struct Confidence {
  std::size_t label = 0;
  double p_hat = 0.0;
};

struct BoundarySample {
  double confidence = 0.0;
  double u_min = 0.0;
  double u_max = 0.0;
  double u_ideal = 0.0;
};

inline ProbVector softmax(const LogitVector& z) {
  std::vector<double> out(z.size());
  softmax_into(z.values(), out);
  return ProbVector(std::move(out));
}

/// Overload for unvalidated spans; throws InvalidInput on non-finite entries.
inline ProbVector softmax(std::span<const double> z) {
  return softmax(LogitVector(std::vector<double>(z.begin(), z.end())));
}

/// Predicted label and its probability. Ties go to the lowest index.
inline Confidence confidence_of(std::span<const double> p) {
  Confidence c;
  c.p_hat = p[0];
  for (std::size_t i = 1; i < p.size(); ++i) {
    if (p[i] > c.p_hat) {
      c.p_hat = p[i];
      c.label = i;
    }
  }
  return c;
}

inline Confidence confidence(const ProbVector& p) { return confidence_of(p.values()); }

inline double entropy(const ProbVector& p) { return entropy_of(p.values()); }

/// Largest entropy reachable at confidence p_hat: residual mass spread evenly
/// over the k - 1 other classes.
inline double u_max(double p_hat, int k) {
  const double p = detail::checked_confidence(p_hat, k, "u_max");
  const double q = 1.0 - p;
  return std::max(0.0, -detail::xlogx(p) - detail::xlogx(q) + q * std::log(k - 1.0));
}

/// Smallest entropy reachable at confidence p_hat: residual mass on a single
/// other class.
inline double u_min(double p_hat, int k) {
  const double p = detail::checked_confidence(p_hat, k, "u_min");
  return std::max(0.0, -detail::xlogx(p) - detail::xlogx(1.0 - p));
}

/// d u_min / d p_hat on the open interval (1/k, 1).
inline double u_min_slope(double p_hat) {
  const double p = std::clamp(p_hat, kLogFloor, 1.0 - kLogFloor);
  return std::log((1.0 - p) / p);
}

/// d u_max / d p_hat on the open interval (1/k, 1).
inline double u_max_slope(double p_hat, int k) {
  const double p = std::clamp(p_hat, kLogFloor, 1.0 - kLogFloor);
  return std::log((1.0 - p) / ((k - 1.0) * p));
}

/// Ideal uncertainty: u_min above gamma, u_max at or below it.
inline double u_ideal(double p_hat, const BoundaryConfig& cfg) {
  return p_hat > cfg.gamma() ? u_min(p_hat, cfg.k()) : u_max(p_hat, cfg.k());
}

/// Confidence at which u_max equals `eta`. u_max is strictly decreasing on
/// [1/k, 1] (its maximum ln k sits at 1/k), so bisection there is exact.
inline double invert_u_max(double eta, int k) {
  if (k < 2) throw DomainError("invert_u_max: k must be >= 2");
  const double top = std::log(static_cast<double>(k));
  if (!(eta > 0.0 && eta < top)) {
    throw DomainError("invert_u_max: eta must lie in (0, ln k)");
  }
  double lo = 1.0 / k;
  double hi = 1.0;
  for (int it = 0; it < 200 && hi - lo > 1e-13; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (u_max(mid, k) > eta) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

/// Evenly spaced samples of the bounds and the ideal curve over [1/K, 1].
inline std::vector<BoundarySample> boundary_curve(const BoundaryConfig& cfg, int n_points) {
  if (n_points < 2) throw InvalidInput("boundary_curve: n_points must be >= 2");
  const int k = cfg.k();
  const double lo = 1.0 / k;
  std::vector<BoundarySample> out;
  out.reserve(static_cast<std::size_t>(n_points));
  for (int i = 0; i < n_points; ++i) {
    const double c = (i == n_points - 1) ? 1.0 : lo + (1.0 - lo) * i / (n_points - 1.0);
    out.push_back({c, u_min(c, k), u_max(c, k), u_ideal(c, cfg)});
  }
  return out;
}

}  // namespace cubcal
