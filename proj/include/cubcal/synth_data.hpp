#pragma once

// Gaussian-blob classification corpora with controllable overlap, class
// imbalance, stratified splits with train/val reduction, and a held-out
// cluster used as near-OOD data.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cubcal/errors.hpp"

namespace cubcal {

/// Row-major feature matrix with integer labels (-1 for unlabeled rows).
struct Dataset {
  int k = 0;
  int dim = 0;
  std::vector<std::string> ids;
  std::vector<int> labels;
  std::vector<double> features;

  std::size_t size() const { return labels.size(); }
  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(features).subspan(i * static_cast<std::size_t>(dim),
                                                     static_cast<std::size_t>(dim));
  }
  void push(std::string id, int label, std::span<const double> x) {
    ids.push_back(std::move(id));
    labels.push_back(label);
    features.insert(features.end(), x.begin(), x.end());
  }
  /// Subset in the given index order.
  Dataset select(std::span<const std::size_t> idx) const {
    Dataset out{k, dim, {}, {}, {}};
    for (std::size_t i : idx) out.push(ids[i], labels[i], row(i));
    return out;
  }
};

struct BlobSpec {
  int k = 3;
  int dim = 8;
  std::vector<double> centers;  ///< k x dim; empty selects default_centers(k, dim, radius)
  double radius = 2.0;
  std::vector<double> spread{1.0};  ///< per-class std, a single entry applies to all
  std::vector<int> n_per_class{600};  ///< one entry is broadcast (then shaped by imbalance_ratio)
  double imbalance_ratio = 1.0;  ///< largest / smallest class size with geometric decay
  std::uint64_t seed = 42;
};

struct SplitSpec {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
  double retain_fraction = 1.0;
  bool stratified = true;
};

struct OodSpec {
  std::vector<double> center;
  double spread = 1.0;
  int n = 200;
  std::uint64_t seed = 7;
};

struct DataSplits {
  Dataset train;
  Dataset val;
  Dataset test;
};

/// Class c sits at radius * e_c (axis-aligned, pairwise distance radius * sqrt 2)
/// while c < dim; further classes get seeded random directions.
inline std::vector<double> default_centers(int k, int dim, double radius) {
  std::vector<double> c(static_cast<std::size_t>(k * dim), 0.0);
  std::mt19937_64 rng(0x5eedc0deULL);
  std::normal_distribution<double> n01;
  for (int i = 0; i < k; ++i) {
    if (i < dim) {
      c[static_cast<std::size_t>(i * dim + i)] = radius;
      continue;
    }
    double norm = 0.0;
    for (int j = 0; j < dim; ++j) {
      const double v = n01(rng);
      c[static_cast<std::size_t>(i * dim + j)] = v;
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (int j = 0; j < dim; ++j) c[static_cast<std::size_t>(i * dim + j)] *= radius / norm;
  }
  return c;
}

/// Per-class counts after broadcasting and applying the imbalance ratio.
inline std::vector<int> class_counts(const BlobSpec& spec) {
  std::vector<int> counts;
  if (spec.n_per_class.size() == static_cast<std::size_t>(spec.k)) {
    counts = spec.n_per_class;
  } else if (spec.n_per_class.size() == 1) {
    const int n0 = spec.n_per_class.front();
    for (int c = 0; c < spec.k; ++c) {
      const double frac = spec.k > 1 ? static_cast<double>(c) / (spec.k - 1) : 0.0;
      counts.push_back(std::max(1, static_cast<int>(std::lround(n0 * std::pow(spec.imbalance_ratio, -frac)))));
    }
  } else {
    throw InvalidInput("BlobSpec: n_per_class must have 1 or k entries");
  }
  for (int n : counts) {
    if (n < 1) throw InvalidInput("BlobSpec: class counts must be >= 1");
  }
  return counts;
}

/// Seven-class skewed preset (72 : 10 : 8 : 4 : 3 : 1.5 : 1.5 of `total`).
inline BlobSpec skewed_seven_class_preset(int total, int dim, std::uint64_t seed) {
  const double weights[] = {72.0, 10.0, 8.0, 4.0, 3.0, 1.5, 1.5};
  BlobSpec spec;
  spec.k = 7;
  spec.dim = dim;
  spec.seed = seed;
  spec.n_per_class.clear();
  for (double w : weights) {
    spec.n_per_class.push_back(std::max(3, static_cast<int>(std::lround(total * w / 100.0))));
  }
  return spec;
}

inline Dataset generate(const BlobSpec& spec, std::mt19937_64& rng) {
  if (spec.k < 2 || spec.dim < 1) throw InvalidInput("BlobSpec: need k >= 2 and dim >= 1");
  const auto counts = class_counts(spec);
  const std::vector<double> centers =
      spec.centers.empty() ? default_centers(spec.k, spec.dim, spec.radius) : spec.centers;
  if (centers.size() != static_cast<std::size_t>(spec.k * spec.dim)) {
    throw InvalidInput("BlobSpec: centers must be k x dim");
  }
  if (spec.spread.size() != 1 && spec.spread.size() != static_cast<std::size_t>(spec.k)) {
    throw InvalidInput("BlobSpec: spread must have 1 or k entries");
  }
  for (double s : spec.spread) {
    if (!(s > 0.0)) throw InvalidInput("BlobSpec: spread must be > 0");
  }

  Dataset d{spec.k, spec.dim, {}, {}, {}};
  std::normal_distribution<double> n01;
  std::vector<double> x(static_cast<std::size_t>(spec.dim));
  std::size_t next_id = 0;
  for (int c = 0; c < spec.k; ++c) {
    const double sd = spec.spread.size() == 1 ? spec.spread[0] : spec.spread[static_cast<std::size_t>(c)];
    for (int i = 0; i < counts[static_cast<std::size_t>(c)]; ++i) {
      for (int j = 0; j < spec.dim; ++j) {
        x[static_cast<std::size_t>(j)] = centers[static_cast<std::size_t>(c * spec.dim + j)] + sd * n01(rng);
      }
      d.push("s" + std::to_string(next_id++), c, x);
    }
  }
  return d;
}

inline Dataset generate(const BlobSpec& spec) {
  std::mt19937_64 rng(spec.seed);
  return generate(spec, rng);
}

/// Stratified train/val/test split. The test set is drawn first and does not
/// depend on retain_fraction, which only thins train and val.
inline DataSplits split(const Dataset& data, const SplitSpec& spec, std::mt19937_64& rng) {
  const double sum = spec.train + spec.val + spec.test;
  if (std::abs(sum - 1.0) > 1e-9 || spec.train < 0 || spec.val < 0 || spec.test < 0) {
    throw InvalidInput("SplitSpec: fractions must be non-negative and sum to 1");
  }
  if (!(spec.retain_fraction > 0.0 && spec.retain_fraction <= 1.0)) {
    throw InvalidInput("SplitSpec: retain_fraction must lie in (0, 1]");
  }

  std::vector<std::vector<std::size_t>> groups;
  if (spec.stratified) {
    groups.resize(static_cast<std::size_t>(data.k));
    for (std::size_t i = 0; i < data.size(); ++i) {
      const int y = data.labels[i];
      if (y < 0 || y >= data.k) throw InvalidInput("split: label outside [0, k)");
      groups[static_cast<std::size_t>(y)].push_back(i);
    }
    for (std::size_t c = 0; c < groups.size(); ++c) {
      if (groups[c].size() < 3) {
        throw InvalidInput("split: class " + std::to_string(c) + " has fewer than 3 samples");
      }
    }
  } else {
    groups.emplace_back(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) groups[0][i] = i;
  }

  std::vector<std::size_t> tr;
  std::vector<std::size_t> va;
  std::vector<std::size_t> te;
  for (auto& g : groups) std::shuffle(g.begin(), g.end(), rng);
  for (auto& g : groups) {
    const double n = static_cast<double>(g.size());
    const auto n_test = static_cast<std::size_t>(std::lround(n * spec.test));
    const auto n_val = static_cast<std::size_t>(std::lround(n * spec.val));
    const std::size_t n_train = g.size() - std::min(g.size(), n_test + n_val);
    const auto keep = [&](std::size_t m) {
      return static_cast<std::size_t>(std::lround(static_cast<double>(m) * spec.retain_fraction));
    };
    te.insert(te.end(), g.begin(), g.begin() + static_cast<std::ptrdiff_t>(n_test));
    auto it = g.begin() + static_cast<std::ptrdiff_t>(n_test);
    va.insert(va.end(), it, it + static_cast<std::ptrdiff_t>(keep(n_val)));
    it += static_cast<std::ptrdiff_t>(n_val);
    tr.insert(tr.end(), it, it + static_cast<std::ptrdiff_t>(keep(n_train)));
  }
  std::sort(tr.begin(), tr.end());
  std::sort(va.begin(), va.end());
  std::sort(te.begin(), te.end());
  return {data.select(tr), data.select(va), data.select(te)};
}

/// Near-OOD axis for the default centers: the first unused coordinate axis
/// at the same radius, equidistant from every ID center.
inline std::vector<double> default_ood_center(int k, int dim, double radius) {
  if (k >= dim) throw InvalidInput("default_ood_center: needs dim > k");
  std::vector<double> c(static_cast<std::size_t>(dim), 0.0);
  c[static_cast<std::size_t>(k)] = radius;
  return c;
}

/// Unlabeled cluster drawn around `spec.center`; `id_centers` fixes K and dim.
inline Dataset make_ood(const OodSpec& spec, std::span<const double> id_centers, int k) {
  if (k < 2 || spec.center.empty() || id_centers.size() != static_cast<std::size_t>(k) * spec.center.size()) {
    throw InvalidInput("make_ood: center dimension does not match the ID centers");
  }
  if (!(spec.spread > 0.0) || spec.n < 1) throw InvalidInput("make_ood: need spread > 0 and n >= 1");
  const int dim = static_cast<int>(spec.center.size());
  Dataset d{k, dim, {}, {}, {}};
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> n01;
  std::vector<double> x(static_cast<std::size_t>(dim));
  for (int i = 0; i < spec.n; ++i) {
    for (int j = 0; j < dim; ++j) {
      x[static_cast<std::size_t>(j)] = spec.center[static_cast<std::size_t>(j)] + spec.spread * n01(rng);
    }
    d.push("ood" + std::to_string(i), -1, x);
  }
  return d;
}

}  // namespace cubcal
