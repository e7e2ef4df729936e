#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <vector>

#include "cubcal/synth_data.hpp"

using namespace cubcal;

namespace {

std::size_t count_label(const Dataset& d, int c) {
  return static_cast<std::size_t>(std::count(d.labels.begin(), d.labels.end(), c));
}

}  // namespace

TEST(Generate, SameSeedSameData) {
  BlobSpec spec;
  spec.n_per_class = {50};
  const auto a = generate(spec);
  const auto b = generate(spec);
  EXPECT_EQ(a.features, b.features);
  EXPECT_EQ(a.labels, b.labels);
  spec.seed = 43;
  EXPECT_NE(generate(spec).features, a.features);
}

TEST(Generate, ClassMeansNearCenters) {
  BlobSpec spec;
  spec.n_per_class = {2000};
  spec.spread = {0.5};
  const auto d = generate(spec);
  const auto centers = default_centers(spec.k, spec.dim, spec.radius);
  const double se = 0.5 / std::sqrt(2000.0);
  for (int c = 0; c < spec.k; ++c) {
    std::vector<double> mean(static_cast<std::size_t>(spec.dim), 0.0);
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (d.labels[i] != c) continue;
      for (int j = 0; j < spec.dim; ++j) mean[static_cast<std::size_t>(j)] += d.row(i)[static_cast<std::size_t>(j)] / 2000.0;
    }
    for (int j = 0; j < spec.dim; ++j) {
      EXPECT_NEAR(mean[static_cast<std::size_t>(j)], centers[static_cast<std::size_t>(c * spec.dim + j)], 4 * se);
    }
  }
}

TEST(Generate, DefaultCentersAreEquidistant) {
  const auto c = default_centers(3, 8, 2.0);
  auto dist = [&](int a, int b) {
    double s = 0.0;
    for (int j = 0; j < 8; ++j) s += std::pow(c[static_cast<std::size_t>(a * 8 + j)] - c[static_cast<std::size_t>(b * 8 + j)], 2);
    return std::sqrt(s);
  };
  EXPECT_NEAR(dist(0, 1), 2.0 * std::sqrt(2.0), 1e-12);
  EXPECT_NEAR(dist(1, 2), 2.0 * std::sqrt(2.0), 1e-12);
  const auto far = default_centers(12, 4, 3.0);
  for (int i = 0; i < 12; ++i) {
    double n = 0.0;
    for (int j = 0; j < 4; ++j) n += std::pow(far[static_cast<std::size_t>(i * 4 + j)], 2);
    EXPECT_NEAR(std::sqrt(n), 3.0, 1e-12);
  }
}

TEST(Generate, ImbalanceRatioShapesCounts) {
  BlobSpec spec;
  spec.k = 3;
  spec.n_per_class = {400};
  spec.imbalance_ratio = 4.0;
  EXPECT_EQ(class_counts(spec), (std::vector<int>{400, 200, 100}));
  const auto d = generate(spec);
  EXPECT_EQ(count_label(d, 2), 100u);
  const auto skew = skewed_seven_class_preset(2000, 8, 1);
  EXPECT_EQ(skew.k, 7);
  EXPECT_EQ(class_counts(skew), (std::vector<int>{1440, 200, 160, 80, 60, 30, 30}));
}

TEST(Generate, RejectsBadSpecs) {
  BlobSpec spec;
  spec.spread = {0.0};
  EXPECT_THROW(generate(spec), InvalidInput);
  spec = BlobSpec{};
  spec.n_per_class = {10, 10};
  EXPECT_THROW(generate(spec), InvalidInput);
  spec = BlobSpec{};
  spec.centers = {1.0, 2.0};
  EXPECT_THROW(generate(spec), InvalidInput);
}

TEST(Split, StratifiedProportions) {
  BlobSpec spec;
  spec.n_per_class = {100};
  const auto d = generate(spec);
  std::mt19937_64 rng(1);
  const auto s = split(d, SplitSpec{}, rng);
  EXPECT_EQ(s.train.size(), 240u);
  EXPECT_EQ(s.val.size(), 30u);
  EXPECT_EQ(s.test.size(), 30u);
  for (int c = 0; c < 3; ++c) EXPECT_EQ(count_label(s.test, c), 10u);
  std::set<std::string> ids(s.train.ids.begin(), s.train.ids.end());
  ids.insert(s.val.ids.begin(), s.val.ids.end());
  ids.insert(s.test.ids.begin(), s.test.ids.end());
  EXPECT_EQ(ids.size(), 300u);
}

TEST(Split, RetainFractionLeavesTestUntouched) {
  BlobSpec spec;
  spec.n_per_class = {200};
  const auto d = generate(spec);
  std::mt19937_64 r1(9);
  std::mt19937_64 r2(9);
  SplitSpec scarce;
  scarce.retain_fraction = 0.25;
  const auto full = split(d, SplitSpec{}, r1);
  const auto thin = split(d, scarce, r2);
  EXPECT_EQ(full.test.ids, thin.test.ids);
  EXPECT_EQ(thin.train.size(), 120u);
  EXPECT_EQ(thin.val.size(), 15u);
  for (const auto& id : thin.train.ids) {
    EXPECT_NE(std::find(full.train.ids.begin(), full.train.ids.end(), id), full.train.ids.end());
  }
}

TEST(Split, Validation) {
  BlobSpec spec;
  spec.n_per_class = {20};
  const auto d = generate(spec);
  std::mt19937_64 rng(1);
  EXPECT_THROW(split(d, SplitSpec{0.5, 0.1, 0.1, 1.0, true}, rng), InvalidInput);
  EXPECT_THROW(split(d, SplitSpec{0.8, 0.1, 0.1, 0.0, true}, rng), InvalidInput);
  spec.n_per_class = {20, 20, 2};
  EXPECT_THROW(split(generate(spec), SplitSpec{}, rng), InvalidInput);
}

TEST(Ood, SizeCenterAndDeterminism) {
  const auto centers = default_centers(3, 8, 2.0);
  OodSpec spec;
  spec.center = default_ood_center(3, 8, 2.0);
  spec.n = 300;
  spec.spread = 0.5;
  const auto a = make_ood(spec, centers, 3);
  EXPECT_EQ(a.size(), 300u);
  EXPECT_EQ(a.k, 3);
  EXPECT_TRUE(std::all_of(a.labels.begin(), a.labels.end(), [](int y) { return y == -1; }));
  EXPECT_EQ(make_ood(spec, centers, 3).features, a.features);
  double m3 = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m3 += a.row(i)[3] / 300.0;
  EXPECT_NEAR(m3, 2.0, 4 * 0.5 / std::sqrt(300.0));
  spec.center = {1.0, 2.0};
  EXPECT_THROW(make_ood(spec, centers, 3), InvalidInput);
  EXPECT_THROW(default_ood_center(8, 8, 2.0), InvalidInput);
}
