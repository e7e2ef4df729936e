#include <gtest/gtest.h>

#include <cmath>
#include <optional>
#include <random>
#include <vector>

#include "cubcal/cub_loss.hpp"
#include "cubcal/prediction.hpp"

using namespace cubcal;

namespace {

const BoundaryConfig kCfg(0.9, 3);

/// Record with the given summary values (no logits).
PredictionRecord summary(bool correct, double p_hat, double u) {
  return make_summary_record(correct ? 0 : 1, 0, p_hat, u, 3);
}

}  // namespace

TEST(Quadrant, Assignment) {
  EXPECT_EQ(classify_quadrant(0, 0, 0.95, kCfg).region(), Quadrant::AccurateCertain);
  EXPECT_EQ(classify_quadrant(1, 0, 0.95, kCfg).region(), Quadrant::InaccurateCertain);
  EXPECT_EQ(classify_quadrant(0, 0, 0.9, kCfg).region(), Quadrant::AccurateUncertain);
  EXPECT_EQ(classify_quadrant(2, 0, 0.5, kCfg).region(), Quadrant::InaccurateUncertain);
  // Unlabeled records count as inaccurate.
  EXPECT_EQ(classify_quadrant(-1, 0, 0.5, kCfg).region(), Quadrant::InaccurateUncertain);
}

TEST(Deviation, Examples) {
  EXPECT_NEAR(boundary_deviation(summary(true, 0.95, u_min(0.95, 3)), kCfg).delta, 0.0, 1e-15);
  EXPECT_NEAR(boundary_deviation(summary(true, 0.7, 0.5), kCfg).delta, 0.2, 1e-15);
  const auto d = boundary_deviation(summary(false, 0.5, 0.8), kCfg);
  EXPECT_NEAR(u_max(0.5, 3), 1.0397, 5e-5);
  EXPECT_NEAR(d.delta, u_max(0.5, 3) - 0.8, 1e-15);
  EXPECT_NEAR(d.delta, 0.2397, 5e-5);
}

TEST(Normalize, Examples) {
  const QuadrantLabel au{true, false};
  const QuadrantLabel ac{true, true};
  const QuadrantLabel ic{false, true};
  EXPECT_EQ(normalize_deviation(au, 0.0, 0.7, kCfg), 0.0);
  EXPECT_NEAR(normalize_deviation(au, 0.2, 0.7, kCfg), 0.2 / (0.9 - 1.0 / 3), 1e-15);
  EXPECT_NEAR(normalize_deviation(au, 0.2, 0.7, kCfg), 0.3529, 5e-5);
  EXPECT_EQ(normalize_deviation(ac, 0.3, 0.95, BoundaryConfig(0.9, 2)), 0.0);
  EXPECT_NEAR(normalize_deviation(ic, 0.05, 0.95, kCfg), 0.5, 1e-12);
  // AC span (1 - p) ln(K - 1).
  EXPECT_NEAR(normalize_deviation(ac, 0.01, 0.95, kCfg), 0.01 / (0.05 * std::log(2.0)), 1e-12);
  // Clamped below one.
  EXPECT_EQ(normalize_deviation(ic, 10.0, 0.95, kCfg), 1.0 - kBarrierEps);
}

TEST(Barrier, Examples) {
  EXPECT_EQ(barrier_sum(std::vector<double>{0.0, 0.0}), 0.0);
  EXPECT_NEAR(barrier_sum(std::vector<double>{0.5}), 0.6931, 5e-5);
  EXPECT_NEAR(barrier_sum(std::vector<double>{0.1, 0.2}), -std::log(0.9) - std::log(0.8), 1e-15);
  EXPECT_NEAR(barrier_sum(std::vector<double>{0.1, 0.2}), 0.3285, 5e-5);
}

TEST(CubLoss, ZeroOnBoundaryAndEmptyBatchFails) {
  std::vector<PredictionRecord> rs{summary(true, 0.95, u_min(0.95, 3)), summary(false, 0.6, u_max(0.6, 3))};
  EXPECT_NEAR(cub_loss(rs, kCfg), 0.0, 1e-12);
  EXPECT_THROW(cub_loss(std::vector<PredictionRecord>{}, kCfg), InvalidInput);
}

TEST(CubGradient, ZeroOnBoundary) {
  // p = (0.95, 0.05, 0): on the lower bound, correct, high confidence.
  const auto r = make_record_from_mean("a", 0, {std::log(0.95), std::log(0.05), -60.0});
  ASSERT_NEAR(boundary_deviation(r, kCfg).delta, 0.0, 1e-9);
  const std::vector<PredictionRecord> one{r};
  const auto grads = cub_loss_gradient(one, kCfg);
  for (double g : grads.front()) EXPECT_NEAR(g, 0.0, 1e-6);
}

/// Max |analytic - central difference| over the logits, relative to the
/// largest numeric component; empty if a step flips the predicted class.
static std::optional<double> fd_error(const std::vector<double>& z, int label) {
  const auto r = make_record_from_mean("x", label, z);
  const auto g = cub_loss_gradient(std::vector<PredictionRecord>{r}, kCfg).front();
  double scale = 0.0;
  double err = 0.0;
  for (std::size_t j = 0; j < z.size(); ++j) {
    auto zp = z;
    auto zm = z;
    zp[j] += 1e-5;
    zm[j] -= 1e-5;
    const std::vector<PredictionRecord> rp{make_record_from_mean("x", label, zp)};
    const std::vector<PredictionRecord> rm{make_record_from_mean("x", label, zm)};
    if (rp[0].pred != r.pred || rm[0].pred != r.pred) return std::nullopt;
    const double num = (cub_loss(rp, kCfg) - cub_loss(rm, kCfg)) / 2e-5;
    scale = std::max(scale, std::abs(num));
    err = std::max(err, std::abs(num - g[j]));
  }
  return err / std::max(scale, 1e-8);
}

TEST(CubGradient, MatchesFiniteDifferences) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n01;
  int checked = 0;
  while (checked < 40) {
    const std::vector<double> z{2 * n01(rng), 2 * n01(rng), 2 * n01(rng)};
    const int label = checked % 3;
    const auto r = make_record_from_mean("x", label, z);
    const auto d = boundary_deviation(r, kCfg);
    if (std::abs(r.p_hat - 0.9) < 1e-3 || d.delta_norm > 0.99 || d.delta < 1e-4) continue;
    const auto rel = fd_error(z, label);
    if (!rel) continue;
    EXPECT_LE(*rel, 1e-4);
    ++checked;
  }
}

TEST(CubGradient, DuplicationDoublesLossAndGradient) {
  const auto r = make_record_from_mc("m", 1, {1.0, 0.2, -0.5, 0.8, 0.4, -0.1}, 2, 3);
  const std::vector<PredictionRecord> one{r};
  const std::vector<PredictionRecord> two{r, r};
  EXPECT_NEAR(cub_loss(two, kCfg), 2.0 * cub_loss(one, kCfg), 1e-14);
  const auto g1 = cub_loss_gradient(one, kCfg);
  const auto g2 = cub_loss_gradient(two, kCfg);
  for (std::size_t j = 0; j < g1[0].size(); ++j) EXPECT_NEAR(g2[0][j] + g2[1][j], 2.0 * g1[0][j], 1e-14);
}

TEST(TotalLoss, WarmupSchedule) {
  const ElboTerms e{1.5, 0.25};
  const LossWeights w{0.1, 5};
  EXPECT_EQ(total_loss(e, 3.0, w, 0), 1.75);
  EXPECT_EQ(total_loss(e, 3.0, w, 4), 1.75);
  EXPECT_NEAR(total_loss(e, 3.0, w, 5), 1.75 + 0.3, 1e-15);
  EXPECT_EQ(total_loss(e, 3.0, LossWeights{0.0, 0}, 10), 1.75);
  EXPECT_THROW(total_loss(e, 3.0, w, -1), InvalidInput);
}

TEST(AvucLoss, Limits) {
  std::vector<PredictionRecord> good;
  for (int i = 0; i < 4; ++i) good.push_back(make_record_from_mean("g", 0, {60.0, 0.0, 0.0}));
  EXPECT_NEAR(avuc_loss(good, 0.325), 0.0, 1e-12);
  std::vector<PredictionRecord> bad;
  for (int i = 0; i < 4; ++i) bad.push_back(make_record_from_mean("b", 1, {4.0, 0.0, 0.0}));
  EXPECT_GT(avuc_loss(bad, 0.325), 10.0);
}

TEST(AvucLoss, HandBuiltBatch) {
  const std::vector<PredictionRecord> rs{summary(true, 0.95, 0.2), summary(true, 0.6, 0.9), summary(false, 0.92, 0.3),
                                         summary(false, 0.5, 1.0)};
  // Direct transcription of the soft counts.
  const double ac = 0.95 * (1 - std::tanh(0.2));
  const double au = 0.6 * std::tanh(0.9);
  const double ic = (1 - 0.92) * (1 - std::tanh(0.3));
  const double iu = (1 - 0.5) * std::tanh(1.0);
  const double want = std::log(1.0 + (au + ic) / (ac + iu + 1e-10));
  EXPECT_NEAR(avuc_loss(rs, 0.325), want, 1e-14);
}
