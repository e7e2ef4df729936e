#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "cubcal/bnn.hpp"

using namespace cubcal;
using namespace cubcal::bnn;

namespace {

VariationalLayer one_weight(double mu, double sigma, double prior_std) {
  VariationalLayer l;
  l.mu = Matrix::Constant(1, 1, mu);
  l.rho = Matrix::Constant(1, 1, softplus_inverse(sigma));
  l.bias_mu = Vector::Zero(1);
  l.bias_rho = Vector::Constant(1, softplus_inverse(prior_std));
  l.prior_std = prior_std;
  return l;
}

/// KL by trapezoidal quadrature of q log(q / p) over +-12 posterior sigmas.
double kl_quadrature(double mu, double s, double p) {
  const auto logn = [](double x, double m, double sd) {
    return -0.5 * std::log(2 * M_PI * sd * sd) - (x - m) * (x - m) / (2 * sd * sd);
  };
  const int n = 200000;
  const double lo = mu - 12 * s;
  const double h = 24 * s / n;
  double acc = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double x = lo + i * h;
    const double lq = logn(x, mu, s);
    const double f = std::exp(lq) * (lq - logn(x, 0.0, p));
    acc += (i == 0 || i == n) ? f / 2 : f;
  }
  return acc * h;
}

Dataset blobs(int per_class, double radius, std::uint64_t seed) {
  BlobSpec spec;
  spec.k = 3;
  spec.dim = 4;
  spec.radius = radius;
  spec.n_per_class = {per_class};
  spec.seed = seed;
  return generate(spec);
}

TrainConfig small_cfg() {
  TrainConfig c;
  c.epochs = 6;
  c.batch_size = 32;
  c.mc_train = 2;
  c.mc_monitor = 2;
  c.hidden = 8;
  c.rho_init = -3.0;
  c.seed = 5;
  return c;
}

}  // namespace

TEST(Softplus, RoundTrip) {
  for (double s : {1e-6, 0.01, 0.5, 1.0, 3.0, 40.0}) EXPECT_NEAR(softplus(softplus_inverse(s)), s, 1e-9 * (1 + s));
  EXPECT_NEAR(softplus(0.0), std::log(2.0), 1e-15);
}

TEST(Sampling, VanishingSigmaReturnsMean) {
  VariationalLayer l = one_weight(0.7, 1e-12, 1.0);
  l.bias_rho.setConstant(softplus_inverse(1e-12));
  std::mt19937_64 rng(1);
  const auto d = sample_weights(l, rng);
  EXPECT_NEAR(d.w(0, 0), 0.7, 1e-10);
  EXPECT_NEAR(d.b[0], 0.0, 1e-10);
}

TEST(Sampling, DeterministicAndUnbiased) {
  const VariationalLayer l = one_weight(0.3, 0.5, 1.0);
  std::mt19937_64 a(7);
  std::mt19937_64 b(7);
  EXPECT_EQ(sample_weights(l, a).w(0, 0), sample_weights(l, b).w(0, 0));
  std::mt19937_64 rng(8);
  const int n = 100000;
  double sum = 0.0;
  double sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double w = sample_weights(l, rng).w(0, 0);
    sum += w;
    sq += w * w;
  }
  const double mean = sum / n;
  EXPECT_NEAR(mean, 0.3, 4 * 0.5 / std::sqrt(n));
  EXPECT_NEAR(std::sqrt(sq / n - mean * mean), 0.5, 0.01);
}

TEST(KlDivergence, Examples) {
  // Weight KL only; the bias sits exactly on the prior.
  EXPECT_NEAR(kl_divergence(one_weight(0.0, 1.0, 1.0)), 0.0, 1e-12);
  EXPECT_NEAR(kl_divergence(one_weight(1.0, 1.0, 1.0)), 0.5, 1e-12);
  EXPECT_NEAR(kl_divergence(one_weight(0.0, 0.5, 1.0)), std::log(2.0) + 0.125 - 0.5, 1e-12);
}

TEST(KlDivergence, MatchesQuadrature) {
  for (auto [mu, s, p] : {std::tuple{0.4, 0.2, 1.0}, {-1.0, 0.8, 0.5}, {2.0, 1.5, 1.0}}) {
    const double closed = kl_divergence(one_weight(mu, s, p)) - kl_divergence(one_weight(0.0, p, p));
    EXPECT_NEAR(closed, kl_quadrature(mu, s, p), 1e-6);
  }
}

TEST(Network, ShapeAndValidation) {
  const auto net = make_network(4, 6, 3, 1.0, -5.0, 1);
  EXPECT_EQ(net.input_dim(), 4);
  EXPECT_EQ(net.k(), 3);
  EXPECT_EQ(net.hidden.out(), 6);
  EXPECT_THROW(make_network(4, 6, 1, 1.0, -5.0, 1), InvalidInput);
  EXPECT_THROW(make_network(4, 6, 3, 0.0, -5.0, 1), InvalidInput);
}

TEST(Prediction, SinglePassAndZeroVariance) {
  auto net = make_network(4, 6, 3, 1.0, -40.0, 2);
  const std::vector<double> x{0.5, -1.0, 2.0, 0.1};
  std::mt19937_64 rng(3);
  const auto one = predict(net, x, 1, rng);
  EXPECT_EQ(one.s, 1u);
  EXPECT_EQ(one.sample_logits, one.mean_logits);
  const auto many = predict(net, x, 20, rng);
  const auto ref = predict_mean_logits(net, x);
  for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(many.mean_logits[j], ref[j], 1e-12);
  double psum = 0.0;
  for (double v : many.mean_probs) psum += v;
  EXPECT_NEAR(psum, 1.0, 1e-12);
  EXPECT_THROW(predict(net, x, 0, rng), InvalidInput);
  EXPECT_THROW(predict(net, std::vector<double>{1.0}, 1, rng), InvalidInput);
}

TEST(Moped, SigmaProportionalToWeight) {
  auto net = make_network(3, 4, 3, 1.0, -5.0, 4);
  net.hidden.mu(0, 0) = 0.0;
  const auto m = moped_init(net, 0.01);
  EXPECT_EQ(m.hidden.mu, net.hidden.mu);
  EXPECT_NEAR(softplus(m.hidden.rho(0, 1)), 0.01 * std::abs(net.hidden.mu(0, 1)), 1e-12);
  EXPECT_NEAR(softplus(m.hidden.rho(0, 0)), 1e-6, 1e-15);
  EXPECT_THROW(moped_init(net, 0.0), InvalidInput);
}

TEST(ElboLoss, HandComputedCase) {
  auto net = make_network(2, 2, 2, 1.0, -40.0, 5);
  net.hidden.mu << 1.0, 0.0, 0.0, 1.0;
  net.hidden.bias_mu.setZero();
  net.output.mu << 1.0, -1.0, -1.0, 1.0;
  net.output.bias_mu.setZero();
  Dataset batch{2, 2, {}, {}, {}};
  batch.push("a", 0, std::vector<double>{1.0, 0.0});
  batch.push("b", 1, std::vector<double>{0.0, 2.0});
  std::mt19937_64 rng(1);
  const auto t = elbo_loss(net, batch, 3, 0.0, false, rng);
  // Logits (1, -1) and (-2, 2).
  const double want = 0.5 * (std::log1p(std::exp(-2.0)) + std::log1p(std::exp(-4.0)));
  EXPECT_NEAR(t.nll, want, 1e-9);
  EXPECT_EQ(t.kl, 0.0);
  const auto t2 = elbo_loss(net, batch, 1, 0.5, false, rng);
  EXPECT_NEAR(t2.kl, 0.5 * kl_divergence(net), 1e-12);
}

TEST(Training, LearnsSeparableBlobs) {
  const auto train_set = blobs(150, 6.0, 11);
  const auto test_set = blobs(50, 6.0, 12);
  auto cfg = small_cfg();
  cfg.epochs = 15;
  const auto net = make_network(4, cfg.hidden, 3, 1.0, cfg.rho_init, 1);
  const auto res = train(net, train_set, test_set, cfg, BoundaryConfig(0.9, 3), LossWeights{0.0, 0});
  ASSERT_EQ(res.trace.size(), 15u);
  const auto recs = predict_dataset(res.net, test_set, 20, 99);
  EXPECT_GE(accuracy(recs), 0.99);
}

TEST(Training, WarmupKeepsEarlyEpochsIdentical) {
  const auto train_set = blobs(60, 2.0, 13);
  const auto val_set = blobs(20, 2.0, 14);
  const auto cfg = small_cfg();
  const auto net = make_network(4, cfg.hidden, 3, 1.0, cfg.rho_init, 2);
  const BoundaryConfig b(0.9, 3);
  const auto plain = train(net, train_set, val_set, cfg, b, LossWeights{0.0, 0});
  const auto warm = train(net, train_set, val_set, cfg, b, LossWeights{0.1, 3});
  for (int e = 0; e < 3; ++e) {
    EXPECT_EQ(warm.trace[e].beta, 0.0);
    EXPECT_EQ(warm.trace[e].total, plain.trace[e].total);
    EXPECT_EQ(warm.trace[e].val_acc, plain.trace[e].val_acc);
  }
  EXPECT_EQ(warm.trace[3].beta, 0.1);
  EXPECT_NE(warm.trace[5].total, plain.trace[5].total);
}

TEST(Training, DeterministicForSeed) {
  const auto train_set = blobs(40, 2.0, 15);
  const auto cfg = small_cfg();
  const auto net = make_network(4, cfg.hidden, 3, 1.0, cfg.rho_init, 3);
  const BoundaryConfig b(0.9, 3);
  const auto a = train(net, train_set, train_set, cfg, b, LossWeights{0.1, 1});
  const auto c = train(net, train_set, train_set, cfg, b, LossWeights{0.1, 1});
  EXPECT_EQ(a.net.hidden.mu, c.net.hidden.mu);
  EXPECT_EQ(a.net.output.rho, c.net.output.rho);
}

TEST(Training, RejectsMismatchedData) {
  const auto train_set = blobs(10, 2.0, 16);
  const auto net = make_network(5, 4, 3, 1.0, -3.0, 1);
  EXPECT_THROW(train(net, train_set, train_set, small_cfg(), BoundaryConfig(0.9, 3), LossWeights{}), InvalidInput);
  auto bad = small_cfg();
  bad.mc_train = 0;
  const auto net4 = make_network(4, 4, 3, 1.0, -3.0, 1);
  EXPECT_THROW(train(net4, train_set, train_set, bad, BoundaryConfig(0.9, 3), LossWeights{}), InvalidInput);
}

TEST(PredictDataset, WorkerCountDoesNotChangeOutput) {
  const auto data = blobs(30, 2.0, 17);
  const auto net = make_network(4, 8, 3, 1.0, -2.0, 6);
  const auto a = predict_dataset(net, data, 10, 123, 1);
  const auto b = predict_dataset(net, data, 10, 123, 4);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].mc_logits, b[i].mc_logits);
    EXPECT_EQ(a[i].id, b[i].id);
  }
}
