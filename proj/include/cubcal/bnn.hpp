#pragma once

// Mean-field Gaussian variational classifier: two fully connected layers with
// a ReLU in between, reparameterized weight sampling, closed-form KL to an
// isotropic N(0, prior_std^2) prior, ELBO (+ beta * CUB) training with
// minibatch SGD + momentum, and Monte Carlo predictive inference.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "cubcal/cub_loss.hpp"
#include "cubcal/errors.hpp"
#include "cubcal/metrics.hpp"
#include "cubcal/prediction.hpp"
#include "cubcal/prob_core.hpp"
#include "cubcal/synth_data.hpp"

namespace cubcal::bnn {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// sigma = ln(1 + e^rho).
inline double softplus(double rho) { return rho > 30.0 ? rho : std::log1p(std::exp(rho)); }
inline double softplus_inverse(double sigma) {
  return sigma > 30.0 ? sigma : std::log(std::expm1(sigma));
}
inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// 64-bit FNV-1a; used to derive per-record seeds from string ids.
inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::mt19937_64 derived_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return std::mt19937_64(seq);
}

struct VariationalLayer {
  Matrix mu;   ///< out x in
  Matrix rho;  ///< out x in
  Vector bias_mu;
  Vector bias_rho;
  double prior_std = 1.0;

  Eigen::Index in() const { return mu.cols(); }
  Eigen::Index out() const { return mu.rows(); }
  Matrix sigma() const { return rho.unaryExpr([](double r) { return softplus(r); }); }
  Vector bias_sigma() const { return bias_rho.unaryExpr([](double r) { return softplus(r); }); }
};

/// Concrete weights w = mu + sigma * eps together with the noise used.
struct WeightDraw {
  Matrix w;
  Vector b;
  Matrix eps_w;
  Vector eps_b;
};

inline VariationalLayer make_layer(int in, int out, double prior_std, double rho_init,
                                   std::mt19937_64& rng) {
  VariationalLayer l;
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::uniform_real_distribution<double> u(-bound, bound);
  l.mu = Matrix(out, in);
  for (Eigen::Index i = 0; i < l.mu.size(); ++i) l.mu.data()[i] = u(rng);
  l.rho = Matrix::Constant(out, in, rho_init);
  l.bias_mu = Vector::Zero(out);
  l.bias_rho = Vector::Constant(out, rho_init);
  l.prior_std = prior_std;
  return l;
}

inline WeightDraw sample_weights(const VariationalLayer& layer, std::mt19937_64& rng) {
  std::normal_distribution<double> n01;
  WeightDraw d;
  d.eps_w = Matrix(layer.out(), layer.in());
  for (Eigen::Index i = 0; i < d.eps_w.size(); ++i) d.eps_w.data()[i] = n01(rng);
  d.eps_b = Vector(layer.out());
  for (Eigen::Index i = 0; i < d.eps_b.size(); ++i) d.eps_b[i] = n01(rng);
  d.w = layer.mu + layer.sigma().cwiseProduct(d.eps_w);
  d.b = layer.bias_mu + layer.bias_sigma().cwiseProduct(d.eps_b);
  return d;
}

/// The posterior mean as a draw with zero noise.
inline WeightDraw mean_weights(const VariationalLayer& layer) {
  return {layer.mu, layer.bias_mu, Matrix::Zero(layer.out(), layer.in()), Vector::Zero(layer.out())};
}

/// Closed-form KL[N(mu, sigma^2) || N(0, prior_std^2)] summed over weights and biases.
inline double kl_divergence(const VariationalLayer& layer) {
  const double p = layer.prior_std;
  const double inv2p2 = 1.0 / (2.0 * p * p);
  double kl = 0.0;
  auto term = [&](double mu, double rho) {
    const double s = softplus(rho);
    return std::log(p / s) + (s * s + mu * mu) * inv2p2 - 0.5;
  };
  for (Eigen::Index i = 0; i < layer.mu.size(); ++i) kl += term(layer.mu.data()[i], layer.rho.data()[i]);
  for (Eigen::Index i = 0; i < layer.bias_mu.size(); ++i) kl += term(layer.bias_mu[i], layer.bias_rho[i]);
  return kl;
}

struct Network {
  VariationalLayer hidden;
  VariationalLayer output;

  int input_dim() const { return static_cast<int>(hidden.in()); }
  int k() const { return static_cast<int>(output.out()); }
};

inline Network make_network(int input_dim, int hidden_width, int k, double prior_std,
                            double rho_init, std::uint64_t seed) {
  if (input_dim < 1 || hidden_width < 1 || k < 2) throw InvalidInput("make_network: bad shape");
  if (!(prior_std > 0.0)) throw InvalidInput("make_network: prior_std must be > 0");
  std::mt19937_64 rng(seed);
  Network net;
  net.hidden = make_layer(input_dim, hidden_width, prior_std, rho_init, rng);
  net.output = make_layer(hidden_width, k, prior_std, rho_init, rng);
  return net;
}

inline double kl_divergence(const Network& net) {
  return kl_divergence(net.hidden) + kl_divergence(net.output);
}

/// MOPED: mu = w, sigma = alpha * |w| (floored at 1e-6).
inline VariationalLayer moped_layer(const VariationalLayer& pretrained, double alpha) {
  if (!(alpha > 0.0)) throw InvalidInput("moped_init: alpha must be > 0");
  auto to_rho = [alpha](double w) {
    return softplus_inverse(std::max(alpha * std::abs(w), 1e-6));
  };
  VariationalLayer l = pretrained;
  l.rho = pretrained.mu.unaryExpr(to_rho);
  l.bias_rho = pretrained.bias_mu.unaryExpr(to_rho);
  return l;
}

inline Network moped_init(const Network& pretrained, double alpha) {
  return {moped_layer(pretrained.hidden, alpha), moped_layer(pretrained.output, alpha)};
}

/// Keeps the means of `pretrained` and resets every rho to `rho_init`.
inline Network bayesian_conversion(const Network& pretrained, double rho_init) {
  Network net = pretrained;
  for (VariationalLayer* l : {&net.hidden, &net.output}) {
    l->rho.setConstant(rho_init);
    l->bias_rho.setConstant(rho_init);
  }
  return net;
}

struct ForwardCache {
  Matrix pre;  ///< hidden pre-activations, n x hidden
  Matrix act;  ///< ReLU(pre)
};

inline Matrix forward(const WeightDraw& l1, const WeightDraw& l2, const Matrix& x, ForwardCache& cache) {
  cache.pre = x * l1.w.transpose();
  cache.pre.rowwise() += l1.b.transpose();
  cache.act = cache.pre.cwiseMax(0.0);
  Matrix z = cache.act * l2.w.transpose();
  z.rowwise() += l2.b.transpose();
  return z;
}

/// S Monte Carlo passes for one input.
struct MCPredictive {
  std::size_t s = 0;
  std::size_t k = 0;
  std::vector<double> sample_logits;  ///< s x k
  std::vector<double> mean_logits;
  std::vector<double> mean_probs;
};

inline MCPredictive predict(const Network& net, std::span<const double> input, int mc_infer,
                            std::mt19937_64& rng) {
  if (mc_infer < 1) throw InvalidInput("predict: mc_infer must be >= 1");
  if (input.size() != static_cast<std::size_t>(net.input_dim())) {
    throw InvalidInput("predict: input dimension mismatch");
  }
  const Matrix x = Eigen::Map<const Matrix>(input.data(), 1, net.input_dim());
  MCPredictive out;
  out.s = static_cast<std::size_t>(mc_infer);
  out.k = static_cast<std::size_t>(net.k());
  out.sample_logits.reserve(out.s * out.k);
  out.mean_logits.assign(out.k, 0.0);
  out.mean_probs.assign(out.k, 0.0);
  ForwardCache cache;
  std::vector<double> q(out.k);
  for (int s = 0; s < mc_infer; ++s) {
    const WeightDraw d1 = sample_weights(net.hidden, rng);
    const WeightDraw d2 = sample_weights(net.output, rng);
    const Matrix z = forward(d1, d2, x, cache);
    std::span<const double> row(z.data(), out.k);
    softmax_into(row, q);
    for (std::size_t j = 0; j < out.k; ++j) {
      out.sample_logits.push_back(row[j]);
      out.mean_logits[j] += row[j] / mc_infer;
      out.mean_probs[j] += q[j] / mc_infer;
    }
  }
  return out;
}

/// Deterministic forward pass through the posterior means.
inline std::vector<double> predict_mean_logits(const Network& net, std::span<const double> input) {
  const Matrix x = Eigen::Map<const Matrix>(input.data(), 1, net.input_dim());
  ForwardCache cache;
  const Matrix z = forward(mean_weights(net.hidden), mean_weights(net.output), x, cache);
  return std::vector<double>(z.data(), z.data() + z.size());
}

/// MC predictions for every row. Record i draws from an RNG seeded by
/// (seed, id_i), so the output does not depend on `workers` or row order.
inline std::vector<PredictionRecord> predict_dataset(const Network& net, const Dataset& data,
                                                     int mc_infer, std::uint64_t seed,
                                                     int workers = 1) {
  std::vector<PredictionRecord> out(data.size());
  auto run = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      auto rng = derived_rng(seed, fnv1a(data.ids[i]));
      MCPredictive p = predict(net, data.row(i), mc_infer, rng);
      out[i] = make_record_from_mc(data.ids[i], data.labels[i], std::move(p.sample_logits), p.s, p.k);
    }
  };
  const std::size_t n = data.size();
  const std::size_t w = static_cast<std::size_t>(std::clamp(workers, 1, 64));
  if (w == 1 || n < 2 * w) {
    run(0, n);
    return out;
  }
  std::vector<std::thread> pool;
  const std::size_t chunk = (n + w - 1) / w;
  for (std::size_t b = 0; b < n; b += chunk) pool.emplace_back(run, b, std::min(n, b + chunk));
  for (auto& t : pool) t.join();
  return out;
}

enum class KlScale { PerStep, Off };
enum class TrainMode { Direct, TwoStage, Moped };
enum class LrSchedule { Constant, Cosine };

struct TrainConfig {
  int epochs = 30;
  int batch_size = 64;
  double learning_rate = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  int mc_train = 5;
  int mc_infer = 80;
  int mc_monitor = 10;  ///< MC passes for the per-epoch validation metrics
  std::uint64_t seed = 42;
  KlScale kl_scale = KlScale::PerStep;
  int hidden = 32;
  double prior_std = 1.0;
  double rho_init = -5.0;
  bool class_weighted = false;
  LrSchedule schedule = LrSchedule::Constant;
  TrainMode mode = TrainMode::Direct;
  int pretrain_epochs = 20;
  double pretrain_lr = 0.05;
  double moped_alpha = 0.01;
  double u_th = 0.325;  ///< AvU threshold for the trace
  double grad_clip = 0.0;  ///< cap on the global L2 norm of the loss gradient; 0 disables

  void validate() const {
    if (epochs < 0 || batch_size < 1) throw InvalidInput("TrainConfig: epochs >= 0, batch_size >= 1");
    if (mc_train < 1 || mc_infer < 1 || mc_monitor < 1) throw InvalidInput("TrainConfig: MC counts must be >= 1");
    if (!(learning_rate > 0.0) || momentum < 0.0 || momentum >= 1.0 || weight_decay < 0.0) {
      throw InvalidInput("TrainConfig: invalid optimizer settings");
    }
    if (hidden < 1 || !(prior_std > 0.0)) throw InvalidInput("TrainConfig: hidden >= 1, prior_std > 0");
    if (pretrain_epochs < 0 || !(pretrain_lr > 0.0) || !(moped_alpha > 0.0)) {
      throw InvalidInput("TrainConfig: invalid pre-training settings");
    }
    if (!(grad_clip >= 0.0)) throw InvalidInput("TrainConfig: grad_clip must be >= 0");
  }
};

struct EpochStats {
  int epoch = 0;
  double nll = 0.0;    ///< mean per step
  double kl = 0.0;     ///< mean scaled KL per step
  double cub = 0.0;    ///< mean per-step CUB loss (batch sum), reported even when unweighted
  double beta = 0.0;   ///< effective beta this epoch
  double total = 0.0;  ///< mean per-step total objective
  double train_acc = 0.0;
  double val_acc = 0.0;
  double val_avu = 0.0;
};

struct TrainResult {
  Network net;
  std::vector<EpochStats> pretrain_trace;
  std::vector<EpochStats> trace;
};

namespace detail {

struct LayerGrad {
  Matrix mu;
  Matrix rho;
  Vector bias_mu;
  Vector bias_rho;

  explicit LayerGrad(const VariationalLayer& l)
      : mu(Matrix::Zero(l.out(), l.in())),
        rho(Matrix::Zero(l.out(), l.in())),
        bias_mu(Vector::Zero(l.out())),
        bias_rho(Vector::Zero(l.out())) {}
};

inline void accumulate(LayerGrad& g, const VariationalLayer& l, const WeightDraw& d,
                       const Matrix& gw, const Vector& gb) {
  g.mu += gw;
  g.bias_mu += gb;
  const Matrix sig_w = l.rho.unaryExpr([](double r) { return sigmoid(r); });
  const Vector sig_b = l.bias_rho.unaryExpr([](double r) { return sigmoid(r); });
  g.rho += gw.cwiseProduct(d.eps_w).cwiseProduct(sig_w);
  g.bias_rho += gb.cwiseProduct(d.eps_b).cwiseProduct(sig_b);
}

/// d(scale * KL)/d(mu, rho) for one layer.
inline void add_kl_gradient(LayerGrad& g, const VariationalLayer& l, double scale) {
  const double inv_p2 = 1.0 / (l.prior_std * l.prior_std);
  auto drho = [inv_p2](double rho) {
    const double s = softplus(rho);
    return (-1.0 / s + s * inv_p2) * sigmoid(rho);
  };
  g.mu += scale * inv_p2 * l.mu;
  g.bias_mu += scale * inv_p2 * l.bias_mu;
  g.rho += scale * l.rho.unaryExpr(drho);
  g.bias_rho += scale * l.bias_rho.unaryExpr(drho);
}

struct Velocity {
  LayerGrad hidden;
  LayerGrad output;
  explicit Velocity(const Network& n) : hidden(n.hidden), output(n.output) {}
};

/// Rescales both layers' gradients so their joint L2 norm is at most `max_norm`
/// (rho entries count only when they are being trained).
inline void clip_gradients(LayerGrad& a, LayerGrad& b, double max_norm, bool with_rho) {
  auto sq = [with_rho](const LayerGrad& g) {
    double v = g.mu.squaredNorm() + g.bias_mu.squaredNorm();
    if (with_rho) v += g.rho.squaredNorm() + g.bias_rho.squaredNorm();
    return v;
  };
  const double norm = std::sqrt(sq(a) + sq(b));
  if (!(norm > max_norm)) return;
  const double s = max_norm / norm;
  for (LayerGrad* g : {&a, &b}) {
    g->mu *= s;
    g->rho *= s;
    g->bias_mu *= s;
    g->bias_rho *= s;
  }
}

inline void sgd_update(VariationalLayer& l, LayerGrad& v, LayerGrad& g, const TrainConfig& cfg,
                       double lr, bool update_rho) {
  g.mu += cfg.weight_decay * l.mu;
  g.bias_mu += cfg.weight_decay * l.bias_mu;
  v.mu = cfg.momentum * v.mu + g.mu;
  v.bias_mu = cfg.momentum * v.bias_mu + g.bias_mu;
  l.mu -= lr * v.mu;
  l.bias_mu -= lr * v.bias_mu;
  if (update_rho) {
    v.rho = cfg.momentum * v.rho + g.rho;
    v.bias_rho = cfg.momentum * v.bias_rho + g.bias_rho;
    l.rho -= lr * v.rho;
    l.bias_rho -= lr * v.bias_rho;
  }
}

struct StepResult {
  double nll = 0.0;
  double kl = 0.0;
  double cub = 0.0;
  std::size_t hits = 0;
};

/// One minibatch update. `stochastic` = false runs the deterministic network
/// (posterior means, one pass, no KL).
inline StepResult train_step(Network& net, Velocity& vel, const Matrix& x, std::span<const int> y,
                             std::span<const double> class_weight, const TrainConfig& cfg,
                             const BoundaryConfig& bcfg, double beta, double kl_scale, double lr,
                             bool stochastic, std::mt19937_64& rng) {
  const Eigen::Index n = x.rows();
  const int k = net.k();
  const int s_count = stochastic ? cfg.mc_train : 1;
  StepResult res;

  double wsum = 0.0;
  for (int label : y) wsum += class_weight[static_cast<std::size_t>(label)];

  std::vector<WeightDraw> d1(static_cast<std::size_t>(s_count));
  std::vector<WeightDraw> d2(static_cast<std::size_t>(s_count));
  std::vector<ForwardCache> caches(static_cast<std::size_t>(s_count));
  std::vector<Matrix> logits(static_cast<std::size_t>(s_count));
  std::vector<Matrix> dz(static_cast<std::size_t>(s_count));
  for (int s = 0; s < s_count; ++s) {
    const auto si = static_cast<std::size_t>(s);
    d1[si] = stochastic ? sample_weights(net.hidden, rng) : mean_weights(net.hidden);
    d2[si] = stochastic ? sample_weights(net.output, rng) : mean_weights(net.output);
    logits[si] = forward(d1[si], d2[si], x, caches[si]);
    dz[si] = Matrix::Zero(n, k);
    std::vector<double> q(static_cast<std::size_t>(k));
    for (Eigen::Index i = 0; i < n; ++i) {
      std::span<const double> row(logits[si].row(i).data(), static_cast<std::size_t>(k));
      softmax_into(row, q);
      const int label = y[static_cast<std::size_t>(i)];
      const double w = class_weight[static_cast<std::size_t>(label)] / wsum;
      res.nll += -w * std::log(std::max(q[static_cast<std::size_t>(label)], 1e-300)) / s_count;
      for (int j = 0; j < k; ++j) {
        const double target = j == label ? 1.0 : 0.0;
        dz[si](i, j) = w * (q[static_cast<std::size_t>(j)] - target) / s_count;
      }
    }
  }

  // MC-mean predictive records for the boundary loss.
  std::vector<PredictionRecord> records;
  records.reserve(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    std::vector<double> mc(static_cast<std::size_t>(s_count * k));
    for (int s = 0; s < s_count; ++s) {
      for (int j = 0; j < k; ++j) mc[static_cast<std::size_t>(s * k + j)] = logits[static_cast<std::size_t>(s)](i, j);
    }
    records.push_back(make_record_from_mc({}, y[static_cast<std::size_t>(i)], std::move(mc),
                                          static_cast<std::size_t>(s_count), static_cast<std::size_t>(k)));
    res.hits += records.back().correct() ? 1 : 0;
  }
  res.cub = cub_loss(records, bcfg);
  if (beta > 0.0) {
    const auto grads = cub_loss_gradient(records, bcfg);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& g = grads[static_cast<std::size_t>(i)];
      for (int s = 0; s < s_count; ++s) {
        for (int j = 0; j < k; ++j) {
          dz[static_cast<std::size_t>(s)](i, j) += beta * g[static_cast<std::size_t>(s * k + j)];
        }
      }
    }
  }

  LayerGrad g1(net.hidden);
  LayerGrad g2(net.output);
  for (int s = 0; s < s_count; ++s) {
    const auto si = static_cast<std::size_t>(s);
    const Matrix gw2 = dz[si].transpose() * caches[si].act;
    const Vector gb2 = dz[si].colwise().sum().transpose();
    Matrix dpre = dz[si] * d2[si].w;
    dpre = dpre.cwiseProduct(caches[si].pre.unaryExpr([](double v) { return v > 0.0 ? 1.0 : 0.0; }));
    const Matrix gw1 = dpre.transpose() * x;
    const Vector gb1 = dpre.colwise().sum().transpose();
    accumulate(g1, net.hidden, d1[si], gw1, gb1);
    accumulate(g2, net.output, d2[si], gw2, gb2);
  }
  if (stochastic && kl_scale > 0.0) {
    res.kl = kl_scale * kl_divergence(net);
    add_kl_gradient(g1, net.hidden, kl_scale);
    add_kl_gradient(g2, net.output, kl_scale);
  }
  if (cfg.grad_clip > 0.0) clip_gradients(g1, g2, cfg.grad_clip, stochastic);
  sgd_update(net.hidden, vel.hidden, g1, cfg, lr, stochastic);
  sgd_update(net.output, vel.output, g2, cfg, lr, stochastic);
  return res;
}

inline std::vector<double> class_weights(const Dataset& data, bool balanced) {
  std::vector<double> w(static_cast<std::size_t>(data.k), 1.0);
  if (!balanced) return w;
  std::vector<double> count(static_cast<std::size_t>(data.k), 0.0);
  for (int y : data.labels) count[static_cast<std::size_t>(y)] += 1.0;
  for (std::size_t c = 0; c < w.size(); ++c) {
    w[c] = count[c] > 0.0 ? static_cast<double>(data.size()) / (data.k * count[c]) : 0.0;
  }
  return w;
}

inline std::vector<EpochStats> run_epochs(Network& net, const Dataset& train, const Dataset& val,
                                          const TrainConfig& cfg, const BoundaryConfig& bcfg,
                                          const LossWeights& weights, int epochs, double base_lr,
                                          bool stochastic, std::mt19937_64& rng,
                                          std::uint64_t monitor_stream) {
  const std::size_t n = train.size();
  if (n == 0) throw InvalidInput("train: empty training set");
  for (int label : train.labels) {
    if (label < 0 || label >= net.k()) throw InvalidInput("train: label outside [0, k)");
  }
  const std::vector<double> cw = class_weights(train, cfg.class_weighted);
  const double kl_scale =
      cfg.kl_scale == KlScale::PerStep ? 1.0 / static_cast<double>(n) : 0.0;
  Velocity vel(net);
  std::vector<std::size_t> order(n);
  std::vector<EpochStats> trace;
  const auto bs = static_cast<std::size_t>(cfg.batch_size);

  for (int epoch = 0; epoch < epochs; ++epoch) {
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    const double lr = cfg.schedule == LrSchedule::Cosine
                          ? base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * epoch / epochs))
                          : base_lr;
    const double beta = stochastic ? weights.effective_beta(epoch) : 0.0;
    EpochStats st;
    st.epoch = epoch;
    st.beta = beta;
    int steps = 0;
    std::size_t hits = 0;
    for (std::size_t start = 0; start < n; start += bs) {
      const std::size_t end = std::min(n, start + bs);
      Matrix x(static_cast<Eigen::Index>(end - start), train.dim);
      std::vector<int> y(end - start);
      for (std::size_t i = start; i < end; ++i) {
        const auto row = train.row(order[i]);
        for (int j = 0; j < train.dim; ++j) x(static_cast<Eigen::Index>(i - start), j) = row[static_cast<std::size_t>(j)];
        y[i - start] = train.labels[order[i]];
      }
      const StepResult r =
          train_step(net, vel, x, y, cw, cfg, bcfg, beta, kl_scale, lr, stochastic, rng);
      const double total = r.nll + r.kl + beta * r.cub;
      if (!std::isfinite(total)) {
        throw NumericFailure("training diverged at epoch " + std::to_string(epoch) + ", step " +
                             std::to_string(steps) + ": nll=" + std::to_string(r.nll) +
                             " kl=" + std::to_string(r.kl) + " cub=" + std::to_string(r.cub));
      }
      st.nll += r.nll;
      st.kl += r.kl;
      st.cub += r.cub;
      st.total += total;
      hits += r.hits;
      ++steps;
    }
    st.nll /= steps;
    st.kl /= steps;
    st.cub /= steps;
    st.total /= steps;
    st.train_acc = static_cast<double>(hits) / static_cast<double>(n);
    if (val.size() > 0) {
      const auto recs = predict_dataset(net, val, stochastic ? cfg.mc_monitor : 1,
                                        monitor_stream + static_cast<std::uint64_t>(epoch));
      st.val_acc = accuracy(recs);
      st.val_avu = avu(avu_counts(recs, cfg.u_th));
    }
    trace.push_back(st);
  }
  return trace;
}

}  // namespace detail

/// Trains `net` on `train`, monitoring on `val`. In TwoStage and Moped modes
/// the posterior means are first fitted as a deterministic network, then
/// converted (rho reset, or MOPED scaling) before variational training.
inline TrainResult train(Network net, const Dataset& train_set, const Dataset& val_set,
                         const TrainConfig& cfg, const BoundaryConfig& bcfg,
                         const LossWeights& weights) {
  cfg.validate();
  if (train_set.dim != net.input_dim() || train_set.k != net.k()) {
    throw InvalidInput("train: dataset shape does not match the network");
  }
  if (weights.beta < 0.0 || weights.warmup_epochs < 0) {
    throw InvalidInput("train: beta and warmup_epochs must be >= 0");
  }
  TrainResult res;
  std::mt19937_64 rng(cfg.seed);
  const std::uint64_t monitor_stream = cfg.seed * 0x9E3779B97F4A7C15ULL;
  if (cfg.mode != TrainMode::Direct) {
    res.pretrain_trace = detail::run_epochs(net, train_set, val_set, cfg, bcfg, weights,
                                            cfg.pretrain_epochs, cfg.pretrain_lr, false, rng,
                                            monitor_stream ^ 0xABCDEFULL);
    net = cfg.mode == TrainMode::Moped ? moped_init(net, cfg.moped_alpha)
                                       : bayesian_conversion(net, cfg.rho_init);
  }
  res.trace = detail::run_epochs(net, train_set, val_set, cfg, bcfg, weights, cfg.epochs,
                                 cfg.learning_rate, true, rng, monitor_stream);
  res.net = std::move(net);
  return res;
}

/// Negative ELBO pieces for one batch: NLL averaged over `mc` draws
/// (optionally class-weighted) and scaled KL.
inline ElboTerms elbo_loss(const Network& net, const Dataset& batch, int mc, double kl_scale,
                           bool class_weighted, std::mt19937_64& rng) {
  if (batch.size() == 0) throw InvalidInput("elbo_loss: empty batch");
  if (mc < 1) throw InvalidInput("elbo_loss: mc must be >= 1");
  const std::vector<double> cw = detail::class_weights(batch, class_weighted);
  Matrix x(static_cast<Eigen::Index>(batch.size()), batch.dim);
  double wsum = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    for (int j = 0; j < batch.dim; ++j) x(static_cast<Eigen::Index>(i), j) = batch.row(i)[static_cast<std::size_t>(j)];
    wsum += cw[static_cast<std::size_t>(batch.labels[i])];
  }
  ElboTerms t;
  ForwardCache cache;
  std::vector<double> q(static_cast<std::size_t>(net.k()));
  for (int s = 0; s < mc; ++s) {
    const WeightDraw d1 = sample_weights(net.hidden, rng);
    const WeightDraw d2 = sample_weights(net.output, rng);
    const Matrix z = forward(d1, d2, x, cache);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      std::span<const double> row(z.row(static_cast<Eigen::Index>(i)).data(), q.size());
      softmax_into(row, q);
      const int y = batch.labels[i];
      const double w = cw[static_cast<std::size_t>(y)] / wsum;
      t.nll += -w * std::log(std::max(q[static_cast<std::size_t>(y)], 1e-300)) / mc;
    }
  }
  t.kl = kl_scale * kl_divergence(net);
  return t;
}

}  // namespace cubcal::bnn
