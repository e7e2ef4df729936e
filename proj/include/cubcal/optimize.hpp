#pragma once

// Small dense BFGS with central-difference gradients and a backtracking
// Armijo line search, plus a compass search for polishing. Intended for
// objectives with a handful of parameters.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

namespace cubcal::optimize {

struct QuasiNewtonOptions {
  int max_iterations = 50;
  double gradient_step = 1e-4;
  double gradient_tolerance = 1e-9;
  double value_tolerance = 1e-12;
  double max_step = 2.0;  ///< cap on the infinity norm of a search direction
};

struct MinimizeResult {
  std::vector<double> x;
  double value = 0.0;
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
};

template <class F>
std::vector<double> central_gradient(F& f, const std::vector<double>& x, double h, int& evals) {
  std::vector<double> g(x.size());
  std::vector<double> probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double fp = f(probe);
    probe[i] = x[i] - h;
    const double fm = f(probe);
    probe[i] = x[i];
    g[i] = (fp - fm) / (2.0 * h);
    evals += 2;
  }
  return g;
}

template <class F>
MinimizeResult minimize_bfgs(F&& f, std::vector<double> x0, const QuasiNewtonOptions& opt = {}) {
  const std::size_t n = x0.size();
  MinimizeResult res;
  res.x = std::move(x0);
  res.value = f(res.x);
  res.evaluations = 1;

  std::vector<double> hinv(n * n, 0.0);
  auto reset = [&] {
    std::fill(hinv.begin(), hinv.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) hinv[i * n + i] = 1.0;
  };
  reset();
  std::vector<double> g = central_gradient(f, res.x, opt.gradient_step, res.evaluations);

  for (res.iterations = 0; res.iterations < opt.max_iterations; ++res.iterations) {
    double gmax = 0.0;
    for (double v : g) gmax = std::max(gmax, std::abs(v));
    if (gmax < opt.gradient_tolerance) {
      res.converged = true;
      break;
    }

    std::vector<double> d(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) d[i] -= hinv[i * n + j] * g[j];
    }
    double slope = 0.0;
    for (std::size_t i = 0; i < n; ++i) slope += g[i] * d[i];
    if (!(slope < 0.0)) {
      reset();
      for (std::size_t i = 0; i < n; ++i) d[i] = -g[i];
      slope = 0.0;
      for (std::size_t i = 0; i < n; ++i) slope += g[i] * d[i];
    }
    double dmax = 0.0;
    for (double v : d) dmax = std::max(dmax, std::abs(v));
    if (dmax > opt.max_step) {
      const double s = opt.max_step / dmax;
      for (auto& v : d) v *= s;
      slope *= s;
    }

    double alpha = 1.0;
    std::vector<double> trial(n);
    double ftrial = 0.0;
    bool accepted = false;
    for (int ls = 0; ls < 40; ++ls) {
      for (std::size_t i = 0; i < n; ++i) trial[i] = res.x[i] + alpha * d[i];
      ftrial = f(trial);
      ++res.evaluations;
      if (std::isfinite(ftrial) && ftrial <= res.value + 1e-4 * alpha * slope) {
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted) {
      // No descent at the resolution of the gradient estimate.
      res.converged = true;
      break;
    }

    std::vector<double> gnew = central_gradient(f, trial, opt.gradient_step, res.evaluations);
    std::vector<double> s(n);
    std::vector<double> y(n);
    double sy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = trial[i] - res.x[i];
      y[i] = gnew[i] - g[i];
      sy += s[i] * y[i];
    }
    const double fprev = res.value;
    res.x = trial;
    res.value = ftrial;
    g = std::move(gnew);

    if (sy > 1e-12) {
      // H <- (I - rho s y^T) H (I - rho y s^T) + rho s s^T
      const double rho = 1.0 / sy;
      std::vector<double> hy(n, 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) hy[i] += hinv[i * n + j] * y[j];
      }
      double yhy = 0.0;
      for (std::size_t i = 0; i < n; ++i) yhy += y[i] * hy[i];
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          hinv[i * n + j] += (1.0 + rho * yhy) * rho * s[i] * s[j] -
                             rho * (hy[i] * s[j] + s[i] * hy[j]);
        }
      }
    }

    if (std::abs(fprev - res.value) <= opt.value_tolerance * (1.0 + std::abs(fprev))) {
      res.converged = true;
      ++res.iterations;
      break;
    }
  }
  return res;
}

struct CompassOptions {
  double initial_step = 0.25;
  double min_step = 1e-4;
  int max_evaluations = 2000;
};

/// Derivative-free coordinate search; tolerant of small jumps in f.
template <class F>
MinimizeResult minimize_compass(F&& f, std::vector<double> x0, double f0,
                                const CompassOptions& opt = {}) {
  MinimizeResult res;
  res.x = std::move(x0);
  res.value = f0;
  double step = opt.initial_step;
  std::vector<double> trial;
  while (step >= opt.min_step && res.evaluations < opt.max_evaluations) {
    bool improved = false;
    for (std::size_t i = 0; i < res.x.size() && !improved; ++i) {
      for (double dir : {1.0, -1.0}) {
        trial = res.x;
        trial[i] += dir * step;
        const double ft = f(trial);
        ++res.evaluations;
        if (std::isfinite(ft) && ft < res.value) {
          res.x = trial;
          res.value = ft;
          improved = true;
          break;
        }
      }
    }
    ++res.iterations;
    if (!improved) step *= 0.5;
  }
  res.converged = step < opt.min_step;
  return res;
}

}  // namespace cubcal::optimize
