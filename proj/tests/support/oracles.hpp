#pragma once

// Test-only reference implementations, kept independent of the library
// code paths they check: finite differences, quadrature, conjugate
// Bayesian linear regression, brute-force determinants and a grid-search
// planner.

#include <cmath>
#include <functional>
#include <vector>

#include "bmax/buffer.hpp"
#include "bmax/dynamics.hpp"
#include "bmax/envs.hpp"
#include "bmax/matrix.hpp"
#include "bmax/rng.hpp"

namespace oracle {

using bmax::Matrix;
using bmax::Vector;

// central finite differences of a scalar function of a flat vector
inline Vector fd_gradient(const std::function<double(const Vector&)>& f, const Vector& at,
                          double h = 1e-5) {
  Vector grad(at.size());
  for (std::size_t i = 0; i < at.size(); ++i) {
    Vector plus = at, minus = at;
    plus[i] += h;
    minus[i] -= h;
    grad[i] = (f(plus) - f(minus)) / (2.0 * h);
  }
  return grad;
}

// composite Simpson rule on [lo, hi]
inline double simpson(const std::function<double(double)>& f, double lo, double hi, int n = 4000) {
  if (n % 2 == 1) ++n;
  const double h = (hi - lo) / n;
  double acc = f(lo) + f(hi);
  for (int i = 1; i < n; ++i) acc += f(lo + i * h) * (i % 2 == 1 ? 4.0 : 2.0);
  return acc * h / 3.0;
}

inline double gauss_pdf(double x, double mean, double var) {
  const double d = x - mean;
  return std::exp(-0.5 * d * d / var) / std::sqrt(2.0 * M_PI * var);
}

// 1-D equal-weight Gaussian mixture density
struct Mixture1D {
  Vector means;
  Vector vars;
  double operator()(double x) const {
    double acc = 0.0;
    for (std::size_t i = 0; i < means.size(); ++i) acc += gauss_pdf(x, means[i], vars[i]);
    return acc / static_cast<double>(means.size());
  }
  double lo() const {
    double v = means[0];
    for (std::size_t i = 0; i < means.size(); ++i)
      v = std::min(v, means[i] - 12.0 * std::sqrt(vars[i]));
    return v;
  }
  double hi() const {
    double v = means[0];
    for (std::size_t i = 0; i < means.size(); ++i)
      v = std::max(v, means[i] + 12.0 * std::sqrt(vars[i]));
    return v;
  }
};

// -log integral p^2 by quadrature
inline double renyi2_by_quadrature(const Mixture1D& mix) {
  const double integral =
      simpson([&](double x) { return mix(x) * mix(x); }, mix.lo(), mix.hi(), 20000);
  return -std::log(integral);
}

// -integral p log p by quadrature
inline double shannon_by_quadrature(const Mixture1D& mix) {
  return -simpson(
      [&](double x) {
        const double p = mix(x);
        return p > 1e-300 ? p * std::log(p) : 0.0;
      },
      mix.lo(), mix.hi(), 20000);
}

// conjugate Bayesian linear regression with known noise variance:
// posterior precision X^T X / sigma2 + gamma2 I
struct BlrResult {
  Matrix posterior_cov;
  Vector posterior_mean;
};

inline BlrResult blr_fit(const Matrix& x, const Vector& y, double sigma2, double gamma2) {
  const int k = x.cols();
  Matrix prec(k, k);
  for (int i = 0; i < k; ++i) prec(i, i) = gamma2;
  Vector xty(k, 0.0);
  for (int r = 0; r < x.rows(); ++r)
    for (int i = 0; i < k; ++i) {
      xty[i] += x(r, i) * y[r] / sigma2;
      for (int j = 0; j < k; ++j) prec(i, j) += x(r, i) * x(r, j) / sigma2;
    }
  BlrResult res;
  res.posterior_cov = bmax::solve_psd(prec, Matrix::identity(k));
  res.posterior_mean = bmax::matvec(res.posterior_cov, xty);
  return res;
}

inline double blr_predictive_var(const BlrResult& blr, const Vector& x_query, double sigma2) {
  const Vector cx = bmax::matvec(blr.posterior_cov, x_query);
  return bmax::dot(x_query, cx) + sigma2;
}

inline double det2(const Matrix& a) { return a(0, 0) * a(1, 1) - a(0, 1) * a(1, 0); }

inline double det3(const Matrix& a) {
  return a(0, 0) * (a(1, 1) * a(2, 2) - a(1, 2) * a(2, 1)) -
         a(0, 1) * (a(1, 0) * a(2, 2) - a(1, 2) * a(2, 0)) +
         a(0, 2) * (a(1, 0) * a(2, 1) - a(1, 1) * a(2, 0));
}

inline Matrix random_spd(int n, bmax::RngStream& rng, double diag_boost = 0.5) {
  Matrix g(n, n);
  for (double& v : g.data()) v = rng.normal();
  Matrix spd = bmax::matmul_tn(g, g);
  for (int i = 0; i < n; ++i) spd(i, i) += diag_boost;
  return spd;
}

// single-linear-layer Gaussian dynamics model with identity normalizer:
// mean head = W (s, a) + b, log-variance head constant log(sigma2)
inline bmax::GaussianMLP linear_gaussian_model(int state_dim, int action_dim,
                                               const Matrix& mean_weights,
                                               const Vector& mean_bias, double sigma2) {
  const int in = state_dim + action_dim;
  bmax::GaussianMLP model;
  model.state_dim = state_dim;
  model.action_dim = action_dim;
  model.params = bmax::MlpParams::zeros({in, 2 * state_dim}, {bmax::Act::Identity});
  for (int o = 0; o < state_dim; ++o) {
    for (int i = 0; i < in; ++i) model.params.weights[0](o, i) = mean_weights(o, i);
    model.params.biases[0][o] = mean_bias[o];
    model.params.biases[0][state_dim + o] = std::log(sigma2);
  }
  model.norm = bmax::Normalizer::identity(in, state_dim);
  return model;
}

// exact LinGauss dynamics (sigma_env = 0) as a dynamics model with noise
// head sigma2
inline bmax::GaussianMLP lingauss_true_model(double sigma2 = 1e-6) {
  // delta form: sp - s = (A - I) s + B a
  Matrix w = Matrix::from_rows({{-0.1, 0.1, 0.0}, {0.0, -0.1, 0.5}});
  return linear_gaussian_model(2, 1, w, {0.0, 0.0}, sigma2);
}

// exhaustive open-loop grid search on a deterministic model rollout
struct GridPlan {
  Vector best_actions;
  double best_return = 0.0;
};

inline GridPlan grid_search_lingauss(const Vector& s0, int horizon, int grid,
                                     const std::function<double(const Vector&)>& reward_of_sp) {
  GridPlan best;
  best.best_return = -1e300;
  std::vector<int> idx(horizon, 0);
  const auto action_at = [&](int g) { return -1.0 + 2.0 * g / (grid - 1); };
  while (true) {
    Vector s = s0;
    double ret = 0.0;
    Vector actions(horizon);
    for (int t = 0; t < horizon; ++t) {
      const double a = action_at(idx[t]);
      actions[t] = a;
      s = {0.9 * s[0] + 0.1 * s[1], 0.9 * s[1] + 0.5 * a};
      ret += reward_of_sp(s);
    }
    if (ret > best.best_return) {
      best.best_return = ret;
      best.best_actions = actions;
    }
    int t = 0;
    while (t < horizon && ++idx[t] == grid) idx[t++] = 0;
    if (t == horizon) break;
  }
  return best;
}

// uniform random replay buffer on an environment
inline bmax::ReplayBuffer random_buffer(const bmax::Env& env, int steps, bmax::RngStream rng) {
  const bmax::EnvSpec& spec = env.spec();
  bmax::ReplayBuffer buf(spec.state_dim, spec.action_dim);
  bmax::RngStream reset_rng = rng.child(0);
  Vector s = env.reset(reset_rng);
  for (int i = 0; i < steps; ++i) {
    bmax::RngStream act_rng = rng.child(1).child(i);
    Vector a(spec.action_dim);
    for (int d = 0; d < spec.action_dim; ++d)
      a[d] = act_rng.uniform(spec.action_lo[d], spec.action_hi[d]);
    bmax::RngStream step_rng = rng.child(2).child(i);
    Vector sp = env.step(s, a, step_rng);
    buf.append({s, a, sp, i, bmax::Phase::Warmup});
    s = sp;
  }
  return buf;
}

}  // namespace oracle
