#include "bmax/infogain.hpp"

#include <algorithm>
#include <cmath>

#include "bmax/errors.hpp"

namespace bmax {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;   // log(2*pi)
constexpr double kLog2PiE = 2.8378770664093453;  // log(2*pi*e)

void check_diag(const GaussianPrediction& p, const char* who) {
  if (p.is_full()) throw ShapeError(std::string(who) + ": diagonal component expected");
  if (p.var.size() != p.mean.size()) throw ShapeError(std::string(who) + ": var/mean mismatch");
  for (double v : p.var)
    if (!(v > 0.0)) throw NumericError(std::string(who) + ": non-positive variance");
}

// log N(mu_i | mu_j, Sigma_i + Sigma_j) for diagonal components; the
// single routine shared by the mixture and per-component Renyi terms so
// identical components cancel exactly.
double log_pair_density(const GaussianPrediction& a, const GaussianPrediction& b) {
  double acc = 0.0;
  for (std::size_t d = 0; d < a.mean.size(); ++d) {
    const double v = a.var[d] + b.var[d];
    const double diff = a.mean[d] - b.mean[d];
    acc += -0.5 * (kLog2Pi + std::log(v)) - 0.5 * diff * diff / v;
  }
  return acc;
}

Matrix to_full_cov(const GaussianPrediction& p) {
  if (p.is_full()) return p.cov;
  Matrix cov(p.dim(), p.dim());
  for (int i = 0; i < p.dim(); ++i) cov(i, i) = p.var[i];
  return cov;
}

}  // namespace

std::string utility_name(UtilityKind k) {
  switch (k) {
    case UtilityKind::JensenRenyi2: return "jensen_renyi2";
    case UtilityKind::EntropySamples: return "entropy_samples";
    case UtilityKind::EntropyLaplace: return "entropy_laplace";
  }
  return "jensen_renyi2";
}

UtilityKind utility_from_name(const std::string& name) {
  if (name == "jensen_renyi2") return UtilityKind::JensenRenyi2;
  if (name == "entropy_samples") return UtilityKind::EntropySamples;
  if (name == "entropy_laplace") return UtilityKind::EntropyLaplace;
  throw ConfigError("unknown utility kind: " + name);
}

double gaussian_entropy(const GaussianPrediction& pred) {
  if (!pred.is_full()) {
    check_diag(pred, "gaussian_entropy");
    double acc = 0.0;
    for (double v : pred.var) acc += 0.5 * (kLog2PiE + std::log(v));
    return acc;
  }
  const CholeskyResult ch = cholesky_logdet(pred.cov);
  return 0.5 * (pred.dim() * kLog2PiE + ch.logdet);
}

double gaussian_kl(const GaussianPrediction& p, const GaussianPrediction& q) {
  if (p.dim() != q.dim()) throw ShapeError("gaussian_kl: dimension mismatch");
  const int d = p.dim();
  if (!p.is_full() && !q.is_full()) {
    check_diag(p, "gaussian_kl");
    check_diag(q, "gaussian_kl");
    double acc = 0.0;
    for (int i = 0; i < d; ++i) {
      const double diff = q.mean[i] - p.mean[i];
      acc += p.var[i] / q.var[i] + diff * diff / q.var[i] - 1.0 +
             std::log(q.var[i] / p.var[i]);
    }
    return 0.5 * acc;
  }
  const Matrix sp = to_full_cov(p);
  const Matrix sq = to_full_cov(q);
  const CholeskyResult chq = cholesky_logdet(sq);
  const CholeskyResult chp = cholesky_logdet(sp);
  const Matrix x = solve_cholesky(chq.lower, sp);  // Sigma_q^-1 Sigma_p
  double trace = 0.0;
  for (int i = 0; i < d; ++i) trace += x(i, i);
  Vector diff(d);
  for (int i = 0; i < d; ++i) diff[i] = q.mean[i] - p.mean[i];
  const Matrix md = solve_cholesky(chq.lower, Matrix::column_vector(diff));
  double maha = 0.0;
  for (int i = 0; i < d; ++i) maha += diff[i] * md(i, 0);
  return 0.5 * (trace + maha - d + chq.logdet - chp.logdet);
}

double renyi2_entropy(const GaussianPrediction& component) {
  check_diag(component, "renyi2_entropy");
  return -log_pair_density(component, component);
}

double renyi2_mixture_entropy(const std::vector<GaussianPrediction>& components) {
  if (components.empty()) throw ShapeError("renyi2_mixture_entropy: empty mixture");
  const std::size_t n = components.size();
  for (const auto& c : components) check_diag(c, "renyi2_mixture_entropy");
  std::vector<double> logz;
  logz.reserve(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) logz.push_back(log_pair_density(components[i], components[j]));
  const double m = *std::max_element(logz.begin(), logz.end());
  double acc = 0.0;
  for (double lz : logz) acc += std::exp(lz - m);
  // -log( (1/N^2) sum z_ij ) via logsumexp
  return -(m + std::log(acc) - 2.0 * std::log(static_cast<double>(n)));
}

double utility_jr(const std::vector<GaussianPrediction>& components) {
  if (components.empty()) throw ShapeError("utility_jr: empty mixture");
  const double mixture = renyi2_mixture_entropy(components);
  double mean_component = 0.0;
  for (const auto& c : components) mean_component += renyi2_entropy(c);
  mean_component /= static_cast<double>(components.size());
  return mixture - mean_component;
}

GaussianPrediction moment_match(const std::vector<GaussianPrediction>& components) {
  if (components.empty()) throw ShapeError("moment_match: empty mixture");
  const int d = components.front().dim();
  const double inv_n = 1.0 / static_cast<double>(components.size());
  Vector mean(d, 0.0);
  for (const auto& c : components) {
    check_diag(c, "moment_match");
    if (c.dim() != d) throw ShapeError("moment_match: dimension mismatch");
    for (int i = 0; i < d; ++i) mean[i] += c.mean[i];
  }
  for (double& v : mean) v *= inv_n;
  // centered form of (1/N) sum (diag(var_i) + mu_i mu_i^T) - mu mu^T
  Matrix cov(d, d);
  for (const auto& c : components) {
    for (int i = 0; i < d; ++i) {
      cov(i, i) += inv_n * c.var[i];
      for (int j = 0; j < d; ++j)
        cov(i, j) += inv_n * (c.mean[i] - mean[i]) * (c.mean[j] - mean[j]);
    }
  }
  return GaussianPrediction::full(std::move(mean), std::move(cov));
}

double utility_entropy_samples(const std::vector<GaussianPrediction>& components,
                               double epsilon) {
  if (components.size() < 2)
    throw ShapeError("utility_entropy_samples: needs at least 2 components");
  if (!(epsilon > 0.0)) throw ConfigError("utility_entropy_samples: epsilon must be > 0");
  const int d = components.front().dim();
  const double inv_n = 1.0 / static_cast<double>(components.size());
  Vector mean(d, 0.0);
  for (const auto& c : components)
    for (int i = 0; i < d; ++i) mean[i] += inv_n * c.mean[i];
  Matrix scatter(d, d);
  for (const auto& c : components)
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j)
        scatter(i, j) += inv_n * (c.mean[i] - mean[i]) * (c.mean[j] - mean[j]);
  for (int i = 0; i < d; ++i) scatter(i, i) += epsilon;
  return cholesky_logdet(scatter).logdet;
}

double utility_entropy_laplace(const GaussianPrediction& laplace_pred, bool homoscedastic,
                               double epsilon) {
  if (!laplace_pred.is_full())
    throw ShapeError("utility_entropy_laplace: full covariance required");
  if (!(epsilon > 0.0)) throw ConfigError("utility_entropy_laplace: epsilon must be > 0");
  Matrix sigma = laplace_pred.cov;
  if (homoscedastic) {
    if (laplace_pred.aleatoric.size() != static_cast<std::size_t>(laplace_pred.dim()))
      throw ShapeError("utility_entropy_laplace: aleatoric diagonal missing");
    for (int i = 0; i < sigma.rows(); ++i) sigma(i, i) -= laplace_pred.aleatoric[i];
  }
  for (int i = 0; i < sigma.rows(); ++i) sigma(i, i) += epsilon;
  return cholesky_logdet(sigma).logdet;
}

double laplace_information_gain(const PosteriorModel& post, const Transition& z) {
  if (post.kind != BackendKind::LaplaceSub)
    throw ConfigError("laplace_information_gain: posterior is not LaplaceSub");
  const GaussianMLP& model = post.primary();
  const int k = static_cast<int>(post.laplace.subnet.size());

  // normalized-space Jacobian and noise at (s, a); s' enters only through
  // the decision to observe the transition (mean held at MAP)
  Vector x(z.s);
  x.insert(x.end(), z.a.begin(), z.a.end());
  const Matrix x_norm = model.norm.normalize_in(Matrix::row_vector(x));
  const MlpTrace trace = mlp_forward_trace(model.params, x_norm);
  const BatchHeads heads = predict_heads_normalized(model, x_norm);

  std::vector<FlatIndex> addr;
  for (std::size_t idx : post.laplace.subnet)
    addr.push_back(decompose_flat_index(model.params, idx));

  const Matrix h = matmul_nt(post.laplace.h_lower, post.laplace.h_lower);
  Matrix h2 = h;
  Matrix upstream(1, 2 * model.state_dim);
  for (int d = 0; d < model.state_dim; ++d) {
    for (double& v : upstream.data()) v = 0.0;
    upstream(0, d) = 1.0;
    const std::vector<Matrix> deltas = mlp_backward_deltas(model.params, trace, upstream);
    Vector g(k);
    for (int i = 0; i < k; ++i) {
      const FlatIndex& f = addr[i];
      g[i] = f.bias ? deltas[f.layer](0, f.out)
                    : deltas[f.layer](0, f.out) * trace.h[f.layer](0, f.in);
    }
    const double w = 1.0 / heads.var(0, d);
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < k; ++j) h2(i, j) += w * g[i] * g[j];
  }

  const CholeskyResult ch2 = cholesky_logdet(h2);
  const Matrix x_tr = solve_cholesky(ch2.lower, h);  // H2^-1 H
  double trace_term = 0.0;
  for (int i = 0; i < k; ++i) trace_term += x_tr(i, i);
  return 0.5 * (trace_term - k + ch2.logdet - post.laplace.h_logdet);
}

double action_utility(const PosteriorModel& post, const Vector& s, const Vector& a,
                      const UtilitySpec& spec, RngStream& rng) {
  switch (spec.kind) {
    case UtilityKind::EntropyLaplace: {
      if (post.kind != BackendKind::LaplaceSub)
        throw ConfigError("action_utility: entropy_laplace requires the laplace backend");
      return utility_entropy_laplace(laplace_predictive_linearized(post, s, a),
                                     spec.homoscedastic, spec.epsilon);
    }
    case UtilityKind::JensenRenyi2:
      return utility_jr(posterior_samples(post, s, a, rng));
    case UtilityKind::EntropySamples:
      return utility_entropy_samples(posterior_samples(post, s, a, rng), spec.epsilon);
  }
  throw ConfigError("action_utility: unknown utility kind");
}

}  // namespace bmax
