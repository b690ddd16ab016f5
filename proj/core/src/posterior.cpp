#include "bmax/posterior.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "bmax/errors.hpp"
#include "bmax/parallel.hpp"

namespace bmax {

namespace {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag, std::uint64_t index) {
  return mix64(mix64(seed ^ (tag * 0x9E3779B97F4A7C15ull)) + index * 0xBF58476D1CE4E5B9ull);
}

DropoutMask fresh_mask(const GaussianMLP& model, RngStream& rng) {
  DropoutMask mask;
  mask.layer = model.dropout_layer;
  const int width = model.params.widths[model.dropout_layer + 1];
  mask.scale.resize(width);
  const double keep = 1.0 / (1.0 - model.dropout_p);
  for (double& s : mask.scale) s = rng.uniform() < model.dropout_p ? 0.0 : keep;
  return mask;
}

// decomposed subnet addresses for fast per-row Jacobian gathering
struct SubnetAddr {
  std::vector<FlatIndex> at;
};

SubnetAddr decompose_subnet(const MlpParams& p, const std::vector<std::size_t>& subnet) {
  SubnetAddr a;
  a.at.reserve(subnet.size());
  for (std::size_t idx : subnet) a.at.push_back(decompose_flat_index(p, idx));
  return a;
}

// J rows (one per state dim) of the normalized mean head wrt subnet
// weights for every row of the trace batch. jac[r] is (state_dim x n_sub).
std::vector<Matrix> mean_head_jacobians(const GaussianMLP& model, const MlpTrace& trace,
                                        const SubnetAddr& addr) {
  const int n = trace.h.front().rows();
  const int d = model.state_dim;
  const int n_sub = static_cast<int>(addr.at.size());
  std::vector<Matrix> jac(n, Matrix(d, n_sub));
  Matrix upstream(n, 2 * d);
  for (int out_dim = 0; out_dim < d; ++out_dim) {
    for (double& v : upstream.data()) v = 0.0;
    for (int r = 0; r < n; ++r) upstream(r, out_dim) = 1.0;
    const std::vector<Matrix> deltas = mlp_backward_deltas(model.params, trace, upstream);
    for (int r = 0; r < n; ++r) {
      double* jrow = jac[r].row(out_dim);
      for (int k = 0; k < n_sub; ++k) {
        const FlatIndex& f = addr.at[k];
        jrow[k] = f.bias ? deltas[f.layer](r, f.out)
                         : deltas[f.layer](r, f.out) * trace.h[f.layer](r, f.in);
      }
    }
  }
  return jac;
}

}  // namespace

std::string backend_name(BackendKind k) {
  switch (k) {
    case BackendKind::Ensemble: return "ensemble";
    case BackendKind::McDropout: return "mc_dropout";
    case BackendKind::LaplaceSub: return "laplace";
  }
  return "ensemble";
}

BackendKind backend_from_name(const std::string& name) {
  if (name == "ensemble") return BackendKind::Ensemble;
  if (name == "mc_dropout") return BackendKind::McDropout;
  if (name == "laplace") return BackendKind::LaplaceSub;
  throw ConfigError("unknown backend kind: " + name);
}

PosteriorModel fit_ensemble(const ReplayBuffer& buffer, int n_members, const TrainConfig& cfg,
                            const std::vector<int>& hidden, Act hidden_act) {
  if (n_members < 1) throw ConfigError("fit_ensemble: N must be >= 1");
  PosteriorModel post;
  post.kind = BackendKind::Ensemble;
  post.n_samples = n_members;
  post.members.resize(n_members);
  std::vector<std::string> failures(n_members);
  parallel_for(n_members, [&](int i) {
    TrainConfig member_cfg = cfg;
    member_cfg.seed = derive_seed(cfg.seed, 0x656E73ull, static_cast<std::uint64_t>(i));
    try {
      post.members[i] = train_map(buffer, member_cfg, hidden, hidden_act).model;
    } catch (const std::exception& e) {
      failures[i] = e.what();
    }
  });
  for (int i = 0; i < n_members; ++i)
    if (!failures[i].empty())
      throw NumericError("fit_ensemble: member " + std::to_string(i) + ": " + failures[i]);
  return post;
}

PosteriorModel fit_mc_dropout(const ReplayBuffer& buffer, double p, int n_samples,
                              const TrainConfig& cfg, const std::vector<int>& hidden,
                              Act hidden_act, const std::optional<GaussianMLP>& warm) {
  if (p < 0.0 || p >= 1.0) throw ConfigError("fit_mc_dropout: p must be in [0, 1)");
  PosteriorModel post;
  post.kind = BackendKind::McDropout;
  post.n_samples = n_samples;
  post.dropout_p = p;
  post.members.push_back(train_map(buffer, cfg, hidden, hidden_act, warm, p).model);
  return post;
}

std::vector<std::size_t> select_subnetwork(const GaussianMLP& model, std::size_t n_sub) {
  const Vector theta = model.params.flatten();
  if (n_sub < 1 || n_sub > theta.size())
    throw ConfigError("select_subnetwork: n_sub out of range");
  std::vector<std::size_t> idx(theta.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    const double ma = std::abs(theta[a]), mb = std::abs(theta[b]);
    if (ma != mb) return ma > mb;
    return a < b;
  });
  idx.resize(n_sub);
  std::sort(idx.begin(), idx.end());
  return idx;
}

PosteriorModel fit_laplace(const GaussianMLP& model, const ReplayBuffer& buffer,
                           std::size_t n_sub, double gamma2, int n_samples) {
  PosteriorModel post;
  post.kind = BackendKind::LaplaceSub;
  post.n_samples = n_samples;
  post.members.push_back(model);
  post.laplace.gamma2 = gamma2;
  post.laplace.subnet = select_subnetwork(model, n_sub);

  const int k = static_cast<int>(n_sub);
  Matrix h(k, k);
  for (int i = 0; i < k; ++i) h(i, i) = gamma2;

  if (!buffer.empty()) {
    const SubnetAddr addr = decompose_subnet(model.params, post.laplace.subnet);
    const Matrix x_norm = model.norm.normalize_in(buffer.inputs());
    const MlpTrace trace = mlp_forward_trace(model.params, x_norm);
    const BatchHeads heads = predict_heads_normalized(model, x_norm);
    const std::vector<Matrix> jac = mean_head_jacobians(model, trace, addr);
    for (std::size_t n = 0; n < buffer.size(); ++n) {
      for (int d = 0; d < model.state_dim; ++d) {
        const double w = 1.0 / heads.var(static_cast<int>(n), d);
        const double* g = jac[n].row(d);
        for (int i = 0; i < k; ++i) {
          const double gi = w * g[i];
          if (gi == 0.0) continue;
          double* hrow = h.row(i);
          for (int j = 0; j <= i; ++j) hrow[j] += gi * g[j];
        }
      }
    }
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < i; ++j) h(j, i) = h(i, j);
  }

  const CholeskyResult ch = cholesky_logdet(h);
  post.laplace.h_lower = ch.lower;
  post.laplace.h_logdet = ch.logdet;
  return post;
}

std::vector<GaussianPrediction> laplace_predictive_batch(const PosteriorModel& post,
                                                         const Matrix& s, const Matrix& a) {
  if (post.kind != BackendKind::LaplaceSub)
    throw ConfigError("laplace_predictive_linearized: posterior is not LaplaceSub");
  const GaussianMLP& model = post.primary();
  const int d = model.state_dim;
  const int n = s.rows();
  const int k = static_cast<int>(post.laplace.subnet.size());

  Matrix x(n, model.input_width());
  for (int r = 0; r < n; ++r) {
    double* row = x.row(r);
    for (int c = 0; c < s.cols(); ++c) row[c] = s(r, c);
    for (int c = 0; c < a.cols(); ++c) row[s.cols() + c] = a(r, c);
  }
  const Matrix x_norm = model.norm.normalize_in(x);
  const MlpTrace trace = mlp_forward_trace(model.params, x_norm);
  const BatchHeads heads = predict_heads_normalized(model, x_norm);
  const SubnetAddr addr = decompose_subnet(model.params, post.laplace.subnet);
  const std::vector<Matrix> jac = mean_head_jacobians(model, trace, addr);

  std::vector<GaussianPrediction> preds;
  preds.reserve(n);
  for (int r = 0; r < n; ++r) {
    // state-unit Jacobian: scale each output row by the target std
    Matrix jt(k, d);
    for (int out = 0; out < d; ++out)
      for (int i = 0; i < k; ++i) jt(i, out) = jac[r](out, i) * model.norm.out_std[out];
    solve_lower_inplace(post.laplace.h_lower, jt);
    Matrix cov = matmul_tn(jt, jt);  // J H^-1 J^T

    Vector mean(d), aleo(d);
    for (int c = 0; c < d; ++c) {
      mean[c] = s(r, c) + heads.mean(r, c) * model.norm.out_std[c] + model.norm.out_mean[c];
      aleo[c] = std::clamp(heads.var(r, c) * model.norm.out_std[c] * model.norm.out_std[c],
                           model.var_min, model.var_max);
      cov(c, c) += aleo[c];
    }
    GaussianPrediction pred = GaussianPrediction::full(std::move(mean), std::move(cov));
    pred.aleatoric = std::move(aleo);
    preds.push_back(std::move(pred));
  }
  return preds;
}

GaussianPrediction laplace_predictive_linearized(const PosteriorModel& post, const Vector& s,
                                                 const Vector& a) {
  return laplace_predictive_batch(post, Matrix::row_vector(s), Matrix::row_vector(a)).front();
}

Vector laplace_draw_delta(const PosteriorModel& post, RngStream& rng) {
  const int k = static_cast<int>(post.laplace.subnet.size());
  Matrix z(k, 1);
  for (int i = 0; i < k; ++i) z(i, 0) = rng.normal();
  // x = L^-T z has covariance H^-1
  solve_lower_trans_inplace(post.laplace.h_lower, z);
  return z.data();
}

GaussianMLP laplace_materialize(const PosteriorModel& post, const Vector& delta) {
  GaussianMLP model = post.primary();
  for (std::size_t i = 0; i < post.laplace.subnet.size(); ++i)
    model.params.add_flat(post.laplace.subnet[i], delta[i]);
  return model;
}

std::vector<BatchHeads> component_heads(const PosteriorModel& post, const Matrix& s,
                                        const Matrix& a, RngStream& rng) {
  std::vector<BatchHeads> out;
  switch (post.kind) {
    case BackendKind::Ensemble:
      for (const GaussianMLP& m : post.members) out.push_back(predict_batch(m, s, a));
      break;
    case BackendKind::McDropout: {
      const GaussianMLP& m = post.primary();
      for (int i = 0; i < post.n_samples; ++i) {
        const DropoutMask mask = fresh_mask(m, rng);
        out.push_back(predict_batch(m, s, a, m.dropout_p > 0.0 ? &mask : nullptr));
      }
      break;
    }
    case BackendKind::LaplaceSub:
      for (int i = 0; i < post.n_samples; ++i) {
        const GaussianMLP m = laplace_materialize(post, laplace_draw_delta(post, rng));
        out.push_back(predict_batch(m, s, a));
      }
      break;
  }
  return out;
}

std::vector<GaussianPrediction> posterior_samples(const PosteriorModel& post, const Vector& s,
                                                  const Vector& a, RngStream& rng) {
  const Matrix sm = Matrix::row_vector(s);
  const Matrix am = Matrix::row_vector(a);
  std::vector<GaussianPrediction> preds;
  for (const BatchHeads& h : component_heads(post, sm, am, rng))
    preds.push_back(GaussianPrediction::diagonal(h.mean.row_copy(0), h.var.row_copy(0)));
  return preds;
}

BatchHeads central_heads(const PosteriorModel& post, const Matrix& s, const Matrix& a) {
  switch (post.kind) {
    case BackendKind::Ensemble: {
      BatchHeads acc = predict_batch(post.members[0], s, a);
      for (std::size_t i = 1; i < post.members.size(); ++i) {
        const BatchHeads h = predict_batch(post.members[i], s, a);
        add_inplace(acc.mean, h.mean);
        add_inplace(acc.var, h.var);
      }
      const double inv = 1.0 / static_cast<double>(post.members.size());
      for (double& v : acc.mean.data()) v *= inv;
      for (double& v : acc.var.data()) v *= inv;
      return acc;
    }
    case BackendKind::McDropout:
    case BackendKind::LaplaceSub:
      // dropout-off / MAP forward pass
      return predict_batch(post.primary(), s, a);
  }
  throw ConfigError("central_heads: unknown backend");
}

GaussianPrediction central_prediction(const PosteriorModel& post, const Vector& s,
                                      const Vector& a) {
  const BatchHeads h = central_heads(post, Matrix::row_vector(s), Matrix::row_vector(a));
  return GaussianPrediction::diagonal(h.mean.row_copy(0), h.var.row_copy(0));
}

RealizationSet draw_realizations(const PosteriorModel& post, int count, RngStream& rng) {
  RealizationSet set;
  switch (post.kind) {
    case BackendKind::Ensemble:
      for (int i = 0; i < count; ++i)
        set.items.push_back({&post.members[i % post.members.size()], std::nullopt});
      break;
    case BackendKind::McDropout: {
      const GaussianMLP& m = post.primary();
      const int distinct = std::min(count, post.n_samples);
      std::vector<DropoutMask> masks;
      for (int i = 0; i < distinct; ++i) masks.push_back(fresh_mask(m, rng));
      for (int i = 0; i < count; ++i) {
        ModelRealization r;
        r.model = &m;
        if (m.dropout_p > 0.0) r.mask = masks[i % distinct];
        set.items.push_back(std::move(r));
      }
      break;
    }
    case BackendKind::LaplaceSub: {
      const int distinct = std::min(count, post.n_samples);
      set.owned.reserve(distinct);
      for (int i = 0; i < distinct; ++i)
        set.owned.push_back(laplace_materialize(post, laplace_draw_delta(post, rng)));
      for (int i = 0; i < count; ++i) set.items.push_back({&set.owned[i % distinct], std::nullopt});
      break;
    }
  }
  return set;
}

void save_posterior(const std::string& dir, const PosteriorModel& post) {
  std::filesystem::create_directories(dir);
  nlohmann::json side;
  side["kind"] = backend_name(post.kind);
  side["n_samples"] = post.n_samples;
  side["dropout_p"] = post.dropout_p;
  side["members"] = post.members.size();
  if (post.kind == BackendKind::LaplaceSub) {
    side["gamma2"] = post.laplace.gamma2;
    side["subnet"] = post.laplace.subnet;
    side["h_logdet"] = post.laplace.h_logdet;
    side["h_lower"] = post.laplace.h_lower.data();
    side["h_dim"] = post.laplace.h_lower.rows();
  }
  std::ofstream out(dir + "/posterior.json");
  out << side.dump(2) << "\n";
  for (std::size_t i = 0; i < post.members.size(); ++i)
    save_model(dir + "/member_" + std::to_string(i) + ".ckpt", post.members[i]);
}

PosteriorModel load_posterior(const std::string& dir) {
  std::ifstream in(dir + "/posterior.json");
  if (!in) throw std::runtime_error("load_posterior: cannot open " + dir + "/posterior.json");
  nlohmann::json side = nlohmann::json::parse(in);
  PosteriorModel post;
  post.kind = backend_from_name(side.at("kind").get<std::string>());
  post.n_samples = side.at("n_samples").get<int>();
  post.dropout_p = side.at("dropout_p").get<double>();
  const std::size_t members = side.at("members").get<std::size_t>();
  for (std::size_t i = 0; i < members; ++i)
    post.members.push_back(load_model(dir + "/member_" + std::to_string(i) + ".ckpt"));
  if (post.kind == BackendKind::LaplaceSub) {
    post.laplace.gamma2 = side.at("gamma2").get<double>();
    post.laplace.subnet = side.at("subnet").get<std::vector<std::size_t>>();
    post.laplace.h_logdet = side.at("h_logdet").get<double>();
    const int k = side.at("h_dim").get<int>();
    post.laplace.h_lower = Matrix(k, k);
    post.laplace.h_lower.data() = side.at("h_lower").get<Vector>();
  }
  return post;
}

}  // namespace bmax
