#include "bmax/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <json.hpp>

#include "bmax/errors.hpp"

namespace bmax {

namespace {
constexpr double kStdFloor = 1e-8;
constexpr double kLog2Pi = 1.8378770664093453;  // log(2*pi)
}

Normalizer Normalizer::identity(int in_dim, int out_dim) {
  Normalizer n;
  n.in_mean.assign(in_dim, 0.0);
  n.in_std.assign(in_dim, 1.0);
  n.out_mean.assign(out_dim, 0.0);
  n.out_std.assign(out_dim, 1.0);
  return n;
}

Vector Normalizer::normalize_in(const Vector& x) const {
  if (x.size() != in_mean.size()) throw ShapeError("Normalizer: input width mismatch");
  Vector out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - in_mean[i]) / in_std[i];
  return out;
}

Matrix Normalizer::normalize_in(const Matrix& x) const {
  if (x.cols() != static_cast<int>(in_mean.size()))
    throw ShapeError("Normalizer: input width mismatch");
  Matrix out = x;
  for (int r = 0; r < out.rows(); ++r) {
    double* row = out.row(r);
    for (int c = 0; c < out.cols(); ++c) row[c] = (row[c] - in_mean[c]) / in_std[c];
  }
  return out;
}

Matrix Normalizer::normalize_out(const Matrix& y) const {
  if (y.cols() != static_cast<int>(out_mean.size()))
    throw ShapeError("Normalizer: target width mismatch");
  Matrix out = y;
  for (int r = 0; r < out.rows(); ++r) {
    double* row = out.row(r);
    for (int c = 0; c < out.cols(); ++c) row[c] = (row[c] - out_mean[c]) / out_std[c];
  }
  return out;
}

Vector Normalizer::denormalize_out_mean(const Vector& y) const {
  if (y.size() != out_mean.size()) throw ShapeError("Normalizer: target width mismatch");
  Vector out(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) out[i] = y[i] * out_std[i] + out_mean[i];
  return out;
}

Vector Normalizer::denormalize_out_var(const Vector& v) const {
  if (v.size() != out_std.size()) throw ShapeError("Normalizer: target width mismatch");
  Vector out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] * out_std[i] * out_std[i];
  return out;
}

Normalizer fit_normalizer(const ReplayBuffer& buffer) {
  if (buffer.empty()) throw ShapeError("fit_normalizer: empty buffer");
  const Matrix x = buffer.inputs();
  const Matrix y = buffer.delta_targets();
  auto stats = [](const Matrix& m, Vector& mean, Vector& std) {
    mean.assign(m.cols(), 0.0);
    std.assign(m.cols(), 0.0);
    for (int r = 0; r < m.rows(); ++r)
      for (int c = 0; c < m.cols(); ++c) mean[c] += m(r, c);
    for (double& v : mean) v /= m.rows();
    for (int r = 0; r < m.rows(); ++r)
      for (int c = 0; c < m.cols(); ++c) {
        const double d = m(r, c) - mean[c];
        std[c] += d * d;
      }
    for (double& v : std) v = std::max(kStdFloor, std::sqrt(v / m.rows()));
  };
  Normalizer n;
  stats(x, n.in_mean, n.in_std);
  stats(y, n.out_mean, n.out_std);
  return n;
}

GaussianMLP GaussianMLP::make(int state_dim, int action_dim, const std::vector<int>& hidden,
                              Act hidden_act, RngStream& rng, double dropout_p) {
  GaussianMLP m;
  m.state_dim = state_dim;
  m.action_dim = action_dim;
  std::vector<int> widths;
  widths.push_back(state_dim + action_dim);
  widths.insert(widths.end(), hidden.begin(), hidden.end());
  widths.push_back(2 * state_dim);
  std::vector<Act> acts(hidden.size(), hidden_act);
  acts.push_back(Act::Identity);
  m.params = MlpParams::random_init(widths, acts, rng);
  m.norm = Normalizer::identity(state_dim + action_dim, state_dim);
  m.dropout_p = dropout_p;
  if (dropout_p > 0.0) {
    if (hidden.empty()) throw ConfigError("dropout needs at least one hidden layer");
    m.dropout_layer = static_cast<int>(hidden.size()) / 2;  // middle hidden layer
  }
  return m;
}

BatchHeads predict_heads_normalized(const GaussianMLP& model, const Matrix& x_norm,
                                    const DropoutMask* mask) {
  if (x_norm.cols() != model.input_width())
    throw ShapeError("predict_heads_normalized: input width mismatch");
  const Matrix out = mlp_apply(model.params, x_norm, mask);
  const int d = model.state_dim;
  BatchHeads heads;
  heads.mean = Matrix(out.rows(), d);
  heads.var = Matrix(out.rows(), d);
  for (int r = 0; r < out.rows(); ++r) {
    const double* o = out.row(r);
    for (int c = 0; c < d; ++c) {
      if (!std::isfinite(o[c]) || !std::isfinite(o[d + c]))
        throw NumericError("predict: non-finite network output");
      heads.mean(r, c) = o[c];
      // clamp the variance itself so the bounds are hit exactly
      heads.var(r, c) = std::clamp(std::exp(o[d + c]), model.var_min, model.var_max);
    }
  }
  return heads;
}

BatchHeads predict_batch(const GaussianMLP& model, const Matrix& s, const Matrix& a,
                         const DropoutMask* mask) {
  if (s.rows() != a.rows()) throw ShapeError("predict_batch: row count mismatch");
  if (s.cols() != model.state_dim || a.cols() != model.action_dim)
    throw ShapeError("predict_batch: dimension mismatch");
  Matrix x(s.rows(), model.input_width());
  for (int r = 0; r < s.rows(); ++r) {
    double* row = x.row(r);
    for (int c = 0; c < s.cols(); ++c) row[c] = s(r, c);
    for (int c = 0; c < a.cols(); ++c) row[s.cols() + c] = a(r, c);
  }
  BatchHeads heads = predict_heads_normalized(model, model.norm.normalize_in(x), mask);
  // deltas back to state units, add the current state
  for (int r = 0; r < heads.mean.rows(); ++r) {
    double* mr = heads.mean.row(r);
    double* vr = heads.var.row(r);
    for (int c = 0; c < model.state_dim; ++c) {
      mr[c] = s(r, c) + mr[c] * model.norm.out_std[c] + model.norm.out_mean[c];
      vr[c] = std::clamp(vr[c] * model.norm.out_std[c] * model.norm.out_std[c], model.var_min,
                         model.var_max);
    }
  }
  return heads;
}

GaussianPrediction predict(const GaussianMLP& model, const Vector& s, const Vector& a,
                           const DropoutMask* mask) {
  if (static_cast<int>(s.size()) != model.state_dim ||
      static_cast<int>(a.size()) != model.action_dim)
    throw ShapeError("predict: dimension mismatch");
  Vector x(s);
  x.insert(x.end(), a.begin(), a.end());
  const Matrix xn = model.norm.normalize_in(Matrix::row_vector(x));
  const BatchHeads heads = predict_heads_normalized(model, xn, mask);
  Vector mean(model.state_dim), var(model.state_dim);
  for (int c = 0; c < model.state_dim; ++c) {
    mean[c] = s[c] + heads.mean(0, c) * model.norm.out_std[c] + model.norm.out_mean[c];
    var[c] = std::clamp(heads.var(0, c) * model.norm.out_std[c] * model.norm.out_std[c],
                        model.var_min, model.var_max);
  }
  return GaussianPrediction::diagonal(std::move(mean), std::move(var));
}

LossResult nll_map_loss(const GaussianMLP& model, const Matrix& x_norm, const Matrix& y_norm,
                        double gamma2, const DropoutMask* mask) {
  if (x_norm.rows() == 0) throw ShapeError("nll_map_loss: empty batch");
  if (x_norm.rows() != y_norm.rows() || y_norm.cols() != model.state_dim)
    throw ShapeError("nll_map_loss: batch shape mismatch");
  const int n = x_norm.rows();
  const int d = model.state_dim;
  const MlpTrace trace = mlp_forward_trace(model.params, x_norm, mask);
  const Matrix& out = trace.h.back();
  const double lo = std::log(model.var_min), hi = std::log(model.var_max);

  double loss = 0.0;
  Matrix upstream(n, 2 * d);
  for (int r = 0; r < n; ++r) {
    const double* o = out.row(r);
    double* u = upstream.row(r);
    for (int c = 0; c < d; ++c) {
      const double raw_lv = o[d + c];
      const double lv = std::clamp(raw_lv, lo, hi);
      const double inv_var = std::exp(-lv);
      const double err = y_norm(r, c) - o[c];
      loss += 0.5 * (kLog2Pi + lv) + 0.5 * err * err * inv_var;
      u[c] = -err * inv_var / n;
      // hard clamp: no gradient outside the bounds
      u[d + c] = (raw_lv > lo && raw_lv < hi) ? (0.5 - 0.5 * err * err * inv_var) / n : 0.0;
    }
  }
  loss /= n;

  LossResult res;
  res.grad = mlp_grads_from_trace(model.params, trace, upstream, mask);
  if (gamma2 != 0.0) {
    const Vector theta = model.params.flatten();
    double sq = 0.0;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      sq += theta[i] * theta[i];
      res.grad[i] += gamma2 / n * theta[i];
    }
    loss += gamma2 / (2.0 * n) * sq;
  }
  res.loss = loss;
  return res;
}

TrainResult train_map(const ReplayBuffer& buffer, const TrainConfig& cfg,
                      const std::vector<int>& hidden, Act hidden_act,
                      const std::optional<GaussianMLP>& init, double dropout_p,
                      int dropout_layer) {
  if (buffer.size() < static_cast<std::size_t>(cfg.batch_size))
    throw ShapeError("train_map: buffer smaller than batch size");
  RngStream rng(cfg.seed, 0x7261696Eull);  // training root stream

  GaussianMLP model;
  if (init) {
    model = *init;  // warm start keeps the fitted normalizer
  } else {
    RngStream init_rng = rng.child(0);
    model = GaussianMLP::make(buffer.state_dim(), buffer.action_dim(), hidden, hidden_act,
                              init_rng, dropout_p);
    if (dropout_layer >= 0) model.dropout_layer = dropout_layer;
    model.norm = fit_normalizer(buffer);
  }

  TrainResult result;
  if (cfg.epochs == 0) {
    result.model = std::move(model);
    return result;
  }

  const Matrix x = model.norm.normalize_in(buffer.inputs());
  const Matrix y = model.norm.normalize_out(buffer.delta_targets());
  const int n = x.rows();

  Vector theta = model.params.flatten();
  Vector m(theta.size(), 0.0), v(theta.size(), 0.0);
  const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  long t = 0;

  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;

  const bool with_dropout = model.dropout_p > 0.0 && model.dropout_layer >= 0;
  const int mask_width = with_dropout ? model.params.widths[model.dropout_layer + 1] : 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    RngStream epoch_rng = rng.child(1).child(epoch);
    epoch_rng.shuffle(order);
    double epoch_loss = 0.0;
    for (int start = 0; start < n; start += cfg.batch_size) {
      const int rows = std::min(cfg.batch_size, n - start);
      Matrix xb(rows, x.cols()), yb(rows, y.cols());
      for (int r = 0; r < rows; ++r) {
        const int src = order[start + r];
        std::copy(x.row(src), x.row(src) + x.cols(), xb.row(r));
        std::copy(y.row(src), y.row(src) + y.cols(), yb.row(r));
      }
      DropoutMask batch_mask;
      const DropoutMask* mask_ptr = nullptr;
      if (with_dropout) {
        batch_mask.layer = model.dropout_layer;
        batch_mask.scale.resize(mask_width);
        const double keep_scale = 1.0 / (1.0 - model.dropout_p);
        for (double& s : batch_mask.scale)
          s = epoch_rng.uniform() < model.dropout_p ? 0.0 : keep_scale;
        mask_ptr = &batch_mask;
      }
      const LossResult lr = nll_map_loss(model, xb, yb, cfg.gamma2, mask_ptr);
      if (!std::isfinite(lr.loss))
        throw NumericError("train_map: non-finite loss at epoch " + std::to_string(epoch));
      epoch_loss += lr.loss * rows;
      ++t;
      const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
      const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
      for (std::size_t i = 0; i < theta.size(); ++i) {
        const double g = lr.grad[i];
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
        theta[i] -= cfg.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
      }
      model.params.set_flat(theta);
    }
    result.loss_trace.push_back(epoch_loss / n);
  }
  result.model = std::move(model);
  return result;
}

void save_model(const std::string& path, const GaussianMLP& model) {
  nlohmann::json extra;
  extra["normalizer"] = {{"in_mean", model.norm.in_mean},
                         {"in_std", model.norm.in_std},
                         {"out_mean", model.norm.out_mean},
                         {"out_std", model.norm.out_std}};
  extra["state_dim"] = model.state_dim;
  extra["action_dim"] = model.action_dim;
  extra["dropout_layer"] = model.dropout_layer;
  extra["dropout_p"] = model.dropout_p;
  extra["var_min"] = model.var_min;
  extra["var_max"] = model.var_max;
  save_checkpoint(path, model.params, extra.dump());
}

GaussianMLP load_model(const std::string& path) {
  const Checkpoint ck = load_checkpoint(path);
  const nlohmann::json extra = nlohmann::json::parse(ck.extra_json);
  GaussianMLP model;
  model.params = ck.params;
  const auto& n = extra.at("normalizer");
  model.norm.in_mean = n.at("in_mean").get<Vector>();
  model.norm.in_std = n.at("in_std").get<Vector>();
  model.norm.out_mean = n.at("out_mean").get<Vector>();
  model.norm.out_std = n.at("out_std").get<Vector>();
  model.state_dim = extra.at("state_dim").get<int>();
  model.action_dim = extra.at("action_dim").get<int>();
  model.dropout_layer = extra.at("dropout_layer").get<int>();
  model.dropout_p = extra.at("dropout_p").get<double>();
  model.var_min = extra.at("var_min").get<double>();
  model.var_max = extra.at("var_max").get<double>();
  return model;
}

}  // namespace bmax
