#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bmax/buffer.hpp"
#include "bmax/mlp.hpp"
#include "bmax/prediction.hpp"

namespace bmax {

// Per-dimension standardization of network inputs (s, a) and delta
// targets (sp - s). Stored stds are floored at 1e-8.
struct Normalizer {
  Vector in_mean, in_std;
  Vector out_mean, out_std;

  static Normalizer identity(int in_dim, int out_dim);

  Vector normalize_in(const Vector& x) const;
  Matrix normalize_in(const Matrix& x) const;
  Matrix normalize_out(const Matrix& y) const;
  Vector denormalize_out_mean(const Vector& y) const;
  // variance transforms with the squared std
  Vector denormalize_out_var(const Vector& v) const;
};

Normalizer fit_normalizer(const ReplayBuffer& buffer);

// Gaussian dynamics network: input (s, a), output [delta-mean head,
// log-variance head]. Predictions add the current state back (delta
// parameterization) and denormalize through `norm`. Variances are clamped
// to [var_min, var_max] in state units.
struct GaussianMLP {
  MlpParams params;
  Normalizer norm;
  int state_dim = 0;
  int action_dim = 0;
  int dropout_layer = -1;  // hidden-layer index carrying the dropout mask
  double dropout_p = 0.0;
  double var_min = 1e-6;
  double var_max = 1e2;

  int input_width() const { return state_dim + action_dim; }

  static GaussianMLP make(int state_dim, int action_dim, const std::vector<int>& hidden,
                          Act hidden_act, RngStream& rng, double dropout_p = 0.0);
};

GaussianPrediction predict(const GaussianMLP& model, const Vector& s, const Vector& a,
                           const DropoutMask* mask = nullptr);

// Batched heads in normalized target space: rows of `x_norm` are
// normalized inputs; outputs are the clamped mean / variance heads.
struct BatchHeads {
  Matrix mean;
  Matrix var;
};
BatchHeads predict_heads_normalized(const GaussianMLP& model, const Matrix& x_norm,
                                    const DropoutMask* mask = nullptr);

// Batched prediction in state units for a batch of raw (s, a) rows.
BatchHeads predict_batch(const GaussianMLP& model, const Matrix& s, const Matrix& a,
                         const DropoutMask* mask = nullptr);

struct TrainConfig {
  double gamma2 = 1.0;      // prior precision (weight decay strength)
  double lr = 3e-3;
  int batch_size = 64;
  int epochs = 100;
  std::uint64_t seed = 0;
};

// Mean NLL of the batch under the diagonal Gaussian heads (normalized
// target space) plus the gamma^2/(2n) * ||theta||^2 prior term, with the
// exact reverse-mode gradient in the canonical flat space.
struct LossResult {
  double loss = 0.0;
  Vector grad;
};
LossResult nll_map_loss(const GaussianMLP& model, const Matrix& x_norm, const Matrix& y_norm,
                        double gamma2, const DropoutMask* mask = nullptr);

// Minibatch Adam on nll_map_loss. `init` warm-starts (keeping its
// normalizer); otherwise parameters are drawn fresh and the normalizer is
// fitted to the buffer. Deterministic given cfg.seed.
struct TrainResult {
  GaussianMLP model;
  Vector loss_trace;  // mean epoch loss
};
TrainResult train_map(const ReplayBuffer& buffer, const TrainConfig& cfg,
                      const std::vector<int>& hidden, Act hidden_act,
                      const std::optional<GaussianMLP>& init = std::nullopt,
                      double dropout_p = 0.0, int dropout_layer = -1);

// checkpoint I/O (numkit format; normalizer and model metadata live in
// the JSON header)
void save_model(const std::string& path, const GaussianMLP& model);
GaussianMLP load_model(const std::string& path);

}  // namespace bmax
