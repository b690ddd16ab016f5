#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bmax/dynamics.hpp"
#include "bmax/prediction.hpp"

namespace bmax {

enum class BackendKind { Ensemble, McDropout, LaplaceSub };

std::string backend_name(BackendKind k);
BackendKind backend_from_name(const std::string& name);

// Subnetwork Laplace state: Gaussian over the selected flat indices with
// precision H (stored via its Cholesky factor), remaining weights frozen
// at the MAP estimate.
struct LaplaceState {
  std::vector<std::size_t> subnet;  // unique, ascending flat indices
  Matrix h_lower;                   // L with L L^T = H
  double h_logdet = 0.0;
  double gamma2 = 1.0;
};

// Tagged posterior over dynamics-model weights.
struct PosteriorModel {
  BackendKind kind = BackendKind::Ensemble;
  std::vector<GaussianMLP> members;  // N members (Ensemble) or one model
  int n_samples = 8;                 // N forward passes / weight draws
  double dropout_p = 0.0;
  LaplaceState laplace;              // only meaningful for LaplaceSub

  const GaussianMLP& primary() const { return members.front(); }
  int state_dim() const { return primary().state_dim; }
  int action_dim() const { return primary().action_dim; }
};

// N members trained by train_map from independent initializations and
// shuffles; member i's seed derives from cfg.seed and i.
PosteriorModel fit_ensemble(const ReplayBuffer& buffer, int n_members, const TrainConfig& cfg,
                            const std::vector<int>& hidden, Act hidden_act);

// One model trained with dropout active at rate p on the middle hidden
// layer; `warm` continues from previous weights.
PosteriorModel fit_mc_dropout(const ReplayBuffer& buffer, double p, int n_samples,
                              const TrainConfig& cfg, const std::vector<int>& hidden,
                              Act hidden_act,
                              const std::optional<GaussianMLP>& warm = std::nullopt);

// Indices of the n_sub largest-magnitude weights; ties break toward the
// lower flat index. Result ascending.
std::vector<std::size_t> select_subnetwork(const GaussianMLP& model, std::size_t n_sub);

// Generalized Gauss-Newton curvature of the mean head over the subnetwork
// with the learned (frozen) observation noise, plus gamma2 * I:
//   H = sum_n J_n^T diag(var_n)^-1 J_n + gamma2 I
// in the normalized training space.
PosteriorModel fit_laplace(const GaussianMLP& model, const ReplayBuffer& buffer,
                           std::size_t n_sub, double gamma2, int n_samples = 8);

// Linearized Gaussian predictive: mean at MAP, covariance
// J^T H^-1 J + diag(var_MAP), in state units. `aleatoric` carries the
// diag term separately.
GaussianPrediction laplace_predictive_linearized(const PosteriorModel& post, const Vector& s,
                                                 const Vector& a);

// Batched linearized predictives for raw (s, a) rows (planner hot path).
std::vector<GaussianPrediction> laplace_predictive_batch(const PosteriorModel& post,
                                                         const Matrix& s, const Matrix& a);

// One diagonal prediction per posterior sample at (s, a): members in
// order, N fresh dropout masks, or N subnetwork weight draws.
std::vector<GaussianPrediction> posterior_samples(const PosteriorModel& post, const Vector& s,
                                                  const Vector& a, RngStream& rng);

// Batched version: heads for a batch of raw (s, a) rows, one entry per
// posterior sample. Consumes rng exactly like posterior_samples.
std::vector<BatchHeads> component_heads(const PosteriorModel& post, const Matrix& s,
                                        const Matrix& a, RngStream& rng);

// Central (posterior mean) prediction used by mean-mode rollouts:
// ensemble average, dropout-off forward pass, or MAP forward pass.
BatchHeads central_heads(const PosteriorModel& post, const Matrix& s, const Matrix& a);
GaussianPrediction central_prediction(const PosteriorModel& post, const Vector& s,
                                      const Vector& a);

// Fixed model realizations for member-consistent rollouts: ensemble
// members round-robin, fixed dropout masks, or materialized Laplace
// weight draws.
struct ModelRealization {
  const GaussianMLP* model = nullptr;
  std::optional<DropoutMask> mask;
};
struct RealizationSet {
  std::vector<GaussianMLP> owned;  // storage backing Laplace draws
  std::vector<ModelRealization> items;
};
RealizationSet draw_realizations(const PosteriorModel& post, int count, RngStream& rng);

// subnetwork weight draw support
Vector laplace_draw_delta(const PosteriorModel& post, RngStream& rng);  // over subnet indices
GaussianMLP laplace_materialize(const PosteriorModel& post, const Vector& delta);

// Posterior checkpoint: member checkpoints plus a JSON sidecar holding
// the variant tag, p, N, gamma2, subnetwork indices and H Cholesky.
void save_posterior(const std::string& dir, const PosteriorModel& post);
PosteriorModel load_posterior(const std::string& dir);

}  // namespace bmax
