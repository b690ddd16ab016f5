#pragma once

#include <functional>
#include <string>
#include <vector>

#include "bmax/buffer.hpp"
#include "bmax/posterior.hpp"
#include "bmax/prediction.hpp"

namespace bmax {

enum class UtilityKind { JensenRenyi2, EntropySamples, EntropyLaplace };

std::string utility_name(UtilityKind k);
UtilityKind utility_from_name(const std::string& name);

// Which information measure scores a transition's novelty. epsilon
// regularizes every log-det; the homoscedastic flag drops the aleatoric
// diagonal from the Laplace entropy metric.
struct UtilitySpec {
  UtilityKind kind = UtilityKind::JensenRenyi2;
  double epsilon = 1e-6;
  bool homoscedastic = true;
};

// Shannon entropy in nats.
double gaussian_entropy(const GaussianPrediction& pred);

// Closed-form KL divergence between Gaussians of equal dimension.
double gaussian_kl(const GaussianPrediction& p, const GaussianPrediction& q);

// Renyi-2 entropy of one diagonal Gaussian: 0.5 * log((4*pi)^d det Sigma).
double renyi2_entropy(const GaussianPrediction& component);

// Renyi-2 entropy of the equal-weight mixture:
//   -log[ (1/N^2) sum_ij N(mu_i | mu_j, Sigma_i + Sigma_j) ].
double renyi2_mixture_entropy(const std::vector<GaussianPrediction>& components);

// Jensen-Renyi divergence: mixture Renyi-2 entropy minus the mean
// component Renyi-2 entropy. Zero iff all components coincide.
double utility_jr(const std::vector<GaussianPrediction>& components);

// Single Gaussian with the mixture's first and second moments.
GaussianPrediction moment_match(const std::vector<GaussianPrediction>& components);

// log det of the mean-scatter matrix (+ epsilon I); needs >= 2 components.
double utility_entropy_samples(const std::vector<GaussianPrediction>& components, double epsilon);

// log det of the epistemic covariance (+ epsilon I) from the Laplace
// linearized predictive; with homoscedastic set the aleatoric diagonal is
// stripped first, otherwise the full covariance is scored.
double utility_entropy_laplace(const GaussianPrediction& laplace_pred, bool homoscedastic,
                               double epsilon);

// KL between the weight posterior after and before conditioning on one
// transition, mean held at MAP (pure curvature update):
//   KL( N(theta, (H + J^T L^-1 J)^-1) || N(theta, H^-1) ).
double laplace_information_gain(const PosteriorModel& post, const Transition& z);

// Novelty of taking `a` in `s` under the configured measure.
double action_utility(const PosteriorModel& post, const Vector& s, const Vector& a,
                      const UtilitySpec& spec, RngStream& rng);

using Policy = std::function<Vector(const Vector& state, int t, RngStream& rng)>;

// Monte-Carlo estimate of the policy utility: mean action utility along
// model rollouts of the policy from s0. Horizon 0 gives 0.
double policy_utility_mc(const PosteriorModel& post, const Vector& s0, const Policy& policy,
                         int horizon, int n_rollouts, const UtilitySpec& spec, RngStream& rng);

}  // namespace bmax
