#pragma once

#include <functional>
#include <optional>
#include <string>

#include "bmax/infogain.hpp"
#include "bmax/posterior.hpp"

namespace bmax {

enum class RolloutMode { Mean, Sample, MemberConsistent };

std::string rollout_mode_name(RolloutMode m);
RolloutMode rollout_mode_from_name(const std::string& name);

struct ActionBounds {
  Vector lo;
  Vector hi;
  Vector clip(Vector a) const;
  int dim() const { return static_cast<int>(lo.size()); }
};

struct CemConfig {
  int horizon = 30;
  int population = 96;
  double elite_frac = 0.125;
  int iterations = 4;
  double smoothing = 0.5;  // first-order low-pass factor on sampled sequences
  int n_act = 128;         // batched query width for rollout chunks
  RolloutMode mode = RolloutMode::MemberConsistent;

  int n_elites() const;
  void validate() const;
};

// Per-step score inside model rollouts: a task reward over (s, a, s') or
// an information utility over (s, a). `shift` adds a constant to every
// step score (utilities are defined up to additive constants).
struct ScoreFn {
  std::function<double(const Vector& s, const Vector& a, const Vector& sp)> reward;
  std::optional<UtilitySpec> utility;
  double shift = 0.0;

  static ScoreFn from_reward(std::function<double(const Vector&, const Vector&, const Vector&)> r);
  static ScoreFn from_utility(UtilitySpec spec);
};

struct RolloutResult {
  Matrix states;   // (horizon+1) x |S|; truncated rows repeat the last finite state
  Vector scores;   // one per executed step
  bool faulted = false;
  int fault_step = -1;

  double total() const;
};

// Forecasts `horizon` steps from s0 under the posterior. Modes: Mean
// propagates the central prediction; Sample draws each next state from a
// freshly sampled model's predictive; MemberConsistent fixes one sampled
// model (member / mask / weight draw) for the whole rollout.
RolloutResult rollout_model(const PosteriorModel& post, const Vector& s0, const Matrix& actions,
                            RolloutMode mode, RngStream& rng, const ScoreFn* score = nullptr);
RolloutResult rollout_model(const PosteriorModel& post, const Vector& s0, const Policy& policy,
                            int horizon, RolloutMode mode, RngStream& rng,
                            const ScoreFn* score = nullptr);

struct CemResult {
  Vector first_action;
  Matrix actions;       // horizon x |A|, the best sequence found
  Vector elite_trace;   // best score per iteration, non-decreasing
  double best_score = 0.0;
};

// Cross-entropy planning over open-loop action sequences scored by model
// rollouts. Deterministic given rng; faulted rollouts score -inf.
// `warm_mean` seeds the sampling mean (receding-horizon reuse).
CemResult plan_cem(const PosteriorModel& post, const ScoreFn& score, const Vector& s0,
                   const ActionBounds& bounds, const CemConfig& cfg, RngStream& rng,
                   const std::optional<Matrix>& warm_mean = std::nullopt);

// general-score variant of the policy utility estimator
double policy_utility_mc(const PosteriorModel& post, const Vector& s0, const Policy& policy,
                         int horizon, int n_rollouts, const ScoreFn& score, RngStream& rng);

}  // namespace bmax
