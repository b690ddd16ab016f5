#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bmax/buffer.hpp"
#include "bmax/envs.hpp"
#include "bmax/infogain.hpp"
#include "bmax/planner.hpp"
#include "bmax/posterior.hpp"

namespace bmax {

struct BackendSpec {
  BackendKind kind = BackendKind::Ensemble;
  int n = 8;           // members / forward passes / weight draws
  double p = 0.25;     // dropout rate
  int n_sub = 200;     // Laplace subnetwork size
  double gamma2 = 1.0; // prior precision
};

struct Counters {
  long n_ex_steps = 2000;
  long n_ex_warm = 64;
  long n_pol = 25;
  long n_eval = 500;
  int n_k = 2;
  long n_ev_steps = 50;
};

struct ExperimentConfig {
  std::string env_name = "pointmass2d";
  EnvParams env_params;
  std::vector<std::string> task_names;  // empty = every env task
  BackendSpec backend;
  UtilitySpec utility;
  TrainConfig train;  // gamma2 is resolved from backend.gamma2
  std::vector<int> hidden = {64, 64, 64, 64};
  Act activation = Act::Tanh;
  CemConfig planner;
  Counters counters;
  std::uint64_t seed = 0;

  void validate() const;  // ConfigError names the offending key
};

// JSON round-trip; parse fills defaults, rejects unknown keys, and
// validates. to_json emits the fully resolved config.
ExperimentConfig config_from_json_text(const std::string& text);
std::string config_to_json_text(const ExperimentConfig& cfg);

// Counts real-environment interactions; explore/evaluate go through this
// wrapper so tests can assert that nothing else touches the environment.
class CountingEnv {
 public:
  explicit CountingEnv(const Env& env) : env_(env) {}
  Vector reset(RngStream& rng) {
    ++resets_;
    return env_.reset(rng);
  }
  Vector step(const Vector& s, const Vector& a, RngStream& rng) {
    ++steps_;
    return env_.step(s, a, rng);
  }
  const Env& env() const { return env_; }
  long steps() const { return steps_; }
  long resets() const { return resets_; }

 private:
  const Env& env_;
  long steps_ = 0;
  long resets_ = 0;
};

// Fits the configured backend on the buffer. `warm` carries the previous
// cycle's model for MCDropout/Laplace; ensembles always retrain from
// scratch (fresh initializations keep the members diverse).
PosteriorModel refit_posterior(const ReplayBuffer& buffer, const ExperimentConfig& cfg,
                               std::uint64_t train_seed,
                               const std::optional<GaussianMLP>& warm);

struct ExploreResult {
  ReplayBuffer buffer;
  std::vector<long> snapshot_steps;
  long env_steps = 0;
};

// Exploration loop: n_ex_warm uniform-random actions, then
// refit-plan-execute cycles of n_pol steps until n_ex_steps, with a
// resumable snapshot every n_eval steps under run_dir/checkpoints/.
// Deterministic given cfg.seed. Pass `resume_snapshot` to continue an
// interrupted run; the continuation reproduces the uninterrupted run.
ExploreResult explore(CountingEnv& env, const ExperimentConfig& cfg, const std::string& run_dir,
                      const std::optional<std::string>& resume_snapshot = std::nullopt);

// Reward table from one evaluation pass: values[task][repeat]; a failed
// repeat stays empty rather than scoring zero.
struct EvalTable {
  std::vector<std::string> task_names;
  std::vector<std::vector<std::optional<double>>> values;
};

// Evaluation loop: per task, n_k repeats of (train a fresh evaluation
// model on the snapshot, act n_ev_steps in the real env by receding-
// horizon planning on the task reward, record the sum-or-max aggregate).
// The evaluation backend is fixed to MC-dropout so runs differ only in
// the buffer they were trained from.
EvalTable evaluate(CountingEnv& env, const ReplayBuffer& snapshot,
                   const std::vector<Task>& tasks, const ExperimentConfig& cfg,
                   long snapshot_step);

struct StepBudgetReport {
  long real_steps = 0;
  long n_tasks = 0;
  int n_k = 0;
  long n_sac = 0;
  long model_free_steps = 0;
  std::optional<double> ratio;  // empty when the model-free budget is zero
};
StepBudgetReport step_budget_report(const ExperimentConfig& cfg, long n_tasks, long n_sac);

// run-directory helpers shared by the pipeline, metrics and the CLI
std::string snapshot_dir(const std::string& run_dir, long step);
std::uint64_t state_hash(const Vector& v);

}  // namespace bmax
