#include "bmax/planner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "bmax/errors.hpp"

namespace bmax {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

bool finite_row(const double* row, int n) {
  for (int i = 0; i < n; ++i)
    if (!std::isfinite(row[i])) return false;
  return true;
}

}  // namespace

std::string rollout_mode_name(RolloutMode m) {
  switch (m) {
    case RolloutMode::Mean: return "mean";
    case RolloutMode::Sample: return "sample";
    case RolloutMode::MemberConsistent: return "member_consistent";
  }
  return "mean";
}

RolloutMode rollout_mode_from_name(const std::string& name) {
  if (name == "mean") return RolloutMode::Mean;
  if (name == "sample") return RolloutMode::Sample;
  if (name == "member_consistent") return RolloutMode::MemberConsistent;
  throw ConfigError("unknown rollout mode: " + name);
}

Vector ActionBounds::clip(Vector a) const {
  if (a.size() != lo.size()) throw ShapeError("ActionBounds: dimension mismatch");
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = std::clamp(a[i], lo[i], hi[i]);
  return a;
}

int CemConfig::n_elites() const {
  return std::max(1, static_cast<int>(elite_frac * population));
}

void CemConfig::validate() const {
  if (horizon < 1) throw ConfigError("planner.horizon must be >= 1");
  if (!(elite_frac > 0.0) || elite_frac > 1.0)
    throw ConfigError("planner.elite_frac must be in (0, 1]");
  if (population < 1 || population < n_elites())
    throw ConfigError("planner.population must be >= elites >= 1");
  if (iterations < 1) throw ConfigError("planner.iterations must be >= 1");
  if (smoothing < 0.0 || smoothing >= 1.0)
    throw ConfigError("planner.smoothing must be in [0, 1)");
  if (n_act < 1) throw ConfigError("planner.n_act must be >= 1");
}

ScoreFn ScoreFn::from_reward(
    std::function<double(const Vector&, const Vector&, const Vector&)> r) {
  ScoreFn s;
  s.reward = std::move(r);
  return s;
}

ScoreFn ScoreFn::from_utility(UtilitySpec spec) {
  ScoreFn s;
  s.utility = spec;
  return s;
}

double RolloutResult::total() const {
  double acc = 0.0;
  for (double v : scores) acc += v;
  return acc;
}

namespace {

// shared single-trajectory engine; `act` provides the action for step t
RolloutResult rollout_single(const PosteriorModel& post, const Vector& s0,
                             const std::function<Vector(const Vector&, int)>& act, int horizon,
                             RolloutMode mode, RngStream& rng, const ScoreFn* score) {
  if (horizon < 0) throw ConfigError("rollout_model: negative horizon");
  const int sdim = post.state_dim();
  RolloutResult res;
  res.states = Matrix(horizon + 1, sdim);
  res.states.set_row(0, s0);

  RealizationSet fixed;
  if (mode == RolloutMode::MemberConsistent) {
    RngStream draw_rng = rng.child(0xF17Dull);
    fixed = draw_realizations(post, 1, draw_rng);
  }

  Vector s = s0;
  for (int t = 0; t < horizon; ++t) {
    const Vector a = act(s, t);
    Vector next;
    try {
      switch (mode) {
        case RolloutMode::Mean:
          next = central_prediction(post, s, a).mean;
          break;
        case RolloutMode::MemberConsistent: {
          const ModelRealization& r = fixed.items.front();
          next = predict(*r.model, s, a, r.mask ? &*r.mask : nullptr).mean;
          break;
        }
        case RolloutMode::Sample: {
          RngStream step_rng = rng.child(t);
          const std::vector<GaussianPrediction> comps = posterior_samples(post, s, a, step_rng);
          const GaussianPrediction& pick =
              comps[step_rng.uniform_int(static_cast<int>(comps.size()))];
          next.resize(sdim);
          for (int d = 0; d < sdim; ++d)
            next[d] = pick.mean[d] + std::sqrt(pick.var[d]) * step_rng.normal();
          break;
        }
      }
    } catch (const NumericError&) {
      next.assign(sdim, std::numeric_limits<double>::quiet_NaN());
    }
    if (!finite_row(next.data(), sdim)) {
      // truncated: repeat the last finite state and flag
      res.faulted = true;
      res.fault_step = t;
      for (int k = t + 1; k <= horizon; ++k) res.states.set_row(k, s);
      return res;
    }
    if (score) {
      double v;
      if (score->utility) {
        RngStream util_rng = rng.child(0x5C02Eull).child(t);
        v = action_utility(post, s, a, *score->utility, util_rng);
      } else {
        v = score->reward(s, a, next);
      }
      res.scores.push_back(v + score->shift);
    }
    res.states.set_row(t + 1, next);
    s = std::move(next);
  }
  return res;
}

}  // namespace

RolloutResult rollout_model(const PosteriorModel& post, const Vector& s0, const Matrix& actions,
                            RolloutMode mode, RngStream& rng, const ScoreFn* score) {
  if (actions.cols() != post.action_dim() && actions.rows() > 0)
    throw ShapeError("rollout_model: action width mismatch");
  return rollout_single(
      post, s0, [&](const Vector&, int t) { return actions.row_copy(t); }, actions.rows(), mode,
      rng, score);
}

RolloutResult rollout_model(const PosteriorModel& post, const Vector& s0, const Policy& policy,
                            int horizon, RolloutMode mode, RngStream& rng,
                            const ScoreFn* score) {
  RngStream pol_rng = rng.child(0x90CCFull);
  return rollout_single(
      post, s0, [&](const Vector& s, int t) { return policy(s, t, pol_rng); }, horizon, mode,
      rng, score);
}

namespace {

// Batched population scoring. Candidates are processed in chunks of
// n_act rows; all randomness is derived from (step_root, step, candidate)
// so results do not depend on the chunk partitioning.
Vector evaluate_population(const PosteriorModel& post, const ScoreFn& score, const Vector& s0,
                           const std::vector<Matrix>& seqs, RolloutMode mode,
                           const RealizationSet* fixed, RngStream step_root, int n_act) {
  const int pop = static_cast<int>(seqs.size());
  const int horizon = seqs.front().rows();
  const int sdim = post.state_dim();
  const int adim = post.action_dim();
  Vector returns(pop, 0.0);
  std::vector<char> faulted(pop, 0);

  for (int chunk = 0; chunk < pop; chunk += n_act) {
    const int rows = std::min(n_act, pop - chunk);
    Matrix s(rows, sdim);
    for (int r = 0; r < rows; ++r) s.set_row(r, s0);

    for (int t = 0; t < horizon; ++t) {
      Matrix a(rows, adim);
      for (int r = 0; r < rows; ++r) a.set_row(r, seqs[chunk + r].row_copy(t));

      // next-state propagation; numeric failures fault the whole chunk row
      // by way of the non-finite check below
      Matrix sp(rows, sdim);
      try {
      switch (mode) {
        case RolloutMode::Mean: {
          const BatchHeads h = central_heads(post, s, a);
          sp = h.mean;
          break;
        }
        case RolloutMode::MemberConsistent: {
          const int n_real = static_cast<int>(fixed->items.size());
          for (int j = 0; j < n_real; ++j) {
            std::vector<int> rows_j;
            for (int r = 0; r < rows; ++r)
              if ((chunk + r) % n_real == j) rows_j.push_back(r);
            if (rows_j.empty()) continue;
            Matrix sj(static_cast<int>(rows_j.size()), sdim);
            Matrix aj(static_cast<int>(rows_j.size()), adim);
            for (std::size_t k = 0; k < rows_j.size(); ++k) {
              sj.set_row(static_cast<int>(k), s.row_copy(rows_j[k]));
              aj.set_row(static_cast<int>(k), a.row_copy(rows_j[k]));
            }
            const ModelRealization& real = fixed->items[j];
            const BatchHeads h =
                predict_batch(*real.model, sj, aj, real.mask ? &*real.mask : nullptr);
            for (std::size_t k = 0; k < rows_j.size(); ++k)
              sp.set_row(rows_j[k], h.mean.row_copy(static_cast<int>(k)));
          }
          break;
        }
        case RolloutMode::Sample: {
          RngStream comp_rng = step_root.child(t).child(0xC0);
          const std::vector<BatchHeads> comps = component_heads(post, s, a, comp_rng);
          for (int r = 0; r < rows; ++r) {
            RngStream cand_rng = step_root.child(t).child(0x5A).child(chunk + r);
            const BatchHeads& pick = comps[cand_rng.uniform_int(static_cast<int>(comps.size()))];
            for (int d = 0; d < sdim; ++d)
              sp(r, d) = pick.mean(r, d) + std::sqrt(pick.var(r, d)) * cand_rng.normal();
          }
          break;
        }
      }
      } catch (const NumericError&) {
        for (double& v : sp.data()) v = std::numeric_limits<double>::quiet_NaN();
      }

      // step scores
      try {
      if (score.utility) {
        const UtilitySpec& spec = *score.utility;
        if (spec.kind == UtilityKind::EntropyLaplace) {
          const std::vector<GaussianPrediction> preds = laplace_predictive_batch(post, s, a);
          for (int r = 0; r < rows; ++r)
            if (!faulted[chunk + r])
              returns[chunk + r] +=
                  utility_entropy_laplace(preds[r], spec.homoscedastic, spec.epsilon) +
                  score.shift;
        } else {
          // fresh per-step components, shared across chunks by construction
          RngStream util_rng = step_root.child(t).child(0x07);
          const std::vector<BatchHeads> comps = component_heads(post, s, a, util_rng);
          std::vector<GaussianPrediction> cand(comps.size());
          for (int r = 0; r < rows; ++r) {
            if (faulted[chunk + r]) continue;
            for (std::size_t j = 0; j < comps.size(); ++j)
              cand[j] = GaussianPrediction::diagonal(comps[j].mean.row_copy(r),
                                                     comps[j].var.row_copy(r));
            const double u = spec.kind == UtilityKind::JensenRenyi2
                                 ? utility_jr(cand)
                                 : utility_entropy_samples(cand, spec.epsilon);
            returns[chunk + r] += u + score.shift;
          }
        }
      } else {
        for (int r = 0; r < rows; ++r)
          if (!faulted[chunk + r])
            returns[chunk + r] +=
                score.reward(s.row_copy(r), a.row_copy(r), sp.row_copy(r)) + score.shift;
      }
      } catch (const NumericError&) {
        for (int r = 0; r < rows; ++r) faulted[chunk + r] = 1;
      }

      // fault handling: flag and freeze the row
      for (int r = 0; r < rows; ++r) {
        if (faulted[chunk + r]) {
          sp.set_row(r, s.row_copy(r));
          continue;
        }
        if (!finite_row(sp.row(r), sdim)) {
          faulted[chunk + r] = 1;
          sp.set_row(r, s.row_copy(r));
        }
      }
      s = std::move(sp);
    }
  }

  for (int c = 0; c < pop; ++c)
    if (faulted[c]) returns[c] = kNegInf;
  return returns;
}

}  // namespace

CemResult plan_cem(const PosteriorModel& post, const ScoreFn& score, const Vector& s0,
                   const ActionBounds& bounds, const CemConfig& cfg, RngStream& rng,
                   const std::optional<Matrix>& warm_mean) {
  cfg.validate();
  if (bounds.dim() != post.action_dim()) throw ShapeError("plan_cem: bounds dimension mismatch");
  const int h = cfg.horizon;
  const int adim = bounds.dim();

  Matrix mean(h, adim);
  for (int t = 0; t < h; ++t)
    for (int d = 0; d < adim; ++d) mean(t, d) = 0.5 * (bounds.lo[d] + bounds.hi[d]);
  if (warm_mean) {
    if (warm_mean->rows() != h || warm_mean->cols() != adim)
      throw ShapeError("plan_cem: warm mean shape mismatch");
    mean = *warm_mean;
    for (int t = 0; t < h; ++t) mean.set_row(t, bounds.clip(mean.row_copy(t)));
  }
  Matrix stddev(h, adim);
  for (int t = 0; t < h; ++t)
    for (int d = 0; d < adim; ++d) stddev(t, d) = 0.5 * (bounds.hi[d] - bounds.lo[d]);

  RealizationSet fixed;
  if (cfg.mode == RolloutMode::MemberConsistent) {
    RngStream draw_rng = rng.child(0xF17Dull);
    fixed = draw_realizations(post, std::max(1, post.n_samples), draw_rng);
  }

  CemResult best;
  best.best_score = kNegInf;
  bool have_best = false;

  std::vector<Matrix> seqs(cfg.population, Matrix(h, adim));
  for (int iter = 0; iter < cfg.iterations; ++iter) {
    RngStream iter_rng = rng.child(iter + 1);
    for (int c = 0; c < cfg.population; ++c) {
      if (c == 0 && have_best) {
        seqs[0] = best.actions;  // elitism: best-ever stays in the pool
        continue;
      }
      Matrix& seq = seqs[c];
      Vector prev(adim, 0.0);
      for (int t = 0; t < h; ++t) {
        for (int d = 0; d < adim; ++d) {
          double v = mean(t, d) + stddev(t, d) * iter_rng.normal();
          if (t > 0) v = cfg.smoothing * prev[d] + (1.0 - cfg.smoothing) * v;
          seq(t, d) = std::clamp(v, bounds.lo[d], bounds.hi[d]);
        }
        prev = seq.row_copy(t);
      }
    }

    const Vector scores = evaluate_population(post, score, s0, seqs, cfg.mode, &fixed,
                                              iter_rng.child(0x57E9ull), cfg.n_act);

    std::vector<int> order(cfg.population);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      if (scores[a] != scores[b]) return scores[a] > scores[b];
      return a < b;
    });

    if (!have_best || scores[order[0]] > best.best_score) {
      best.best_score = scores[order[0]];
      best.actions = seqs[order[0]];
      have_best = true;
    }
    best.elite_trace.push_back(best.best_score);

    // refit the sampling distribution on the elite set
    const int n_el = cfg.n_elites();
    for (int t = 0; t < h; ++t) {
      for (int d = 0; d < adim; ++d) {
        double m = 0.0;
        for (int e = 0; e < n_el; ++e) m += seqs[order[e]](t, d);
        m /= n_el;
        double var = 0.0;
        for (int e = 0; e < n_el; ++e) {
          const double diff = seqs[order[e]](t, d) - m;
          var += diff * diff;
        }
        mean(t, d) = m;
        stddev(t, d) = std::max(std::sqrt(var / n_el), 1e-3 * (bounds.hi[d] - bounds.lo[d]));
      }
    }
  }

  best.first_action = best.actions.row_copy(0);
  return best;
}

double policy_utility_mc(const PosteriorModel& post, const Vector& s0, const Policy& policy,
                         int horizon, int n_rollouts, const ScoreFn& score, RngStream& rng) {
  if (horizon < 0) throw ConfigError("policy_utility_mc: negative horizon");
  if (horizon == 0 || n_rollouts == 0) return 0.0;
  double acc = 0.0;
  long count = 0;
  for (int r = 0; r < n_rollouts; ++r) {
    RngStream roll_rng = rng.child(r);
    const RolloutResult res =
        rollout_model(post, s0, policy, horizon, RolloutMode::MemberConsistent, roll_rng, &score);
    for (double v : res.scores) acc += v;
    count += static_cast<long>(res.scores.size());
  }
  return count == 0 ? 0.0 : acc / static_cast<double>(count);
}

double policy_utility_mc(const PosteriorModel& post, const Vector& s0, const Policy& policy,
                         int horizon, int n_rollouts, const UtilitySpec& spec, RngStream& rng) {
  return policy_utility_mc(post, s0, policy, horizon, n_rollouts, ScoreFn::from_utility(spec),
                           rng);
}

}  // namespace bmax
