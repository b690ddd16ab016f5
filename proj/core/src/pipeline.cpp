#include "bmax/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "bmax/errors.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace bmax {

namespace {

// fixed stream ids for the exploration loop
enum : std::uint64_t {
  kStreamReset = 1,
  kStreamWarm = 2,
  kStreamTrain = 3,
  kStreamPlan = 4,
  kStreamLog = 5,
  kStreamEnv = 6,
  kStreamEval = 7,
};

void reject_unknown_keys(const json& obj, const std::vector<std::string>& known,
                         const std::string& scope) {
  for (const auto& [key, _] : obj.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw ConfigError("unknown config key: " + (scope.empty() ? key : scope + "." + key));
}

}  // namespace

void ExperimentConfig::validate() const {
  if (counters.n_ex_warm > counters.n_ex_steps)
    throw ConfigError("counters.n_ex_warm must be <= counters.n_ex_steps");
  if (counters.n_ex_warm < 0) throw ConfigError("counters.n_ex_warm must be >= 0");
  if (counters.n_pol < 1) throw ConfigError("counters.n_pol must be >= 1");
  if (counters.n_eval < 1 || counters.n_eval % counters.n_pol != 0)
    throw ConfigError("counters.n_eval must be a positive multiple of counters.n_pol");
  if (counters.n_k < 1) throw ConfigError("counters.n_k must be >= 1");
  if (counters.n_ev_steps < 1) throw ConfigError("counters.n_ev_steps must be >= 1");
  if (backend.n < 1) throw ConfigError("backend.N must be >= 1");
  if (backend.p < 0.0 || backend.p >= 1.0) throw ConfigError("backend.p must be in [0, 1)");
  if (backend.n_sub < 1) throw ConfigError("backend.n_sub must be >= 1");
  if (backend.gamma2 < 0.0) throw ConfigError("backend.gamma2 must be >= 0");
  if (!(utility.epsilon > 0.0)) throw ConfigError("utility.epsilon must be > 0");
  if (utility.kind == UtilityKind::EntropyLaplace && backend.kind != BackendKind::LaplaceSub)
    throw ConfigError("utility.kind entropy_laplace requires backend.kind laplace");
  if (utility.kind != UtilityKind::EntropyLaplace && backend.n < 2)
    throw ConfigError("backend.N must be >= 2 for sample-based utilities");
  if (train.batch_size < 1) throw ConfigError("train.batch must be >= 1");
  if (train.epochs < 0) throw ConfigError("train.epochs must be >= 0");
  if (!(train.lr > 0.0)) throw ConfigError("train.lr must be > 0");
  if (hidden.empty()) throw ConfigError("train.hidden must name at least one hidden layer");
  for (int w : hidden)
    if (w < 1) throw ConfigError("train.hidden widths must be >= 1");
  planner.validate();
  // envs and tasks resolve eagerly so bad names fail before any env interaction
  const auto env = make_env(env_name, env_params);
  for (const std::string& t : task_names) env->find_task(t);
}

ExperimentConfig config_from_json_text(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  ExperimentConfig cfg;
  reject_unknown_keys(root, {"env", "env_params", "tasks", "backend", "utility", "train",
                             "planner", "counters", "seed"},
                      "");
  if (root.contains("env")) cfg.env_name = root["env"].get<std::string>();
  if (root.contains("env_params"))
    for (const auto& [k, v] : root["env_params"].items()) cfg.env_params[k] = v.get<double>();
  if (root.contains("tasks")) cfg.task_names = root["tasks"].get<std::vector<std::string>>();
  if (root.contains("backend")) {
    const json& b = root["backend"];
    reject_unknown_keys(b, {"kind", "N", "p", "n_sub", "gamma2"}, "backend");
    if (b.contains("kind")) cfg.backend.kind = backend_from_name(b["kind"].get<std::string>());
    if (b.contains("N")) cfg.backend.n = b["N"].get<int>();
    if (b.contains("p")) cfg.backend.p = b["p"].get<double>();
    if (b.contains("n_sub")) cfg.backend.n_sub = b["n_sub"].get<int>();
    if (b.contains("gamma2")) cfg.backend.gamma2 = b["gamma2"].get<double>();
  }
  if (root.contains("utility")) {
    const json& u = root["utility"];
    reject_unknown_keys(u, {"kind", "epsilon", "homoscedastic"}, "utility");
    if (u.contains("kind")) cfg.utility.kind = utility_from_name(u["kind"].get<std::string>());
    if (u.contains("epsilon")) cfg.utility.epsilon = u["epsilon"].get<double>();
    if (u.contains("homoscedastic")) cfg.utility.homoscedastic = u["homoscedastic"].get<bool>();
  }
  if (root.contains("train")) {
    const json& t = root["train"];
    reject_unknown_keys(t, {"hidden", "activation", "lr", "batch", "epochs"}, "train");
    if (t.contains("hidden")) cfg.hidden = t["hidden"].get<std::vector<int>>();
    if (t.contains("activation")) cfg.activation = act_from_name(t["activation"].get<std::string>());
    if (t.contains("lr")) cfg.train.lr = t["lr"].get<double>();
    if (t.contains("batch")) cfg.train.batch_size = t["batch"].get<int>();
    if (t.contains("epochs")) cfg.train.epochs = t["epochs"].get<int>();
  }
  if (root.contains("planner")) {
    const json& p = root["planner"];
    reject_unknown_keys(
        p, {"horizon", "population", "elite_frac", "iterations", "smoothing", "n_act", "mode"},
        "planner");
    if (p.contains("horizon")) cfg.planner.horizon = p["horizon"].get<int>();
    if (p.contains("population")) cfg.planner.population = p["population"].get<int>();
    if (p.contains("elite_frac")) cfg.planner.elite_frac = p["elite_frac"].get<double>();
    if (p.contains("iterations")) cfg.planner.iterations = p["iterations"].get<int>();
    if (p.contains("smoothing")) cfg.planner.smoothing = p["smoothing"].get<double>();
    if (p.contains("n_act")) cfg.planner.n_act = p["n_act"].get<int>();
    if (p.contains("mode")) cfg.planner.mode = rollout_mode_from_name(p["mode"].get<std::string>());
  }
  if (root.contains("counters")) {
    const json& c = root["counters"];
    reject_unknown_keys(c, {"n_ex_steps", "n_ex_warm", "n_pol", "n_eval", "n_k", "n_ev_steps"},
                        "counters");
    if (c.contains("n_ex_steps")) cfg.counters.n_ex_steps = c["n_ex_steps"].get<long>();
    if (c.contains("n_ex_warm")) cfg.counters.n_ex_warm = c["n_ex_warm"].get<long>();
    if (c.contains("n_pol")) cfg.counters.n_pol = c["n_pol"].get<long>();
    if (c.contains("n_eval")) cfg.counters.n_eval = c["n_eval"].get<long>();
    if (c.contains("n_k")) cfg.counters.n_k = c["n_k"].get<int>();
    if (c.contains("n_ev_steps")) cfg.counters.n_ev_steps = c["n_ev_steps"].get<long>();
  }
  if (root.contains("seed")) cfg.seed = root["seed"].get<std::uint64_t>();
  cfg.train.gamma2 = cfg.backend.gamma2;
  cfg.validate();
  return cfg;
}

std::string config_to_json_text(const ExperimentConfig& cfg) {
  json root;
  root["env"] = cfg.env_name;
  root["env_params"] = json::object();
  for (const auto& [k, v] : cfg.env_params) root["env_params"][k] = v;
  root["tasks"] = cfg.task_names;
  root["backend"] = {{"kind", backend_name(cfg.backend.kind)},
                     {"N", cfg.backend.n},
                     {"p", cfg.backend.p},
                     {"n_sub", cfg.backend.n_sub},
                     {"gamma2", cfg.backend.gamma2}};
  root["utility"] = {{"kind", utility_name(cfg.utility.kind)},
                     {"epsilon", cfg.utility.epsilon},
                     {"homoscedastic", cfg.utility.homoscedastic}};
  root["train"] = {{"hidden", cfg.hidden},
                   {"activation", act_name(cfg.activation)},
                   {"lr", cfg.train.lr},
                   {"batch", cfg.train.batch_size},
                   {"epochs", cfg.train.epochs}};
  root["planner"] = {{"horizon", cfg.planner.horizon},
                     {"population", cfg.planner.population},
                     {"elite_frac", cfg.planner.elite_frac},
                     {"iterations", cfg.planner.iterations},
                     {"smoothing", cfg.planner.smoothing},
                     {"n_act", cfg.planner.n_act},
                     {"mode", rollout_mode_name(cfg.planner.mode)}};
  root["counters"] = {{"n_ex_steps", cfg.counters.n_ex_steps},
                      {"n_ex_warm", cfg.counters.n_ex_warm},
                      {"n_pol", cfg.counters.n_pol},
                      {"n_eval", cfg.counters.n_eval},
                      {"n_k", cfg.counters.n_k},
                      {"n_ev_steps", cfg.counters.n_ev_steps}};
  root["seed"] = cfg.seed;
  return root.dump(2) + "\n";
}

PosteriorModel refit_posterior(const ReplayBuffer& buffer, const ExperimentConfig& cfg,
                               std::uint64_t train_seed,
                               const std::optional<GaussianMLP>& warm) {
  TrainConfig tc = cfg.train;
  tc.gamma2 = cfg.backend.gamma2;
  tc.seed = train_seed;
  switch (cfg.backend.kind) {
    case BackendKind::Ensemble:
      return fit_ensemble(buffer, cfg.backend.n, tc, cfg.hidden, cfg.activation);
    case BackendKind::McDropout:
      return fit_mc_dropout(buffer, cfg.backend.p, cfg.backend.n, tc, cfg.hidden, cfg.activation,
                            warm);
    case BackendKind::LaplaceSub: {
      const GaussianMLP model =
          train_map(buffer, tc, cfg.hidden, cfg.activation, warm).model;
      const std::size_t n_sub =
          std::min<std::size_t>(cfg.backend.n_sub, model.params.param_count());
      return fit_laplace(model, buffer, n_sub, cfg.backend.gamma2, cfg.backend.n);
    }
  }
  throw ConfigError("backend.kind not recognized");
}

std::string snapshot_dir(const std::string& run_dir, long step) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "step_%06ld", step);
  return run_dir + "/checkpoints/" + buf;
}

std::uint64_t state_hash(const Vector& v) {
  std::uint64_t h = 0xCBF29CE484222325ull;  // FNV-1a over the raw bytes
  for (double x : v) {
    std::uint64_t bits;
    std::memcpy(&bits, &x, sizeof(bits));
    for (int b = 0; b < 8; ++b) {
      h ^= (bits >> (8 * b)) & 0xFF;
      h *= 0x100000001B3ull;
    }
  }
  return h;
}

namespace {

json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (int r = 0; r < m.rows(); ++r) rows.push_back(m.row_copy(r));
  return rows;
}

Matrix matrix_from_json(const json& rows) {
  if (rows.empty()) return Matrix();
  Matrix m(static_cast<int>(rows.size()), static_cast<int>(rows[0].size()));
  for (int r = 0; r < m.rows(); ++r) m.set_row(r, rows[r].get<Vector>());
  return m;
}

struct SnapshotState {
  long step = 0;
  Vector state;
  Matrix plan;
  int plan_offset = 0;
  bool has_posterior = false;
};

void write_snapshot(const std::string& dir, const SnapshotState& snap, const ReplayBuffer& buffer,
                    const std::string& events_path, const PosteriorModel* post) {
  fs::create_directories(dir);
  buffer.save_csv(dir + "/buffer.csv");
  if (fs::exists(events_path)) fs::copy_file(events_path, dir + "/events.jsonl",
                                             fs::copy_options::overwrite_existing);
  json meta;
  meta["step"] = snap.step;
  meta["state"] = snap.state;
  meta["plan"] = snap.plan.rows() > 0 ? matrix_to_json(snap.plan) : json();
  meta["plan_offset"] = snap.plan_offset;
  meta["has_posterior"] = post != nullptr;
  std::ofstream out(dir + "/snapshot.json");
  out << meta.dump(2) << "\n";
  if (post) save_posterior(dir + "/posterior", *post);
}

}  // namespace

ExploreResult explore(CountingEnv& env, const ExperimentConfig& cfg, const std::string& run_dir,
                      const std::optional<std::string>& resume_snapshot) {
  cfg.validate();
  const EnvSpec& espec = env.env().spec();
  fs::create_directories(run_dir);
  fs::create_directories(run_dir + "/checkpoints");
  {
    std::ofstream out(run_dir + "/config.json");
    out << config_to_json_text(cfg);
  }

  RngStream master(cfg.seed);
  const std::string events_path = run_dir + "/events.jsonl";

  ReplayBuffer buffer(espec.state_dim, espec.action_dim);
  Vector state;
  long step0 = 0;
  Matrix plan;
  int plan_offset = 0;
  std::optional<PosteriorModel> posterior;

  if (resume_snapshot) {
    const std::string& dir = *resume_snapshot;
    std::ifstream meta_in(dir + "/snapshot.json");
    if (!meta_in) throw std::runtime_error("explore: no snapshot at " + dir);
    const json meta = json::parse(meta_in);
    step0 = meta.at("step").get<long>();
    state = meta.at("state").get<Vector>();
    plan = meta.at("plan").is_null() ? Matrix() : matrix_from_json(meta.at("plan"));
    plan_offset = meta.at("plan_offset").get<int>();
    buffer = ReplayBuffer::load_csv(dir + "/buffer.csv");
    if (meta.at("has_posterior").get<bool>()) posterior = load_posterior(dir + "/posterior");
    fs::copy_file(dir + "/events.jsonl", events_path, fs::copy_options::overwrite_existing);
  } else {
    RngStream reset_rng = master.child(kStreamReset);
    state = env.reset(reset_rng);
    std::ofstream truncate(events_path);  // fresh event log
  }

  std::ofstream events(events_path, std::ios::app);
  ActionBounds bounds{espec.action_lo, espec.action_hi};
  ExploreResult result;

  CemConfig plan_cfg = cfg.planner;
  plan_cfg.horizon = std::max<long>(plan_cfg.horizon, cfg.counters.n_pol);
  const ScoreFn utility_score = ScoreFn::from_utility(cfg.utility);

  for (long step = step0; step < cfg.counters.n_ex_steps; ++step) {
    Vector action;
    json utility_value;  // null during warmup
    Phase phase;
    if (step < cfg.counters.n_ex_warm) {
      phase = Phase::Warmup;
      RngStream warm_rng = master.child(kStreamWarm).child(step);
      action.resize(espec.action_dim);
      for (int d = 0; d < espec.action_dim; ++d)
        action[d] = warm_rng.uniform(espec.action_lo[d], espec.action_hi[d]);
    } else {
      phase = Phase::Active;
      const long cycle = (step - cfg.counters.n_ex_warm) / cfg.counters.n_pol;
      if ((step - cfg.counters.n_ex_warm) % cfg.counters.n_pol == 0 ||
          plan_offset >= plan.rows()) {
        RngStream train_rng = master.child(kStreamTrain).child(cycle);
        std::optional<GaussianMLP> warm;
        if (posterior && cfg.backend.kind != BackendKind::Ensemble)
          warm = posterior->primary();
        posterior = refit_posterior(buffer, cfg, train_rng.next_u64(), warm);
        RngStream plan_rng = master.child(kStreamPlan).child(cycle);
        plan = plan_cem(*posterior, utility_score, state, bounds, plan_cfg, plan_rng).actions;
        plan_offset = 0;
      }
      action = bounds.clip(plan.row_copy(plan_offset));
      ++plan_offset;
      RngStream log_rng = master.child(kStreamLog).child(step);
      utility_value = action_utility(*posterior, state, action, cfg.utility, log_rng);
    }

    Vector next;
    try {
      RngStream env_rng = master.child(kStreamEnv).child(step);
      next = env.step(state, action, env_rng);
    } catch (const EnvFault& e) {
      const std::string fault_dir = run_dir + "/checkpoints/fault";
      SnapshotState snap{step, state, plan, plan_offset, posterior.has_value()};
      write_snapshot(fault_dir, snap, buffer, events_path,
                     posterior ? &*posterior : nullptr);
      buffer.save_csv(run_dir + "/buffer.csv");
      throw EnvFault(std::string(e.what()) + " (resumable checkpoint: " + fault_dir + ")");
    }

    buffer.append({state, action, next, step, phase});
    json ev;
    ev["step"] = step;
    ev["phase"] = phase_name(phase);
    ev["utility"] = utility_value;
    ev["action"] = action;
    char hash_hex[20];
    std::snprintf(hash_hex, sizeof(hash_hex), "%016llx",
                  static_cast<unsigned long long>(state_hash(next)));
    ev["state_hash"] = hash_hex;
    events << ev.dump() << "\n";
    state = std::move(next);

    if ((step + 1) % cfg.counters.n_eval == 0) {
      const long done = step + 1;
      result.snapshot_steps.push_back(done);
      SnapshotState snap{done, state, plan, plan_offset, posterior.has_value()};
      events.flush();
      write_snapshot(snapshot_dir(run_dir, done), snap, buffer, events_path,
                     posterior ? &*posterior : nullptr);
    }
  }

  events.flush();
  buffer.save_csv(run_dir + "/buffer.csv");
  result.buffer = std::move(buffer);
  result.env_steps = env.steps();
  return result;
}

EvalTable evaluate(CountingEnv& env, const ReplayBuffer& snapshot,
                   const std::vector<Task>& tasks, const ExperimentConfig& cfg,
                   long snapshot_step) {
  if (snapshot.empty()) throw ShapeError("evaluate: empty buffer snapshot");
  const EnvSpec& espec = env.env().spec();
  ActionBounds bounds{espec.action_lo, espec.action_hi};

  // fairness rule: the evaluation model is always MC-dropout, so results
  // vary only through the buffer used for training
  const double eval_p = cfg.backend.p > 0.0 ? cfg.backend.p : 0.25;
  CemConfig plan_cfg = cfg.planner;
  plan_cfg.mode = RolloutMode::Mean;

  EvalTable table;
  RngStream eval_root = RngStream(cfg.seed).child(kStreamEval).child(snapshot_step);
  for (std::size_t ti = 0; ti < tasks.size(); ++ti) {
    const Task& task = tasks[ti];
    table.task_names.push_back(task.name);
    std::vector<std::optional<double>> repeats;
    for (int rep = 0; rep < cfg.counters.n_k; ++rep) {
      RngStream rep_rng = eval_root.child(ti).child(rep);
      try {
        TrainConfig tc = cfg.train;
        tc.gamma2 = cfg.backend.gamma2;
        tc.seed = rep_rng.next_u64();
        const PosteriorModel post =
            fit_mc_dropout(snapshot, eval_p, cfg.backend.n, tc, cfg.hidden, cfg.activation);

        RngStream reset_rng = rep_rng.child(1);
        Vector state = env.reset(reset_rng);
        const ScoreFn score = ScoreFn::from_reward(task.reward);
        std::optional<Matrix> warm;
        double sum = 0.0, best = -std::numeric_limits<double>::infinity();
        for (long t = 0; t < cfg.counters.n_ev_steps; ++t) {
          RngStream plan_rng = rep_rng.child(2).child(t);
          const CemResult plan = plan_cem(post, score, state, bounds, plan_cfg, plan_rng, warm);
          const Vector action = bounds.clip(plan.first_action);
          RngStream env_rng = rep_rng.child(3).child(t);
          const Vector next = env.step(state, action, env_rng);
          const double r = task.reward(state, action, next);
          sum += r;
          best = std::max(best, r);
          state = next;
          // receding horizon: shift the plan forward one step
          Matrix shifted = plan.actions;
          for (int row = 0; row + 1 < shifted.rows(); ++row)
            shifted.set_row(row, plan.actions.row_copy(row + 1));
          warm = shifted;
        }
        repeats.push_back(task.agg == Aggregation::Sum ? sum : best);
      } catch (const std::exception&) {
        repeats.push_back(std::nullopt);  // failed repeat recorded as missing
      }
    }
    table.values.push_back(std::move(repeats));
  }
  return table;
}

StepBudgetReport step_budget_report(const ExperimentConfig& cfg, long n_tasks, long n_sac) {
  StepBudgetReport rep;
  rep.real_steps = cfg.counters.n_ex_steps;
  rep.n_tasks = n_tasks;
  rep.n_k = cfg.counters.n_k;
  rep.n_sac = n_sac;
  rep.model_free_steps = n_tasks * cfg.counters.n_k * n_sac;
  if (n_sac > 0 && rep.real_steps > 0)
    rep.ratio = static_cast<double>(rep.model_free_steps) / static_cast<double>(rep.real_steps);
  return rep;
}

}  // namespace bmax
