#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "bmax/errors.hpp"
#include "bmax/metrics.hpp"
#include "bmax/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// one writer per run directory
class RunLock {
 public:
  explicit RunLock(const std::string& run_dir) : path_(run_dir + "/.lock") {
    fs::create_directories(run_dir);
    if (fs::exists(path_))
      throw std::runtime_error("run directory is locked by another process: " + path_);
    std::ofstream out(path_);
    out << "locked\n";
  }
  ~RunLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }

 private:
  std::string path_;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw bmax::ConfigError("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> backend;
  std::optional<std::string> utility;
};

bmax::ExperimentConfig resolve_config(const std::string& text, const Overrides& ov) {
  bmax::ExperimentConfig cfg = bmax::config_from_json_text(text);
  // precedence: flags > file > defaults
  if (ov.seed) cfg.seed = *ov.seed;
  if (ov.backend) cfg.backend.kind = bmax::backend_from_name(*ov.backend);
  if (ov.utility) cfg.utility.kind = bmax::utility_from_name(*ov.utility);
  cfg.validate();
  return cfg;
}

bmax::ExperimentConfig load_run_config(const std::string& run_dir, const Overrides& ov) {
  return resolve_config(read_file(run_dir + "/config.json"), ov);
}

std::vector<bmax::Task> resolve_tasks(const bmax::Env& env,
                                      const std::vector<std::string>& names) {
  if (names.empty()) return env.tasks();
  std::vector<bmax::Task> tasks;
  for (const std::string& n : names) tasks.push_back(env.find_task(n));
  return tasks;
}

int cmd_explore(const std::string& config_path, const std::string& run_dir, const Overrides& ov,
                const std::optional<std::string>& resume) {
  const bmax::ExperimentConfig cfg = resolve_config(read_file(config_path), ov);
  RunLock lock(run_dir);
  const auto env = bmax::make_env(cfg.env_name, cfg.env_params);
  bmax::CountingEnv cenv(*env);
  const bmax::ExploreResult res = bmax::explore(cenv, cfg, run_dir, resume);
  std::cout << "explore: " << res.buffer.size() << " transitions, "
            << res.snapshot_steps.size() << " snapshots, env steps " << res.env_steps << "\n";
  return 0;
}

int cmd_evaluate(const std::string& run_dir, const Overrides& ov, long snapshot_step) {
  const bmax::ExperimentConfig cfg = load_run_config(run_dir, ov);
  RunLock lock(run_dir + "/eval");
  const auto env = bmax::make_env(cfg.env_name, cfg.env_params);
  const std::vector<bmax::Task> tasks = resolve_tasks(*env, cfg.task_names);

  std::vector<long> steps;
  if (snapshot_step > 0) {
    steps.push_back(snapshot_step);
  } else if (fs::exists(run_dir + "/checkpoints")) {
    for (const auto& entry : fs::directory_iterator(run_dir + "/checkpoints")) {
      const std::string name = entry.path().filename().string();
      if (name.rfind("step_", 0) == 0) steps.push_back(std::stol(name.substr(5)));
    }
    std::sort(steps.begin(), steps.end());
  }
  if (steps.empty()) throw std::runtime_error("evaluate: no snapshots under " + run_dir);

  for (long step : steps) {
    const std::string snap_buffer = bmax::snapshot_dir(run_dir, step) + "/buffer.csv";
    if (!fs::exists(snap_buffer)) throw std::runtime_error("evaluate: missing " + snap_buffer);
    const bmax::ReplayBuffer buffer = bmax::ReplayBuffer::load_csv(snap_buffer);
    bmax::CountingEnv cenv(*env);
    const bmax::EvalTable table = bmax::evaluate(cenv, buffer, tasks, cfg, step);
    json out;
    out["step"] = step;
    out["tasks"] = table.task_names;
    json values = json::array();
    for (const auto& reps : table.values) {
      json row = json::array();
      for (const auto& v : reps) row.push_back(v ? json(*v) : json());
      values.push_back(row);
    }
    out["values"] = values;
    char name[32];
    std::snprintf(name, sizeof(name), "step_%06ld.json", step);
    std::ofstream f(run_dir + "/eval/" + name);
    f << out.dump(2) << "\n";
    std::cout << "evaluate: snapshot " << step << " done (env steps " << cenv.steps() << ")\n";
  }
  return 0;
}

int cmd_calibrate(const std::string& run_dir, const Overrides& ov, double split) {
  const bmax::ExperimentConfig cfg = load_run_config(run_dir, ov);
  RunLock lock(run_dir + "/calibrate.lockdir");
  const bmax::ReplayBuffer buffer = bmax::ReplayBuffer::load_csv(run_dir + "/buffer.csv");
  const bmax::CalibrationRecord rec = bmax::calibration_run(buffer, split, cfg);
  json out;
  out["model"] = bmax::backend_name(cfg.backend.kind);
  out["utility"] = bmax::utility_name(cfg.utility.kind);
  out["split"] = split;
  out["ause"] = rec.ause;
  out["n_train"] = rec.n_train;
  out["n_test"] = rec.n_test;
  out["uncertainty_curve"] = rec.uncertainty_curve;
  out["oracle_curve"] = rec.oracle_curve;
  std::ofstream f(run_dir + "/calibration.json");
  f << out.dump(2) << "\n";
  std::cout << "calibrate: AUSE " << rec.ause << " (train " << rec.n_train << ", test "
            << rec.n_test << ")\n";
  return 0;
}

int cmd_bench(const std::string& run_dir, const Overrides& ov, double split) {
  const bmax::ExperimentConfig cfg = load_run_config(run_dir, ov);
  RunLock lock(run_dir + "/bench.lockdir");
  const bmax::ReplayBuffer buffer = bmax::ReplayBuffer::load_csv(run_dir + "/buffer.csv");
  const std::vector<bmax::BenchRecord> records = bmax::run_bench(buffer, cfg, split);
  json out = json::array();
  for (const auto& r : records) {
    out.push_back({{"model", r.model},
                   {"utility", r.utility},
                   {"ause", r.ause},
                   {"fit_seconds", r.fit_seconds},
                   {"infer_seconds", r.infer_seconds}});
    std::cout << "bench: " << r.model << " ause " << r.ause << " fit " << r.fit_seconds
              << "s infer " << r.infer_seconds << "s\n";
  }
  std::ofstream f(run_dir + "/bench.json");
  f << out.dump(2) << "\n";
  return 0;
}

int cmd_report(const std::string& run_dir) {
  const std::vector<std::string> written = bmax::write_reports(run_dir);
  for (const std::string& f : written) std::cout << "report: wrote " << f << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian model-based active exploration"};
  app.require_subcommand(1);

  std::string config_path, run_dir, resume_dir, backend, utility;
  std::uint64_t seed = 0;
  bool seed_set = false;
  long snapshot_step = 0;
  double split = 0.9;

  auto add_overrides = [&](CLI::App* cmd) {
    cmd->add_option("--seed", seed, "master seed override")->each([&](std::string) {
      seed_set = true;
    });
    cmd->add_option("--backend", backend, "backend kind override");
    cmd->add_option("--utility", utility, "utility kind override");
  };

  CLI::App* explore = app.add_subcommand("explore", "run the exploration loop");
  explore->add_option("--config", config_path, "experiment config JSON")->required();
  explore->add_option("--out", run_dir, "run directory")->required();
  explore->add_option("--resume", resume_dir, "snapshot directory to resume from");
  add_overrides(explore);

  CLI::App* evaluate = app.add_subcommand("evaluate", "evaluate buffer snapshots on the tasks");
  evaluate->add_option("--run", run_dir, "run directory")->required();
  evaluate->add_option("--snapshot", snapshot_step, "evaluate one snapshot step only");
  add_overrides(evaluate);

  CLI::App* calibrate = app.add_subcommand("calibrate", "AUSE calibration on the run buffer");
  calibrate->add_option("--run", run_dir, "run directory")->required();
  calibrate->add_option("--split", split, "chronological train fraction");
  add_overrides(calibrate);

  CLI::App* bench = app.add_subcommand("bench", "backend comparison on the run buffer");
  bench->add_option("--run", run_dir, "run directory")->required();
  bench->add_option("--split", split, "chronological train fraction");
  add_overrides(bench);

  CLI::App* report = app.add_subcommand("report", "render reports/ for a run directory");
  report->add_option("run", run_dir, "run directory")->required();

  CLI11_PARSE(app, argc, argv);

  Overrides ov;
  if (seed_set) ov.seed = seed;
  if (!backend.empty()) ov.backend = backend;
  if (!utility.empty()) ov.utility = utility;

  try {
    if (app.got_subcommand(explore))
      return cmd_explore(config_path, run_dir, ov,
                         resume_dir.empty() ? std::nullopt
                                            : std::optional<std::string>(resume_dir));
    if (app.got_subcommand(evaluate)) return cmd_evaluate(run_dir, ov, snapshot_step);
    if (app.got_subcommand(calibrate)) return cmd_calibrate(run_dir, ov, split);
    if (app.got_subcommand(bench)) return cmd_bench(run_dir, ov, split);
    if (app.got_subcommand(report)) return cmd_report(run_dir);
  } catch (const bmax::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const bmax::EnvFault& e) {
    std::cerr << "environment fault: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
