#include "bmax/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "bmax/errors.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace bmax {

AuseResult ause(const Vector& errors, const Vector& uncertainties, int bins) {
  const long n = static_cast<long>(errors.size());
  if (uncertainties.size() != errors.size()) throw ShapeError("ause: array length mismatch");
  if (bins < 2 || n < bins) throw ShapeError("ause: need length >= bins >= 2");

  auto order_desc = [n](const Vector& key) {
    std::vector<long> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](long a, long b) {
      if (key[a] != key[b]) return key[a] > key[b];
      return a < b;
    });
    return idx;
  };

  double full_mse = 0.0;
  for (double e : errors) full_mse += e * e;
  const double full_rmse = std::sqrt(full_mse / n);
  if (!(full_rmse > 0.0)) {
    // all-zero errors: both curves flat, AUSE 0
    AuseResult flat;
    flat.uncertainty_curve.assign(bins, 1.0);
    flat.oracle_curve.assign(bins, 1.0);
    return flat;
  }

  // kept-set RMSE after removing the k/bins fraction head of `order`
  auto curve_for = [&](const std::vector<long>& order) {
    Vector curve(bins);
    for (int k = 0; k < bins; ++k) {
      const long removed = k * n / bins;
      double mse = 0.0;
      for (long i = removed; i < n; ++i) mse += errors[order[i]] * errors[order[i]];
      curve[k] = std::sqrt(mse / (n - removed)) / full_rmse;
    }
    return curve;
  };

  AuseResult res;
  res.uncertainty_curve = curve_for(order_desc(uncertainties));
  res.oracle_curve = curve_for(order_desc(errors));
  double acc = 0.0;
  for (int k = 0; k < bins; ++k) acc += res.uncertainty_curve[k] - res.oracle_curve[k];
  res.ause = acc / bins;
  return res;
}

CalibrationRecord calibration_run(const ReplayBuffer& buffer, double split_fraction,
                                  const ExperimentConfig& cfg) {
  const long n = static_cast<long>(buffer.size());
  const long n_train = static_cast<long>(split_fraction * n);
  const long n_test = n - n_train;
  if (n_train < cfg.train.batch_size || n_test < 2)
    throw ShapeError("calibration_run: buffer too small for the split");

  const ReplayBuffer train = buffer.prefix(n_train);
  RngStream root(cfg.seed, 0xCA11Bull);
  const PosteriorModel post = refit_posterior(train, cfg, root.next_u64(), std::nullopt);

  Vector errors(n_test), uncertainties(n_test);
  for (long i = 0; i < n_test; ++i) {
    const Transition& t = buffer[n_train + i];
    const GaussianPrediction central = central_prediction(post, t.s, t.a);
    double err2 = 0.0;
    for (std::size_t d = 0; d < t.sp.size(); ++d) {
      const double diff = central.mean[d] - t.sp[d];
      err2 += diff * diff;
    }
    errors[i] = std::sqrt(err2);
    RngStream point_rng = root.child(i);
    uncertainties[i] = action_utility(post, t.s, t.a, cfg.utility, point_rng);
  }

  const AuseResult a = ause(errors, uncertainties, 20);
  CalibrationRecord rec;
  rec.ause = a.ause;
  rec.n_train = n_train;
  rec.n_test = n_test;
  rec.uncertainty_curve = a.uncertainty_curve;
  rec.oracle_curve = a.oracle_curve;
  return rec;
}

double coverage_entropy(const std::vector<Vector>& states, int bins_per_dim, const Vector& lo,
                        const Vector& hi) {
  if (states.empty()) throw ShapeError("coverage_entropy: no states");
  if (bins_per_dim < 1) throw ShapeError("coverage_entropy: bins must be >= 1");
  const int dims = std::min<int>(2, static_cast<int>(states.front().size()));
  std::map<long, long> counts;
  for (const Vector& s : states) {
    long key = 0;
    for (int d = 0; d < dims; ++d) {
      const double span = hi[d] - lo[d];
      int b = span > 0.0 ? static_cast<int>((s[d] - lo[d]) / span * bins_per_dim) : 0;
      b = std::clamp(b, 0, bins_per_dim - 1);
      key = key * bins_per_dim + b;
    }
    ++counts[key];
  }
  const double n = static_cast<double>(states.size());
  double entropy = 0.0;
  for (const auto& [_, c] : counts) {
    const double p = c / n;
    entropy -= p * std::log(p);
  }
  return entropy;
}

double coverage_entropy(const std::vector<Vector>& states, int bins_per_dim) {
  if (states.empty()) throw ShapeError("coverage_entropy: no states");
  const int dims = std::min<int>(2, static_cast<int>(states.front().size()));
  Vector lo(dims, 0.0), hi(dims, 0.0);
  for (int d = 0; d < dims; ++d) {
    lo[d] = hi[d] = states.front()[d];
    for (const Vector& s : states) {
      lo[d] = std::min(lo[d], s[d]);
      hi[d] = std::max(hi[d], s[d]);
    }
  }
  return coverage_entropy(states, bins_per_dim, lo, hi);
}

std::vector<Vector> visited_states(const ReplayBuffer& buffer) {
  std::vector<Vector> states;
  states.reserve(buffer.size() + 1);
  for (const Transition& t : buffer.transitions()) states.push_back(t.s);
  if (!buffer.empty()) states.push_back(buffer[buffer.size() - 1].sp);
  return states;
}

std::uint64_t storage_cost(std::uint64_t n_ens, std::uint64_t n_weights,
                           std::uint64_t n_subnet) {
  return n_ens * n_weights + n_subnet * n_subnet;
}

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

std::vector<BenchRecord> run_bench(const ReplayBuffer& buffer, const ExperimentConfig& cfg,
                                   double split_fraction) {
  struct Setup {
    BackendKind kind;
    UtilityKind utility;
  };
  const std::vector<Setup> setups = {{BackendKind::Ensemble, UtilityKind::JensenRenyi2},
                                     {BackendKind::McDropout, UtilityKind::JensenRenyi2},
                                     {BackendKind::LaplaceSub, UtilityKind::EntropyLaplace}};
  std::vector<BenchRecord> records;
  for (const Setup& setup : setups) {
    ExperimentConfig bcfg = cfg;
    bcfg.backend.kind = setup.kind;
    bcfg.utility.kind = setup.utility;

    const long n_train = static_cast<long>(split_fraction * buffer.size());
    const ReplayBuffer train = buffer.prefix(n_train);
    RngStream root(cfg.seed, 0xBE7Cull);

    const auto t0 = std::chrono::steady_clock::now();
    const PosteriorModel post = refit_posterior(train, bcfg, root.next_u64(), std::nullopt);
    const double fit_seconds = seconds_since(t0);

    // single-batch inference latency, averaged over repeats
    const Transition& probe = buffer[buffer.size() - 1];
    const int reps = 32;
    RngStream infer_rng = root.child(1);
    const auto t1 = std::chrono::steady_clock::now();
    for (int r = 0; r < reps; ++r) {
      RngStream rep_rng = infer_rng.child(r);
      (void)posterior_samples(post, probe.s, probe.a, rep_rng);
    }
    const double infer_seconds = seconds_since(t1) / reps;

    const CalibrationRecord cal = calibration_run(buffer, split_fraction, bcfg);
    records.push_back({backend_name(setup.kind), utility_name(setup.utility), cal.ause,
                       fit_seconds, infer_seconds});
  }
  return records;
}

std::string format_sig(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

namespace {

struct Series {
  std::string name;
  std::vector<std::pair<double, double>> points;
};

// minimal line-plot SVG; pure function of its inputs so reports rerun
// byte-identically
std::string render_line_svg(const std::string& title, const std::string& x_label,
                            const std::string& y_label, const std::vector<Series>& series) {
  const int w = 640, h = 420, ml = 70, mr = 20, mt = 40, mb = 50;
  double x_min = 0, x_max = 1, y_min = 0, y_max = 1;
  bool first = true;
  for (const Series& s : series)
    for (const auto& [x, y] : s.points) {
      if (first) {
        x_min = x_max = x;
        y_min = y_max = y;
        first = false;
      }
      x_min = std::min(x_min, x);
      x_max = std::max(x_max, x);
      y_min = std::min(y_min, y);
      y_max = std::max(y_max, y);
    }
  if (x_max == x_min) x_max = x_min + 1;
  if (y_max == y_min) y_max = y_min + 1;
  const double y_pad = 0.05 * (y_max - y_min);
  y_min -= y_pad;
  y_max += y_pad;

  auto px = [&](double x) { return ml + (x - x_min) / (x_max - x_min) * (w - ml - mr); };
  auto py = [&](double y) { return h - mb - (y - y_min) / (y_max - y_min) * (h - mt - mb); };

  const std::vector<std::string> colors = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};
  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
      << "\">\n";
  out << "<rect width=\"" << w << "\" height=\"" << h << "\" fill=\"white\"/>\n";
  out << "<text x=\"" << w / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" << title
      << "</text>\n";
  out << "<line x1=\"" << ml << "\" y1=\"" << h - mb << "\" x2=\"" << w - mr << "\" y2=\""
      << h - mb << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << h - mb
      << "\" stroke=\"black\"/>\n";
  for (int tick = 0; tick <= 4; ++tick) {
    const double xv = x_min + tick * (x_max - x_min) / 4;
    const double yv = y_min + tick * (y_max - y_min) / 4;
    out << "<text x=\"" << format_sig(px(xv)) << "\" y=\"" << h - mb + 18
        << "\" text-anchor=\"middle\" font-size=\"11\">" << format_sig(xv) << "</text>\n";
    out << "<text x=\"" << ml - 8 << "\" y=\"" << format_sig(py(yv) + 4)
        << "\" text-anchor=\"end\" font-size=\"11\">" << format_sig(yv) << "</text>\n";
  }
  out << "<text x=\"" << w / 2 << "\" y=\"" << h - 12
      << "\" text-anchor=\"middle\" font-size=\"13\">" << x_label << "</text>\n";
  out << "<text x=\"16\" y=\"" << h / 2
      << "\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 16 " << h / 2
      << ")\">" << y_label << "</text>\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    const std::string& color = colors[i % colors.size()];
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (const auto& [x, y] : series[i].points)
      out << format_sig(px(x)) << "," << format_sig(py(y)) << " ";
    out << "\"/>\n";
    out << "<text x=\"" << w - mr - 8 << "\" y=\"" << mt + 16 + 16 * static_cast<int>(i)
        << "\" text-anchor=\"end\" font-size=\"12\" fill=\"" << color << "\">" << series[i].name
        << "</text>\n";
  }
  out << "</svg>\n";
  return out.str();
}

void write_file(const std::string& path, const std::string& content,
                std::vector<std::string>& written) {
  std::ofstream out(path);
  out << content;
  written.push_back(path);
}

}  // namespace

std::vector<std::string> write_reports(const std::string& run_dir) {
  std::vector<std::string> missing;
  if (!fs::exists(run_dir + "/config.json")) missing.push_back("config.json");
  if (!fs::exists(run_dir + "/buffer.csv")) missing.push_back("buffer.csv");
  if (!missing.empty()) {
    std::string msg = "report: missing run artifacts:";
    for (const std::string& m : missing) msg += " " + m;
    throw std::runtime_error(msg);
  }

  std::ifstream cfg_in(run_dir + "/config.json");
  std::stringstream cfg_text;
  cfg_text << cfg_in.rdbuf();
  const ExperimentConfig cfg = config_from_json_text(cfg_text.str());
  const auto env = make_env(cfg.env_name, cfg.env_params);
  const ReplayBuffer buffer = ReplayBuffer::load_csv(run_dir + "/buffer.csv");

  fs::create_directories(run_dir + "/reports");
  std::vector<std::string> written;

  // evaluation rewards, one row per snapshot
  std::vector<long> eval_steps;
  std::map<long, json> eval_tables;
  if (fs::exists(run_dir + "/eval")) {
    for (const auto& entry : fs::directory_iterator(run_dir + "/eval")) {
      const std::string name = entry.path().filename().string();
      if (name.rfind("step_", 0) != 0) continue;
      const long step = std::stol(name.substr(5, name.find('.') - 5));
      std::ifstream in(entry.path());
      eval_tables[step] = json::parse(in);
      eval_steps.push_back(step);
    }
    std::sort(eval_steps.begin(), eval_steps.end());
  }
  if (!eval_tables.empty()) {
    std::vector<std::string> task_names;
    for (const auto& t : eval_tables.begin()->second.at("tasks")) task_names.push_back(t);
    std::ostringstream csv;
    csv << "step";
    for (const std::string& t : task_names) csv << "," << t;
    csv << "\n";
    std::vector<Series> series(task_names.size());
    for (std::size_t t = 0; t < task_names.size(); ++t) series[t].name = task_names[t];
    for (long step : eval_steps) {
      const json& table = eval_tables[step];
      csv << step;
      for (std::size_t t = 0; t < task_names.size(); ++t) {
        double acc = 0.0;
        int cnt = 0;
        for (const auto& v : table.at("values")[t])
          if (!v.is_null()) {
            acc += v.get<double>();
            ++cnt;
          }
        if (cnt > 0) {
          const double mean = acc / cnt;
          csv << "," << format_sig(mean);
          series[t].points.push_back({static_cast<double>(step), mean});
        } else {
          csv << ",missing";
        }
      }
      csv << "\n";
    }
    write_file(run_dir + "/reports/rewards.csv", csv.str(), written);
    write_file(run_dir + "/reports/reward_vs_steps.svg",
               render_line_svg("evaluation reward vs exploration steps", "exploration steps",
                               "mean task reward", series),
               written);
  }

  // coverage at every snapshot step (and the full buffer)
  {
    std::vector<long> steps;
    if (fs::exists(run_dir + "/checkpoints"))
      for (const auto& entry : fs::directory_iterator(run_dir + "/checkpoints")) {
        const std::string name = entry.path().filename().string();
        if (name.rfind("step_", 0) == 0) steps.push_back(std::stol(name.substr(5)));
      }
    std::sort(steps.begin(), steps.end());
    if (steps.empty() || steps.back() != static_cast<long>(buffer.size()))
      steps.push_back(static_cast<long>(buffer.size()));
    std::ostringstream csv;
    csv << "step,coverage_entropy\n";
    Series cov_series{"coverage", {}};
    for (long s : steps) {
      const double cov = coverage_entropy(visited_states(buffer.prefix(s)), 20,
                                          env->spec().coverage_lo, env->spec().coverage_hi);
      csv << s << "," << format_sig(cov) << "\n";
      cov_series.points.push_back({static_cast<double>(s), cov});
    }
    write_file(run_dir + "/reports/coverage.csv", csv.str(), written);
    write_file(run_dir + "/reports/coverage.svg",
               render_line_svg("state coverage vs exploration steps", "exploration steps",
                               "coverage entropy (nats)", {cov_series}),
               written);
  }

  // calibration table
  if (fs::exists(run_dir + "/calibration.json")) {
    std::ifstream in(run_dir + "/calibration.json");
    const json cal = json::parse(in);
    std::ostringstream csv;
    csv << "model,utility,ause,n_train,n_test\n";
    csv << cal.at("model").get<std::string>() << "," << cal.at("utility").get<std::string>()
        << "," << format_sig(cal.at("ause").get<double>()) << "," << cal.at("n_train").get<long>()
        << "," << cal.at("n_test").get<long>() << "\n";
    write_file(run_dir + "/reports/calibration.csv", csv.str(), written);
  }

  // timing table from bench results
  if (fs::exists(run_dir + "/bench.json")) {
    std::ifstream in(run_dir + "/bench.json");
    const json bench = json::parse(in);
    std::ostringstream csv;
    csv << "model,utility,ause,fit_seconds,infer_seconds\n";
    for (const auto& row : bench)
      csv << row.at("model").get<std::string>() << "," << row.at("utility").get<std::string>()
          << "," << format_sig(row.at("ause").get<double>()) << ","
          << format_sig(row.at("fit_seconds").get<double>()) << ","
          << format_sig(row.at("infer_seconds").get<double>()) << "\n";
    write_file(run_dir + "/reports/timing.csv", csv.str(), written);
  }

  return written;
}

}  // namespace bmax
