#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bmax/buffer.hpp"
#include "bmax/pipeline.hpp"

namespace bmax {

// Sparsification analysis: points are removed in order of decreasing
// uncertainty in `bins` equal fractions; each curve point is the RMSE of
// the kept set normalized by the full-set RMSE. The oracle removes by
// decreasing true error. AUSE is the mean gap between the curves.
struct AuseResult {
  double ause = 0.0;
  Vector uncertainty_curve;  // kept-RMSE ratio at fraction k/bins removed, k = 0..bins-1
  Vector oracle_curve;
};
AuseResult ause(const Vector& errors, const Vector& uncertainties, int bins);

// Chronological split, backend fitted on the prefix and scored on the
// suffix: per-point Euclidean prediction error vs per-point utility.
struct CalibrationRecord {
  double ause = 0.0;
  long n_train = 0;
  long n_test = 0;
  Vector uncertainty_curve;
  Vector oracle_curve;
};
CalibrationRecord calibration_run(const ReplayBuffer& buffer, double split_fraction,
                                  const ExperimentConfig& cfg);

// Shannon entropy (nats) of the histogram over the first two state
// dimensions. Without explicit bounds the histogram spans the data box.
double coverage_entropy(const std::vector<Vector>& states, int bins_per_dim);
double coverage_entropy(const std::vector<Vector>& states, int bins_per_dim, const Vector& lo,
                        const Vector& hi);

// visited states of a buffer (every s plus the final sp)
std::vector<Vector> visited_states(const ReplayBuffer& buffer);

// parameter-count storage cost: n_ens * n_weights + n_subnet^2
std::uint64_t storage_cost(std::uint64_t n_ens, std::uint64_t n_weights, std::uint64_t n_subnet);

// Backend comparison on one buffer: fit wall-clock, single-batch
// inference latency and calibration AUSE per backend, with the pairings
// ensemble+JR, mc_dropout+JR, laplace+entropy_laplace.
struct BenchRecord {
  std::string model;
  std::string utility;
  double ause = 0.0;
  double fit_seconds = 0.0;
  double infer_seconds = 0.0;
};
std::vector<BenchRecord> run_bench(const ReplayBuffer& buffer, const ExperimentConfig& cfg,
                                   double split_fraction = 0.9);

// Renders reports/ under the run directory: reward-vs-step CSV, coverage
// CSV, calibration and timing tables, and line-plot SVGs. Idempotent.
// Returns the files written; throws listing missing artifacts by name if
// the run directory holds nothing to report on.
std::vector<std::string> write_reports(const std::string& run_dir);

// six-significant-digit number formatting used across report files
std::string format_sig(double v);

}  // namespace bmax
