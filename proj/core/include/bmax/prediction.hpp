#pragma once

#include "bmax/matrix.hpp"

namespace bmax {

// Predicted next-state distribution in state units. Either a diagonal
// (var non-empty) or full covariance (cov non-empty). The Laplace
// linearized predictive also carries its aleatoric diagonal so utilities
// can strip it under the homoscedastic assumption.
struct GaussianPrediction {
  Vector mean;
  Vector var;       // diagonal variances; empty when full
  Matrix cov;       // full covariance; 0x0 when diagonal
  Vector aleatoric; // optional diag(sigma_MAP) carried by the Laplace predictive

  bool is_full() const { return cov.rows() > 0; }
  int dim() const { return static_cast<int>(mean.size()); }

  static GaussianPrediction diagonal(Vector mean, Vector var) {
    GaussianPrediction p;
    p.mean = std::move(mean);
    p.var = std::move(var);
    return p;
  }
  static GaussianPrediction full(Vector mean, Matrix cov) {
    GaussianPrediction p;
    p.mean = std::move(mean);
    p.cov = std::move(cov);
    return p;
  }
};

}  // namespace bmax
