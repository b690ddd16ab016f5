#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "bmax/matrix.hpp"
#include "bmax/rng.hpp"

namespace bmax {

struct EnvSpec {
  std::string name;
  int state_dim = 0;
  int action_dim = 0;
  Vector action_lo, action_hi;
  int horizon = 200;        // nominal episode length
  double noise_std = 0.01;  // process noise
  // histogram range of the first two state dimensions (coverage reports)
  Vector coverage_lo, coverage_hi;
};

enum class Aggregation { Sum, Max };

std::string aggregation_name(Aggregation a);

struct Task {
  std::string name;
  Aggregation agg = Aggregation::Sum;
  std::function<double(const Vector& s, const Vector& a, const Vector& sp)> reward;
};

// Stateless environment: reset and step are pure functions of their
// inputs and the rng, so runs replay exactly from recorded states.
class Env {
 public:
  virtual ~Env() = default;
  virtual const EnvSpec& spec() const = 0;
  virtual Vector reset(RngStream& rng) const = 0;
  // actions outside the bounds are clipped before integration
  virtual Vector step(const Vector& s, const Vector& a, RngStream& rng) const = 0;
  virtual std::vector<Task> tasks() const = 0;

  Vector clip_action(const Vector& a) const;
  Task find_task(const std::string& name) const;
};

using EnvParams = std::map<std::string, double>;

// "pointmass2d", "pendulum" or "lingauss"; unknown parameter keys raise
// ConfigError naming the key.
std::unique_ptr<Env> make_env(const std::string& name, const EnvParams& params = {});

}  // namespace bmax
