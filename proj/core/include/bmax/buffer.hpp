#pragma once

#include <string>
#include <vector>

#include "bmax/matrix.hpp"

namespace bmax {

enum class Phase { Warmup, Active };

std::string phase_name(Phase p);
Phase phase_from_name(const std::string& name);

struct Transition {
  Vector s;
  Vector a;
  Vector sp;
  long step = 0;
  Phase phase = Phase::Warmup;
};

// Append-only store of real-environment transitions. Step indices must be
// strictly increasing and dimensions constant for the whole run.
class ReplayBuffer {
 public:
  ReplayBuffer() = default;
  ReplayBuffer(int state_dim, int action_dim) : state_dim_(state_dim), action_dim_(action_dim) {}

  void append(Transition t);
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  const Transition& operator[](std::size_t i) const { return data_[i]; }
  const std::vector<Transition>& transitions() const { return data_; }

  int state_dim() const { return state_dim_; }
  int action_dim() const { return action_dim_; }

  // first `n` transitions as an immutable snapshot copy
  ReplayBuffer prefix(std::size_t n) const;

  // design matrices: inputs (s, a) and delta targets (sp - s)
  Matrix inputs() const;
  Matrix delta_targets() const;

  void save_csv(const std::string& path) const;
  static ReplayBuffer load_csv(const std::string& path);

 private:
  int state_dim_ = -1;
  int action_dim_ = -1;
  std::vector<Transition> data_;
};

}  // namespace bmax
