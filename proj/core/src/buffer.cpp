#include "bmax/buffer.hpp"

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "bmax/errors.hpp"

namespace bmax {

std::string phase_name(Phase p) { return p == Phase::Warmup ? "warmup" : "active"; }

Phase phase_from_name(const std::string& name) {
  if (name == "warmup") return Phase::Warmup;
  if (name == "active") return Phase::Active;
  throw ConfigError("unknown phase: " + name);
}

void ReplayBuffer::append(Transition t) {
  if (state_dim_ < 0) {
    state_dim_ = static_cast<int>(t.s.size());
    action_dim_ = static_cast<int>(t.a.size());
  }
  if (static_cast<int>(t.s.size()) != state_dim_ || static_cast<int>(t.sp.size()) != state_dim_ ||
      static_cast<int>(t.a.size()) != action_dim_)
    throw ShapeError("ReplayBuffer: transition dimensions changed mid-run");
  if (!data_.empty() && t.step <= data_.back().step)
    throw ShapeError("ReplayBuffer: step indices must be strictly increasing");
  data_.push_back(std::move(t));
}

ReplayBuffer ReplayBuffer::prefix(std::size_t n) const {
  ReplayBuffer out(state_dim_, action_dim_);
  if (n > data_.size()) n = data_.size();
  out.data_.assign(data_.begin(), data_.begin() + n);
  return out;
}

Matrix ReplayBuffer::inputs() const {
  Matrix x(static_cast<int>(data_.size()), state_dim_ + action_dim_);
  for (std::size_t i = 0; i < data_.size(); ++i) {
    double* r = x.row(static_cast<int>(i));
    for (int d = 0; d < state_dim_; ++d) r[d] = data_[i].s[d];
    for (int d = 0; d < action_dim_; ++d) r[state_dim_ + d] = data_[i].a[d];
  }
  return x;
}

Matrix ReplayBuffer::delta_targets() const {
  Matrix y(static_cast<int>(data_.size()), state_dim_);
  for (std::size_t i = 0; i < data_.size(); ++i) {
    double* r = y.row(static_cast<int>(i));
    for (int d = 0; d < state_dim_; ++d) r[d] = data_[i].sp[d] - data_[i].s[d];
  }
  return y;
}

void ReplayBuffer::save_csv(const std::string& path) const {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw std::runtime_error("ReplayBuffer: cannot open " + path);
  for (int d = 0; d < state_dim_; ++d) std::fprintf(f, "s_%d,", d);
  for (int d = 0; d < action_dim_; ++d) std::fprintf(f, "a_%d,", d);
  for (int d = 0; d < state_dim_; ++d) std::fprintf(f, "sp_%d,", d);
  std::fprintf(f, "step,phase\n");
  for (const Transition& t : data_) {
    for (double v : t.s) std::fprintf(f, "%.17g,", v);
    for (double v : t.a) std::fprintf(f, "%.17g,", v);
    for (double v : t.sp) std::fprintf(f, "%.17g,", v);
    std::fprintf(f, "%ld,%s\n", t.step, phase_name(t.phase).c_str());
  }
  std::fclose(f);
}

ReplayBuffer ReplayBuffer::load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("ReplayBuffer: cannot open " + path);
  std::string header;
  std::getline(in, header);
  int sdim = 0, adim = 0;
  {
    std::stringstream ss(header);
    std::string col;
    while (std::getline(ss, col, ',')) {
      if (col.rfind("s_", 0) == 0 && col.rfind("sp_", 0) != 0) ++sdim;
      if (col.rfind("a_", 0) == 0) ++adim;
    }
  }
  ReplayBuffer buf(sdim, adim);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    Transition t;
    auto next = [&]() {
      if (!std::getline(ss, cell, ',')) throw std::runtime_error("ReplayBuffer: short row");
      return cell;
    };
    for (int d = 0; d < sdim; ++d) t.s.push_back(std::stod(next()));
    for (int d = 0; d < adim; ++d) t.a.push_back(std::stod(next()));
    for (int d = 0; d < sdim; ++d) t.sp.push_back(std::stod(next()));
    t.step = std::stol(next());
    t.phase = phase_from_name(next());
    buf.append(std::move(t));
  }
  return buf;
}

}  // namespace bmax
