#include "bmax/envs.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "bmax/errors.hpp"

namespace bmax {

namespace {

constexpr double kPi = std::numbers::pi;

void check_finite(const Vector& v, const char* who) {
  for (double x : v)
    if (!std::isfinite(x)) throw EnvFault(std::string(who) + ": non-finite state");
}

double get_param(const EnvParams& params, const std::string& key, double fallback,
                 const std::vector<std::string>& known) {
  for (const auto& [k, _] : params)
    if (std::find(known.begin(), known.end(), k) == known.end())
      throw ConfigError("env parameter not recognized: " + k);
  auto it = params.find(key);
  return it == params.end() ? fallback : it->second;
}

// Two-chamber arena joined by a narrow corridor. Walls clamp
// inelastically: the blocked position component snaps to the face and its
// velocity zeroes. States are (x, y, vx, vy), actions accelerations.
class PointMass2D final : public Env {
 public:
  explicit PointMass2D(const EnvParams& params) {
    const std::vector<std::string> known = {"noise_std", "corridor_half", "wall_half"};
    noise_ = get_param(params, "noise_std", 0.01, known);
    corridor_half_ = get_param(params, "corridor_half", 0.06, known);
    wall_half_ = get_param(params, "wall_half", 0.10, known);
    spec_.name = "pointmass2d";
    spec_.state_dim = 4;
    spec_.action_dim = 2;
    spec_.action_lo = {-1.0, -1.0};
    spec_.action_hi = {1.0, 1.0};
    spec_.horizon = 200;
    spec_.noise_std = noise_;
    spec_.coverage_lo = {kXMin, kYMin};
    spec_.coverage_hi = {kXMax, kYMax};
  }

  const EnvSpec& spec() const override { return spec_; }

  Vector reset(RngStream& rng) const override {
    // start box in the middle of chamber A, at rest
    return {rng.uniform(-0.75, -0.25), rng.uniform(-0.25, 0.25), 0.0, 0.0};
  }

  Vector step(const Vector& s, const Vector& a_raw, RngStream& rng) const override {
    check_finite(s, "pointmass2d");
    const Vector a = clip_action(a_raw);
    const double x = s[0], y = s[1];
    Vector v = {s[2], s[3]};

    // velocity Verlet with linear drag
    Vector acc1 = {a[0] - kDrag * v[0], a[1] - kDrag * v[1]};
    double nx = x + v[0] * kDt + 0.5 * acc1[0] * kDt * kDt;
    double ny = y + v[1] * kDt + 0.5 * acc1[1] * kDt * kDt;
    const Vector v_pred = {v[0] + acc1[0] * kDt, v[1] + acc1[1] * kDt};
    const Vector acc2 = {a[0] - kDrag * v_pred[0], a[1] - kDrag * v_pred[1]};
    double nvx = v[0] + 0.5 * (acc1[0] + acc2[0]) * kDt;
    double nvy = v[1] + 0.5 * (acc1[1] + acc2[1]) * kDt;

    nx += noise_ * rng.normal();
    ny += noise_ * rng.normal();
    nvx += noise_ * rng.normal();
    nvy += noise_ * rng.normal();

    // dividing wall: blocked at the face unless lined up with the corridor
    if (std::abs(nx) < wall_half_ && std::abs(ny) > corridor_half_) {
      if (std::abs(x) >= wall_half_) {
        nx = x >= 0.0 ? wall_half_ : -wall_half_;
        nvx = 0.0;
      } else {
        ny = std::clamp(ny, -corridor_half_, corridor_half_);
        nvy = 0.0;
      }
    }
    // arena box
    if (nx < kXMin) { nx = kXMin; nvx = 0.0; }
    if (nx > kXMax) { nx = kXMax; nvx = 0.0; }
    if (ny < kYMin) { ny = kYMin; nvy = 0.0; }
    if (ny > kYMax) { ny = kYMax; nvy = 0.0; }
    nvx = std::clamp(nvx, -kVMax, kVMax);
    nvy = std::clamp(nvy, -kVMax, kVMax);

    Vector sp = {nx, ny, nvx, nvy};
    check_finite(sp, "pointmass2d");
    return sp;
  }

  std::vector<Task> tasks() const override {
    auto reach = [](double gx, double gy) {
      return [gx, gy](const Vector&, const Vector&, const Vector& sp) {
        const double dx = sp[0] - gx, dy = sp[1] - gy;
        return 100.0 * std::exp(-(dx * dx + dy * dy) / 0.1);
      };
    };
    // goals in opposite chamber corners
    return {{"ReachA", Aggregation::Max, reach(-0.8, -0.4)},
            {"ReachB", Aggregation::Max, reach(0.8, 0.4)}};
  }

 private:
  static constexpr double kDt = 0.05;
  static constexpr double kDrag = 0.02;
  static constexpr double kXMin = -1.0, kXMax = 1.0;
  static constexpr double kYMin = -0.5, kYMax = 0.5;
  static constexpr double kVMax = 3.0;
  double noise_ = 0.01;
  double corridor_half_ = 0.06;
  double wall_half_ = 0.10;
  EnvSpec spec_;
};

// Torque-limited swing-up pendulum; angle measured from the upright
// position, exposed as (cos, sin, angular velocity).
class Pendulum final : public Env {
 public:
  explicit Pendulum(const EnvParams& params) {
    noise_ = get_param(params, "noise_std", 0.01, {"noise_std"});
    spec_.name = "pendulum";
    spec_.state_dim = 3;
    spec_.action_dim = 1;
    spec_.action_lo = {-kMaxTorque};
    spec_.action_hi = {kMaxTorque};
    spec_.horizon = 200;
    spec_.noise_std = noise_;
    spec_.coverage_lo = {-1.0, -1.0};
    spec_.coverage_hi = {1.0, 1.0};
  }

  const EnvSpec& spec() const override { return spec_; }

  Vector reset(RngStream& rng) const override {
    const double phi = wrap(kPi + rng.uniform(-0.05, 0.05));
    const double omega = rng.uniform(-0.05, 0.05);
    return {std::cos(phi), std::sin(phi), omega};
  }

  Vector step(const Vector& s, const Vector& a_raw, RngStream& rng) const override {
    check_finite(s, "pendulum");
    const double u = std::clamp(a_raw[0], -kMaxTorque, kMaxTorque);
    double phi = std::atan2(s[1], s[0]);
    double omega = s[2];
    omega += (3.0 * kG / (2.0 * kL) * std::sin(phi) + 3.0 * u / (kM * kL * kL)) * kDt;
    omega = std::clamp(omega, -kMaxOmega, kMaxOmega);
    phi = wrap(phi + omega * kDt + noise_ * rng.normal());
    omega += noise_ * rng.normal();
    Vector sp = {std::cos(phi), std::sin(phi), omega};
    check_finite(sp, "pendulum");
    return sp;
  }

  std::vector<Task> tasks() const override {
    Task swing_up;
    swing_up.name = "SwingUp";
    swing_up.agg = Aggregation::Sum;
    swing_up.reward = [](const Vector&, const Vector& a, const Vector& sp) {
      const double phi = std::atan2(sp[1], sp[0]);
      const double raw = -(phi * phi + 0.1 * sp[2] * sp[2] + 0.001 * a[0] * a[0]);
      // affine shift of the raw cost range onto [0, 100]
      constexpr double kMinRaw = -(kPi * kPi + 0.1 * kMaxOmega * kMaxOmega +
                                   0.001 * kMaxTorque * kMaxTorque);
      return 100.0 * (raw - kMinRaw) / (-kMinRaw);
    };
    Task spin;
    spin.name = "Spin";
    spin.agg = Aggregation::Sum;
    spin.reward = [](const Vector&, const Vector&, const Vector& sp) {
      return std::clamp(std::abs(sp[2]), 0.0, 100.0);
    };
    return {swing_up, spin};
  }

 private:
  static constexpr double kDt = 0.05;
  static constexpr double kG = 10.0;
  static constexpr double kM = 1.0;
  static constexpr double kL = 1.0;
  static constexpr double kMaxTorque = 2.0;
  static constexpr double kMaxOmega = 8.0;
  static double wrap(double phi) {
    while (phi > kPi) phi -= 2.0 * kPi;
    while (phi < -kPi) phi += 2.0 * kPi;
    return phi;
  }
  double noise_ = 0.01;
  EnvSpec spec_;
};

// Linear-Gaussian diagnostic system: sp = A s + B a + eta.
class LinGauss final : public Env {
 public:
  explicit LinGauss(const EnvParams& params) {
    sigma_ = get_param(params, "sigma_env", 0.02, {"sigma_env"});
    spec_.name = "lingauss";
    spec_.state_dim = 2;
    spec_.action_dim = 1;
    spec_.action_lo = {-1.0};
    spec_.action_hi = {1.0};
    spec_.horizon = 50;
    spec_.noise_std = sigma_;
    spec_.coverage_lo = {-3.0, -3.0};
    spec_.coverage_hi = {3.0, 3.0};
  }

  const EnvSpec& spec() const override { return spec_; }

  Vector reset(RngStream&) const override { return {0.0, 0.0}; }

  Vector step(const Vector& s, const Vector& a_raw, RngStream& rng) const override {
    check_finite(s, "lingauss");
    const double a = std::clamp(a_raw[0], -1.0, 1.0);
    Vector sp = {0.9 * s[0] + 0.1 * s[1], 0.9 * s[1] + 0.5 * a};
    if (sigma_ > 0.0) {
      sp[0] += sigma_ * rng.normal();
      sp[1] += sigma_ * rng.normal();
    }
    check_finite(sp, "lingauss");
    return sp;
  }

  std::vector<Task> tasks() const override {
    Task origin;
    origin.name = "Origin";
    origin.agg = Aggregation::Sum;
    origin.reward = [](const Vector&, const Vector&, const Vector& sp) {
      return -(sp[0] * sp[0] + sp[1] * sp[1]);
    };
    return {origin};
  }

 private:
  double sigma_ = 0.02;
  EnvSpec spec_;
};

}  // namespace

std::string aggregation_name(Aggregation a) { return a == Aggregation::Sum ? "sum" : "max"; }

Vector Env::clip_action(const Vector& a) const {
  const EnvSpec& sp = spec();
  if (a.size() != sp.action_lo.size()) throw ShapeError("clip_action: dimension mismatch");
  Vector out = a;
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = std::clamp(out[i], sp.action_lo[i], sp.action_hi[i]);
  return out;
}

Task Env::find_task(const std::string& name) const {
  for (const Task& t : tasks())
    if (t.name == name) return t;
  throw ConfigError("unknown task for env " + spec().name + ": " + name);
}

std::unique_ptr<Env> make_env(const std::string& name, const EnvParams& params) {
  if (name == "pointmass2d") return std::make_unique<PointMass2D>(params);
  if (name == "pendulum") return std::make_unique<Pendulum>(params);
  if (name == "lingauss") return std::make_unique<LinGauss>(params);
  throw ConfigError("unknown env: " + name);
}

}  // namespace bmax
