#include "bmax/rng.hpp"

#include <cmath>
#include <numbers>

namespace bmax {

namespace {
constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ull;
}

std::uint64_t mix64(std::uint64_t x) {
  x ^= x >> 30;
  x *= 0xBF58476D1CE4E5B9ull;
  x ^= x >> 27;
  x *= 0x94D049BB133111EBull;
  x ^= x >> 31;
  return x;
}

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream)
    : seed_(seed), stream_(stream) {
  state_ = mix64(seed + kGamma) ^ mix64(stream * kGamma + 0x632BE59BD9B4E019ull);
}

RngStream RngStream::child(std::uint64_t id) const {
  return RngStream(seed_, mix64(stream_ ^ (id + kGamma)));
}

std::uint64_t RngStream::next_u64() {
  state_ += kGamma;
  return mix64(state_);
}

double RngStream::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::uniform(double lo, double hi) {
  return lo + (hi - lo) * uniform();
}

double RngStream::normal() {
  // u1 strictly positive so the log is finite
  const double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

int RngStream::uniform_int(int n) {
  // modulo bias negligible at 64 bits for any practical n
  return static_cast<int>(next_u64() % static_cast<std::uint64_t>(n));
}

Vector RngStream::normal_vector(int n) {
  Vector v(n);
  for (double& x : v) x = normal();
  return v;
}

Vector RngStream::uniform_vector(int n, double lo, double hi) {
  Vector v(n);
  for (double& x : v) x = uniform(lo, hi);
  return v;
}

void RngStream::shuffle(std::vector<int>& idx) {
  for (int i = static_cast<int>(idx.size()) - 1; i > 0; --i) {
    const int j = uniform_int(i + 1);
    std::swap(idx[i], idx[j]);
  }
}

}  // namespace bmax
