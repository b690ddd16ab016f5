#pragma once

#include <cstdint>
#include <vector>

#include "bmax/matrix.hpp"

namespace bmax {

// Splittable counter-based generator. State advances by a fixed odd
// increment and draws are a pure mix of (seed, stream, counter), so the
// same (seed, stream) always replays the same sequence and child streams
// never overlap their parent. All distributions below are implemented on
// top of the raw 64-bit output; nothing is delegated to
// implementation-defined <random> distributions, which keeps sequences
// stable across standard libraries.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed, std::uint64_t stream = 0);

  // independent generator derived from (seed, this stream, id)
  RngStream child(std::uint64_t id) const;

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

  std::uint64_t next_u64();
  double uniform();                        // [0, 1)
  double uniform(double lo, double hi);    // [lo, hi)
  double normal();                         // Box-Muller, two raw draws
  int uniform_int(int n);                  // [0, n)
  Vector normal_vector(int n);
  Vector uniform_vector(int n, double lo, double hi);
  void shuffle(std::vector<int>& idx);     // Fisher-Yates

 private:
  std::uint64_t seed_ = 0;
  std::uint64_t stream_ = 0;
  std::uint64_t state_ = 0;
};

// 64-bit finalizer used throughout for stream derivation and state hashing
std::uint64_t mix64(std::uint64_t x);

}  // namespace bmax
