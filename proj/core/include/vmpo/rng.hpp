#pragma once

#include <cstdint>
#include <random>
#include <span>

namespace vmpo {

// Reproducible random stream keyed by (seed, stream id). Parallel work gets
// its own stream id; a single stream is never shared between threads.
//
// Uniform and normal draws are derived from the raw 64-bit engine output
// rather than <random> distributions, whose algorithms are
// implementation-defined, so sequences are identical across standard
// libraries.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream_id);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_id() const { return stream_id_; }

  std::uint64_t next_u64() { return engine_(); }
  // Uniform on [0, 1) with 53 bits of resolution.
  double uniform();
  double normal();

 private:
  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Draws index i with probability probs[i]. Entries must be nonnegative and
// sum to one within 1e-9. Boundary ties resolve toward the lower index.
std::size_t categorical_draw(std::span<const double> probs, RngStream& rng);

}  // namespace vmpo
