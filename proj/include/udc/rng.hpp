#pragma once

// Counter-based random numbers: every draw is a pure function of
// (key, counter), so results do not depend on evaluation order.

#include <cstdint>

namespace udc {

std::uint64_t mix64(std::uint64_t x);

/// Stream key for (global seed, frame index, operation id).
std::uint64_t stream_key(std::uint64_t seed, std::uint64_t frame,
                         std::uint64_t op);

enum class RngOp : std::uint64_t {
  kScene = 1,
  kScan = 2,
  kCorrupt = 3,
  kInit = 4,
  kShuffle = 5,
  kTest = 99,
};

class CounterRng {
 public:
  explicit CounterRng(std::uint64_t key) : key_(key) {}
  CounterRng(std::uint64_t seed, std::uint64_t frame, RngOp op)
      : key_(stream_key(seed, frame, static_cast<std::uint64_t>(op))) {}

  /// Random bits at an explicit counter position.
  std::uint64_t bits_at(std::uint64_t counter) const;
  /// Uniform in [0, 1) at an explicit counter position.
  double uniform_at(std::uint64_t counter) const;

  // Sequential interface over an internal counter.
  std::uint64_t next_bits() { return bits_at(counter_++); }
  double uniform() { return uniform_at(counter_++); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  std::uint64_t key() const { return key_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace udc
