#pragma once

#include <cstdint>
#include <limits>

namespace famt {

// Streams that never share keys with each other.
enum class RngStream : std::uint64_t {
  kInit = 1,
  kShuffle = 2,
  kPlan = 3,
  kSplit = 4,
  kData = 5,
  kProbe = 6,
};

// Counter-based generator: output i is a SplitMix64 finalization of
// key + (i + 1) * golden, with the key derived from
// (seed, epoch, sample_id, stream). Any draw can be reproduced without
// replaying earlier ones, so results never depend on worker scheduling.
class CounterRng {
 public:
  using result_type = std::uint64_t;

  CounterRng(std::uint64_t seed, std::uint64_t epoch, std::uint64_t sample_id,
             RngStream stream);
  explicit CounterRng(std::uint64_t seed)
      : CounterRng(seed, 0, 0, RngStream::kInit) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() { return at(counter_++); }
  result_type at(std::uint64_t index) const;

  // Uniform in the open interval (0, 1).
  double uniform();
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  double normal();
  // Normal(0, std) resampled until |x| <= 2 std.
  double truncated_normal(double std);

  std::uint64_t counter() const { return counter_; }
  void set_counter(std::uint64_t c) { counter_ = c; }
  std::uint64_t key() const { return key_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace famt
