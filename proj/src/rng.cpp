#include "famt/rng.hpp"

#include <cmath>
#include <numbers>

namespace famt {

namespace {
constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

CounterRng::CounterRng(std::uint64_t seed, std::uint64_t epoch, std::uint64_t sample_id,
                       RngStream stream) {
  std::uint64_t k = splitmix64(seed + kGolden);
  k = splitmix64(k ^ (epoch + 0x632BE59BD9B4E019ull));
  k = splitmix64(k ^ (sample_id + 0x8CB92BA72F3D8DD7ull));
  k = splitmix64(k ^ (static_cast<std::uint64_t>(stream) * kGolden));
  key_ = k;
}

CounterRng::result_type CounterRng::at(std::uint64_t index) const {
  return splitmix64(key_ + (index + 1) * kGolden);
}

double CounterRng::uniform() {
  // 53 random bits centred in their cell: never exactly 0 or 1.
  const std::uint64_t bits = (*this)() >> 11;
  return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
}

std::uint64_t CounterRng::below(std::uint64_t n) {
  const unsigned __int128 prod = static_cast<unsigned __int128>((*this)()) * n;
  return static_cast<std::uint64_t>(prod >> 64);
}

double CounterRng::normal() {
  const double u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double CounterRng::truncated_normal(double std) {
  for (;;) {
    const double z = normal();
    if (std::abs(z) <= 2.0) return z * std;
  }
}

}  // namespace famt
