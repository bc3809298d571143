#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "famt/rng.hpp"

namespace famt {

// Masking/throwing strategy variants.
//   RANDOM  uniform order
//   AM      attention-weighted masking, no throwing
//   AMT     attention-weighted masking and throwing
//   FAM     attention x frequency weighted masking, no throwing
//   FAMT    attention x frequency weighted masking and throwing
enum class Strategy { kRandom, kAM, kAMT, kFAM, kFAMT };

std::string_view to_string(Strategy s);
Strategy parse_strategy(std::string_view name);
bool uses_weights(Strategy s);
bool uses_frequency(Strategy s);
bool allows_throw(Strategy s);

enum class ThrowMode { kMiddle, kBottom };

std::string_view to_string(ThrowMode m);
ThrowMode parse_throw_mode(std::string_view name);

struct MaskCounts {
  std::size_t masked = 0;
  std::size_t thrown = 0;
  std::size_t visible = 0;
};

// floor(N r), floor(N t). Throws ParameterError on r, t < 0 or r + t > 1.
MaskCounts mask_counts(std::size_t n, double r, double t);

struct MaskPlan {
  std::vector<std::size_t> mask_idx;
  std::vector<std::size_t> throw_idx;
  std::vector<std::size_t> visible_idx;
  Strategy strategy = Strategy::kRandom;
  std::uint64_t rng_key = 0;

  std::size_t patch_count() const {
    return mask_idx.size() + throw_idx.size() + visible_idx.size();
  }
};

// Sequential inverse-CDF draws without replacement. Each draw renormalizes the
// remaining weights, takes U ~ (0,1) and picks the first remaining index whose
// cumulative weight reaches U. Returns a full permutation of 0..N-1.
std::vector<std::size_t> weighted_order(std::span<const double> p_a, CounterRng& rng);

// Fisher-Yates permutation of 0..n-1.
std::vector<std::size_t> uniform_order(std::size_t n, CounterRng& rng);

// Split an ordering M: mask = M[0:C_m]; MIDDLE throws M[C_m:C_m+C_t],
// BOTTOM throws M[N-C_t:]; everything else is visible.
MaskPlan throw_variant(std::span<const std::size_t> order, double r, double t, ThrowMode mode);

// Full planning step. AM and FAM always plan with t = 0.
MaskPlan plan(std::optional<std::span<const double>> p_a, std::size_t n, Strategy strategy,
              double r, double t, CounterRng& rng, ThrowMode mode = ThrowMode::kMiddle);

// Debug text, one line per sample: "<id>\tmask=<a,b,..>\tthrow=<c,..>".
std::string format_plan_line(std::size_t sample_id, const MaskPlan& plan);
// Inverse of format_plan_line; visible_idx is rebuilt from patch_count.
MaskPlan parse_plan_line(std::string_view line, std::size_t patch_count,
                         std::size_t* sample_id = nullptr);

}  // namespace famt
