#include "famt/sampler.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <numeric>
#include <sstream>

#include "famt/errors.hpp"

namespace famt {

std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::kRandom: return "random";
    case Strategy::kAM: return "am";
    case Strategy::kAMT: return "amt";
    case Strategy::kFAM: return "fam";
    case Strategy::kFAMT: return "famt";
  }
  return "?";
}

Strategy parse_strategy(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "random") return Strategy::kRandom;
  if (lower == "am") return Strategy::kAM;
  if (lower == "amt") return Strategy::kAMT;
  if (lower == "fam") return Strategy::kFAM;
  if (lower == "famt") return Strategy::kFAMT;
  throw ParameterError("unknown strategy '" + std::string(name) +
                       "' (expected random, am, amt, fam, famt)");
}

bool uses_weights(Strategy s) { return s != Strategy::kRandom; }
bool uses_frequency(Strategy s) { return s == Strategy::kFAM || s == Strategy::kFAMT; }
bool allows_throw(Strategy s) { return s != Strategy::kAM && s != Strategy::kFAM; }

std::string_view to_string(ThrowMode m) {
  return m == ThrowMode::kMiddle ? "middle" : "bottom";
}

ThrowMode parse_throw_mode(std::string_view name) {
  if (name == "middle") return ThrowMode::kMiddle;
  if (name == "bottom") return ThrowMode::kBottom;
  throw ParameterError("unknown throw mode '" + std::string(name) +
                       "' (expected middle or bottom)");
}

MaskCounts mask_counts(std::size_t n, double r, double t) {
  if (!(r >= 0.0) || !(t >= 0.0)) {
    throw ParameterError("mask/throw ratios must be >= 0 (r=" + std::to_string(r) +
                         ", t=" + std::to_string(t) + ")");
  }
  if (r + t > 1.0 + 1e-12) {
    throw ParameterError("mask ratio + throw ratio must be <= 1 (r=" + std::to_string(r) +
                         ", t=" + std::to_string(t) + ")");
  }
  // The small slack keeps products such as 100 * 0.29 from flooring one low.
  const auto nd = static_cast<double>(n);
  MaskCounts c;
  c.masked = std::min(n, static_cast<std::size_t>(std::floor(nd * r + 1e-9)));
  c.thrown = std::min(n - c.masked, static_cast<std::size_t>(std::floor(nd * t + 1e-9)));
  c.visible = n - c.masked - c.thrown;
  return c;
}

std::vector<std::size_t> weighted_order(std::span<const double> p_a, CounterRng& rng) {
  const std::size_t n = p_a.size();
  for (double p : p_a) {
    if (!(p >= 0.0) || !std::isfinite(p)) {
      throw ParameterError("weighted_order: weights must be finite and >= 0");
    }
  }
  std::vector<std::size_t> remaining(n);
  std::iota(remaining.begin(), remaining.end(), std::size_t{0});
  std::vector<std::size_t> order;
  order.reserve(n);
  while (!remaining.empty()) {
    double total = 0.0;
    for (std::size_t i : remaining) total += p_a[i];
    const double u = rng.uniform();
    std::size_t pick = remaining.size();
    if (total > 0.0) {
      double cdf = 0.0;
      for (std::size_t j = 0; j < remaining.size(); ++j) {
        const double w = p_a[remaining[j]];
        if (w <= 0.0) continue;
        cdf += w / total;
        if (cdf >= u) {
          pick = j;
          break;
        }
      }
      if (pick == remaining.size()) {
        // Rounding left the cumulative sum just under U: take the last
        // index that still carries weight.
        for (std::size_t j = remaining.size(); j-- > 0;) {
          if (p_a[remaining[j]] > 0.0) {
            pick = j;
            break;
          }
        }
      }
    } else {
      // Only zero-weight indices remain; order them uniformly.
      pick = static_cast<std::size_t>(u * static_cast<double>(remaining.size()));
      pick = std::min(pick, remaining.size() - 1);
    }
    order.push_back(remaining[pick]);
    remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(pick));
  }
  return order;
}

std::vector<std::size_t> uniform_order(std::size_t n, CounterRng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.below(i));
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

MaskPlan throw_variant(std::span<const std::size_t> order, double r, double t,
                       ThrowMode mode) {
  const std::size_t n = order.size();
  const MaskCounts c = mask_counts(n, r, t);
  MaskPlan p;
  p.mask_idx.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(c.masked));
  if (mode == ThrowMode::kMiddle) {
    const auto tb = order.begin() + static_cast<std::ptrdiff_t>(c.masked);
    const auto te = tb + static_cast<std::ptrdiff_t>(c.thrown);
    p.throw_idx.assign(tb, te);
    p.visible_idx.assign(te, order.end());
  } else {
    const auto vb = order.begin() + static_cast<std::ptrdiff_t>(c.masked);
    const auto ve = order.end() - static_cast<std::ptrdiff_t>(c.thrown);
    p.visible_idx.assign(vb, ve);
    p.throw_idx.assign(ve, order.end());
  }
  return p;
}

MaskPlan plan(std::optional<std::span<const double>> p_a, std::size_t n, Strategy strategy,
              double r, double t, CounterRng& rng, ThrowMode mode) {
  if (!allows_throw(strategy)) t = 0.0;
  mask_counts(n, r, t);  // validates ratios before any randomness is spent
  const std::uint64_t key = rng.key();
  std::vector<std::size_t> order;
  if (strategy == Strategy::kRandom) {
    order = uniform_order(n, rng);
  } else {
    if (!p_a) {
      throw UsageError("plan: strategy " + std::string(to_string(strategy)) +
                       " needs sampling weights");
    }
    if (p_a->size() != n) {
      throw ShapeError("plan: " + std::to_string(p_a->size()) + " weights for " +
                       std::to_string(n) + " patches");
    }
    order = weighted_order(*p_a, rng);
  }
  MaskPlan p = throw_variant(order, r, t, mode);
  p.strategy = strategy;
  p.rng_key = key;
  return p;
}

namespace {

void append_list(std::ostringstream& os, const std::vector<std::size_t>& v) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i != 0) os << ',';
    os << v[i];
  }
}

std::vector<std::size_t> parse_list(std::string_view s) {
  std::vector<std::size_t> out;
  while (!s.empty()) {
    const auto comma = s.find(',');
    const std::string_view tok = s.substr(0, comma);
    std::size_t v = 0;
    const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || ptr != tok.data() + tok.size()) {
      throw FormatError("plan line: bad index '" + std::string(tok) + "'");
    }
    out.push_back(v);
    if (comma == std::string_view::npos) break;
    s.remove_prefix(comma + 1);
  }
  return out;
}

}  // namespace

std::string format_plan_line(std::size_t sample_id, const MaskPlan& plan) {
  std::ostringstream os;
  os << sample_id << "\tmask=";
  append_list(os, plan.mask_idx);
  os << "\tthrow=";
  append_list(os, plan.throw_idx);
  return os.str();
}

MaskPlan parse_plan_line(std::string_view line, std::size_t patch_count,
                         std::size_t* sample_id) {
  const auto t1 = line.find("\tmask=");
  const auto t2 = line.find("\tthrow=");
  if (t1 == std::string_view::npos || t2 == std::string_view::npos || t2 < t1) {
    throw FormatError("plan line: expected '<id>\\tmask=...\\tthrow=...'");
  }
  std::size_t id = 0;
  const auto [ptr, ec] = std::from_chars(line.data(), line.data() + t1, id);
  if (ec != std::errc() || ptr != line.data() + t1) throw FormatError("plan line: bad id");
  if (sample_id != nullptr) *sample_id = id;
  MaskPlan p;
  p.mask_idx = parse_list(line.substr(t1 + 6, t2 - t1 - 6));
  p.throw_idx = parse_list(line.substr(t2 + 7));
  std::vector<bool> used(patch_count, false);
  for (auto v : {&p.mask_idx, &p.throw_idx}) {
    for (std::size_t i : *v) {
      if (i >= patch_count || used[i]) throw FormatError("plan line: index out of range or repeated");
      used[i] = true;
    }
  }
  for (std::size_t i = 0; i < patch_count; ++i)
    if (!used[i]) p.visible_idx.push_back(i);
  return p;
}

}  // namespace famt
