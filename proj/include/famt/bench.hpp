#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "famt/data.hpp"
#include "famt/probe.hpp"
#include "famt/sampler.hpp"
#include "famt/trainer.hpp"
#include "famt/vit.hpp"

namespace famt {

struct GridRow {
  Strategy strategy = Strategy::kRandom;
  double mask_ratio = 0.75;
  double throw_ratio = 0.0;
};

// One row per line: "<strategy> <r> <t>" with spaces or commas; '#' starts a
// comment. Throws ParameterError with the line number on bad input.
std::vector<GridRow> parse_grid(std::string_view text);

// Encoder tokens one sample costs: CLS plus N - floor(N r) - floor(N t),
// with t forced to 0 for strategies that never throw.
std::uint64_t encoder_tokens_per_sample(std::size_t n, const GridRow& row);

struct BenchOptions {
  std::uint64_t steps = 30;
  std::uint64_t timing_warmup = 10;  // steps excluded from the ms median
  TrainConfig train;                 // base settings shared by every row
  ViTConfig model = ViTConfig::desk196();
  bool probe = false;
  ProbeConfig probe_config;
};

struct BenchRow {
  GridRow grid;
  double tokens_per_step = 0.0;   // analytic, cross-checked against the counter
  std::uint64_t encoder_tokens = 0;  // instrumented total over all steps
  double ms_per_step = 0.0;       // median after the timing warm-up
  double rel_tokens = 0.0;        // vs the (random, 0.75, 0) row
  double rel_ms = 0.0;
  double final_loss = 0.0;
  std::optional<double> probe_top1;
};

struct BenchReport {
  std::size_t patch_count = 0;
  std::size_t batch_size = 0;
  std::uint64_t steps = 0;
  std::vector<BenchRow> rows;

  // Aligned columns for people.
  std::string table() const;
  // strategy,r,t,tokens_per_step,ms_per_step,rel_tokens,rel_ms,final_loss,probe_top1
  std::string csv() const;
};

inline constexpr std::string_view kBenchCsvHeader =
    "strategy,r,t,tokens_per_step,ms_per_step,rel_tokens,rel_ms,final_loss,probe_top1";

// Runs every grid row for the same number of steps on the same data and
// seed. The baseline row (random, 0.75, 0) is prepended when missing.
// Weighted strategies are active from the first step (no warmup). Throws
// Error if an instrumented token counter disagrees with the analytic count.
BenchReport run_bench(const Dataset& data, std::vector<GridRow> grid, const BenchOptions& opts);

}  // namespace famt
