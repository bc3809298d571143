#include "famt/bench.hpp"

#include <algorithm>
#include <cstdio>
#include <iomanip>
#include <sstream>

#include <spdlog/spdlog.h>

#include "famt/config_text.hpp"
#include "famt/errors.hpp"

namespace famt {

std::vector<GridRow> parse_grid(std::string_view text) {
  std::vector<GridRow> rows;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string line(text.substr(0, nl));
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream in(line);
    std::vector<std::string> fields;
    for (std::string f; in >> f;) fields.push_back(f);
    if (fields.empty()) continue;
    const std::string where = "grid line " + std::to_string(line_no);
    if (fields.size() != 3) throw ParameterError(where + ": expected '<strategy> <r> <t>'");
    GridRow row;
    try {
      row.strategy = parse_strategy(fields[0]);
    } catch (const Error& e) {
      throw ParameterError(where + ": " + e.what());
    }
    row.mask_ratio = parse_real(where + " r", fields[1]);
    row.throw_ratio = parse_real(where + " t", fields[2]);
    if (row.mask_ratio < 0.0 || row.throw_ratio < 0.0 ||
        row.mask_ratio + row.throw_ratio > 1.0 + 1e-12) {
      throw ParameterError(where + ": r + t must lie in [0, 1]");
    }
    rows.push_back(row);
  }
  if (rows.empty()) throw ParameterError("grid has no rows");
  return rows;
}

std::uint64_t encoder_tokens_per_sample(std::size_t n, const GridRow& row) {
  const double t = allows_throw(row.strategy) ? row.throw_ratio : 0.0;
  return mask_counts(n, row.mask_ratio, t).visible + 1;
}

namespace {

bool is_baseline(const GridRow& r) {
  return r.strategy == Strategy::kRandom && r.mask_ratio == 0.75 && r.throw_ratio == 0.0;
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t mid = v.size() / 2;
  return v.size() % 2 == 1 ? v[mid] : 0.5 * (v[mid - 1] + v[mid]);
}

std::string fixed(double v, int digits) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(digits) << v;
  return out.str();
}

}  // namespace

BenchReport run_bench(const Dataset& data, std::vector<GridRow> grid, const BenchOptions& opts) {
  if (opts.steps == 0) throw ParameterError("bench: steps must be at least 1");
  if (std::none_of(grid.begin(), grid.end(), is_baseline)) {
    grid.insert(grid.begin(), GridRow{Strategy::kRandom, 0.75, 0.0});
  }
  const std::size_t n = opts.model.patch_count();
  BenchReport report;
  report.patch_count = n;
  report.batch_size = opts.train.batch_size;
  report.steps = opts.steps;

  for (const GridRow& g : grid) {
    TrainConfig cfg = opts.train;
    cfg.strategy = g.strategy;
    cfg.mask_ratio = g.mask_ratio;
    cfg.throw_ratio = g.throw_ratio;
    cfg.warmup_epochs = 0;
    cfg.max_steps = opts.steps;
    const std::uint64_t per_epoch = (data.size() + cfg.batch_size - 1) / cfg.batch_size;
    cfg.epochs = static_cast<std::uint32_t>((opts.steps + per_epoch - 1) / per_epoch);
    cfg.refresh_interval = cfg.epochs + 1;  // one refresh, at the start
    Trainer run(data, cfg, opts.model);
    const std::vector<MetricsRow> metrics = run.run(opts.steps);

    // analytic count: batch sizes follow from the epoch arithmetic alone
    std::uint64_t samples = 0;
    for (std::uint64_t s = 0; s < opts.steps; ++s) {
      const std::uint64_t in_epoch = s % run.steps_per_epoch();
      samples += std::min<std::uint64_t>(cfg.batch_size, data.size() - in_epoch * cfg.batch_size);
    }
    const std::uint64_t analytic = samples * encoder_tokens_per_sample(n, g);
    if (analytic != run.state().encoder_tokens) {
      throw Error("bench: encoder token counter " + std::to_string(run.state().encoder_tokens) +
                  " disagrees with the analytic count " + std::to_string(analytic) + " for " +
                  std::string(to_string(g.strategy)));
    }

    BenchRow row;
    row.grid = g;
    row.encoder_tokens = run.state().encoder_tokens;
    row.tokens_per_step = static_cast<double>(analytic) / static_cast<double>(opts.steps);
    std::vector<double> ms;
    for (std::size_t i = 0; i < metrics.size(); ++i) {
      if (i >= opts.timing_warmup || metrics.size() <= opts.timing_warmup) {
        ms.push_back(metrics[i].ms_per_step);
      }
    }
    row.ms_per_step = median(std::move(ms));
    row.final_loss = metrics.back().loss;
    if (opts.probe) {
      const Tensor features = extract_features(run.model(), data);
      const auto [train_idx, test_idx] = split_indices(data.size(), 0.8, cfg.seed);
      const std::vector<int> labels = data.labels();
      Tensor tr({train_idx.size(), features.cols()}), te({test_idx.size(), features.cols()});
      std::vector<int> ytr, yte;
      for (std::size_t i = 0; i < train_idx.size(); ++i) {
        std::copy_n(features.ptr() + train_idx[i] * features.cols(), features.cols(),
                    tr.ptr() + i * features.cols());
        ytr.push_back(labels[train_idx[i]]);
      }
      for (std::size_t i = 0; i < test_idx.size(); ++i) {
        std::copy_n(features.ptr() + test_idx[i] * features.cols(), features.cols(),
                    te.ptr() + i * features.cols());
        yte.push_back(labels[test_idx[i]]);
      }
      row.probe_top1 =
          linear_probe(tr, ytr, te, yte, data.num_classes, opts.probe_config).report.top1;
    }
    spdlog::info("bench {} r={} t={}: {} tokens/step, {:.2f} ms/step", to_string(g.strategy),
                 g.mask_ratio, g.throw_ratio, row.tokens_per_step, row.ms_per_step);
    report.rows.push_back(row);
  }

  const auto base = std::find_if(report.rows.begin(), report.rows.end(),
                                 [](const BenchRow& r) { return is_baseline(r.grid); });
  for (BenchRow& r : report.rows) {
    r.rel_tokens = r.tokens_per_step / base->tokens_per_step;
    r.rel_ms = base->ms_per_step > 0.0 ? r.ms_per_step / base->ms_per_step : 0.0;
  }
  return report;
}

std::string BenchReport::table() const {
  const std::vector<std::string> header{"strategy", "r",      "t",          "tokens/step",
                                        "ms/step",  "rel_tok", "rel_ms",    "final_loss",
                                        "probe_top1"};
  std::vector<std::vector<std::string>> cells{header};
  for (const BenchRow& r : rows) {
    cells.push_back({std::string(to_string(r.grid.strategy)), fixed(r.grid.mask_ratio, 2),
                     fixed(r.grid.throw_ratio, 2), fixed(r.tokens_per_step, 1),
                     fixed(r.ms_per_step, 2), fixed(r.rel_tokens, 4), fixed(r.rel_ms, 3),
                     fixed(r.final_loss, 5), r.probe_top1 ? fixed(*r.probe_top1, 4) : "-"});
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& line : cells)
    for (std::size_t c = 0; c < line.size(); ++c) width[c] = std::max(width[c], line[c].size());
  std::ostringstream out;
  out << "N=" << patch_count << " batch=" << batch_size << " steps=" << steps << '\n';
  for (const auto& line : cells) {
    for (std::size_t c = 0; c < line.size(); ++c) {
      if (c > 0) out << "  ";
      if (c == 0) {
        out << std::left << std::setw(static_cast<int>(width[c])) << line[c];
      } else {
        out << std::right << std::setw(static_cast<int>(width[c])) << line[c];
      }
    }
    out << '\n';
  }
  return out.str();
}

std::string BenchReport::csv() const {
  std::ostringstream out;
  out << kBenchCsvHeader << '\n';
  for (const BenchRow& r : rows) {
    out << to_string(r.grid.strategy) << ',' << format_real(r.grid.mask_ratio) << ','
        << format_real(r.grid.throw_ratio) << ',' << format_real(r.tokens_per_step) << ','
        << format_real(r.ms_per_step) << ',' << format_real(r.rel_tokens) << ','
        << format_real(r.rel_ms) << ',' << format_real(r.final_loss) << ','
        << (r.probe_top1 ? format_real(*r.probe_top1) : "") << '\n';
  }
  return out.str();
}

}  // namespace famt
