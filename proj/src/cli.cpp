#include "famt/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "famt/bench.hpp"
#include "famt/checkpoint.hpp"
#include "famt/config_text.hpp"
#include "famt/data.hpp"
#include "famt/errors.hpp"
#include "famt/parallel.hpp"
#include "famt/probe.hpp"
#include "famt/trainer.hpp"
#include "famt/weights.hpp"

namespace famt::cli {

namespace {

constexpr int kExitError = 2;

constexpr const char* kDefaultGrid =
    "random 0.75 0\n"
    "famt 0.45 0.40\n"
    "amt 0.33 0.50\n";

std::optional<std::uint64_t> env_seed() {
  const char* s = std::getenv("FAMT_SEED");
  if (s == nullptr || *s == '\0') return std::nullopt;
  return parse_uint("FAMT_SEED", s);
}

struct PretrainFlags {
  std::string data = "synthetic:2000";
  std::optional<std::string> data_flag;
  std::optional<std::string> config_file;
  std::optional<std::string> model;
  std::optional<std::string> strategy;
  std::optional<double> mask_ratio, throw_ratio, sigma, lr;
  std::optional<std::string> throw_mode;
  std::optional<std::uint32_t> refresh_interval, epochs;
  std::optional<int> warmup, loss_p;
  std::optional<std::uint64_t> max_steps, seed;
  std::optional<std::size_t> batch_size;
  std::string out;
  std::optional<std::string> log;
  std::optional<std::string> resume;
};

struct EvalFlags {
  std::string ckpt, data;
  std::optional<std::uint64_t> seed;
  double split = 0.8;
  std::size_t epochs = 0;
  std::size_t batch_size = 0;
  double lr = 0.0;
  double weight_decay = 0.0;
  bool per_class = false;
};

struct VisualizeFlags {
  std::string ckpt, data, out_dir;
  std::size_t samples = 1;
  std::optional<std::string> plan_out;
  std::optional<std::uint64_t> seed;
};

struct BenchFlags {
  std::optional<std::string> grid;
  std::string data = "synthetic:512:4:56";
  std::string model = "desk196";
  std::uint64_t steps = 30;
  std::uint64_t timing_warmup = 10;
  std::size_t batch_size = 32;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> csv, out;
  bool probe = false;
};

struct SynthFlags {
  std::string out;
  std::size_t count = 2000;
  int classes = 4;
  std::size_t size = 32;
  double noise = 0.5;
  std::optional<std::uint64_t> seed;
};

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag, std::uint64_t fallback) {
  if (flag) return *flag;
  if (auto env = env_seed()) return *env;
  return fallback;
}

int cmd_pretrain(const PretrainFlags& f, std::ostream& out) {
  std::optional<Checkpoint> resumed;
  TrainConfig cfg;
  ViTConfig model_cfg;
  std::string data_source = f.data;

  if (f.resume) {
    resumed = load_checkpoint(*f.resume);
    cfg = resumed->train;
    model_cfg = resumed->model;
    if (f.data_flag) data_source = *f.data_flag;
  } else {
    // defaults < FAMT_SEED < config file < flags
    if (auto env = env_seed()) cfg.seed = *env;
    std::map<std::string, std::string> file;
    if (f.config_file) file = parse_key_values(read_file(*f.config_file));
    std::string preset = "desk";
    if (auto it = file.find("model"); it != file.end()) preset = it->second;
    if (f.model) preset = *f.model;
    model_cfg = ViTConfig::preset(preset);
    for (const auto& [k, v] : file) {
      if (k == "model") continue;
      if (k == "data") {
        data_source = v;
      } else if (k.starts_with("model.")) {
        model_cfg.set(k.substr(6), v);
      } else {
        cfg.set(k, v);
      }
    }
    if (f.data_flag) data_source = *f.data_flag;
    if (f.strategy) cfg.strategy = parse_strategy(*f.strategy);
    if (f.mask_ratio) cfg.mask_ratio = *f.mask_ratio;
    if (f.throw_ratio) cfg.throw_ratio = *f.throw_ratio;
    if (f.throw_mode) cfg.throw_mode = parse_throw_mode(*f.throw_mode);
    if (f.sigma) cfg.sigma = *f.sigma;
    if (f.refresh_interval) cfg.refresh_interval = *f.refresh_interval;
    if (f.warmup) cfg.warmup_epochs = *f.warmup;
    if (f.loss_p) cfg.loss_p = *f.loss_p;
    if (f.batch_size) cfg.batch_size = *f.batch_size;
    if (f.lr) cfg.lr = *f.lr;
    if (f.seed) cfg.seed = *f.seed;
  }
  if (f.epochs) cfg.epochs = *f.epochs;
  if (f.max_steps) cfg.max_steps = *f.max_steps;
  cfg.validate();
  model_cfg.validate();

  const Dataset data = load_dataset(data_source, cfg.seed);
  std::optional<Trainer> trainer;
  if (resumed) {
    resumed->train = cfg;
    trainer.emplace(resume(data, *resumed));
  } else {
    trainer.emplace(data, cfg, model_cfg);
  }

  const std::string log_path = f.log.value_or(f.out + ".log");
  std::ofstream log(log_path, resumed ? std::ios::app : std::ios::trunc);
  if (!log) throw IoError("cannot open metrics log '" + log_path + "'");

  std::vector<MetricsRow> rows;
  try {
    rows = trainer->run(UINT64_MAX, &log);
  } catch (const NumericError&) {
    const std::string dump = f.out + ".nan";
    save_checkpoint(snapshot(*trainer), dump);
    spdlog::error("training diverged; state written to {}", dump);
    throw;
  }
  save_checkpoint(snapshot(*trainer), f.out);
  const TrainState& s = trainer->state();
  out << "steps=" << s.global_step << " epochs=" << s.epoch
      << " loss=" << (rows.empty() ? std::string("-") : format_real(rows.back().loss))
      << " tokens_encoder=" << s.encoder_tokens << '\n';
  return 0;
}

struct Split {
  Dataset train, test;
};

Split split_dataset(const Dataset& data, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw ParameterError("--split must lie in (0, 1)");
  const auto [a, b] = split_indices(data.size(), fraction, seed);
  if (a.empty() || b.empty()) throw ParameterError("dataset too small to split");
  return {data.subset(a), data.subset(b)};
}

int cmd_probe(const EvalFlags& f, std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint(f.ckpt);
  const MaskedAutoencoder model = restore_model(ckpt);
  const std::uint64_t seed = resolve_seed(f.seed, ckpt.train.seed);
  const Dataset data = load_dataset(f.data, seed);
  const Split parts = split_dataset(data, f.split, seed);

  ProbeConfig pc;
  pc.seed = seed;
  if (f.epochs > 0) pc.epochs = f.epochs;
  if (f.batch_size > 0) pc.batch_size = f.batch_size;
  if (f.lr > 0.0) pc.lr = f.lr;
  const Tensor train_x = extract_features(model, parts.train);
  const Tensor test_x = extract_features(model, parts.test);
  const int classes = std::max(parts.train.num_classes, parts.test.num_classes);
  const ProbeResult r =
      linear_probe(train_x, parts.train.labels(), test_x, parts.test.labels(), classes, pc);
  out << r.report.summary() << '\n';
  if (f.per_class) out << r.report.per_class_table();
  return 0;
}

int cmd_finetune(const EvalFlags& f, std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint(f.ckpt);
  MaskedAutoencoder model = restore_model(ckpt);
  const std::uint64_t seed = resolve_seed(f.seed, ckpt.train.seed);
  const Dataset data = load_dataset(f.data, seed);
  const Split parts = split_dataset(data, f.split, seed);

  FinetuneConfig fc;
  fc.seed = seed;
  fc.epochs = f.epochs;
  if (f.batch_size > 0) fc.batch_size = f.batch_size;
  if (f.lr > 0.0) fc.lr = f.lr;
  fc.weight_decay = f.weight_decay;
  const EvalReport r = finetune(model, parts.train, parts.test, fc);
  out << r.summary() << '\n';
  if (f.per_class) out << r.per_class_table();
  return 0;
}

int cmd_visualize(const VisualizeFlags& f, std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint(f.ckpt);
  const MaskedAutoencoder model = restore_model(ckpt);
  const ViTConfig& mc = model.config();
  const std::uint64_t seed = resolve_seed(f.seed, ckpt.train.seed);
  const Dataset data = load_dataset(f.data, seed);
  if (f.samples > data.size()) {
    throw ParameterError("--samples " + std::to_string(f.samples) + " exceeds dataset size " +
                         std::to_string(data.size()));
  }
  std::filesystem::create_directories(f.out_dir);
  const std::filesystem::path dir(f.out_dir);
  const double sigma = ckpt.train.effective_sigma(mc.embed_dim);
  const Strategy strategy = ckpt.train.strategy;
  std::ostringstream plans;

  for (std::size_t i = 0; i < f.samples; ++i) {
    const LabeledImage& img = data.images[i];
    const SampleWeights w = compute_sample_weights(model, img.pixels, sigma, Strategy::kFAMT);
    const Dims grid{mc.grid_height(), mc.grid_width()};
    const std::string stem = "sample" + std::to_string(img.sample_id);
    write_pgm_heatmap(Tensor(grid, w.a_w), mc.image_height, mc.image_width,
                      (dir / (stem + "_attn.pgm")).string());
    write_pgm_heatmap(Tensor(grid, w.gamma), mc.image_height, mc.image_width,
                      (dir / (stem + "_gamma.pgm")).string());

    CounterRng rng(seed, 0, img.sample_id, RngStream::kPlan);
    std::optional<std::span<const double>> p_a;
    std::vector<double> attention_only;
    if (uses_frequency(strategy)) {
      p_a = w.p_a;
    } else if (uses_weights(strategy)) {
      attention_only = sampling_weights(w.a_w, std::vector<double>(w.a_w.size(), 1.0));
      p_a = attention_only;
    }
    const MaskPlan p = plan(p_a, mc.patch_count(), strategy, ckpt.train.mask_ratio,
                            ckpt.train.throw_ratio, rng, ckpt.train.throw_mode);
    write_ppm_overlay(img.pixels, p, mc.patch_size, (dir / (stem + "_plan.ppm")).string());
    plans << format_plan_line(img.sample_id, p) << '\n';
  }
  if (f.plan_out) write_file(*f.plan_out, plans.str());
  out << "wrote " << 3 * f.samples << " files to " << f.out_dir << '\n';
  return 0;
}

int cmd_bench(const BenchFlags& f, std::ostream& out) {
  const std::vector<GridRow> grid = parse_grid(f.grid ? read_file(*f.grid) : kDefaultGrid);
  BenchOptions opts;
  opts.steps = f.steps;
  opts.timing_warmup = f.timing_warmup;
  opts.model = ViTConfig::preset(f.model);
  opts.train.batch_size = f.batch_size;
  opts.train.seed = resolve_seed(f.seed, 0);
  opts.probe = f.probe;
  opts.probe_config.seed = opts.train.seed;
  const Dataset data = load_dataset(f.data, opts.train.seed);
  const BenchReport report = run_bench(data, grid, opts);
  const std::string table = report.table();
  if (f.out) {
    write_file(*f.out, table);
  } else {
    out << table;
  }
  if (f.csv) write_file(*f.csv, report.csv());
  return 0;
}

int cmd_gen_synthetic(const SynthFlags& f, std::ostream& out) {
  SyntheticSpec spec;
  spec.num_samples = f.count;
  spec.num_classes = f.classes;
  spec.image_size = f.size;
  spec.noise = f.noise;
  const Dataset data = gen_synthetic(spec, resolve_seed(f.seed, 0));
  save_fmtd(data, f.out);
  out << "wrote " << data.size() << " images to " << f.out << '\n';
  return 0;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Frequency and attention driven masking and throwing for masked image modeling"};
  app.name("famt");
  app.require_subcommand(1);
  app.fallthrough();
  int workers = 1;
  bool verbose = false;
  app.add_option("--workers", workers, "OpenMP workers (1 keeps runs bit-reproducible)")
      ->check(CLI::PositiveNumber);
  app.add_flag("-v,--verbose", verbose, "Log progress to stderr");

  PretrainFlags pf;
  auto* pre = app.add_subcommand("pretrain", "Masked-autoencoder pretraining");
  pre->add_option("--data", pf.data_flag,
                  "Dataset: synthetic:<count>[:<classes>[:<size>]], an FMTD dump or CIFAR-10 binary");
  pre->add_option("--config", pf.config_file, "key = value settings; flags take precedence");
  pre->add_option("--model", pf.model, "Model preset: desk, desk196, vit-s, vit-b");
  pre->add_option("--strategy", pf.strategy, "random, am, amt, fam or famt");
  pre->add_option("--mask-ratio", pf.mask_ratio, "Masking ratio r");
  pre->add_option("--throw-ratio", pf.throw_ratio, "Throwing ratio t");
  pre->add_option("--throw-mode", pf.throw_mode, "middle or bottom");
  pre->add_option("--sigma", pf.sigma, "Low-pass width (0 selects embed_dim / 4)");
  pre->add_option("--refresh-interval", pf.refresh_interval, "Epochs between weight refreshes");
  pre->add_option("--warmup", pf.warmup, "Random-masking epochs before the first refresh");
  pre->add_option("--epochs", pf.epochs, "Training epochs");
  pre->add_option("--max-steps", pf.max_steps, "Stop after this many optimizer steps");
  pre->add_option("--batch-size", pf.batch_size, "Images per step");
  pre->add_option("--lr", pf.lr, "Peak learning rate");
  pre->add_option("--loss-p", pf.loss_p, "Reconstruction loss exponent (1 or 2)");
  pre->add_option("--seed", pf.seed, "Seed (falls back to FAMT_SEED)");
  pre->add_option("--out", pf.out, "Checkpoint path")->required();
  pre->add_option("--log", pf.log, "Metrics log (default <out>.log)");
  pre->add_option("--resume", pf.resume, "Continue from this checkpoint");

  EvalFlags probe_f;
  auto* probe = app.add_subcommand("probe", "Linear probe on frozen CLS features");
  probe->add_option("--ckpt", probe_f.ckpt, "Checkpoint")->required();
  probe->add_option("--data", probe_f.data, "Dataset")->required();
  probe->add_option("--seed", probe_f.seed, "Split and probe seed");
  probe->add_option("--split", probe_f.split, "Training fraction (rest is held out)");
  probe->add_option("--epochs", probe_f.epochs, "Probe epochs (default 100)");
  probe->add_option("--batch-size", probe_f.batch_size, "Probe batch size (default 128)");
  probe->add_option("--lr", probe_f.lr, "Probe learning rate (default 0.1)");
  probe->add_flag("--per-class", probe_f.per_class, "Also print per-class accuracy");

  EvalFlags ft_f;
  ft_f.epochs = 20;
  ft_f.weight_decay = 0.05;
  auto* ft = app.add_subcommand("finetune", "Fine-tune the encoder with a classification head");
  ft->add_option("--ckpt", ft_f.ckpt, "Checkpoint")->required();
  ft->add_option("--data", ft_f.data, "Dataset")->required();
  ft->add_option("--seed", ft_f.seed, "Split and shuffle seed");
  ft->add_option("--split", ft_f.split, "Training fraction (rest is held out)");
  ft->add_option("--epochs", ft_f.epochs, "Epochs");
  ft->add_option("--batch-size", ft_f.batch_size, "Batch size (default 32)");
  ft->add_option("--lr", ft_f.lr, "Peak learning rate (default 1e-3)");
  ft->add_option("--weight-decay", ft_f.weight_decay, "Decoupled weight decay");
  ft->add_flag("--per-class", ft_f.per_class, "Also print per-class accuracy");

  VisualizeFlags vf;
  auto* vis = app.add_subcommand(
      "visualize", "Per sample: attention heatmap PGM, gamma heatmap PGM, mask/throw overlay PPM");
  vis->add_option("--ckpt", vf.ckpt, "Checkpoint")->required();
  vis->add_option("--data", vf.data, "Dataset")->required();
  vis->add_option("--samples", vf.samples, "Number of leading samples to render");
  vis->add_option("--out-dir", vf.out_dir, "Output directory")->required();
  vis->add_option("--plan-out", vf.plan_out, "Also write the mask plans, one line per sample");
  vis->add_option("--seed", vf.seed, "Plan seed");

  BenchFlags bf;
  auto* bench = app.add_subcommand("bench", "Token and wall-clock cost per strategy");
  bench->add_option("--grid", bf.grid, "Rows of '<strategy> <r> <t>' (default: baseline, famt, amt)");
  bench->add_option("--steps", bf.steps, "Steps per row");
  bench->add_option("--timing-warmup", bf.timing_warmup, "Leading steps left out of the median");
  bench->add_option("--data", bf.data, "Dataset");
  bench->add_option("--model", bf.model, "Model preset");
  bench->add_option("--batch-size", bf.batch_size, "Images per step");
  bench->add_option("--seed", bf.seed, "Seed shared by every row");
  bench->add_option("--csv", bf.csv, "Write CSV here");
  bench->add_option("--out", bf.out, "Write the table here instead of stdout");
  bench->add_flag("--probe", bf.probe, "Linear-probe every row after its steps");
  bench->footer(
      "CSV columns: strategy,r,t,tokens_per_step,ms_per_step,rel_tokens,rel_ms,final_loss,"
      "probe_top1\n  tokens_per_step  encoder tokens per step (CLS included), analytic and\n"
      "                   checked against the instrumented counter\n"
      "  ms_per_step      median wall clock after the timing warm-up\n"
      "  rel_tokens/rel_ms  ratios to the (random, 0.75, 0) row\n"
      "  probe_top1       empty unless --probe");

  SynthFlags sf;
  auto* synth = app.add_subcommand("gen-synthetic", "Write a synthetic shapes dataset (FMTD)");
  synth->add_option("--out", sf.out, "Output file")->required();
  synth->add_option("--count", sf.count, "Images");
  synth->add_option("--classes", sf.classes, "Classes (>= 2)");
  synth->add_option("--size", sf.size, "Image side in pixels");
  synth->add_option("--noise", sf.noise, "Background noise level in [0, 1]");
  synth->add_option("--seed", sf.seed, "Seed (falls back to FAMT_SEED)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitError;
  }

  spdlog::set_level(verbose ? spdlog::level::info : spdlog::level::warn);
  set_workers(workers);

  try {
    if (pre->parsed()) return cmd_pretrain(pf, out);
    if (probe->parsed()) return cmd_probe(probe_f, out);
    if (ft->parsed()) return cmd_finetune(ft_f, out);
    if (vis->parsed()) return cmd_visualize(vf, out);
    if (bench->parsed()) return cmd_bench(bf, out);
    if (synth->parsed()) return cmd_gen_synthetic(sf, out);
  } catch (const std::exception& e) {
    err << "famt: " << e.what() << '\n';
    return kExitError;
  }
  return kExitError;
}

}  // namespace famt::cli
