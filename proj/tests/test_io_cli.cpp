#include <doctest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <sstream>

#include "famt/bench.hpp"
#include "famt/checkpoint.hpp"
#include "famt/cli.hpp"
#include "famt/errors.hpp"
#include "oracles.hpp"

using namespace famt;
namespace fs = std::filesystem;

namespace {

ViTConfig small_model() {
  ViTConfig c = oracle::tiny_config();
  c.image_height = c.image_width = 16;
  return c;
}

Dataset small_data(std::size_t n) {
  SyntheticSpec spec;
  spec.num_samples = n;
  spec.num_classes = 2;
  spec.image_size = 16;
  spec.channels = 1;
  return gen_synthetic(spec, 21);
}

TrainConfig small_train() {
  TrainConfig c;
  c.strategy = Strategy::kFAMT;
  c.batch_size = 4;
  c.epochs = 4;
  c.warmup_epochs = 1;
  c.refresh_interval = 2;
  c.lr_warmup_steps = 3;
  c.seed = 17;
  return c;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / "famt_test_io_cli" / name;
  fs::create_directories(p.parent_path());
  return p;
}

struct CliResult {
  int code;
  std::string out, err;
};

CliResult run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "famt");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = famt::cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

int system_exit(const std::string& command) {
  const int status = std::system(command.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// Small model and data shared by the CLI runs.
std::string write_config(const std::string& extra = "") {
  const fs::path p = scratch("small.cfg");
  write_file(p.string(),
             "# tiny model for tests\n"
             "data = synthetic:24:4:16\n"
             "model.image_size = 16\n"
             "model.patch_size = 4\n"
             "model.embed_dim = 16\n"
             "model.heads = 2\n"
             "model.encoder_depth = 1\n"
             "model.decoder_depth = 1\n"
             "model.decoder_dim = 8\n"
             "model.decoder_heads = 2\n"
             "batch_size = 8\n"
             "epochs = 2\n"
             "warmup_epochs = 1\n"
             "refresh_interval = 1\n" +
                 extra);
  return p.string();
}

std::size_t count_lines(const std::string& text) {
  return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

}  // namespace

TEST_CASE("checkpoint encode, decode and encode again is byte identical") {
  const Dataset data = small_data(10);
  Trainer t(data, small_train(), small_model());
  t.run(5);
  REQUIRE(t.weights() != nullptr);
  const Checkpoint a = snapshot(t);
  const std::string bytes = encode_checkpoint(a);
  const Checkpoint b = decode_checkpoint(bytes);
  CHECK(encode_checkpoint(b) == bytes);
  CHECK(b.train.to_map() == a.train.to_map());
  CHECK(b.model.to_map() == a.model.to_map());
  CHECK(b.state.global_step == 5);
  CHECK(b.state.encoder_tokens == t.state().encoder_tokens);
  CHECK(b.optimizer.step == 5);
  CHECK(b.weights->samples.size() == 10);
  CHECK(b.weights->at(3).p_a == t.weights()->at(3).p_a);
  CHECK(restore_model(b).params().checksum() == t.model().params().checksum());

  const fs::path path = scratch("round.ckpt");
  save_checkpoint(a, path.string());
  CHECK(read_file(path.string()) == bytes);
  CHECK(encode_checkpoint(load_checkpoint(path.string())) == bytes);

  const MaskedAutoencoder bare(small_model(), 3);
  const Checkpoint plain = snapshot(bare, TrainConfig{});
  CHECK(encode_checkpoint(decode_checkpoint(encode_checkpoint(plain))) == encode_checkpoint(plain));
  CHECK(decode_checkpoint(encode_checkpoint(plain)).weights == nullptr);
}

TEST_CASE("corrupt checkpoints are rejected") {
  const MaskedAutoencoder model(small_model(), 3);
  const std::string bytes = encode_checkpoint(snapshot(model, TrainConfig{}));
  std::string bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(bad), FormatError);
  bad = bytes;
  bad[4] = 9;  // version
  CHECK_THROWS_AS(decode_checkpoint(bad), FormatError);
  for (std::size_t len : {std::size_t{0}, std::size_t{3}, std::size_t{7}, bytes.size() / 3,
                          bytes.size() / 2, bytes.size() - 1}) {
    INFO("prefix " << len);
    CHECK_THROWS_AS(decode_checkpoint(std::string_view(bytes).substr(0, len)), FormatError);
  }
  CHECK_THROWS_AS(decode_checkpoint(bytes + "x"), FormatError);
  CHECK_THROWS_AS(load_checkpoint(scratch("missing.ckpt").string()), IoError);

  Checkpoint other = decode_checkpoint(bytes);
  other.params[0].second = Tensor({1, 1});
  CHECK_THROWS_AS(restore_model(other), FormatError);
}

TEST_CASE("resuming from a checkpoint matches an uninterrupted run") {
  const Dataset data = small_data(10);
  const TrainConfig tc = small_train();
  Trainer whole(data, tc, small_model());
  std::vector<double> full;
  for (const MetricsRow& m : whole.run()) full.push_back(m.loss);
  REQUIRE(full.size() == 12);

  // step 7 sits inside epoch 2, after the second refresh
  for (std::uint64_t cut : {1u, 3u, 7u}) {
    Trainer first(data, tc, small_model());
    std::vector<double> losses;
    for (const MetricsRow& m : first.run(cut)) losses.push_back(m.loss);
    const Checkpoint ckpt = decode_checkpoint(encode_checkpoint(snapshot(first)));
    Trainer second = resume(data, ckpt);
    for (const MetricsRow& m : second.run()) losses.push_back(m.loss);
    INFO("cut at " << cut);
    CHECK(losses == full);
    CHECK(second.model().params().checksum() == whole.model().params().checksum());
    CHECK(second.state().encoder_tokens == whole.state().encoder_tokens);
    CHECK(second.state().refresh_count == whole.state().refresh_count);
  }
}

TEST_CASE("bench grid parsing") {
  const auto rows = parse_grid("# header\nrandom 0.75 0\nfamt,0.45,0.40  # main\n\nAMT 0.33 0.5\n");
  REQUIRE(rows.size() == 3);
  CHECK(rows[1].strategy == Strategy::kFAMT);
  CHECK(rows[1].throw_ratio == 0.40);
  CHECK(rows[2].strategy == Strategy::kAMT);
  try {
    parse_grid("random 0.75 0\nfamt 0.7 0.5\n");
    FAIL("expected ParameterError");
  } catch (const ParameterError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_grid("famt 0.4\n"), ParameterError);
  CHECK_THROWS_AS(parse_grid("bogus 0.4 0.1\n"), ParameterError);
  CHECK_THROWS_AS(parse_grid("# nothing\n"), ParameterError);

  CHECK(encoder_tokens_per_sample(196, {Strategy::kFAMT, 0.45, 0.40}) == 31);
  CHECK(encoder_tokens_per_sample(196, {Strategy::kRandom, 0.75, 0.0}) == 50);
  CHECK(encoder_tokens_per_sample(196, {Strategy::kAM, 0.45, 0.40}) == 109);
  CHECK(encoder_tokens_per_sample(196, {Strategy::kAMT, 0.33, 0.5}) == 35);
}

TEST_CASE("bench report: baseline row, token counts and CSV") {
  const Dataset data = small_data(10);
  BenchOptions opts;
  opts.steps = 4;
  opts.timing_warmup = 1;
  opts.model = small_model();
  opts.train.batch_size = 4;
  const BenchReport r = run_bench(data, parse_grid("famt 0.45 0.40\namt 0.33 0.5\n"), opts);
  REQUIRE(r.rows.size() == 3);
  CHECK(r.rows[0].grid.strategy == Strategy::kRandom);
  CHECK(r.rows[0].rel_tokens == 1.0);
  // 4 + 4 + 2 + 4 samples
  CHECK(r.rows[0].encoder_tokens == 14 * 5);
  CHECK(r.rows[1].encoder_tokens == 14 * 4);
  CHECK(r.rows[2].encoder_tokens == 14 * 4);
  CHECK(r.rows[1].rel_tokens == 0.8);
  for (const BenchRow& row : r.rows) {
    CHECK(std::isfinite(row.final_loss));
    CHECK(!row.probe_top1.has_value());
  }
  const std::string csv = r.csv();
  CHECK(csv.substr(0, csv.find('\n')) == kBenchCsvHeader);
  CHECK(count_lines(csv) == 4);
  CHECK(csv.find("famt,0.45,0.4,14,") != std::string::npos);
  CHECK(r.table().find("N=16 batch=4 steps=4") == 0);

  const BenchReport twice = run_bench(data, parse_grid("random 0.75 0\nrandom 0.75 0\n"), opts);
  CHECK(twice.rows.size() == 2);
  CHECK(twice.rows[0].final_loss == twice.rows[1].final_loss);
  CHECK(twice.rows[0].final_loss == r.rows[0].final_loss);
}

TEST_CASE("cli exit codes") {
  const std::string out = scratch("bad.ckpt").string();
  const CliResult bad = run_cli({"pretrain", "--mask-ratio", "0.7", "--throw-ratio", "0.5", "--out", out});
  CHECK(bad.code == 2);
  CHECK(bad.err.find("throw ratio") != std::string::npos);
  CHECK(!fs::exists(out));
  CHECK(run_cli({}).code == 2);
  CHECK(run_cli({"transmogrify"}).code == 2);
  CHECK(run_cli({"pretrain"}).code == 2);
  CHECK(run_cli({"pretrain", "--strategy", "gumbel", "--out", out}).code == 2);
  CHECK(run_cli({"--help"}).code == 0);
  CHECK(run_cli({"probe", "--ckpt", scratch("none.ckpt").string(), "--data", "synthetic:10"}).code == 2);

  const std::string bin = FAMT_CLI_PATH;
  CHECK(system_exit(bin + " pretrain --mask-ratio 0.7 --throw-ratio 0.5 --out " + out +
                    " >/dev/null 2>&1") == 2);
  CHECK(system_exit(bin + " --help >/dev/null 2>&1") == 0);
  CHECK(system_exit(bin + " gen-synthetic --out " + scratch("s.fmtd").string() +
                    " --count 8 --size 8 >/dev/null 2>&1") == 0);
  CHECK(load_fmtd(scratch("s.fmtd").string()).size() == 8);
}

TEST_CASE("cli pretrain, resume, probe and visualize") {
  const std::string cfg = write_config();
  const std::string a = scratch("a.ckpt").string(), b = scratch("b.ckpt").string(),
                    c = scratch("c.ckpt").string();
  CliResult r = run_cli({"pretrain", "--config", cfg, "--seed", "4", "--max-steps", "6", "--out", c});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("steps=6") == 0);
  CHECK(count_lines(read_file(c + ".log")) == 6);

  REQUIRE(run_cli({"pretrain", "--config", cfg, "--seed", "4", "--max-steps", "2", "--out", a}).code == 0);
  r = run_cli({"pretrain", "--resume", a, "--data", "synthetic:24:4:16", "--max-steps", "6", "--out", b,
               "--log", a + ".log"});
  INFO(r.err);
  REQUIRE(r.code == 0);
  CHECK(count_lines(read_file(a + ".log")) == 6);
  const Checkpoint cb = load_checkpoint(b), cc = load_checkpoint(c);
  CHECK(restore_model(cb).params().checksum() == restore_model(cc).params().checksum());
  CHECK(cb.state.encoder_tokens == cc.state.encoder_tokens);
  CHECK(cb.optimizer.m[0] == cc.optimizer.m[0]);

  const CliResult p1 = run_cli({"probe", "--ckpt", c, "--data", "synthetic:40:4:16", "--epochs", "5"});
  const CliResult p2 = run_cli({"probe", "--ckpt", c, "--data", "synthetic:40:4:16", "--epochs", "5"});
  REQUIRE(p1.code == 0);
  CHECK(p1.out.find("top1=") == 0);
  CHECK(p1.out == p2.out);
  const CliResult pc =
      run_cli({"probe", "--ckpt", c, "--data", "synthetic:40:4:16", "--epochs", "5", "--per-class"});
  CHECK(pc.out.find("class count accuracy") != std::string::npos);

  const CliResult f1 = run_cli({"finetune", "--ckpt", c, "--data", "synthetic:20:4:16", "--epochs", "1"});
  CHECK(f1.code == 0);
  CHECK(f1.out.find("top1=") == 0);

  const fs::path d1 = scratch("vis1"), d2 = scratch("vis2");
  const std::string plans = scratch("plans.txt").string();
  r = run_cli({"visualize", "--ckpt", c, "--data", "synthetic:24:4:16", "--samples", "2", "--out-dir",
           d1.string(), "--plan-out", plans});
  REQUIRE(r.code == 0);
  REQUIRE(run_cli({"visualize", "--ckpt", c, "--data", "synthetic:24:4:16", "--samples", "2",
               "--out-dir", d2.string()})
              .code == 0);
  for (const char* stem : {"sample0", "sample1"})
    for (const char* kind : {"_attn.pgm", "_gamma.pgm", "_plan.ppm"}) {
      const std::string name = std::string(stem) + kind;
      INFO(name);
      REQUIRE(fs::exists(d1 / name));
      CHECK(read_file((d1 / name).string()) == read_file((d2 / name).string()));
    }
  CHECK(read_file((d1 / "sample0_attn.pgm").string()).find("P5\n16 16\n255\n") == 0);

  // overlay pixels agree with the emitted plan line
  const Dataset data = load_dataset("synthetic:24:4:16", cc.train.seed);
  std::istringstream lines(read_file(plans));
  std::string line;
  std::size_t checked = 0;
  while (std::getline(lines, line)) {
    std::size_t id = 0;
    const MaskPlan p = parse_plan_line(line, 16, &id);
    CHECK(p.throw_idx.size() == 6);
    const Tensor over = decode_ppm(read_file((d1 / ("sample" + std::to_string(id) + "_plan.ppm")).string()));
    const Tensor& img = data.images[id].pixels;
    for (std::size_t q = 0; q < 16; ++q) {
      const std::size_t y = (q / 4) * 4 + 1, x = (q % 4) * 4 + 2;
      for (std::size_t ch = 0; ch < 3; ++ch) {
        const double v = over[(ch * 16 + y) * 16 + x];
        const bool masked = std::find(p.mask_idx.begin(), p.mask_idx.end(), q) != p.mask_idx.end();
        const bool thrown = std::find(p.throw_idx.begin(), p.throw_idx.end(), q) != p.throw_idx.end();
        const double src = std::lround(img[(ch * 16 + y) * 16 + x] * 255.0) / 255.0;
        CHECK(v == (masked ? 128.0 / 255.0 : thrown ? 0.0 : src));
      }
    }
    ++checked;
  }
  CHECK(checked == 2);
}

TEST_CASE("cli seed precedence: defaults, FAMT_SEED, config file, flags") {
  const std::string plain = write_config();
  const std::string out = scratch("seed.ckpt").string();
  auto seed_of = [&](std::vector<std::string> extra) {
    std::vector<std::string> args{"pretrain", "--max-steps", "1", "--out", out};
    args.insert(args.end(), extra.begin(), extra.end());
    REQUIRE(run_cli(args).code == 0);
    return load_checkpoint(out).train.seed;
  };
  ::unsetenv("FAMT_SEED");
  CHECK(seed_of({"--config", plain}) == 0);
  ::setenv("FAMT_SEED", "3", 1);
  CHECK(seed_of({"--config", plain}) == 3);
  const std::string seeded = write_config("seed = 5\n");
  CHECK(seed_of({"--config", seeded}) == 5);
  CHECK(seed_of({"--config", seeded, "--seed", "9"}) == 9);
  ::unsetenv("FAMT_SEED");
}

TEST_CASE("cli writes a diagnostic checkpoint and exits 2 on divergence") {
  const std::string cfg = write_config();
  const std::string out = scratch("nan.ckpt").string();
  fs::remove(out);
  fs::remove(out + ".nan");
  const CliResult r = run_cli({"pretrain", "--config", cfg, "--lr", "1e300", "--max-steps", "6", "--out", out});
  CHECK(r.code == 2);
  CHECK(r.err.find("non-finite loss") != std::string::npos);
  CHECK(fs::exists(out + ".nan"));
  CHECK(!fs::exists(out));
}
