#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "famt/errors.hpp"
#include "famt/parallel.hpp"
#include "famt/probe.hpp"
#include "oracles.hpp"

using namespace famt;

namespace {

struct Split {
  Tensor x;
  std::vector<int> y;
};

// Class k sits around 4 * e_k with unit-scale noise.
Split clusters(std::size_t n, std::size_t d, int k, std::uint64_t seed) {
  CounterRng rng(seed, 0, 0, RngStream::kData);
  Split s{Tensor({n, d}), std::vector<int>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    s.y[i] = static_cast<int>(i % static_cast<std::size_t>(k));
    for (std::size_t c = 0; c < d; ++c)
      s.x.at(i, c) = rng.normal() * 0.5 + (c == static_cast<std::size_t>(s.y[i]) ? 4.0 : 0.0);
  }
  return s;
}

Split noise(std::size_t n, std::size_t d, int k, std::uint64_t seed) {
  CounterRng rng(seed, 0, 0, RngStream::kData);
  Split s{Tensor({n, d}), std::vector<int>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    s.y[i] = static_cast<int>(rng.below(static_cast<std::uint64_t>(k)));
    for (std::size_t c = 0; c < d; ++c) s.x.at(i, c) = rng.normal();
  }
  return s;
}

ProbeConfig quick_probe() {
  ProbeConfig c;
  c.epochs = 20;
  c.batch_size = 32;
  return c;
}

ViTConfig small_vit() {
  ViTConfig c = oracle::tiny_config();
  c.image_height = c.image_width = 16;
  c.embed_dim = 16;
  return c;
}

Dataset shapes(std::size_t n, std::uint64_t seed) {
  SyntheticSpec spec;
  spec.num_samples = n;
  spec.num_classes = 4;
  spec.image_size = 16;
  spec.channels = 1;
  spec.noise = 0.3;
  return gen_synthetic(spec, seed);
}

}  // namespace

TEST_CASE("top1 and argmax examples") {
  const std::vector<int> pred{0, 1, 2}, gold{0, 1, 1};
  CHECK(top1(pred, gold) == 2.0 / 3.0);
  CHECK(top1(gold, gold) == 1.0);
  CHECK_THROWS_AS(top1(pred, std::vector<int>{0, 1}), ShapeError);
  CHECK_THROWS_AS(top1(std::vector<int>{}, std::vector<int>{}), ShapeError);

  const Tensor logits = Tensor::matrix(3, 3, {1, 5, 5, 2, 2, 2, -1, -3, -0.5});
  CHECK(argmax_rows(logits) == std::vector<int>{1, 0, 2});
}

TEST_CASE("evaluate reports per-class accuracy") {
  const std::vector<int> pred{0, 0, 1, 1}, gold{0, 1, 1, 1};
  const EvalReport r = evaluate(pred, gold, 3);
  CHECK(r.top1 == 0.75);
  CHECK(r.count == 4);
  CHECK(r.per_class == std::vector<double>{1.0, 2.0 / 3.0, -1.0});
  CHECK(r.class_count == std::vector<std::size_t>{1, 3, 0});
  CHECK(r.summary() == "top1=0.75");
  CHECK(r.per_class_table().find("2 0 -") != std::string::npos);
  CHECK_THROWS_AS(evaluate(pred, std::vector<int>{0, 1, 5, 1}, 3), ParameterError);
}

TEST_CASE("linear probe separates clustered features") {
  const Split train = clusters(400, 16, 4, 1), test = clusters(200, 16, 4, 2);
  const ProbeResult r = linear_probe(train.x, train.y, test.x, test.y, 4, quick_probe());
  CHECK(r.report.top1 >= 0.95);
  CHECK(r.head.weight.dims() == Dims{16, 4});
}

TEST_CASE("linear probe on random labels stays at chance") {
  const Split train = noise(500, 16, 10, 3), test = noise(2000, 16, 10, 4);
  const ProbeResult r = linear_probe(train.x, train.y, test.x, test.y, 10, quick_probe());
  CHECK(std::abs(r.report.top1 - 0.1) <= 0.05);
}

TEST_CASE("constant features predict the majority class") {
  std::vector<int> y(200);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = i % 10 < 7 ? 1 : 0;
  const Tensor x({200, 8}, 0.3);
  const ProbeResult r = linear_probe(x, y, x, y, 2, quick_probe());
  CHECK(r.report.top1 == 0.7);
  for (int p : r.head.predict(x)) CHECK(p == 1);
}

TEST_CASE("linear probe errors") {
  const Split s = clusters(20, 4, 2, 5);
  const std::vector<int> single(20, 1);
  CHECK_THROWS_AS(linear_probe(s.x, single, s.x, s.y, 2, quick_probe()), DegenerateInputError);
  CHECK_THROWS_AS(linear_probe(s.x, std::vector<int>(19, 0), s.x, s.y, 2, quick_probe()), ShapeError);
  std::vector<int> bad = s.y;
  bad[3] = 7;
  CHECK_THROWS_AS(linear_probe(s.x, bad, s.x, s.y, 2, quick_probe()), ParameterError);
}

TEST_CASE("linear probe is deterministic") {
  const Split train = clusters(100, 8, 4, 6), test = clusters(50, 8, 4, 7);
  const ProbeResult a = linear_probe(train.x, train.y, test.x, test.y, 4, quick_probe());
  const ProbeResult b = linear_probe(train.x, train.y, test.x, test.y, 4, quick_probe());
  CHECK(a.head.weight == b.head.weight);
  CHECK(a.head.running_var == b.head.running_var);
}

TEST_CASE("feature extraction is independent of batching and leaves the encoder untouched") {
  const ViTConfig cfg = small_vit();
  const MaskedAutoencoder model = oracle::tiny_model(cfg, 3, 2.0);
  const Dataset data = shapes(9, 1);
  const std::uint64_t before = model.params().checksum("encoder.");
  const Tensor all = extract_features(model, data);
  CHECK(all.dims() == Dims{9, 16});
  CHECK(model.params().checksum("encoder.") == before);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Tensor* one = &data.images[i].pixels;
    const Tensor f = extract_features(model, std::span(&one, 1));
    for (std::size_t c = 0; c < 16; ++c) CHECK(f.at(0, c) == all.at(i, c));
  }
  set_workers(3);
  CHECK(extract_features(model, data) == all);
  set_workers(1);
}

TEST_CASE("finetune with zero epochs reports the zero-head baseline") {
  const ViTConfig cfg = small_vit();
  MaskedAutoencoder model(cfg, 1);
  const Dataset train = shapes(8, 2), test = shapes(12, 3);
  const std::uint64_t before = model.params().checksum();
  FinetuneConfig fc;
  fc.epochs = 0;
  const EvalReport r = finetune(model, train, test, fc);
  // every logit is zero and ties go to class 0
  CHECK(r.top1 == 0.25);
  CHECK(model.params().checksum() == before);
}

TEST_CASE("finetune is deterministic") {
  const ViTConfig cfg = small_vit();
  const Dataset train = shapes(48, 4), test = shapes(20, 5);
  FinetuneConfig fc;
  fc.epochs = 2;
  fc.batch_size = 16;
  MaskedAutoencoder a(cfg, 2), b(cfg, 2);
  const EvalReport ra = finetune(a, train, test, fc);
  set_workers(3);
  const EvalReport rb = finetune(b, train, test, fc);
  set_workers(1);
  CHECK(ra.top1 == rb.top1);
  CHECK(a.params().checksum() == b.params().checksum());
}

TEST_CASE("finetune learns the synthetic shapes") {
  const ViTConfig cfg = small_vit();
  const Dataset train = shapes(400, 4), test = shapes(80, 5);
  FinetuneConfig fc;
  fc.epochs = 60;
  fc.batch_size = 16;
  MaskedAutoencoder model(cfg, 2);
  const EvalReport r = finetune(model, train, test, fc);
  MESSAGE("finetune top1 = " << r.top1);
  CHECK(r.top1 >= 0.5);
}
