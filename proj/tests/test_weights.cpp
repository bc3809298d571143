#include <doctest.h>

#include <cmath>
#include <numeric>

#include "famt/data.hpp"
#include "famt/errors.hpp"
#include "famt/weights.hpp"
#include "oracles.hpp"

using namespace famt;

namespace {

Dataset tiny_dataset(const ViTConfig& cfg, std::size_t n) {
  Dataset d;
  d.channels = cfg.channels;
  d.height = cfg.image_height;
  d.width = cfg.image_width;
  d.num_classes = 2;
  for (std::size_t i = 0; i < n; ++i) {
    d.images.push_back({static_cast<std::uint32_t>(i), oracle::random_image(cfg, 100 + i),
                        static_cast<int>(i % 2)});
  }
  return d;
}

}  // namespace

TEST_CASE("gamma with a wide filter reduces to row norm shares") {
  CounterRng rng(1, 0, 0, RngStream::kData);
  const Tensor z = oracle::random_tensor({6, 8}, rng);
  const auto g = gamma_scores(z, 1e9);
  double frob = 0.0;
  for (std::size_t j = 1; j < 6; ++j)
    for (std::size_t c = 0; c < 8; ++c) frob += z.at(j, c) * z.at(j, c);
  frob = std::sqrt(frob);
  for (std::size_t j = 1; j < 6; ++j) {
    double row = 0.0;
    for (std::size_t c = 0; c < 8; ++c) row += z.at(j, c) * z.at(j, c);
    CHECK(std::abs(g[j - 1] - std::sqrt(row) / frob) <= 1e-12);
  }
  const auto single = gamma_scores(Tensor::matrix(2, 3, {9, 9, 9, 0.5, -1.0, 2.0}), 1e9);
  REQUIRE(single.size() == 1);
  CHECK(std::abs(single[0] - 1.0) <= 1e-12);
}

TEST_CASE("gamma matches the naive DFT filtering oracle") {
  const Tensor hand = Tensor::matrix(3, 4, {7, 7, 7, 7, 1, 2, 3, 4, 0.5, -1, 0, 2});
  const auto g = gamma_scores(hand, 1.0);
  const auto o = oracle::gamma(hand, 1.0);
  for (std::size_t j = 0; j < 2; ++j) CHECK(std::abs(g[j] - o[j]) <= 1e-10);

  CounterRng rng(2, 0, 0, RngStream::kData);
  for (std::size_t d : {4u, 12u, 64u})
    for (double sigma : {0.5, 2.0, static_cast<double>(d) / 4.0}) {
      const Tensor z = oracle::random_tensor({9, d}, rng);
      const auto a = gamma_scores(z, sigma), b = oracle::gamma(z, sigma);
      for (std::size_t j = 0; j < a.size(); ++j) CHECK(std::abs(a[j] - b[j]) <= 1e-10);
    }
}

TEST_CASE("gamma errors") {
  Tensor z({3, 4});
  z.at(0, 0) = 5.0;  // only the CLS row is non-zero
  CHECK_THROWS_AS(gamma_scores(z, 1.0), DegenerateInputError);
  CHECK_THROWS_AS(gamma_scores(Tensor({3, 4}, 1.0), 0.0), ParameterError);
}

TEST_CASE("gamma is bounded and monotone in sigma") {
  CounterRng rng(3, 0, 0, RngStream::kData);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor z = oracle::random_tensor({5, 16}, rng);
    std::vector<double> prev(4, 0.0);
    for (double sigma : {0.3, 1.0, 2.0, 4.0, 100.0}) {
      const auto g = gamma_scores(z, sigma);
      for (std::size_t j = 0; j < g.size(); ++j) {
        CHECK(g[j] >= 0.0);
        CHECK(g[j] <= 1.0);
        CHECK(g[j] >= prev[j] - 1e-15);
      }
      prev = g;
    }
  }
}

TEST_CASE("sampling weights examples") {
  const std::vector<double> a_w{0.2, 0.3, 0.5}, gamma{0.5, 0.5, 1.0};
  const auto p = sampling_weights(a_w, gamma);
  CHECK(std::abs(p[0] - 2.0 / 15.0) <= 1e-15);
  CHECK(std::abs(p[1] - 1.0 / 5.0) <= 1e-15);
  CHECK(std::abs(p[2] - 2.0 / 3.0) <= 1e-15);

  const std::vector<double> flat(3, 0.7);
  const auto q = sampling_weights(a_w, flat);
  for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(q[i] - a_w[i]) <= 1e-15);

  for (double c : {1e-3, 0.37, 3.0, 1e4}) {
    std::vector<double> scaled = gamma;
    for (double& v : scaled) v *= c;
    const auto r = sampling_weights(a_w, scaled);
    for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(r[i] - p[i]) <= 1e-15);
  }
  CHECK_THROWS_AS(sampling_weights(a_w, std::vector<double>(3, 0.0)), DegenerateInputError);
  CHECK_THROWS_AS(sampling_weights(a_w, std::vector<double>(2, 1.0)), ShapeError);
}

TEST_CASE("refresh: AM uses attention only, RANDOM is a no-op") {
  const ViTConfig cfg = oracle::tiny_config();
  const MaskedAutoencoder model = oracle::tiny_model(cfg, 4, 2.0);
  const Dataset data = tiny_dataset(cfg, 5);
  CHECK(refresh(data, model, 2.0, Strategy::kRandom, 0, 1) == nullptr);

  const auto store = refresh(data, model, 2.0, Strategy::kAM, 3, 1);
  REQUIRE(store);
  CHECK(store->generation == 1);
  CHECK(store->refresh_epoch == 3);
  CHECK(store->samples.size() == 5);
  for (const SampleWeights& s : store->samples) {
    CHECK(s.refresh_epoch == 3);
    const double total = std::accumulate(s.a_w.begin(), s.a_w.end(), 0.0);
    for (std::size_t i = 0; i < s.a_w.size(); ++i) {
      CHECK(s.gamma[i] == 1.0);
      CHECK(std::abs(s.p_a[i] - s.a_w[i] / total) <= 1e-15);
    }
  }
}

TEST_CASE("refresh is deterministic and matches a composed oracle") {
  ViTConfig cfg = oracle::tiny_config();
  cfg.image_width = 16;  // N = 8
  const MaskedAutoencoder model = oracle::tiny_model(cfg, 5, 2.0);
  const Dataset data = tiny_dataset(cfg, 6);
  const double sigma = 2.0;
  const auto a = refresh(data, model, sigma, Strategy::kFAMT, 0, 1);
  const auto b = refresh(data, model, sigma, Strategy::kFAMT, 0, 1);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const SampleWeights& s = a->at(i);
    CHECK(s.sample_id == i);
    CHECK(s.a_w == b->at(i).a_w);
    CHECK(s.gamma == b->at(i).gamma);
    CHECK(s.p_a == b->at(i).p_a);

    ag::Tape tape(false);
    Bound bound(tape, model.params(), nullptr);
    AttentionRecord rec;
    const ag::Var z = model.encode_full(bound, data.images[i].pixels, &rec);
    const Tensor& attn = rec.layers.back();
    const std::size_t T = cfg.patch_count() + 1;
    const auto g = oracle::gamma(z.value(), sigma);
    std::vector<double> a_w(cfg.patch_count(), 0.0), prod(cfg.patch_count());
    for (std::size_t j = 0; j < cfg.patch_count(); ++j) {
      for (std::size_t h = 0; h < cfg.heads; ++h) a_w[j] += attn[h * T * T + j + 1];
      a_w[j] /= static_cast<double>(cfg.heads);
      prod[j] = a_w[j] * g[j];
    }
    const double total = std::accumulate(prod.begin(), prod.end(), 0.0);
    double sum_p = 0.0;
    for (std::size_t j = 0; j < cfg.patch_count(); ++j) {
      CHECK(std::abs(s.a_w[j] - a_w[j]) <= 1e-12);
      CHECK(std::abs(s.gamma[j] - g[j]) <= 1e-10);
      CHECK(std::abs(s.p_a[j] - prod[j] / total) <= 1e-10);
      CHECK(s.p_a[j] >= 0.0);
      sum_p += s.p_a[j];
    }
    CHECK(std::abs(sum_p - 1.0) <= 1e-12);
  }
}

TEST_CASE("compute_sample_weights returns one entry per patch") {
  const ViTConfig cfg = oracle::tiny_config();
  const MaskedAutoencoder model(cfg, 1);
  const SampleWeights w =
      compute_sample_weights(model, oracle::random_image(cfg, 1), 2.0, Strategy::kFAM);
  CHECK(w.a_w.size() == cfg.patch_count());
  CHECK(w.gamma.size() == cfg.patch_count());
  CHECK(w.p_a.size() == cfg.patch_count());
}
