#include "famt/weights.hpp"

#include <chrono>
#include <cmath>

#include <spdlog/spdlog.h>

#include "famt/data.hpp"
#include "famt/errors.hpp"
#include "famt/parallel.hpp"
#include "famt/spectral.hpp"
#include "famt/vit.hpp"

namespace famt {

std::vector<double> gamma_scores(const Tensor& z, double sigma) {
  if (z.rank() != 2 || z.dims()[0] < 2) {
    throw ShapeError("gamma_scores: expected (N+1) x d tokens with N >= 1, got " +
                     dims_to_string(z.dims()));
  }
  const std::size_t rows = z.dims()[0], d = z.dims()[1];
  const spectral::LowPassFilter filter = spectral::gaussian_lowpass(d, sigma);

  double denom_sq = 0.0;
  for (std::size_t i = d; i < rows * d; ++i) denom_sq += z[i] * z[i];
  const double denom = std::sqrt(denom_sq);
  if (!(denom > 0.0)) {
    throw DegenerateInputError("gamma_scores: all patch tokens are zero");
  }
  std::vector<double> gamma(rows - 1);
  for (std::size_t j = 1; j < rows; ++j) {
    gamma[j - 1] = spectral::lowpass_norm(z.data().subspan(j * d, d), filter) / denom;
  }
  return gamma;
}

std::vector<double> sampling_weights(std::span<const double> a_w, std::span<const double> gamma) {
  if (a_w.size() != gamma.size()) {
    throw ShapeError("sampling_weights: " + std::to_string(a_w.size()) + " attention weights vs " +
                     std::to_string(gamma.size()) + " gamma scores");
  }
  std::vector<double> p(a_w.size());
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = gamma[i] * a_w[i];
    total += p[i];
  }
  if (!(total > 0.0) || !std::isfinite(total)) {
    throw DegenerateInputError("sampling_weights: gamma * a_w has no positive mass");
  }
  for (double& v : p) v /= total;
  return p;
}

const SampleWeights& WeightStore::at(std::size_t sample_id) const {
  if (sample_id >= samples.size()) {
    throw UsageError("weight store has no entry for sample " + std::to_string(sample_id));
  }
  return samples[sample_id];
}

SampleWeights compute_sample_weights(const MaskedAutoencoder& model, const Tensor& image,
                                     double sigma, Strategy strategy) {
  ag::Tape tape(false);
  Bound b(tape, model.params(), nullptr);
  AttentionRecord record;
  const ag::Var z = model.encode_full(b, image, &record);

  SampleWeights w;
  w.a_w = cls_attention(record, model.config().patch_count());
  if (uses_frequency(strategy)) {
    w.gamma = gamma_scores(z.value(), sigma);
  } else {
    w.gamma.assign(w.a_w.size(), 1.0);
  }
  try {
    w.p_a = sampling_weights(w.a_w, w.gamma);
  } catch (const DegenerateInputError&) {
    spdlog::warn("sampling weights degenerate; falling back to uniform");
    w.p_a.assign(w.a_w.size(), 1.0 / static_cast<double>(w.a_w.size()));
  }
  return w;
}

std::shared_ptr<const WeightStore> refresh(const Dataset& data, const MaskedAutoencoder& model,
                                           double sigma, Strategy strategy,
                                           std::uint32_t epoch, std::uint32_t generation) {
  if (!uses_weights(strategy)) {
    spdlog::warn("refresh requested for strategy random; nothing to compute");
    return nullptr;
  }
  const auto start = std::chrono::steady_clock::now();
  auto store = std::make_shared<WeightStore>();
  store->generation = generation;
  store->refresh_epoch = epoch;
  store->strategy = strategy;
  store->sigma = sigma;
  store->samples.resize(data.images.size());

  parallel_for(data.images.size(), [&](std::size_t i) {
    const auto& img = data.images[i];
    SampleWeights w = compute_sample_weights(model, img.pixels, sigma, strategy);
    w.sample_id = img.sample_id;
    w.refresh_epoch = epoch;
    store->samples[i] = std::move(w);
  });
  store->runtime_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return store;
}

}  // namespace famt
