#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "famt/sampler.hpp"
#include "famt/tensor.hpp"

namespace famt {

class MaskedAutoencoder;
struct Dataset;

// Low-frequency energy share of every non-CLS token of Z ((N+1) x d):
//   gamma_j = ||ifft(G(sigma) * fft(Z[j,:]))||_2 / ||Z[1:,:]||_F
// The transform runs along the channel axis of each token.
std::vector<double> gamma_scores(const Tensor& z, double sigma);

// P_A[i] = gamma_i a_w_i / sum_j gamma_j a_w_j.
// Throws DegenerateInputError when every product is zero.
std::vector<double> sampling_weights(std::span<const double> a_w, std::span<const double> gamma);

struct SampleWeights {
  std::uint32_t sample_id = 0;
  std::vector<double> a_w;
  std::vector<double> gamma;
  std::vector<double> p_a;
  std::uint32_t refresh_epoch = 0;
};

// One immutable generation of per-sample weights, indexed by sample id.
struct WeightStore {
  std::uint32_t generation = 0;
  std::uint32_t refresh_epoch = 0;
  Strategy strategy = Strategy::kAM;
  double sigma = 0.0;
  double runtime_ms = 0.0;
  std::vector<SampleWeights> samples;

  const SampleWeights& at(std::size_t sample_id) const;
};

// Weights for a single image from one full unmasked encoder pass. Attention-
// only strategies use gamma = 1.
SampleWeights compute_sample_weights(const MaskedAutoencoder& model, const Tensor& image,
                                     double sigma, Strategy strategy);

// Full refresh over the dataset, parallel over samples. Returns nullptr
// (and logs a warning) for the RANDOM strategy.
std::shared_ptr<const WeightStore> refresh(const Dataset& data, const MaskedAutoencoder& model,
                                           double sigma, Strategy strategy,
                                           std::uint32_t epoch, std::uint32_t generation);

}  // namespace famt
