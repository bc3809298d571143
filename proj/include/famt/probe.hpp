#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "famt/data.hpp"
#include "famt/tensor.hpp"
#include "famt/vit.hpp"

namespace famt {

struct EvalReport {
  double top1 = 0.0;
  std::vector<double> per_class;        // accuracy per class, -1 when absent
  std::vector<std::size_t> class_count;
  std::size_t count = 0;

  // "top1=<fraction>"
  std::string summary() const;
  // "class count accuracy" rows
  std::string per_class_table() const;
};

// Row-wise argmax; ties go to the lowest index.
std::vector<int> argmax_rows(const Tensor& logits);
// Fraction of exact matches. Throws ShapeError on a length mismatch.
double top1(std::span<const int> predictions, std::span<const int> labels);
EvalReport evaluate(std::span<const int> predictions, std::span<const int> labels,
                    int num_classes);

// CLS row of the last encoder block for every image, one unmasked forward
// each. Parallel over images; the result does not depend on batching.
Tensor extract_features(const MaskedAutoencoder& model, std::span<const Tensor* const> images);
Tensor extract_features(const MaskedAutoencoder& model, const Dataset& data);

struct ProbeConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 128;
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 0.0;
  double bn_momentum = 0.1;
  double bn_eps = 1e-6;
  std::uint64_t seed = 0;
};

// Parameter-free batch norm over the feature dim followed by a linear map.
struct ProbeHead {
  Tensor running_mean;  // 1 x d
  Tensor running_var;   // 1 x d
  Tensor weight;        // d x K
  Tensor bias;          // 1 x K
  double bn_eps = 1e-6;

  // Inference mode: a fixed affine map of each row.
  Tensor logits(const Tensor& features) const;
  std::vector<int> predict(const Tensor& features) const;
};

struct ProbeResult {
  ProbeHead head;
  EvalReport report;
};

// Trains the head with momentum SGD on cross-entropy (batch statistics in
// training mode) and reports top-1 on the held-out rows. Throws
// DegenerateInputError when the training labels hold a single class.
ProbeResult linear_probe(const Tensor& train_x, std::span<const int> train_y,
                         const Tensor& test_x, std::span<const int> test_y, int num_classes,
                         const ProbeConfig& cfg);

struct FinetuneConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  double weight_decay = 0.05;
  std::uint64_t seed = 0;
};

// All encoder parameters plus a linear head on the normalized CLS token,
// trained with AdamW on cross-entropy; the model copy is updated in place.
// Reports top-1 on `test`. Throws NumericError on a non-finite loss.
EvalReport finetune(MaskedAutoencoder& model, const Dataset& train, const Dataset& test,
                    const FinetuneConfig& cfg);

}  // namespace famt
