#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "famt/autograd.hpp"
#include "famt/data.hpp"
#include "famt/sampler.hpp"
#include "famt/vit.hpp"
#include "famt/weights.hpp"

namespace famt {

struct AdamSettings {
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
};

struct TrainConfig {
  Strategy strategy = Strategy::kFAMT;
  double mask_ratio = 0.45;
  double throw_ratio = 0.40;
  ThrowMode throw_mode = ThrowMode::kMiddle;
  double sigma = 0.0;                 // 0 selects embed_dim / 4
  std::uint32_t refresh_interval = 10;  // epochs
  int warmup_epochs = -1;             // negative selects refresh_interval
  int loss_p = 2;
  bool norm_pix_loss = false;
  std::uint32_t epochs = 20;
  std::uint64_t max_steps = 0;        // 0 runs every epoch to completion
  std::size_t batch_size = 32;
  double lr = 1.5e-3;
  double min_lr = 0.0;
  std::uint64_t lr_warmup_steps = 20;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;

  AdamSettings adam() const { return {weight_decay, beta1, beta2, adam_eps}; }
  std::uint32_t effective_warmup() const;
  double effective_sigma(std::size_t embed_dim) const;

  // Throws ParameterError on r + t > 1, loss_p outside {1, 2}, and so on.
  void validate() const;
  std::map<std::string, std::string> to_map() const;
  void set(const std::string& key, const std::string& value);
};

struct OptimizerState {
  std::uint64_t step = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;

  static OptimizerState for_params(const ParameterSet& params);
};

// Decoupled weight decay on parameters flagged `decay`, then the bias-
// corrected adaptive-moment step. Parameters with an empty gradient are
// left untouched.
void adamw_update(ParameterSet& params, OptimizerState& state, std::span<const Tensor> grads,
                  double lr, const AdamSettings& cfg);

// Linear warmup to cfg.lr over lr_warmup_steps, then cosine decay to min_lr
// at total_steps.
double learning_rate(std::uint64_t step, std::uint64_t total_steps, const TrainConfig& cfg);

// Mean over the rows listed in `mask_idx` and every pixel of |Y - X|^p.
// `positions[i]` is the patch position of prediction row i; `target` is the
// full N x (P*P*C) patch matrix. Throws UsageError on an empty mask.
ag::Var masked_loss(const ag::Var& prediction, std::span<const std::size_t> positions,
                    const ag::Var& target, std::span<const std::size_t> mask_idx, int p);
ag::Var masked_loss(const ag::Var& prediction, std::span<const std::size_t> positions,
                    const Tensor& target, std::span<const std::size_t> mask_idx, int p);

// Per-patch standardization of the targets (mean 0, variance 1).
Tensor normalize_patches(const Tensor& patches);

// Reconstruction loss of one image under one plan. Patch pixels enter the
// graph through `patches` so tests can differentiate with respect to them.
ag::Var sample_loss(const MaskedAutoencoder& model, Bound& b, const ag::Var& patches,
                    const MaskPlan& plan, const TrainConfig& cfg, ForwardTrace* trace = nullptr);

struct StepResult {
  double loss = 0.0;
  std::uint64_t encoder_tokens = 0;
  std::uint64_t decoder_rows = 0;
  std::vector<ForwardTrace> traces;                 // one per sample
  std::vector<std::vector<std::size_t>> loss_rows;  // loss support positions per sample
};

// Batch-mean loss and its gradient. Samples run in parallel on separate
// tapes; per-sample gradients are summed in sample order, so the result does
// not depend on the worker count.
StepResult batch_gradients(const MaskedAutoencoder& model, std::span<const Tensor* const> images,
                           std::span<const MaskPlan> plans, const TrainConfig& cfg,
                           std::vector<Tensor>& grads);

// batch_gradients followed by one optimizer update.
StepResult pretrain_step(MaskedAutoencoder& model, OptimizerState& opt,
                         std::span<const Tensor* const> images, std::span<const MaskPlan> plans,
                         const TrainConfig& cfg, double lr);

struct EpochSchedule {
  Strategy strategy = Strategy::kRandom;
  double throw_ratio = 0.0;
  bool refresh = false;
};

// RANDOM with t = 0 before warmup_epochs, the configured strategy afterwards.
// Refresh fires at warmup_epochs and every refresh_interval after it.
EpochSchedule schedule(std::uint32_t epoch, const TrainConfig& cfg);

struct TrainState {
  std::uint64_t global_step = 0;
  std::uint32_t epoch = 0;
  std::uint64_t step_in_epoch = 0;
  std::uint64_t encoder_tokens = 0;
  std::uint64_t decoder_rows = 0;
  std::uint32_t refresh_count = 0;
};

struct MetricsRow {
  std::uint32_t epoch = 0;
  std::uint64_t step = 0;
  double loss = 0.0;
  std::uint64_t tokens_encoder = 0;  // cumulative
  double ms_per_step = 0.0;
};

// "epoch step loss tokens_encoder ms_per_step"
std::string format_metrics(const MetricsRow& row);

struct StepRecord {
  const TrainState* state = nullptr;
  EpochSchedule schedule;
  std::span<const std::size_t> sample_ids;
  std::span<const MaskPlan> plans;
  const StepResult* result = nullptr;
};

class Trainer {
 public:
  Trainer(const Dataset& data, const TrainConfig& cfg, const ViTConfig& model_cfg);
  // Resume from saved state.
  Trainer(const Dataset& data, const TrainConfig& cfg, MaskedAutoencoder model,
          OptimizerState opt, TrainState state, std::shared_ptr<const WeightStore> store);

  std::uint64_t steps_per_epoch() const;
  std::uint64_t total_steps() const;
  bool done() const;

  // One optimizer step, including the epoch-boundary shuffle and any
  // scheduled weight refresh. Throws NumericError on a non-finite loss.
  MetricsRow step();
  // Steps until done() or `max_steps` more steps; each row goes to `log`.
  std::vector<MetricsRow> run(std::uint64_t max_steps = UINT64_MAX, std::ostream* log = nullptr);

  void set_observer(std::function<void(const StepRecord&)> fn) { observer_ = std::move(fn); }

  const TrainConfig& config() const { return cfg_; }
  const MaskedAutoencoder& model() const { return model_; }
  MaskedAutoencoder& model() { return model_; }
  const OptimizerState& optimizer() const { return opt_; }
  const TrainState& state() const { return state_; }
  std::shared_ptr<const WeightStore> weights() const { return store_; }

 private:
  void begin_epoch();

  const Dataset& data_;
  TrainConfig cfg_;
  MaskedAutoencoder model_;
  OptimizerState opt_;
  TrainState state_;
  std::shared_ptr<const WeightStore> store_;
  std::vector<std::size_t> order_;
  std::uint32_t order_epoch_ = UINT32_MAX;
  std::function<void(const StepRecord&)> observer_;
};

}  // namespace famt
