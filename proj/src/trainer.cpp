#include "famt/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <sstream>

#include <spdlog/spdlog.h>

#include "famt/config_text.hpp"
#include "famt/errors.hpp"
#include "famt/parallel.hpp"

namespace famt {

std::uint32_t TrainConfig::effective_warmup() const {
  return warmup_epochs < 0 ? refresh_interval : static_cast<std::uint32_t>(warmup_epochs);
}

double TrainConfig::effective_sigma(std::size_t embed_dim) const {
  return sigma > 0.0 ? sigma : static_cast<double>(embed_dim) / 4.0;
}

void TrainConfig::validate() const {
  if (mask_ratio < 0.0 || throw_ratio < 0.0 || mask_ratio + throw_ratio > 1.0 + 1e-12) {
    throw ParameterError("mask ratio " + format_real(mask_ratio) + " plus throw ratio " +
                         format_real(throw_ratio) + " must lie in [0, 1]");
  }
  if (loss_p != 1 && loss_p != 2) throw ParameterError("loss_p must be 1 or 2");
  if (sigma < 0.0) throw ParameterError("sigma must be positive (0 selects d/4)");
  if (refresh_interval == 0) throw ParameterError("refresh_interval must be at least 1");
  if (batch_size == 0) throw ParameterError("batch_size must be at least 1");
  if (!(lr >= 0.0) || !(min_lr >= 0.0)) throw ParameterError("learning rates must be >= 0");
  if (weight_decay < 0.0) throw ParameterError("weight_decay must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ParameterError("adam betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw ParameterError("adam_eps must be positive");
}

std::map<std::string, std::string> TrainConfig::to_map() const {
  return {
      {"strategy", std::string(to_string(strategy))},
      {"mask_ratio", format_real(mask_ratio)},
      {"throw_ratio", format_real(throw_ratio)},
      {"throw_mode", std::string(to_string(throw_mode))},
      {"sigma", format_real(sigma)},
      {"refresh_interval", std::to_string(refresh_interval)},
      {"warmup_epochs", std::to_string(warmup_epochs)},
      {"loss_p", std::to_string(loss_p)},
      {"norm_pix_loss", norm_pix_loss ? "1" : "0"},
      {"epochs", std::to_string(epochs)},
      {"max_steps", std::to_string(max_steps)},
      {"batch_size", std::to_string(batch_size)},
      {"lr", format_real(lr)},
      {"min_lr", format_real(min_lr)},
      {"lr_warmup_steps", std::to_string(lr_warmup_steps)},
      {"weight_decay", format_real(weight_decay)},
      {"beta1", format_real(beta1)},
      {"beta2", format_real(beta2)},
      {"adam_eps", format_real(adam_eps)},
      {"seed", std::to_string(seed)},
  };
}

void TrainConfig::set(const std::string& key, const std::string& value) {
  if (key == "strategy") strategy = parse_strategy(value);
  else if (key == "mask_ratio") mask_ratio = parse_real(key, value);
  else if (key == "throw_ratio") throw_ratio = parse_real(key, value);
  else if (key == "throw_mode") throw_mode = parse_throw_mode(value);
  else if (key == "sigma") sigma = parse_real(key, value);
  else if (key == "refresh_interval") refresh_interval = static_cast<std::uint32_t>(parse_uint(key, value));
  else if (key == "warmup_epochs") warmup_epochs = static_cast<int>(parse_int(key, value));
  else if (key == "loss_p") loss_p = static_cast<int>(parse_int(key, value));
  else if (key == "norm_pix_loss") norm_pix_loss = parse_flag(key, value);
  else if (key == "epochs") epochs = static_cast<std::uint32_t>(parse_uint(key, value));
  else if (key == "max_steps") max_steps = parse_uint(key, value);
  else if (key == "batch_size") batch_size = parse_uint(key, value);
  else if (key == "lr") lr = parse_real(key, value);
  else if (key == "min_lr") min_lr = parse_real(key, value);
  else if (key == "lr_warmup_steps") lr_warmup_steps = parse_uint(key, value);
  else if (key == "weight_decay") weight_decay = parse_real(key, value);
  else if (key == "beta1") beta1 = parse_real(key, value);
  else if (key == "beta2") beta2 = parse_real(key, value);
  else if (key == "adam_eps") adam_eps = parse_real(key, value);
  else if (key == "seed") seed = parse_uint(key, value);
  else throw ParameterError("unknown training setting '" + key + "'");
}

OptimizerState OptimizerState::for_params(const ParameterSet& params) {
  OptimizerState s;
  s.m = params.zeros_like();
  s.v = params.zeros_like();
  return s;
}

void adamw_update(ParameterSet& params, OptimizerState& state, std::span<const Tensor> grads,
                  double lr, const AdamSettings& cfg) {
  if (grads.size() != params.size() || state.m.size() != params.size() ||
      state.v.size() != params.size()) {
    throw ShapeError("adamw_update: buffer count does not match parameters");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& w = params[k].value;
    if (grads[k].empty() && w.size() != 0) continue;
    if (grads[k].size() != w.size() || state.m[k].size() != w.size()) {
      throw ShapeError("adamw_update: buffer shape mismatch for " + params[k].name);
    }
    const double decay = params[k].decay ? lr * cfg.weight_decay : 0.0;
    double* wp = w.ptr();
    double* mp = state.m[k].ptr();
    double* vp = state.v[k].ptr();
    const double* gp = grads[k].ptr();
    for (std::size_t i = 0; i < w.size(); ++i) {
      mp[i] = cfg.beta1 * mp[i] + (1.0 - cfg.beta1) * gp[i];
      vp[i] = cfg.beta2 * vp[i] + (1.0 - cfg.beta2) * gp[i] * gp[i];
      const double mhat = mp[i] / c1;
      const double vhat = vp[i] / c2;
      wp[i] -= decay * wp[i];
      wp[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

double learning_rate(std::uint64_t step, std::uint64_t total_steps, const TrainConfig& cfg) {
  if (step < cfg.lr_warmup_steps) {
    return cfg.lr * static_cast<double>(step + 1) / static_cast<double>(cfg.lr_warmup_steps);
  }
  if (total_steps <= cfg.lr_warmup_steps) return cfg.lr;
  const double progress = std::min(
      1.0, static_cast<double>(step - cfg.lr_warmup_steps) /
               static_cast<double>(total_steps - cfg.lr_warmup_steps));
  return cfg.min_lr + (cfg.lr - cfg.min_lr) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

ag::Var masked_loss(const ag::Var& prediction, std::span<const std::size_t> positions,
                    const ag::Var& target, std::span<const std::size_t> mask_idx, int p) {
  if (mask_idx.empty()) throw UsageError("masked_loss: no masked patches, nothing to reconstruct");
  if (p != 1 && p != 2) throw ParameterError("masked_loss: p must be 1 or 2");
  if (prediction.dims().size() != 2 || prediction.dims()[0] != positions.size() ||
      target.dims().size() != 2 || prediction.dims()[1] != target.dims()[1]) {
    throw ShapeError("masked_loss: prediction " + dims_to_string(prediction.dims()) + " vs target " +
                     dims_to_string(target.dims()));
  }
  std::vector<std::size_t> pred_rows, target_rows;
  pred_rows.reserve(mask_idx.size());
  for (std::size_t m : mask_idx) {
    const auto it = std::find(positions.begin(), positions.end(), m);
    if (it == positions.end()) {
      throw UsageError("masked_loss: masked position " + std::to_string(m) +
                       " has no reconstruction");
    }
    if (m >= target.dims()[0]) throw ShapeError("masked_loss: masked position out of range");
    pred_rows.push_back(static_cast<std::size_t>(it - positions.begin()));
    target_rows.push_back(m);
  }
  const ag::Var diff =
      ag::sub(ag::gather_rows(prediction, pred_rows), ag::gather_rows(target, target_rows));
  return ag::mean(p == 2 ? ag::mul(diff, diff) : ag::abs(diff));
}

ag::Var masked_loss(const ag::Var& prediction, std::span<const std::size_t> positions,
                    const Tensor& target, std::span<const std::size_t> mask_idx, int p) {
  return masked_loss(prediction, positions, prediction.tape().constant(target), mask_idx, p);
}

Tensor normalize_patches(const Tensor& patches) {
  Tensor out = patches;
  const std::size_t rows = patches.rows(), cols = patches.cols();
  for (std::size_t r = 0; r < rows; ++r) {
    double* row = out.ptr() + r * cols;
    double mean = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mean += row[c];
    mean /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) var += (row[c] - mean) * (row[c] - mean);
    var /= static_cast<double>(cols > 1 ? cols - 1 : 1);
    const double inv = 1.0 / std::sqrt(var + 1e-6);
    for (std::size_t c = 0; c < cols; ++c) row[c] = (row[c] - mean) * inv;
  }
  return out;
}

ag::Var sample_loss(const MaskedAutoencoder& model, Bound& b, const ag::Var& patches,
                    const MaskPlan& plan, const TrainConfig& cfg, ForwardTrace* trace) {
  if (plan.patch_count() != model.config().patch_count()) {
    throw ShapeError("plan covers " + std::to_string(plan.patch_count()) + " patches, model has " +
                     std::to_string(model.config().patch_count()));
  }
  std::vector<std::size_t> visible = plan.visible_idx;
  std::vector<std::size_t> masked = plan.mask_idx;
  std::sort(visible.begin(), visible.end());
  std::sort(masked.begin(), masked.end());

  const ag::Var tokens = model.embed(b, patches, visible, trace);
  const ag::Var z = model.encoder_norm(b, model.encoder_forward(b, tokens, nullptr, trace));
  const DecoderOutput dec = model.decoder_forward(b, z, visible, masked, plan.throw_idx, trace);
  if (cfg.norm_pix_loss) {
    return masked_loss(dec.prediction, dec.positions, normalize_patches(patches.value()), masked,
                       cfg.loss_p);
  }
  return masked_loss(dec.prediction, dec.positions, patches, masked, cfg.loss_p);
}

StepResult batch_gradients(const MaskedAutoencoder& model, std::span<const Tensor* const> images,
                           std::span<const MaskPlan> plans, const TrainConfig& cfg,
                           std::vector<Tensor>& grads) {
  if (images.size() != plans.size() || images.empty()) {
    throw ShapeError("pretrain step: " + std::to_string(images.size()) + " images vs " +
                     std::to_string(plans.size()) + " plans");
  }
  const std::size_t batch = images.size();
  const std::size_t np = model.params().size();
  std::vector<std::vector<Tensor>> sample_grads(batch);
  std::vector<double> losses(batch);
  StepResult result;
  result.traces.resize(batch);
  result.loss_rows.resize(batch);

  parallel_for(batch, [&](std::size_t i) {
    sample_grads[i].resize(np);
    ag::Tape tape;
    Bound b(tape, model.params(), &sample_grads[i]);
    const ag::Var patches = tape.constant(patchify(*images[i], model.config().patch_size));
    const ag::Var loss = sample_loss(model, b, patches, plans[i], cfg, &result.traces[i]);
    tape.backward(loss);
    losses[i] = loss.value().item();
    result.loss_rows[i] = plans[i].mask_idx;
    std::sort(result.loss_rows[i].begin(), result.loss_rows[i].end());
  });

  grads.assign(np, Tensor());
  const double inv = 1.0 / static_cast<double>(batch);
  for (std::size_t k = 0; k < np; ++k) grads[k] = Tensor(model.params()[k].value.dims());
  for (std::size_t i = 0; i < batch; ++i) {
    result.loss += losses[i] * inv;
    result.encoder_tokens += result.traces[i].encoder_tokens;
    result.decoder_rows += result.traces[i].decoder_rows;
    for (std::size_t k = 0; k < np; ++k) {
      if (!sample_grads[i][k].empty()) grads[k].add_(sample_grads[i][k], inv);
    }
  }
  return result;
}

StepResult pretrain_step(MaskedAutoencoder& model, OptimizerState& opt,
                         std::span<const Tensor* const> images, std::span<const MaskPlan> plans,
                         const TrainConfig& cfg, double lr) {
  std::vector<Tensor> grads;
  StepResult result = batch_gradients(model, images, plans, cfg, grads);
  if (!std::isfinite(result.loss)) return result;  // caller decides how to abort
  adamw_update(model.params(), opt, grads, lr, cfg.adam());
  return result;
}

EpochSchedule schedule(std::uint32_t epoch, const TrainConfig& cfg) {
  const std::uint32_t warmup = cfg.effective_warmup();
  EpochSchedule s;
  if (epoch < warmup) return s;
  s.strategy = cfg.strategy;
  s.throw_ratio = allows_throw(cfg.strategy) ? cfg.throw_ratio : 0.0;
  s.refresh = uses_weights(cfg.strategy) && (epoch - warmup) % cfg.refresh_interval == 0;
  return s;
}

std::string format_metrics(const MetricsRow& row) {
  std::ostringstream out;
  out << row.epoch << ' ' << row.step << ' ' << format_real(row.loss) << ' ' << row.tokens_encoder
      << ' ' << format_real(std::round(row.ms_per_step * 1000.0) / 1000.0);
  return out.str();
}

Trainer::Trainer(const Dataset& data, const TrainConfig& cfg, const ViTConfig& model_cfg)
    : Trainer(data, cfg, MaskedAutoencoder(model_cfg, cfg.seed), OptimizerState{}, TrainState{},
              nullptr) {
  opt_ = OptimizerState::for_params(model_.params());
}

Trainer::Trainer(const Dataset& data, const TrainConfig& cfg, MaskedAutoencoder model,
                 OptimizerState opt, TrainState state, std::shared_ptr<const WeightStore> store)
    : data_(data),
      cfg_(cfg),
      model_(std::move(model)),
      opt_(std::move(opt)),
      state_(state),
      store_(std::move(store)) {
  cfg_.validate();
  const ViTConfig& mc = model_.config();
  if (data_.size() == 0) throw ParameterError("training set is empty");
  if (data_.channels != mc.channels || data_.height != mc.image_height ||
      data_.width != mc.image_width) {
    throw ShapeError("dataset images are " + std::to_string(data_.channels) + "x" +
                     std::to_string(data_.height) + "x" + std::to_string(data_.width) +
                     ", model expects " + std::to_string(mc.channels) + "x" +
                     std::to_string(mc.image_height) + "x" + std::to_string(mc.image_width));
  }
  if (mask_counts(mc.patch_count(), cfg_.mask_ratio, cfg_.throw_ratio).masked == 0) {
    throw ParameterError("mask ratio leaves no masked patch at N = " +
                         std::to_string(mc.patch_count()));
  }
}

std::uint64_t Trainer::steps_per_epoch() const {
  return (data_.size() + cfg_.batch_size - 1) / cfg_.batch_size;
}

std::uint64_t Trainer::total_steps() const {
  const std::uint64_t all = steps_per_epoch() * cfg_.epochs;
  return cfg_.max_steps > 0 ? std::min(all, cfg_.max_steps) : all;
}

bool Trainer::done() const { return state_.global_step >= total_steps(); }

void Trainer::begin_epoch() {
  if (order_epoch_ == state_.epoch) return;
  if (state_.step_in_epoch == 0) {
    const EpochSchedule s = schedule(state_.epoch, cfg_);
    if (s.refresh) {
      store_ = refresh(data_, model_, cfg_.effective_sigma(model_.config().embed_dim),
                       cfg_.strategy, state_.epoch, state_.refresh_count + 1);
      ++state_.refresh_count;
      spdlog::debug("refreshed sampling weights at epoch {} in {:.1f} ms", state_.epoch,
                    store_->runtime_ms);
    }
  }
  CounterRng rng(cfg_.seed, state_.epoch, 0, RngStream::kShuffle);
  order_ = uniform_order(data_.size(), rng);
  order_epoch_ = state_.epoch;
}

MetricsRow Trainer::step() {
  if (done()) throw UsageError("training already finished");
  const auto start = std::chrono::steady_clock::now();
  begin_epoch();
  const EpochSchedule sched = schedule(state_.epoch, cfg_);
  const std::size_t n = model_.config().patch_count();
  if (uses_weights(sched.strategy) && !store_) {
    throw UsageError("weighted strategy active without sampling weights");
  }

  const std::size_t first = state_.step_in_epoch * cfg_.batch_size;
  const std::size_t last = std::min(first + cfg_.batch_size, data_.size());
  std::vector<std::size_t> ids(order_.begin() + static_cast<std::ptrdiff_t>(first),
                               order_.begin() + static_cast<std::ptrdiff_t>(last));
  std::vector<const Tensor*> images(ids.size());
  std::vector<MaskPlan> plans(ids.size());
  parallel_for(ids.size(), [&](std::size_t i) {
    const LabeledImage& img = data_.images[ids[i]];
    images[i] = &img.pixels;
    CounterRng rng(cfg_.seed, state_.epoch, img.sample_id, RngStream::kPlan);
    std::optional<std::span<const double>> p_a;
    if (uses_weights(sched.strategy)) p_a = store_->at(img.sample_id).p_a;
    plans[i] = plan(p_a, n, sched.strategy, cfg_.mask_ratio, sched.throw_ratio, rng,
                    cfg_.throw_mode);
  });

  const double lr = learning_rate(state_.global_step, total_steps(), cfg_);
  const StepResult result = pretrain_step(model_, opt_, images, plans, cfg_, lr);
  if (!std::isfinite(result.loss)) {
    std::ostringstream msg;
    msg << "non-finite loss at epoch " << state_.epoch << " step " << state_.global_step
        << " (lr " << lr << ", strategy " << to_string(sched.strategy) << ", samples";
    for (std::size_t id : ids) msg << ' ' << id;
    msg << "); parameter checksum " << model_.params().checksum();
    throw NumericError(msg.str());
  }

  state_.encoder_tokens += result.encoder_tokens;
  state_.decoder_rows += result.decoder_rows;
  if (observer_) {
    StepRecord rec;
    rec.state = &state_;
    rec.schedule = sched;
    rec.sample_ids = ids;
    rec.plans = plans;
    rec.result = &result;
    observer_(rec);
  }

  MetricsRow row;
  row.epoch = state_.epoch;
  row.step = state_.global_step;
  row.loss = result.loss;
  row.tokens_encoder = state_.encoder_tokens;

  ++state_.global_step;
  if (++state_.step_in_epoch == steps_per_epoch()) {
    state_.step_in_epoch = 0;
    ++state_.epoch;
  }
  row.ms_per_step =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return row;
}

std::vector<MetricsRow> Trainer::run(std::uint64_t max_steps, std::ostream* log) {
  std::vector<MetricsRow> rows;
  for (std::uint64_t i = 0; i < max_steps && !done(); ++i) {
    rows.push_back(step());
    if (log != nullptr) *log << format_metrics(rows.back()) << '\n' << std::flush;
  }
  return rows;
}

}  // namespace famt
