#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "famt/data.hpp"
#include "famt/trainer.hpp"
#include "famt/vit.hpp"
#include "famt/weights.hpp"

namespace famt {

// Little-endian layout:
//   "FAMT", u32 version (1)
//   u32 n, n x (string key, string value)         train.* and model.* settings
//   u32 n, n x (string name, u32 rank, rank x u64 dim, f64 payload)
//                                                 param/, adam.m/, adam.v/ entries
//   u64 optimizer step
//   u64 seed, u64 global_step, u32 epoch, u64 step_in_epoch,
//   u64 encoder_tokens, u64 decoder_rows, u32 refresh_count
//   u8 has_weights, then when set:
//     u32 generation, u32 refresh_epoch, string strategy, f64 sigma, f64 runtime_ms,
//     u32 n, n x (u32 sample_id, u32 refresh_epoch, vec a_w, vec gamma, vec p_a)
// Strings are u32 length + bytes, vectors u32 length + f64 values.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  TrainConfig train;
  ViTConfig model;
  std::vector<std::pair<std::string, Tensor>> params;
  OptimizerState optimizer;  // moments in parameter order; may be empty
  TrainState state;
  std::shared_ptr<const WeightStore> weights;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
// Throws FormatError on a bad magic, unknown version or truncated payload.
Checkpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

Checkpoint snapshot(const Trainer& trainer);
Checkpoint snapshot(const MaskedAutoencoder& model, const TrainConfig& train);

// Model with every parameter taken from the checkpoint by name.
MaskedAutoencoder restore_model(const Checkpoint& ckpt);
// Trainer that continues exactly where the snapshot stopped.
Trainer resume(const Dataset& data, const Checkpoint& ckpt);

}  // namespace famt
