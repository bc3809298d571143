#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "famt/autograd.hpp"
#include "famt/params.hpp"
#include "famt/rng.hpp"
#include "famt/tensor.hpp"

namespace famt {

struct ViTConfig {
  std::size_t image_height = 32;
  std::size_t image_width = 32;
  std::size_t patch_size = 8;
  std::size_t channels = 3;
  std::size_t embed_dim = 64;
  std::size_t heads = 4;
  std::size_t encoder_depth = 4;
  std::size_t decoder_depth = 2;
  std::size_t decoder_dim = 32;
  std::size_t decoder_heads = 4;
  std::size_t mlp_ratio = 4;
  double ln_eps = 1e-6;

  std::size_t grid_height() const { return image_height / patch_size; }
  std::size_t grid_width() const { return image_width / patch_size; }
  std::size_t patch_count() const { return grid_height() * grid_width(); }
  std::size_t patch_dim() const { return patch_size * patch_size * channels; }

  // Throws ParameterError when a size is zero or a divisibility rule fails.
  void validate() const;

  std::map<std::string, std::string> to_map() const;
  void set(const std::string& key, const std::string& value);

  // 32x32x3, P=8 (N=16), d=64, 4 heads, depth 4/2, decoder dim 32.
  static ViTConfig desk();
  // Same widths on 56x56 images with P=4, giving N=196 like ViT-x/16 at 224.
  static ViTConfig desk196();
  static ViTConfig vit_small();
  static ViTConfig vit_base();
  static ViTConfig preset(const std::string& name);
};

// C x H x W image -> N x (P*P*C). Patches run row-major over the grid;
// inside a patch the layout is channel-major: c * P * P + y * P + x.
Tensor patchify(const Tensor& image, std::size_t patch_size);
Tensor unpatchify(const Tensor& patches, std::size_t channels, std::size_t height,
                  std::size_t width, std::size_t patch_size);

// z = [x_cls; x_p E] + E_pos
ag::Var embed_tokens(const ag::Var& patches, const ag::Var& projection,
                     const ag::Var& pos_embed, const ag::Var& cls_token);

struct MsaParams {
  ag::Var qkv_w, qkv_b, proj_w, proj_b;
};

// Multi-head self-attention: per head softmax(q k^T / sqrt(d/h)) v, heads
// concatenated then projected. `attn` receives h x T x T when non-null.
ag::Var msa_forward(const ag::Var& tokens, const MsaParams& p, std::size_t heads,
                    Tensor* attn = nullptr);

struct AttentionRecord {
  std::vector<Tensor> layers;    // one h x T x T tensor per block
  std::size_t patches_fed = 0;   // T - 1
};

// Mean over heads of the CLS row with its CLS element dropped.
// Requires a full unmasked sequence: patches_fed == patch_count.
std::vector<double> cls_attention(const AttentionRecord& record, std::size_t patch_count);
std::vector<double> cls_attention(const Tensor& last_layer_attn);

// Per-forward instrumentation used to prove thrown tokens never enter the graph.
struct ForwardTrace {
  std::uint64_t encoder_tokens = 0;
  std::uint64_t decoder_rows = 0;
  std::vector<std::size_t> encoder_positions;  // patch positions (CLS excluded)
  std::vector<std::size_t> decoder_positions;
};

struct DecoderOutput {
  ag::Var prediction;                  // rows x (P*P*C)
  std::vector<std::size_t> positions;  // patch position of each row, ascending
};

class MaskedAutoencoder {
 public:
  MaskedAutoencoder(const ViTConfig& config, std::uint64_t seed);

  const ViTConfig& config() const { return cfg_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

  // CLS plus the given patch positions, each with its positional embedding.
  // `patches` is the N x (P*P*C) patchified image.
  ag::Var embed(Bound& b, const ag::Var& patches, std::span<const std::size_t> positions,
                ForwardTrace* trace = nullptr) const;

  // Pre-norm transformer blocks. Returns the last block's output.
  ag::Var encoder_forward(Bound& b, const ag::Var& tokens, AttentionRecord* record = nullptr,
                          ForwardTrace* trace = nullptr) const;
  ag::Var encoder_norm(Bound& b, const ag::Var& z) const;

  // Decoder over visible and masked positions only. Encoded rows are
  // [CLS, visible...] in the order of `visible`. Any position listed in
  // `thrown` appearing in visible/masked is a usage error.
  DecoderOutput decoder_forward(Bound& b, const ag::Var& encoded,
                                std::span<const std::size_t> visible,
                                std::span<const std::size_t> masked,
                                std::span<const std::size_t> thrown = {},
                                ForwardTrace* trace = nullptr) const;

  // Full unmasked encoder pass on one image: returns the last block output
  // (N+1) x d and optionally the attention of every block.
  ag::Var encode_full(Bound& b, const Tensor& image, AttentionRecord* record = nullptr) const;

  std::size_t block_count() const { return enc_blocks_.size(); }

  struct BlockIds {
    std::size_t ln1_g, ln1_b, qkv_w, qkv_b, proj_w, proj_b;
    std::size_t ln2_g, ln2_b, fc1_w, fc1_b, fc2_w, fc2_b;
  };

 private:
  ag::Var block_forward(Bound& b, const BlockIds& ids, const ag::Var& x, std::size_t heads,
                        Tensor* attn) const;
  BlockIds add_block(const std::string& prefix, std::size_t dim, std::size_t hidden,
                     CounterRng& rng);

  ViTConfig cfg_;
  ParameterSet params_;
  std::size_t patch_embed_, cls_token_, pos_embed_, norm_g_, norm_b_;
  std::vector<BlockIds> enc_blocks_;
  std::size_t dec_embed_w_, dec_embed_b_, mask_token_, dec_pos_;
  std::vector<BlockIds> dec_blocks_;
  std::size_t dec_norm_g_, dec_norm_b_, dec_pred_w_, dec_pred_b_;
};

}  // namespace famt
