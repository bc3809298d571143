#include "famt/vit.hpp"

#include <algorithm>
#include <numeric>

#include "famt/config_text.hpp"
#include "famt/errors.hpp"

namespace famt {

namespace {

constexpr double kInitStd = 0.02;

Tensor trunc_normal(Dims dims, CounterRng& rng) {
  Tensor t(std::move(dims));
  for (double& v : t.data()) v = rng.truncated_normal(kInitStd);
  return t;
}

std::size_t parse_size(const std::string& key, const std::string& value) {
  return static_cast<std::size_t>(parse_uint("model." + key, value));
}

}  // namespace

void ViTConfig::validate() const {
  const std::size_t sizes[] = {image_height, image_width, patch_size, channels,   embed_dim,
                               heads,        decoder_dim, decoder_heads, mlp_ratio};
  for (std::size_t s : sizes) {
    if (s == 0) throw ParameterError("model config: all sizes must be positive");
  }
  if (image_height % patch_size != 0 || image_width % patch_size != 0) {
    throw ParameterError("model config: image " + std::to_string(image_height) + "x" +
                         std::to_string(image_width) + " not divisible by patch size " +
                         std::to_string(patch_size));
  }
  if (embed_dim % heads != 0) {
    throw ParameterError("model config: embed_dim " + std::to_string(embed_dim) +
                         " not divisible by heads " + std::to_string(heads));
  }
  if (decoder_dim % decoder_heads != 0) {
    throw ParameterError("model config: decoder_dim not divisible by decoder_heads");
  }
  if (!(ln_eps >= 0.0)) throw ParameterError("model config: ln_eps must be >= 0");
}

std::map<std::string, std::string> ViTConfig::to_map() const {
  return {
      {"image_height", std::to_string(image_height)},
      {"image_width", std::to_string(image_width)},
      {"patch_size", std::to_string(patch_size)},
      {"channels", std::to_string(channels)},
      {"embed_dim", std::to_string(embed_dim)},
      {"heads", std::to_string(heads)},
      {"encoder_depth", std::to_string(encoder_depth)},
      {"decoder_depth", std::to_string(decoder_depth)},
      {"decoder_dim", std::to_string(decoder_dim)},
      {"decoder_heads", std::to_string(decoder_heads)},
      {"mlp_ratio", std::to_string(mlp_ratio)},
      {"ln_eps", format_real(ln_eps)},
  };
}

void ViTConfig::set(const std::string& key, const std::string& value) {
  if (key == "image_height") image_height = parse_size(key, value);
  else if (key == "image_width") image_width = parse_size(key, value);
  else if (key == "image_size") image_height = image_width = parse_size(key, value);
  else if (key == "patch_size") patch_size = parse_size(key, value);
  else if (key == "channels") channels = parse_size(key, value);
  else if (key == "embed_dim") embed_dim = parse_size(key, value);
  else if (key == "heads") heads = parse_size(key, value);
  else if (key == "encoder_depth") encoder_depth = parse_size(key, value);
  else if (key == "decoder_depth") decoder_depth = parse_size(key, value);
  else if (key == "decoder_dim") decoder_dim = parse_size(key, value);
  else if (key == "decoder_heads") decoder_heads = parse_size(key, value);
  else if (key == "mlp_ratio") mlp_ratio = parse_size(key, value);
  else if (key == "ln_eps") ln_eps = parse_real("model.ln_eps", value);
  else throw ParameterError("unknown model setting '" + key + "'");
}

ViTConfig ViTConfig::desk() { return ViTConfig{}; }

ViTConfig ViTConfig::desk196() {
  ViTConfig c;
  c.image_height = c.image_width = 56;
  c.patch_size = 4;
  return c;
}

ViTConfig ViTConfig::vit_small() {
  ViTConfig c;
  c.image_height = c.image_width = 224;
  c.patch_size = 16;
  c.embed_dim = 384;
  c.heads = 6;
  c.encoder_depth = 12;
  c.decoder_depth = 8;
  c.decoder_dim = 128;
  c.decoder_heads = 4;
  return c;
}

ViTConfig ViTConfig::vit_base() {
  ViTConfig c;
  c.image_height = c.image_width = 224;
  c.patch_size = 16;
  c.embed_dim = 768;
  c.heads = 12;
  c.encoder_depth = 12;
  c.decoder_depth = 8;
  c.decoder_dim = 512;
  c.decoder_heads = 16;
  return c;
}

ViTConfig ViTConfig::preset(const std::string& name) {
  if (name == "desk") return desk();
  if (name == "desk196") return desk196();
  if (name == "vit-s") return vit_small();
  if (name == "vit-b") return vit_base();
  throw ParameterError("unknown model preset '" + name + "' (desk, desk196, vit-s, vit-b)");
}

Tensor patchify(const Tensor& image, std::size_t patch_size) {
  if (image.rank() != 3) {
    throw ShapeError("patchify: expected C x H x W, got " + dims_to_string(image.dims()));
  }
  const std::size_t C = image.dims()[0], H = image.dims()[1], W = image.dims()[2];
  const std::size_t P = patch_size;
  if (P == 0 || H % P != 0 || W % P != 0) {
    throw ShapeError("patchify: image " + dims_to_string(image.dims()) +
                     " not divisible by patch size " + std::to_string(P));
  }
  const std::size_t gh = H / P, gw = W / P;
  Tensor out({gh * gw, P * P * C});
  for (std::size_t gy = 0; gy < gh; ++gy)
    for (std::size_t gx = 0; gx < gw; ++gx) {
      double* row = out.ptr() + (gy * gw + gx) * P * P * C;
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < P; ++y)
          for (std::size_t x = 0; x < P; ++x)
            row[c * P * P + y * P + x] = image[(c * H + gy * P + y) * W + gx * P + x];
    }
  return out;
}

Tensor unpatchify(const Tensor& patches, std::size_t channels, std::size_t height,
                  std::size_t width, std::size_t patch_size) {
  const std::size_t C = channels, H = height, W = width, P = patch_size;
  if (P == 0 || H % P != 0 || W % P != 0 || patches.rank() != 2 ||
      patches.dims()[0] != (H / P) * (W / P) || patches.dims()[1] != P * P * C) {
    throw ShapeError("unpatchify: patches " + dims_to_string(patches.dims()) +
                     " do not tile a " + std::to_string(C) + "x" + std::to_string(H) + "x" +
                     std::to_string(W) + " image with P=" + std::to_string(P));
  }
  const std::size_t gw = W / P;
  Tensor image({C, H, W});
  for (std::size_t n = 0; n < patches.dims()[0]; ++n) {
    const std::size_t gy = n / gw, gx = n % gw;
    const double* row = patches.ptr() + n * P * P * C;
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t y = 0; y < P; ++y)
        for (std::size_t x = 0; x < P; ++x)
          image[(c * H + gy * P + y) * W + gx * P + x] = row[c * P * P + y * P + x];
  }
  return image;
}

ag::Var embed_tokens(const ag::Var& patches, const ag::Var& projection,
                     const ag::Var& pos_embed, const ag::Var& cls_token) {
  if (patches.value().rank() != 2 || projection.value().rank() != 2 ||
      patches.dims()[1] != projection.dims()[0]) {
    throw ShapeError("embed: patches " + dims_to_string(patches.dims()) +
                     " vs projection " + dims_to_string(projection.dims()));
  }
  const std::size_t n = patches.dims()[0], d = projection.dims()[1];
  if (pos_embed.dims() != Dims{n + 1, d} || cls_token.dims() != Dims{1, d}) {
    throw ShapeError("embed: pos_embed " + dims_to_string(pos_embed.dims()) + " / cls " +
                     dims_to_string(cls_token.dims()) + " inconsistent with " +
                     std::to_string(n) + " patches of width " + std::to_string(d));
  }
  return ag::add(ag::concat_rows(cls_token, ag::matmul(patches, projection)), pos_embed);
}

ag::Var msa_forward(const ag::Var& tokens, const MsaParams& p, std::size_t heads,
                    Tensor* attn) {
  const ag::Var qkv = ag::linear(tokens, p.qkv_w, p.qkv_b);
  const ag::Var mixed = ag::attention(qkv, heads, attn);
  return ag::linear(mixed, p.proj_w, p.proj_b);
}

std::vector<double> cls_attention(const Tensor& last_layer_attn) {
  if (last_layer_attn.rank() != 3 || last_layer_attn.dims()[1] != last_layer_attn.dims()[2] ||
      last_layer_attn.dims()[1] == 0) {
    throw ShapeError("cls_attention: expected h x T x T, got " +
                     dims_to_string(last_layer_attn.dims()));
  }
  const std::size_t h = last_layer_attn.dims()[0], T = last_layer_attn.dims()[1];
  std::vector<double> a_w(T - 1, 0.0);
  for (std::size_t head = 0; head < h; ++head) {
    const double* row = last_layer_attn.ptr() + head * T * T;
    for (std::size_t j = 1; j < T; ++j) a_w[j - 1] += row[j];
  }
  for (double& v : a_w) v /= static_cast<double>(h);
  return a_w;
}

std::vector<double> cls_attention(const AttentionRecord& record, std::size_t patch_count) {
  if (record.layers.empty()) throw UsageError("cls_attention: no attention was recorded");
  if (record.patches_fed != patch_count) {
    throw UsageError("cls_attention: needs a full unmasked forward (" +
                     std::to_string(record.patches_fed) + " of " +
                     std::to_string(patch_count) + " patches were fed)");
  }
  return cls_attention(record.layers.back());
}

MaskedAutoencoder::BlockIds MaskedAutoencoder::add_block(const std::string& prefix,
                                                         std::size_t dim, std::size_t hidden,
                                                         CounterRng& rng) {
  BlockIds ids{};
  ids.ln1_g = params_.add(prefix + ".norm1.weight", Tensor({1, dim}, 1.0), false);
  ids.ln1_b = params_.add(prefix + ".norm1.bias", Tensor({1, dim}), false);
  ids.qkv_w = params_.add(prefix + ".attn.qkv.weight", trunc_normal({dim, 3 * dim}, rng), true);
  ids.qkv_b = params_.add(prefix + ".attn.qkv.bias", Tensor({1, 3 * dim}), false);
  ids.proj_w = params_.add(prefix + ".attn.proj.weight", trunc_normal({dim, dim}, rng), true);
  ids.proj_b = params_.add(prefix + ".attn.proj.bias", Tensor({1, dim}), false);
  ids.ln2_g = params_.add(prefix + ".norm2.weight", Tensor({1, dim}, 1.0), false);
  ids.ln2_b = params_.add(prefix + ".norm2.bias", Tensor({1, dim}), false);
  ids.fc1_w = params_.add(prefix + ".mlp.fc1.weight", trunc_normal({dim, hidden}, rng), true);
  ids.fc1_b = params_.add(prefix + ".mlp.fc1.bias", Tensor({1, hidden}), false);
  ids.fc2_w = params_.add(prefix + ".mlp.fc2.weight", trunc_normal({hidden, dim}, rng), true);
  ids.fc2_b = params_.add(prefix + ".mlp.fc2.bias", Tensor({1, dim}), false);
  return ids;
}

MaskedAutoencoder::MaskedAutoencoder(const ViTConfig& config, std::uint64_t seed) : cfg_(config) {
  cfg_.validate();
  CounterRng rng(seed, 0, 0, RngStream::kInit);
  const std::size_t d = cfg_.embed_dim, n = cfg_.patch_count(), pd = cfg_.patch_dim();
  const std::size_t dd = cfg_.decoder_dim;

  patch_embed_ = params_.add("encoder.patch_embed.weight", trunc_normal({pd, d}, rng), true);
  cls_token_ = params_.add("encoder.cls_token", trunc_normal({1, d}, rng), false);
  pos_embed_ = params_.add("encoder.pos_embed", trunc_normal({n + 1, d}, rng), false);
  for (std::size_t i = 0; i < cfg_.encoder_depth; ++i)
    enc_blocks_.push_back(add_block("encoder.blocks." + std::to_string(i), d, d * cfg_.mlp_ratio, rng));
  norm_g_ = params_.add("encoder.norm.weight", Tensor({1, d}, 1.0), false);
  norm_b_ = params_.add("encoder.norm.bias", Tensor({1, d}), false);

  dec_embed_w_ = params_.add("decoder.embed.weight", trunc_normal({d, dd}, rng), true);
  dec_embed_b_ = params_.add("decoder.embed.bias", Tensor({1, dd}), false);
  mask_token_ = params_.add("decoder.mask_token", trunc_normal({1, dd}, rng), false);
  dec_pos_ = params_.add("decoder.pos_embed", trunc_normal({n + 1, dd}, rng), false);
  for (std::size_t i = 0; i < cfg_.decoder_depth; ++i)
    dec_blocks_.push_back(add_block("decoder.blocks." + std::to_string(i), dd, dd * cfg_.mlp_ratio, rng));
  dec_norm_g_ = params_.add("decoder.norm.weight", Tensor({1, dd}, 1.0), false);
  dec_norm_b_ = params_.add("decoder.norm.bias", Tensor({1, dd}), false);
  dec_pred_w_ = params_.add("decoder.pred.weight", trunc_normal({dd, pd}, rng), true);
  dec_pred_b_ = params_.add("decoder.pred.bias", Tensor({1, pd}), false);
}

ag::Var MaskedAutoencoder::embed(Bound& b, const ag::Var& patches,
                                 std::span<const std::size_t> positions,
                                 ForwardTrace* trace) const {
  const std::size_t n = cfg_.patch_count();
  if (patches.dims() != Dims{n, cfg_.patch_dim()}) {
    throw ShapeError("embed: patches " + dims_to_string(patches.dims()) + ", expected " +
                     dims_to_string({n, cfg_.patch_dim()}));
  }
  std::vector<std::size_t> pos_rows{0};
  for (std::size_t p : positions) {
    if (p >= n) throw ShapeError("embed: patch position " + std::to_string(p) + " out of range");
    pos_rows.push_back(p + 1);
  }
  const ag::Var selected = ag::gather_rows(patches, positions);
  const ag::Var pos = ag::gather_rows(b(pos_embed_), pos_rows);
  if (trace != nullptr) {
    trace->encoder_positions.insert(trace->encoder_positions.end(), positions.begin(),
                                    positions.end());
  }
  return embed_tokens(selected, b(patch_embed_), pos, b(cls_token_));
}

ag::Var MaskedAutoencoder::block_forward(Bound& b, const BlockIds& ids, const ag::Var& x,
                                         std::size_t heads, Tensor* attn) const {
  const double eps = cfg_.ln_eps;
  const ag::Var h1 = ag::layer_norm(x, b(ids.ln1_g), b(ids.ln1_b), eps);
  const ag::Var a = msa_forward(h1, {b(ids.qkv_w), b(ids.qkv_b), b(ids.proj_w), b(ids.proj_b)},
                                heads, attn);
  const ag::Var x1 = ag::add(x, a);
  const ag::Var h2 = ag::layer_norm(x1, b(ids.ln2_g), b(ids.ln2_b), eps);
  const ag::Var m = ag::linear(ag::gelu(ag::linear(h2, b(ids.fc1_w), b(ids.fc1_b))),
                               b(ids.fc2_w), b(ids.fc2_b));
  return ag::add(x1, m);
}

ag::Var MaskedAutoencoder::encoder_forward(Bound& b, const ag::Var& tokens,
                                           AttentionRecord* record, ForwardTrace* trace) const {
  if (tokens.value().rank() != 2 || tokens.dims()[1] != cfg_.embed_dim || tokens.dims()[0] == 0) {
    throw ShapeError("encoder_forward: tokens " + dims_to_string(tokens.dims()) +
                     " do not have width " + std::to_string(cfg_.embed_dim));
  }
  if (trace != nullptr) trace->encoder_tokens += tokens.dims()[0];
  if (record != nullptr) {
    record->layers.clear();
    record->patches_fed = tokens.dims()[0] - 1;
  }
  ag::Var x = tokens;
  for (const auto& ids : enc_blocks_) {
    Tensor* attn = nullptr;
    if (record != nullptr) attn = &record->layers.emplace_back();
    x = block_forward(b, ids, x, cfg_.heads, attn);
  }
  return x;
}

ag::Var MaskedAutoencoder::encoder_norm(Bound& b, const ag::Var& z) const {
  return ag::layer_norm(z, b(norm_g_), b(norm_b_), cfg_.ln_eps);
}

DecoderOutput MaskedAutoencoder::decoder_forward(Bound& b, const ag::Var& encoded,
                                                 std::span<const std::size_t> visible,
                                                 std::span<const std::size_t> masked,
                                                 std::span<const std::size_t> thrown,
                                                 ForwardTrace* trace) const {
  const std::size_t n = cfg_.patch_count();
  if (encoded.dims() != Dims{visible.size() + 1, cfg_.embed_dim}) {
    throw ShapeError("decoder_forward: encoded " + dims_to_string(encoded.dims()) + " for " +
                     std::to_string(visible.size()) + " visible patches");
  }
  // source row in [CLS, visible..., mask tokens...] for each patch position
  std::vector<long> source(n, -1);
  std::vector<bool> is_thrown(n, false);
  for (std::size_t p : thrown) {
    if (p >= n) throw ShapeError("decoder_forward: thrown position out of range");
    is_thrown[p] = true;
  }
  auto claim = [&](std::size_t p, long row) {
    if (p >= n) throw ShapeError("decoder_forward: position " + std::to_string(p) + " out of range");
    if (is_thrown[p]) {
      throw UsageError("decoder_forward: thrown position " + std::to_string(p) +
                       " passed to the decoder");
    }
    if (source[p] != -1) throw UsageError("decoder_forward: position " + std::to_string(p) + " repeated");
    source[p] = row;
  };
  for (std::size_t i = 0; i < visible.size(); ++i) claim(visible[i], static_cast<long>(1 + i));
  for (std::size_t i = 0; i < masked.size(); ++i)
    claim(masked[i], static_cast<long>(1 + visible.size() + i));

  DecoderOutput out;
  std::vector<std::size_t> order{0}, pos_rows{0};
  for (std::size_t p = 0; p < n; ++p) {
    if (source[p] < 0) continue;
    out.positions.push_back(p);
    order.push_back(static_cast<std::size_t>(source[p]));
    pos_rows.push_back(p + 1);
  }

  ag::Var x = ag::linear(encoded, b(dec_embed_w_), b(dec_embed_b_));
  if (!masked.empty()) {
    const std::vector<std::size_t> zeros(masked.size(), 0);
    x = ag::concat_rows(x, ag::gather_rows(b(mask_token_), zeros));
  }
  x = ag::gather_rows(x, order);
  x = ag::add(x, ag::gather_rows(b(dec_pos_), pos_rows));
  if (trace != nullptr) {
    trace->decoder_rows += order.size();
    trace->decoder_positions.insert(trace->decoder_positions.end(), out.positions.begin(),
                                    out.positions.end());
  }
  for (const auto& ids : dec_blocks_) x = block_forward(b, ids, x, cfg_.decoder_heads, nullptr);
  x = ag::layer_norm(x, b(dec_norm_g_), b(dec_norm_b_), cfg_.ln_eps);
  x = ag::linear(x, b(dec_pred_w_), b(dec_pred_b_));
  std::vector<std::size_t> patch_rows(out.positions.size());
  std::iota(patch_rows.begin(), patch_rows.end(), std::size_t{1});
  out.prediction = ag::gather_rows(x, patch_rows);
  return out;
}

ag::Var MaskedAutoencoder::encode_full(Bound& b, const Tensor& image,
                                       AttentionRecord* record) const {
  const Tensor patches = patchify(image, cfg_.patch_size);
  std::vector<std::size_t> all(cfg_.patch_count());
  std::iota(all.begin(), all.end(), std::size_t{0});
  const ag::Var tokens = embed(b, b.tape().constant(patches), all);
  return encoder_forward(b, tokens, record);
}

}  // namespace famt
