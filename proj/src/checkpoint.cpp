#include "famt/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "famt/errors.hpp"

namespace famt {

namespace {

constexpr std::string_view kMagic = "FAMT";

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_.append(s);
  }
  void vec(std::span<const double> v) {
    u32(static_cast<std::uint32_t>(v.size()));
    for (double x : v) f64(x);
  }
  void tensor(std::string_view name, const Tensor& t) {
    str(name);
    u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.dims()) u64(d);
    for (double x : t.data()) f64(x);
  }
  void raw(std::string_view s) { out_.append(s); }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view in) : in_(in) {}

  void need(std::size_t n, const char* what) const {
    if (in_.size() - pos_ < n) {
      throw FormatError(std::string("checkpoint truncated while reading ") + what);
    }
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return static_cast<std::uint8_t>(in_[pos_++]);
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  double f64(const char* what) { return std::bit_cast<double>(u64(what)); }
  std::string str(const char* what) {
    const std::uint32_t n = u32(what);
    need(n, what);
    std::string s(in_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  std::vector<double> vec(const char* what) {
    const std::uint32_t n = u32(what);
    need(static_cast<std::size_t>(n) * 8, what);
    std::vector<double> v(n);
    for (double& x : v) x = f64(what);
    return v;
  }
  std::pair<std::string, Tensor> tensor() {
    std::string name = str("tensor name");
    const std::uint32_t rank = u32("tensor rank");
    if (rank > 8) throw FormatError("checkpoint tensor '" + name + "' has rank " + std::to_string(rank));
    Dims dims(rank);
    std::size_t count = 1;
    for (auto& d : dims) {
      d = u64("tensor dims");
      if (d != 0 && count > (std::size_t{1} << 40) / d) {
        throw FormatError("checkpoint tensor '" + name + "' is implausibly large");
      }
      count *= d;
    }
    need(count * 8, "tensor payload");
    Tensor t(std::move(dims));
    for (double& x : t.data()) x = f64("tensor payload");
    return {std::move(name), std::move(t)};
  }
  std::string_view take(std::size_t n, const char* what) {
    need(n, what);
    const auto s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool at_end() const { return pos_ == in_.size(); }

 private:
  std::string_view in_;
  std::size_t pos_ = 0;
};

constexpr std::string_view kParam = "param/";
constexpr std::string_view kMoment1 = "adam.m/";
constexpr std::string_view kMoment2 = "adam.v/";

}  // namespace

std::string encode_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.raw(kMagic);
  w.u32(Checkpoint::kVersion);

  std::vector<std::pair<std::string, std::string>> settings;
  for (const auto& [k, v] : ckpt.train.to_map()) settings.emplace_back("train." + k, v);
  for (const auto& [k, v] : ckpt.model.to_map()) settings.emplace_back("model." + k, v);
  w.u32(static_cast<std::uint32_t>(settings.size()));
  for (const auto& [k, v] : settings) {
    w.str(k);
    w.str(v);
  }

  const bool moments = !ckpt.optimizer.m.empty();
  if (moments && (ckpt.optimizer.m.size() != ckpt.params.size() ||
                  ckpt.optimizer.v.size() != ckpt.params.size())) {
    throw ShapeError("checkpoint: optimizer moments do not match parameters");
  }
  w.u32(static_cast<std::uint32_t>(ckpt.params.size() * (moments ? 3 : 1)));
  for (const auto& [name, t] : ckpt.params) w.tensor(std::string(kParam) + name, t);
  if (moments) {
    for (std::size_t i = 0; i < ckpt.params.size(); ++i)
      w.tensor(std::string(kMoment1) + ckpt.params[i].first, ckpt.optimizer.m[i]);
    for (std::size_t i = 0; i < ckpt.params.size(); ++i)
      w.tensor(std::string(kMoment2) + ckpt.params[i].first, ckpt.optimizer.v[i]);
  }
  w.u64(ckpt.optimizer.step);

  const TrainState& s = ckpt.state;
  w.u64(ckpt.train.seed);
  w.u64(s.global_step);
  w.u32(s.epoch);
  w.u64(s.step_in_epoch);
  w.u64(s.encoder_tokens);
  w.u64(s.decoder_rows);
  w.u32(s.refresh_count);

  w.u8(ckpt.weights ? 1 : 0);
  if (ckpt.weights) {
    const WeightStore& ws = *ckpt.weights;
    w.u32(ws.generation);
    w.u32(ws.refresh_epoch);
    w.str(to_string(ws.strategy));
    w.f64(ws.sigma);
    w.f64(ws.runtime_ms);
    w.u32(static_cast<std::uint32_t>(ws.samples.size()));
    for (const auto& sw : ws.samples) {
      w.u32(sw.sample_id);
      w.u32(sw.refresh_epoch);
      w.vec(sw.a_w);
      w.vec(sw.gamma);
      w.vec(sw.p_a);
    }
  }
  return w.take();
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  Reader r(bytes);
  if (bytes.size() < 4 || r.take(4, "magic") != kMagic) throw FormatError("not a checkpoint: bad magic");
  const std::uint32_t version = r.u32("version");
  if (version != Checkpoint::kVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }

  Checkpoint ckpt;
  const std::uint32_t n_settings = r.u32("settings");
  for (std::uint32_t i = 0; i < n_settings; ++i) {
    const std::string key = r.str("setting key");
    const std::string value = r.str("setting value");
    if (key.starts_with("train.")) {
      ckpt.train.set(key.substr(6), value);
    } else if (key.starts_with("model.")) {
      ckpt.model.set(key.substr(6), value);
    } else {
      throw FormatError("checkpoint: unknown setting '" + key + "'");
    }
  }

  const std::uint32_t n_tensors = r.u32("tensor count");
  std::vector<std::pair<std::string, Tensor>> m1, m2;
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    auto [name, t] = r.tensor();
    if (name.starts_with(kParam)) {
      ckpt.params.emplace_back(name.substr(kParam.size()), std::move(t));
    } else if (name.starts_with(kMoment1)) {
      m1.emplace_back(name.substr(kMoment1.size()), std::move(t));
    } else if (name.starts_with(kMoment2)) {
      m2.emplace_back(name.substr(kMoment2.size()), std::move(t));
    } else {
      throw FormatError("checkpoint: unknown tensor '" + name + "'");
    }
  }
  if (!m1.empty() || !m2.empty()) {
    if (m1.size() != ckpt.params.size() || m2.size() != ckpt.params.size()) {
      throw FormatError("checkpoint: optimizer moments do not cover every parameter");
    }
    for (std::size_t i = 0; i < ckpt.params.size(); ++i) {
      if (m1[i].first != ckpt.params[i].first || m2[i].first != ckpt.params[i].first ||
          !m1[i].second.same_shape(ckpt.params[i].second) ||
          !m2[i].second.same_shape(ckpt.params[i].second)) {
        throw FormatError("checkpoint: moment entry for '" + ckpt.params[i].first + "' mismatched");
      }
      ckpt.optimizer.m.push_back(std::move(m1[i].second));
      ckpt.optimizer.v.push_back(std::move(m2[i].second));
    }
  }
  ckpt.optimizer.step = r.u64("optimizer step");

  ckpt.train.seed = r.u64("seed");
  TrainState& s = ckpt.state;
  s.global_step = r.u64("state");
  s.epoch = r.u32("state");
  s.step_in_epoch = r.u64("state");
  s.encoder_tokens = r.u64("state");
  s.decoder_rows = r.u64("state");
  s.refresh_count = r.u32("state");

  const std::uint8_t has_weights = r.u8("weight flag");
  if (has_weights > 1) throw FormatError("checkpoint: bad weight-store flag");
  if (has_weights == 1) {
    auto ws = std::make_shared<WeightStore>();
    ws->generation = r.u32("weights");
    ws->refresh_epoch = r.u32("weights");
    ws->strategy = parse_strategy(r.str("weights"));
    ws->sigma = r.f64("weights");
    ws->runtime_ms = r.f64("weights");
    const std::uint32_t n = r.u32("weights");
    r.need(static_cast<std::size_t>(n) * 20, "weights");
    ws->samples.resize(n);
    for (auto& sw : ws->samples) {
      sw.sample_id = r.u32("weights");
      sw.refresh_epoch = r.u32("weights");
      sw.a_w = r.vec("weights");
      sw.gamma = r.vec("weights");
      sw.p_a = r.vec("weights");
    }
    ckpt.weights = std::move(ws);
  }
  if (!r.at_end()) throw FormatError("checkpoint: trailing bytes after payload");
  ckpt.model.validate();
  ckpt.train.validate();
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  write_file(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::string& path) { return decode_checkpoint(read_file(path)); }

Checkpoint snapshot(const MaskedAutoencoder& model, const TrainConfig& train) {
  Checkpoint ckpt;
  ckpt.train = train;
  ckpt.model = model.config();
  for (const auto& p : model.params()) ckpt.params.emplace_back(p.name, p.value);
  return ckpt;
}

Checkpoint snapshot(const Trainer& trainer) {
  Checkpoint ckpt = snapshot(trainer.model(), trainer.config());
  ckpt.optimizer = trainer.optimizer();
  ckpt.state = trainer.state();
  ckpt.weights = trainer.weights();
  return ckpt;
}

MaskedAutoencoder restore_model(const Checkpoint& ckpt) {
  MaskedAutoencoder model(ckpt.model, ckpt.train.seed);
  ParameterSet& params = model.params();
  if (ckpt.params.size() != params.size()) {
    throw FormatError("checkpoint holds " + std::to_string(ckpt.params.size()) +
                      " parameters, model has " + std::to_string(params.size()));
  }
  for (const auto& [name, t] : ckpt.params) {
    const auto id = params.find(name);
    if (!id) throw FormatError("checkpoint parameter '" + name + "' is not part of the model");
    if (!params[*id].value.same_shape(t)) {
      throw FormatError("checkpoint parameter '" + name + "' has shape " + dims_to_string(t.dims()) +
                        ", model expects " + dims_to_string(params[*id].value.dims()));
    }
    params[*id].value = t;
  }
  return model;
}

Trainer resume(const Dataset& data, const Checkpoint& ckpt) {
  MaskedAutoencoder model = restore_model(ckpt);
  OptimizerState opt = ckpt.optimizer;
  if (opt.m.empty()) {
    opt = OptimizerState::for_params(model.params());
  } else {
    // moments were stored in checkpoint order; realign to model order
    OptimizerState aligned = OptimizerState::for_params(model.params());
    aligned.step = opt.step;
    for (std::size_t i = 0; i < ckpt.params.size(); ++i) {
      const std::size_t id = *model.params().find(ckpt.params[i].first);
      aligned.m[id] = opt.m[i];
      aligned.v[id] = opt.v[i];
    }
    opt = std::move(aligned);
  }
  return Trainer(data, ckpt.train, std::move(model), std::move(opt), ckpt.state, ckpt.weights);
}

}  // namespace famt
