#include "famt/probe.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#include "famt/autograd.hpp"
#include "famt/config_text.hpp"
#include "famt/errors.hpp"
#include "famt/kernels.hpp"
#include "famt/parallel.hpp"
#include "famt/rng.hpp"
#include "famt/sampler.hpp"
#include "famt/trainer.hpp"

namespace famt {

std::string EvalReport::summary() const { return "top1=" + format_real(top1); }

std::string EvalReport::per_class_table() const {
  std::ostringstream out;
  out << "class count accuracy\n";
  for (std::size_t k = 0; k < per_class.size(); ++k) {
    out << k << ' ' << class_count[k] << ' ';
    if (class_count[k] == 0) {
      out << "-\n";
    } else {
      out << format_real(per_class[k]) << '\n';
    }
  }
  return out.str();
}

std::vector<int> argmax_rows(const Tensor& logits) {
  if (logits.rank() != 2 || logits.cols() == 0) {
    throw ShapeError("argmax_rows: expected B x K logits, got " + dims_to_string(logits.dims()));
  }
  std::vector<int> out(logits.rows());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < logits.cols(); ++c)
      if (logits.at(r, c) > logits.at(r, best)) best = c;
    out[r] = static_cast<int>(best);
  }
  return out;
}

double top1(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size()) {
    throw ShapeError("top1: " + std::to_string(predictions.size()) + " predictions vs " +
                     std::to_string(labels.size()) + " labels");
  }
  if (labels.empty()) throw ShapeError("top1: no samples");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += predictions[i] == labels[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

EvalReport evaluate(std::span<const int> predictions, std::span<const int> labels,
                    int num_classes) {
  EvalReport r;
  r.top1 = top1(predictions, labels);
  r.count = labels.size();
  const auto k = static_cast<std::size_t>(num_classes);
  r.class_count.assign(k, 0);
  std::vector<std::size_t> hits(k, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes) {
      throw ParameterError("evaluate: label " + std::to_string(labels[i]) + " out of range");
    }
    const auto c = static_cast<std::size_t>(labels[i]);
    ++r.class_count[c];
    if (predictions[i] == labels[i]) ++hits[c];
  }
  r.per_class.assign(k, -1.0);
  for (std::size_t c = 0; c < k; ++c) {
    if (r.class_count[c] > 0) {
      r.per_class[c] = static_cast<double>(hits[c]) / static_cast<double>(r.class_count[c]);
    }
  }
  return r;
}

Tensor extract_features(const MaskedAutoencoder& model, std::span<const Tensor* const> images) {
  const std::size_t d = model.config().embed_dim;
  Tensor out({images.size(), d});
  parallel_for(images.size(), [&](std::size_t i) {
    ag::Tape tape(false);
    Bound b(tape, model.params(), nullptr);
    const ag::Var z = model.encode_full(b, *images[i]);
    std::copy_n(z.value().ptr(), d, out.ptr() + i * d);
  });
  return out;
}

Tensor extract_features(const MaskedAutoencoder& model, const Dataset& data) {
  std::vector<const Tensor*> images;
  images.reserve(data.size());
  for (const auto& img : data.images) images.push_back(&img.pixels);
  return extract_features(model, images);
}

Tensor ProbeHead::logits(const Tensor& features) const {
  const std::size_t d = weight.rows();
  if (features.rank() != 2 || features.cols() != d) {
    throw ShapeError("probe: features " + dims_to_string(features.dims()) + " for a head of width " +
                     std::to_string(d));
  }
  Tensor x = features;
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < d; ++c)
      x.at(r, c) = (x.at(r, c) - running_mean[c]) / std::sqrt(running_var[c] + bn_eps);
  Tensor out = kernels::matmul(x, weight);
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out.at(r, c) += bias[c];
  return out;
}

std::vector<int> ProbeHead::predict(const Tensor& features) const {
  return argmax_rows(logits(features));
}

namespace {

void check_labels(std::span<const int> labels, int num_classes, const char* what) {
  for (int y : labels) {
    if (y < 0 || y >= num_classes) {
      throw ParameterError(std::string(what) + ": label " + std::to_string(y) + " outside 0.." +
                           std::to_string(num_classes - 1));
    }
  }
}

Tensor gather(const Tensor& x, std::span<const std::size_t> rows) {
  const std::size_t d = x.cols();
  Tensor out({rows.size(), d});
  for (std::size_t i = 0; i < rows.size(); ++i) std::copy_n(x.ptr() + rows[i] * d, d, out.ptr() + i * d);
  return out;
}

}  // namespace

ProbeResult linear_probe(const Tensor& train_x, std::span<const int> train_y,
                         const Tensor& test_x, std::span<const int> test_y, int num_classes,
                         const ProbeConfig& cfg) {
  if (train_x.rank() != 2 || train_x.rows() != train_y.size() || train_y.empty()) {
    throw ShapeError("linear_probe: " + dims_to_string(train_x.dims()) + " features vs " +
                     std::to_string(train_y.size()) + " labels");
  }
  if (num_classes < 2) throw ParameterError("linear_probe: need at least 2 classes");
  check_labels(train_y, num_classes, "linear_probe");
  check_labels(test_y, num_classes, "linear_probe");
  if (std::all_of(train_y.begin(), train_y.end(), [&](int y) { return y == train_y[0]; })) {
    throw DegenerateInputError("linear_probe: training labels contain a single class");
  }
  if (cfg.batch_size < 2) throw ParameterError("linear_probe: batch_size must be at least 2");

  const std::size_t n = train_x.rows(), d = train_x.cols();
  const auto k = static_cast<std::size_t>(num_classes);
  ProbeHead head;
  head.bn_eps = cfg.bn_eps;
  head.running_mean = Tensor({1, d}, 0.0);
  head.running_var = Tensor({1, d}, 1.0);
  head.weight = Tensor({d, k});
  head.bias = Tensor({1, k});
  Tensor vel_w({d, k}), vel_b({1, k});

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    CounterRng rng(cfg.seed, epoch, 0, RngStream::kProbe);
    const std::vector<std::size_t> order = uniform_order(n, rng);
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t stop = std::min(n, start + cfg.batch_size);
      if (stop - start < 2) break;  // batch statistics need two rows
      const std::span<const std::size_t> rows(order.data() + start, stop - start);
      const std::size_t bs = rows.size();
      const Tensor xb = gather(train_x, rows);
      std::vector<int> yb(bs);
      for (std::size_t i = 0; i < bs; ++i) yb[i] = train_y[rows[i]];

      // running statistics: biased mean, unbiased variance
      for (std::size_t c = 0; c < d; ++c) {
        double mean = 0.0;
        for (std::size_t i = 0; i < bs; ++i) mean += xb.at(i, c);
        mean /= static_cast<double>(bs);
        double var = 0.0;
        for (std::size_t i = 0; i < bs; ++i) var += (xb.at(i, c) - mean) * (xb.at(i, c) - mean);
        var /= static_cast<double>(bs - 1);
        head.running_mean[c] = (1.0 - cfg.bn_momentum) * head.running_mean[c] + cfg.bn_momentum * mean;
        head.running_var[c] = (1.0 - cfg.bn_momentum) * head.running_var[c] + cfg.bn_momentum * var;
      }

      ag::Tape tape;
      const ag::Var x = tape.constant(xb);
      const ag::Var ones = tape.constant(Tensor({1, bs}, 1.0));
      const ag::Var zeros = tape.constant(Tensor({1, bs}, 0.0));
      const ag::Var xn = ag::transpose(ag::layer_norm(ag::transpose(x), ones, zeros, cfg.bn_eps));
      const ag::Var w = tape.leaf(head.weight);
      const ag::Var b = tape.leaf(head.bias);
      const ag::Var loss = ag::cross_entropy(ag::linear(xn, w, b), yb);
      if (!std::isfinite(loss.value().item())) throw NumericError("linear_probe: non-finite loss");
      tape.backward(loss);

      for (std::size_t i = 0; i < head.weight.size(); ++i) {
        const double g = w.grad()[i] + cfg.weight_decay * head.weight[i];
        vel_w[i] = cfg.momentum * vel_w[i] + g;
        head.weight[i] -= cfg.lr * vel_w[i];
      }
      for (std::size_t i = 0; i < head.bias.size(); ++i) {
        vel_b[i] = cfg.momentum * vel_b[i] + b.grad()[i];
        head.bias[i] -= cfg.lr * vel_b[i];
      }
    }
  }

  ProbeResult result;
  const std::vector<int> pred = head.predict(test_x);
  result.report = evaluate(pred, test_y, num_classes);
  result.head = std::move(head);
  return result;
}

namespace {

struct ClassifierHead {
  ParameterSet params;
  std::size_t weight = 0, bias = 0;
};

ag::Var classify(const MaskedAutoencoder& model, Bound& enc, Bound& head, const ClassifierHead& h,
                 const Tensor& image) {
  const ag::Var z = model.encoder_norm(enc, model.encode_full(enc, image));
  const std::vector<std::size_t> cls{0};
  return ag::linear(ag::gather_rows(z, cls), head(h.weight), head(h.bias));
}

std::vector<int> predict_all(const MaskedAutoencoder& model, const ClassifierHead& h,
                             const Dataset& data) {
  std::vector<int> out(data.size());
  parallel_for(data.size(), [&](std::size_t i) {
    ag::Tape tape(false);
    Bound enc(tape, model.params(), nullptr);
    Bound head(tape, h.params, nullptr);
    out[i] = argmax_rows(classify(model, enc, head, h, data.images[i].pixels).value())[0];
  });
  return out;
}

void reduce_in_order(std::vector<std::vector<Tensor>>& per_sample, std::vector<Tensor>& out,
                     double scale) {
  out.assign(per_sample.front().size(), Tensor());
  for (auto& sample : per_sample) {
    for (std::size_t k = 0; k < sample.size(); ++k) {
      if (sample[k].empty()) continue;
      if (out[k].empty()) out[k] = Tensor(sample[k].dims());
      out[k].add_(sample[k], scale);
    }
  }
}

}  // namespace

EvalReport finetune(MaskedAutoencoder& model, const Dataset& train, const Dataset& test,
                    const FinetuneConfig& cfg) {
  if (train.size() == 0 || test.size() == 0) throw ParameterError("finetune: empty dataset");
  if (cfg.batch_size == 0) throw ParameterError("finetune: batch_size must be at least 1");
  const int num_classes = std::max(train.num_classes, test.num_classes);
  check_labels(train.labels(), num_classes, "finetune");
  check_labels(test.labels(), num_classes, "finetune");

  const std::size_t d = model.config().embed_dim;
  ClassifierHead h;
  h.weight = h.params.add("head.weight", Tensor({d, static_cast<std::size_t>(num_classes)}), true);
  h.bias = h.params.add("head.bias", Tensor({1, static_cast<std::size_t>(num_classes)}), false);

  OptimizerState enc_opt = OptimizerState::for_params(model.params());
  OptimizerState head_opt = OptimizerState::for_params(h.params);
  AdamSettings adam;
  adam.weight_decay = cfg.weight_decay;
  adam.beta2 = 0.999;

  const std::size_t steps_per_epoch = (train.size() + cfg.batch_size - 1) / cfg.batch_size;
  const double total = static_cast<double>(steps_per_epoch * cfg.epochs);
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    CounterRng rng(cfg.seed, epoch, 0, RngStream::kShuffle);
    const std::vector<std::size_t> order = uniform_order(train.size(), rng);
    for (std::size_t start = 0; start < train.size(); start += cfg.batch_size, ++step) {
      const std::size_t stop = std::min(train.size(), start + cfg.batch_size);
      const std::size_t bs = stop - start;
      std::vector<std::vector<Tensor>> enc_grads(bs), head_grads(bs);
      std::vector<double> losses(bs);
      parallel_for(bs, [&](std::size_t i) {
        const LabeledImage& img = train.images[order[start + i]];
        enc_grads[i].resize(model.params().size());
        head_grads[i].resize(h.params.size());
        ag::Tape tape;
        Bound enc(tape, model.params(), &enc_grads[i]);
        Bound head(tape, h.params, &head_grads[i]);
        const int label = img.label;
        const ag::Var loss =
            ag::cross_entropy(classify(model, enc, head, h, img.pixels), std::span(&label, 1));
        tape.backward(loss);
        losses[i] = loss.value().item();
      });
      double loss = 0.0;
      for (double l : losses) loss += l / static_cast<double>(bs);
      if (!std::isfinite(loss)) {
        throw NumericError("finetune: non-finite loss at epoch " + std::to_string(epoch) +
                           " step " + std::to_string(step));
      }
      const double lr = cfg.lr * 0.5 *
                        (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / total));
      std::vector<Tensor> g;
      reduce_in_order(enc_grads, g, 1.0 / static_cast<double>(bs));
      adamw_update(model.params(), enc_opt, g, lr, adam);
      reduce_in_order(head_grads, g, 1.0 / static_cast<double>(bs));
      adamw_update(h.params, head_opt, g, lr, adam);
    }
  }
  return evaluate(predict_all(model, h, test), test.labels(), num_classes);
}

}  // namespace famt
