#include "famt/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "famt/errors.hpp"
#include "famt/kernels.hpp"

namespace famt::ag {

Var Tape::constant(Tensor value) {
  Node& n = nodes_.emplace_back();
  n.value = std::move(value);
  return Var(this, &n);
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node& n = nodes_.emplace_back();
  n.value = std::move(value);
  n.requires_grad = requires_grad && grad_enabled_;
  return Var(this, &n);
}

Var Tape::parameter(const Tensor& value, Tensor* grad_sink) {
  Node& n = nodes_.emplace_back();
  n.value = value;
  n.requires_grad = grad_enabled_ && grad_sink != nullptr;
  if (n.requires_grad) n.sink = grad_sink;
  return Var(this, &n);
}

Var Tape::record(Tensor value, bool requires_grad,
                 std::function<void(Node&)> backward) {
  Node& n = nodes_.emplace_back();
  n.value = std::move(value);
  n.requires_grad = requires_grad && grad_enabled_;
  if (n.requires_grad) n.backward = std::move(backward);
  return Var(this, &n);
}

void Tape::backward(const Var& root) {
  if (backward_done_) throw UsageError("backward: already run on this tape; reset() first");
  if (root.value().size() != 1) {
    throw UsageError("backward: root must be a scalar, got " +
                     dims_to_string(root.dims()));
  }
  for (Node& n : nodes_) {
    if (n.requires_grad) n.grad = Tensor(n.value.dims());
  }
  backward_done_ = true;
  if (root.requires_grad()) {
    root.node()->grad[0] = 1.0;
    // Nodes after the root cannot influence it.
    auto it = std::find_if(nodes_.begin(), nodes_.end(),
                           [&](const Node& n) { return &n == root.node(); });
    for (auto rit = std::make_reverse_iterator(std::next(it)); rit != nodes_.rend(); ++rit) {
      if (rit->backward) rit->backward(*rit);
    }
  }
  for (Node& n : nodes_) {
    if (n.sink == nullptr) continue;
    if (n.sink->empty()) {
      *n.sink = n.grad;
    } else {
      n.sink->add_(n.grad);
    }
  }
}

void Tape::reset() {
  nodes_.clear();
  backward_done_ = false;
}

namespace {

Tape& same_tape(const Var& a, const Var& b) {
  if (&a.tape() != &b.tape()) throw UsageError("operands live on different tapes");
  return a.tape();
}

void require_matrix(const Var& v, const char* op) {
  if (v.value().rank() != 2) {
    throw ShapeError(std::string(op) + ": expected a matrix, got " +
                     dims_to_string(v.dims()));
  }
}

void require_same(const Var& a, const Var& b, const char* op) {
  if (a.dims() != b.dims()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + dims_to_string(a.dims()) +
                     " vs " + dims_to_string(b.dims()));
  }
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  Tape& t = same_tape(a, b);
  Tensor out = kernels::matmul(a.value(), b.value());
  const std::size_t m = a.dims()[0], k = a.dims()[1], n = b.dims()[1];
  Node* an = a.node();
  Node* bn = b.node();
  return t.record(std::move(out), an->requires_grad || bn->requires_grad,
                  [an, bn, m, k, n](Node& self) {
                    if (an->requires_grad)
                      kernels::matmul_nt(self.grad.ptr(), bn->value.ptr(), an->grad.ptr(),
                                         m, n, k, true);
                    if (bn->requires_grad)
                      kernels::matmul_tn(an->value.ptr(), self.grad.ptr(), bn->grad.ptr(),
                                         k, m, n, true);
                  });
}

Var add_row(const Var& x, const Var& row) {
  Tape& t = same_tape(x, row);
  require_matrix(x, "add_row");
  const std::size_t rows = x.dims()[0], cols = x.dims()[1];
  if (row.value().size() != cols) {
    throw ShapeError("add_row: " + dims_to_string(x.dims()) + " vs " +
                     dims_to_string(row.dims()));
  }
  Tensor out = x.value();
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] += row.value()[j];
  Node* xn = x.node();
  Node* rn = row.node();
  return t.record(std::move(out), xn->requires_grad || rn->requires_grad,
                  [xn, rn, rows, cols](Node& self) {
                    if (xn->requires_grad) xn->grad.add_(self.grad);
                    if (rn->requires_grad) {
                      for (std::size_t i = 0; i < rows; ++i)
                        for (std::size_t j = 0; j < cols; ++j)
                          rn->grad[j] += self.grad[i * cols + j];
                    }
                  });
}

Var linear(const Var& x, const Var& w, const Var& bias) {
  Var y = matmul(x, w);
  return bias.valid() ? add_row(y, bias) : y;
}

Var add(const Var& a, const Var& b) {
  Tape& t = same_tape(a, b);
  require_same(a, b, "add");
  Tensor out = a.value();
  out.add_(b.value());
  Node* an = a.node();
  Node* bn = b.node();
  return t.record(std::move(out), an->requires_grad || bn->requires_grad,
                  [an, bn](Node& self) {
                    if (an->requires_grad) an->grad.add_(self.grad);
                    if (bn->requires_grad) bn->grad.add_(self.grad);
                  });
}

Var sub(const Var& a, const Var& b) {
  Tape& t = same_tape(a, b);
  require_same(a, b, "sub");
  Tensor out = a.value();
  out.add_(b.value(), -1.0);
  Node* an = a.node();
  Node* bn = b.node();
  return t.record(std::move(out), an->requires_grad || bn->requires_grad,
                  [an, bn](Node& self) {
                    if (an->requires_grad) an->grad.add_(self.grad);
                    if (bn->requires_grad) bn->grad.add_(self.grad, -1.0);
                  });
}

Var mul(const Var& a, const Var& b) {
  Tape& t = same_tape(a, b);
  require_same(a, b, "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  Node* an = a.node();
  Node* bn = b.node();
  return t.record(std::move(out), an->requires_grad || bn->requires_grad,
                  [an, bn](Node& self) {
                    for (std::size_t i = 0; i < self.grad.size(); ++i) {
                      if (an->requires_grad) an->grad[i] += self.grad[i] * bn->value[i];
                      if (bn->requires_grad) bn->grad[i] += self.grad[i] * an->value[i];
                    }
                  });
}

Var scale(const Var& a, double s) {
  Tensor out = a.value();
  for (double& v : out.data()) v *= s;
  Node* an = a.node();
  return a.tape().record(std::move(out), an->requires_grad,
                         [an, s](Node& self) { an->grad.add_(self.grad, s); });
}

Var abs(const Var& a) {
  Tensor out = a.value();
  for (double& v : out.data()) v = std::abs(v);
  Node* an = a.node();
  return a.tape().record(std::move(out), an->requires_grad, [an](Node& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double x = an->value[i];
      const double sgn = x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
      an->grad[i] += sgn * self.grad[i];
    }
  });
}

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  Node* an = a.node();
  return a.tape().record(Tensor::scalar(s), an->requires_grad, [an](Node& self) {
    const double g = self.grad[0];
    for (double& v : an->grad.data()) v += g;
  });
}

Var mean(const Var& a) {
  if (a.value().empty()) throw ShapeError("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Var transpose(const Var& a) {
  require_matrix(a, "transpose");
  Node* an = a.node();
  return a.tape().record(kernels::transpose(a.value()), an->requires_grad,
                         [an](Node& self) { an->grad.add_(kernels::transpose(self.grad)); });
}

Var softmax(const Var& x, std::size_t axis) {
  Tensor y = kernels::softmax(x.value(), axis);
  const auto& d = x.dims();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= d[i];
  for (std::size_t i = axis + 1; i < d.size(); ++i) inner *= d[i];
  const std::size_t len = d[axis];
  Node* xn = x.node();
  return x.tape().record(std::move(y), xn->requires_grad,
                         [xn, outer, inner, len](Node& self) {
                           for (std::size_t o = 0; o < outer; ++o) {
                             for (std::size_t in = 0; in < inner; ++in) {
                               const std::size_t base = o * len * inner + in;
                               double dot = 0.0;
                               for (std::size_t j = 0; j < len; ++j) {
                                 const std::size_t p = base + j * inner;
                                 dot += self.grad[p] * self.value[p];
                               }
                               for (std::size_t j = 0; j < len; ++j) {
                                 const std::size_t p = base + j * inner;
                                 xn->grad[p] += self.value[p] * (self.grad[p] - dot);
                               }
                             }
                           }
                         });
}

Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps) {
  require_matrix(x, "layer_norm");
  const std::size_t rows = x.dims()[0], cols = x.dims()[1];
  if (gain.value().size() != cols || bias.value().size() != cols) {
    throw ShapeError("layer_norm: gain/bias " + dims_to_string(gain.dims()) + "/" +
                     dims_to_string(bias.dims()) + " do not match " +
                     dims_to_string(x.dims()));
  }
  Tensor xhat({rows, cols});
  std::vector<double> inv_std(rows);
  Tensor out({rows, cols});
  const auto& xv = x.value();
  const auto& g = gain.value();
  const auto& b = bias.value();
  for (std::size_t i = 0; i < rows; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < cols; ++j) mu += xv[i * cols + j];
    mu /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      const double c = xv[i * cols + j] - mu;
      var += c * c;
    }
    var /= static_cast<double>(cols);
    const double denom = std::sqrt(var + eps);
    inv_std[i] = denom > 0.0 ? 1.0 / denom : 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      const double h = (xv[i * cols + j] - mu) * inv_std[i];
      xhat[i * cols + j] = h;
      out[i * cols + j] = h * g[j] + b[j];
    }
  }
  Node* xn = x.node();
  Node* gn = gain.node();
  Node* bn = bias.node();
  const bool rg = xn->requires_grad || gn->requires_grad || bn->requires_grad;
  return x.tape().record(
      std::move(out), rg,
      [xn, gn, bn, rows, cols, xhat = std::move(xhat),
       inv_std = std::move(inv_std)](Node& self) {
        const double inv_n = 1.0 / static_cast<double>(cols);
        for (std::size_t i = 0; i < rows; ++i) {
          const double* dy = self.grad.ptr() + i * cols;
          const double* h = xhat.ptr() + i * cols;
          if (gn->requires_grad)
            for (std::size_t j = 0; j < cols; ++j) gn->grad[j] += dy[j] * h[j];
          if (bn->requires_grad)
            for (std::size_t j = 0; j < cols; ++j) bn->grad[j] += dy[j];
          if (xn->requires_grad) {
            double mean_dh = 0.0, mean_dh_h = 0.0;
            for (std::size_t j = 0; j < cols; ++j) {
              const double dh = dy[j] * gn->value[j];
              mean_dh += dh;
              mean_dh_h += dh * h[j];
            }
            mean_dh *= inv_n;
            mean_dh_h *= inv_n;
            for (std::size_t j = 0; j < cols; ++j) {
              const double dh = dy[j] * gn->value[j];
              xn->grad[i * cols + j] += inv_std[i] * (dh - mean_dh - h[j] * mean_dh_h);
            }
          }
        }
      });
}

Var gelu(const Var& x) {
  Tensor out = x.value();
  for (double& v : out.data()) v = 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
  Node* xn = x.node();
  return x.tape().record(std::move(out), xn->requires_grad, [xn](Node& self) {
    constexpr double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double v = xn->value[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
      xn->grad[i] += self.grad[i] * (cdf + v * pdf);
    }
  });
}

Var gather_rows(const Var& x, std::span<const std::size_t> rows) {
  require_matrix(x, "gather_rows");
  const std::size_t n = x.dims()[0], cols = x.dims()[1];
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  Tensor out({idx.size(), cols});
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= n) {
      throw ShapeError("gather_rows: row " + std::to_string(idx[r]) + " out of range for " +
                       dims_to_string(x.dims()));
    }
    std::copy_n(x.value().ptr() + idx[r] * cols, cols, out.ptr() + r * cols);
  }
  Node* xn = x.node();
  return x.tape().record(std::move(out), xn->requires_grad,
                         [xn, cols, idx = std::move(idx)](Node& self) {
                           for (std::size_t r = 0; r < idx.size(); ++r) {
                             double* dst = xn->grad.ptr() + idx[r] * cols;
                             const double* src = self.grad.ptr() + r * cols;
                             for (std::size_t j = 0; j < cols; ++j) dst[j] += src[j];
                           }
                         });
}

Var concat_rows(const Var& a, const Var& b) {
  Tape& t = same_tape(a, b);
  require_matrix(a, "concat_rows");
  require_matrix(b, "concat_rows");
  const std::size_t cols = a.dims()[1];
  if (b.dims()[1] != cols) {
    throw ShapeError("concat_rows: " + dims_to_string(a.dims()) + " vs " +
                     dims_to_string(b.dims()));
  }
  const std::size_t ra = a.dims()[0], rb = b.dims()[0];
  Tensor out({ra + rb, cols});
  std::copy_n(a.value().ptr(), ra * cols, out.ptr());
  std::copy_n(b.value().ptr(), rb * cols, out.ptr() + ra * cols);
  Node* an = a.node();
  Node* bn = b.node();
  return t.record(std::move(out), an->requires_grad || bn->requires_grad,
                  [an, bn, ra, rb, cols](Node& self) {
                    if (an->requires_grad)
                      for (std::size_t i = 0; i < ra * cols; ++i) an->grad[i] += self.grad[i];
                    if (bn->requires_grad)
                      for (std::size_t i = 0; i < rb * cols; ++i)
                        bn->grad[i] += self.grad[ra * cols + i];
                  });
}

Var attention(const Var& qkv, std::size_t heads, Tensor* probs) {
  require_matrix(qkv, "attention");
  const std::size_t T = qkv.dims()[0];
  const std::size_t width = qkv.dims()[1];
  if (heads == 0 || width % 3 != 0 || (width / 3) % heads != 0) {
    throw ShapeError("attention: packed width " + std::to_string(width) +
                     " incompatible with " + std::to_string(heads) + " heads");
  }
  const std::size_t d = width / 3;
  const std::size_t dh = d / heads;
  const double scl = 1.0 / std::sqrt(static_cast<double>(dh));

  // Unpack into per-head contiguous q, k, v blocks (heads x T x dh).
  auto unpack = [&](std::size_t which) {
    Tensor blk({heads, T, dh});
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t i = 0; i < T; ++i)
        for (std::size_t c = 0; c < dh; ++c)
          blk[(h * T + i) * dh + c] = qkv.value()[i * width + which * d + h * dh + c];
    return blk;
  };
  Tensor q = unpack(0), k = unpack(1), v = unpack(2);

  Tensor attn({heads, T, T});
  Tensor out({T, d});
  std::vector<double> o(T * dh);
  for (std::size_t h = 0; h < heads; ++h) {
    double* a = attn.ptr() + h * T * T;
    kernels::matmul_nt(q.ptr() + h * T * dh, k.ptr() + h * T * dh, a, T, dh, T, false);
    for (std::size_t i = 0; i < T * T; ++i) a[i] *= scl;
    kernels::softmax_rows(a, T, T);
    kernels::matmul(a, v.ptr() + h * T * dh, o.data(), T, T, dh, false);
    for (std::size_t i = 0; i < T; ++i)
      for (std::size_t c = 0; c < dh; ++c) out[i * d + h * dh + c] = o[i * dh + c];
  }
  if (probs != nullptr) *probs = attn;

  Node* xn = qkv.node();
  return qkv.tape().record(
      std::move(out), xn->requires_grad,
      [xn, T, d, dh, heads, width, scl, q = std::move(q), k = std::move(k),
       v = std::move(v), attn = std::move(attn)](Node& self) {
        std::vector<double> dout(T * dh), da(T * T), dq(T * dh), dk(T * dh), dv(T * dh);
        for (std::size_t h = 0; h < heads; ++h) {
          const double* a = attn.ptr() + h * T * T;
          for (std::size_t i = 0; i < T; ++i)
            for (std::size_t c = 0; c < dh; ++c)
              dout[i * dh + c] = self.grad[i * d + h * dh + c];
          // dA = dO v^T, dv = A^T dO
          kernels::matmul_nt(dout.data(), v.ptr() + h * T * dh, da.data(), T, dh, T, false);
          kernels::matmul_tn(a, dout.data(), dv.data(), T, T, dh, false);
          // softmax backward, then score scaling
          for (std::size_t i = 0; i < T; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < T; ++j) dot += da[i * T + j] * a[i * T + j];
            for (std::size_t j = 0; j < T; ++j)
              da[i * T + j] = a[i * T + j] * (da[i * T + j] - dot) * scl;
          }
          kernels::matmul(da.data(), k.ptr() + h * T * dh, dq.data(), T, T, dh, false);
          kernels::matmul_tn(da.data(), q.ptr() + h * T * dh, dk.data(), T, T, dh, false);
          for (std::size_t i = 0; i < T; ++i) {
            double* g = xn->grad.ptr() + i * width;
            for (std::size_t c = 0; c < dh; ++c) {
              g[h * dh + c] += dq[i * dh + c];
              g[d + h * dh + c] += dk[i * dh + c];
              g[2 * d + h * dh + c] += dv[i * dh + c];
            }
          }
        }
      });
}

Var cross_entropy(const Var& logits, std::span<const int> labels) {
  require_matrix(logits, "cross_entropy");
  const std::size_t B = logits.dims()[0], K = logits.dims()[1];
  if (labels.size() != B) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     dims_to_string(logits.dims()));
  }
  Tensor p = logits.value();
  kernels::softmax_rows(p.ptr(), B, K);
  double loss = 0.0;
  std::vector<int> lab(labels.begin(), labels.end());
  for (std::size_t i = 0; i < B; ++i) {
    if (lab[i] < 0 || static_cast<std::size_t>(lab[i]) >= K) {
      throw ParameterError("cross_entropy: label " + std::to_string(lab[i]) +
                           " outside 0.." + std::to_string(K - 1));
    }
    // log-sum-exp form avoids log(0) for confident rows
    const double* row = logits.value().ptr() + i * K;
    const double mx = *std::max_element(row, row + K);
    double s = 0.0;
    for (std::size_t j = 0; j < K; ++j) s += std::exp(row[j] - mx);
    loss += mx + std::log(s) - row[lab[i]];
  }
  loss /= static_cast<double>(B);
  Node* ln = logits.node();
  return logits.tape().record(Tensor::scalar(loss), ln->requires_grad,
                              [ln, B, K, p = std::move(p), lab = std::move(lab)](Node& self) {
                                const double g = self.grad[0] / static_cast<double>(B);
                                for (std::size_t i = 0; i < B; ++i)
                                  for (std::size_t j = 0; j < K; ++j) {
                                    const double onehot =
                                        static_cast<int>(j) == lab[i] ? 1.0 : 0.0;
                                    ln->grad[i * K + j] += g * (p[i * K + j] - onehot);
                                  }
                              });
}

}  // namespace famt::ag
