#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "mvd/error.hpp"
#include "mvd/params.hpp"
#include "mvd/tensor.hpp"

namespace mvd {

/// Handle to a value recorded on a Tape.
struct Var {
  std::size_t id = std::numeric_limits<std::size_t>::max();
};

/// Reverse-mode recorder. Every op appends one node; `backward` walks the
/// nodes in exact reverse order and accumulates gradients additively.
/// Parameter leaves push their gradient into the owning ParamStore.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor2& grad_out)>;

  Var constant(Tensor2 value) { return record(std::move(value), false, {}); }

  Var parameter(ParamStore& store, std::size_t index) {
    ParamStore* s = &store;
    return record(store[index].value, true, [s, index](Tape&, const Tensor2& g) {
      auto dst = (*s)[index].grad.data();
      auto src = g.data();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    });
  }

  Var parameter(ParamStore& store, std::string_view name) {
    return parameter(store, store.index_of(name));
  }

  const Tensor2& value(Var v) const { return nodes_.at(v.id).value; }

  /// Gradient of the last `backward` target w.r.t. `v` (zeros if unreached).
  Tensor2 grad(Var v) const {
    const auto& n = nodes_.at(v.id);
    if (n.grad.empty() && !n.value.empty()) return Tensor2(n.value.rows(), n.value.cols());
    return n.grad;
  }

  bool needs_grad(Var v) const { return nodes_.at(v.id).needs_grad; }

  /// Accumulate into the gradient buffer of `v` (used by op backward functions).
  Tensor2& grad_buffer(Var v) {
    auto& n = nodes_.at(v.id);
    if (n.grad.empty()) n.grad = Tensor2(n.value.rows(), n.value.cols());
    return n.grad;
  }

  Var record(Tensor2 value, bool needs_grad, BackwardFn backward) {
    if (!value.all_finite()) throw NonFiniteValue("non-finite value in recorded op");
    nodes_.push_back({std::move(value), Tensor2{}, needs_grad, std::move(backward)});
    return Var{nodes_.size() - 1};
  }

  /// Seed d(loss)/d(loss) = 1 for a 1x1 `loss` and propagate.
  void backward(Var loss) {
    auto& root = nodes_.at(loss.id);
    if (root.value.rows() != 1 || root.value.cols() != 1) {
      throw ShapeMismatch("backward needs a scalar, got " + root.value.shape_str());
    }
    for (auto& n : nodes_) n.grad = Tensor2{};
    grad_buffer(loss)(0, 0) = 1.0;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (!n.needs_grad || n.grad.empty() || !n.backward) continue;
      // Callbacks only write their inputs' buffers, which precede node i.
      n.backward(*this, n.grad);
    }
  }

  std::size_t size() const { return nodes_.size(); }

  /// Piecewise ops (relu, max, l1) fold their branch choices in here; two
  /// forward passes with equal signatures took the same smooth piece.
  void note_branch(std::uint64_t v) { branches_ = (branches_ ^ v) * 0x100000001B3ull; }
  std::uint64_t branch_signature() const { return branches_; }

 private:
  struct Node {
    Tensor2 value;
    Tensor2 grad;
    bool needs_grad = false;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  std::uint64_t branches_ = 0xCBF29CE484222325ull;
};

namespace nn {

inline void require_same_shape(const Tensor2& a, const Tensor2& b, const char* op) {
  if (!a.same_shape(b)) throw ShapeMismatch(std::string(op) + ": " + a.shape_str() + " vs " + b.shape_str());
}

/// y = x W + b, with b broadcast over rows.
inline Var linear(Tape& t, Var x, Var w, Var b) {
  const Tensor2& X = t.value(x);
  const Tensor2& W = t.value(w);
  const Tensor2& B = t.value(b);
  if (X.cols() != W.rows() || B.rows() != 1 || B.cols() != W.cols()) {
    throw ShapeMismatch("linear: x " + X.shape_str() + ", W " + W.shape_str() + ", b " + B.shape_str());
  }
  const std::size_t n = X.rows(), in = X.cols(), out = W.cols();
  Tensor2 Y(n, out);
  for (std::size_t i = 0; i < n; ++i) {
    double* y = &Y(i, 0);
    for (std::size_t j = 0; j < out; ++j) y[j] = B(0, j);
    for (std::size_t k = 0; k < in; ++k) {
      const double a = X(i, k);
      if (a == 0.0) continue;
      const double* wr = &W(k, 0);
      for (std::size_t j = 0; j < out; ++j) y[j] += a * wr[j];
    }
  }
  const bool needs = t.needs_grad(x) || t.needs_grad(w) || t.needs_grad(b);
  return t.record(std::move(Y), needs, [x, w, b, n, in, out](Tape& tp, const Tensor2& G) {
    const Tensor2& X = tp.value(x);
    const Tensor2& W = tp.value(w);
    if (tp.needs_grad(x)) {
      Tensor2& gx = tp.grad_buffer(x);
      Tensor2 wt(out, in);
      for (std::size_t k = 0; k < in; ++k) {
        for (std::size_t j = 0; j < out; ++j) wt(j, k) = W(k, j);
      }
      for (std::size_t i = 0; i < n; ++i) {
        const double* g = &G(i, 0);
        double* dst = &gx(i, 0);
        for (std::size_t j = 0; j < out; ++j) {
          const double a = g[j];
          if (a == 0.0) continue;
          const double* wr = &wt(j, 0);
          for (std::size_t k = 0; k < in; ++k) dst[k] += a * wr[k];
        }
      }
    }
    if (tp.needs_grad(w)) {
      Tensor2& gw = tp.grad_buffer(w);
      for (std::size_t i = 0; i < n; ++i) {
        const double* g = &G(i, 0);
        for (std::size_t k = 0; k < in; ++k) {
          const double a = X(i, k);
          if (a == 0.0) continue;
          double* dst = &gw(k, 0);
          for (std::size_t j = 0; j < out; ++j) dst[j] += a * g[j];
        }
      }
    }
    if (tp.needs_grad(b)) {
      Tensor2& gb = tp.grad_buffer(b);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < out; ++j) gb(0, j) += G(i, j);
      }
    }
  });
}

/// max(x, 0); the subgradient at 0 is 0.
inline Var relu(Tape& t, Var x) {
  Tensor2 Y = t.value(x);
  std::uint64_t bits = 0;
  std::size_t nbits = 0;
  for (auto& v : Y.data()) {
    const bool on = v > 0.0;
    v = on ? v : 0.0;
    bits = (bits << 1) | (on ? 1u : 0u);
    if (++nbits == 64) {
      t.note_branch(bits);
      bits = nbits = 0;
    }
  }
  t.note_branch(bits);
  return t.record(std::move(Y), t.needs_grad(x), [x](Tape& tp, const Tensor2& G) {
    const Tensor2& X = tp.value(x);
    Tensor2& gx = tp.grad_buffer(x);
    for (std::size_t i = 0; i < G.size(); ++i) {
      if (X[i] > 0.0) gx[i] += G[i];
    }
  });
}

/// Rows of `x` selected by `indices`, in the given order.
inline Var gather_rows(Tape& t, Var x, std::span<const std::uint32_t> indices) {
  const Tensor2& X = t.value(x);
  Tensor2 Y(indices.size(), X.cols());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= X.rows()) {
      throw IndexOutOfRange("row " + std::to_string(indices[r]) + " of " + std::to_string(X.rows()));
    }
    std::copy_n(&X(indices[r], 0), X.cols(), &Y(r, 0));
  }
  std::vector<std::uint32_t> idx(indices.begin(), indices.end());
  return t.record(std::move(Y), t.needs_grad(x), [x, idx = std::move(idx)](Tape& tp, const Tensor2& G) {
    Tensor2& gx = tp.grad_buffer(x);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      for (std::size_t c = 0; c < G.cols(); ++c) gx(idx[r], c) += G(r, c);
    }
  });
}

/// Column-wise maximum (1 x C). Gradient flows to the first row attaining it.
inline Var channelwise_max(Tape& t, Var x) {
  const Tensor2& X = t.value(x);
  if (X.rows() == 0) throw EmptyInput("channelwise_max over zero rows");
  const std::size_t cols = X.cols();
  Tensor2 Y(1, cols);
  std::vector<std::uint32_t> arg(cols, 0);
  for (std::size_t c = 0; c < cols; ++c) Y(0, c) = X(0, c);
  for (std::size_t r = 1; r < X.rows(); ++r) {
    const double* row = &X(r, 0);
    for (std::size_t c = 0; c < cols; ++c) {
      if (row[c] > Y(0, c)) {
        Y(0, c) = row[c];
        arg[c] = static_cast<std::uint32_t>(r);
      }
    }
  }
  for (auto a : arg) t.note_branch(a);
  return t.record(std::move(Y), t.needs_grad(x), [x, arg = std::move(arg)](Tape& tp, const Tensor2& G) {
    Tensor2& gx = tp.grad_buffer(x);
    for (std::size_t c = 0; c < arg.size(); ++c) gx(arg[c], c) += G(0, c);
  });
}

/// Vertical concatenation; all parts need the same column count.
inline Var concat_rows(Tape& t, std::span<const Var> parts) {
  if (parts.empty()) throw EmptyInput("concat_rows of nothing");
  const std::size_t cols = t.value(parts[0]).cols();
  std::size_t rows = 0;
  bool needs = false;
  for (auto p : parts) {
    if (t.value(p).cols() != cols) throw ShapeMismatch("concat_rows column mismatch");
    rows += t.value(p).rows();
    needs = needs || t.needs_grad(p);
  }
  Tensor2 Y(rows, cols);
  std::size_t at = 0;
  for (auto p : parts) {
    const auto src = t.value(p).data();
    std::copy(src.begin(), src.end(), Y.data().begin() + static_cast<std::ptrdiff_t>(at * cols));
    at += t.value(p).rows();
  }
  std::vector<Var> ids(parts.begin(), parts.end());
  return t.record(std::move(Y), needs, [ids = std::move(ids), cols](Tape& tp, const Tensor2& G) {
    std::size_t at = 0;
    for (auto p : ids) {
      const std::size_t r = tp.value(p).rows();
      if (tp.needs_grad(p)) {
        Tensor2& gp = tp.grad_buffer(p);
        for (std::size_t i = 0; i < r * cols; ++i) gp[i] += G[at * cols + i];
      }
      at += r;
    }
  });
}

/// Sum of absolute differences (1x1). d/da = sign(a - b) with sign(0) = 0.
inline Var l1_loss(Tape& t, Var a, Var b) {
  const Tensor2& A = t.value(a);
  const Tensor2& B = t.value(b);
  require_same_shape(A, B, "l1_loss");
  double s = 0.0;
  for (std::size_t i = 0; i < A.size(); ++i) {
    const double d = A[i] - B[i];
    s += std::abs(d);
    t.note_branch(d > 0.0 ? 1 : (d < 0.0 ? 2 : 3));
  }
  return t.record(Tensor2(1, 1, s), t.needs_grad(a) || t.needs_grad(b), [a, b](Tape& tp, const Tensor2& G) {
    const Tensor2& A = tp.value(a);
    const Tensor2& B = tp.value(b);
    const double g = G(0, 0);
    auto sign = [](double d) { return d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0); };
    if (tp.needs_grad(a)) {
      Tensor2& ga = tp.grad_buffer(a);
      for (std::size_t i = 0; i < A.size(); ++i) ga[i] += g * sign(A[i] - B[i]);
    }
    if (tp.needs_grad(b)) {
      Tensor2& gb = tp.grad_buffer(b);
      for (std::size_t i = 0; i < A.size(); ++i) gb[i] -= g * sign(A[i] - B[i]);
    }
  });
}

/// Mean over rows of -log softmax(logits)[label].
inline Var softmax_cross_entropy(Tape& t, Var logits, std::span<const int> labels) {
  const Tensor2& Z = t.value(logits);
  if (labels.size() != Z.rows()) throw ShapeMismatch("one label per logit row required");
  if (Z.rows() == 0) throw EmptyInput("cross entropy of an empty batch");
  const std::size_t n = Z.rows(), c = Z.cols();
  Tensor2 probs(n, c);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c) {
      throw LabelOutOfRange("label " + std::to_string(labels[i]) + " with " + std::to_string(c) + " classes");
    }
    double mx = Z(i, 0);
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, Z(i, j));
    double sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      probs(i, j) = std::exp(Z(i, j) - mx);
      sum += probs(i, j);
    }
    for (std::size_t j = 0; j < c; ++j) probs(i, j) /= sum;
    loss += mx + std::log(sum) - Z(i, static_cast<std::size_t>(labels[i]));
  }
  loss /= static_cast<double>(n);
  std::vector<int> lab(labels.begin(), labels.end());
  return t.record(Tensor2(1, 1, loss), t.needs_grad(logits),
                  [logits, probs = std::move(probs), lab = std::move(lab)](Tape& tp, const Tensor2& G) {
                    Tensor2& gz = tp.grad_buffer(logits);
                    const double s = G(0, 0) / static_cast<double>(lab.size());
                    for (std::size_t i = 0; i < probs.rows(); ++i) {
                      for (std::size_t j = 0; j < probs.cols(); ++j) {
                        const double onehot = static_cast<int>(j) == lab[i] ? 1.0 : 0.0;
                        gz(i, j) += s * (probs(i, j) - onehot);
                      }
                    }
                  });
}

/// Each row divided by its L2 norm (rows of norm < 1e-12 pass through unscaled).
inline Var row_l2_normalize(Tape& t, Var x) {
  Tensor2 Y = t.value(x);
  std::vector<double> norms(Y.rows());
  for (std::size_t r = 0; r < Y.rows(); ++r) {
    double s = 0.0;
    for (double v : Y.row(r)) s += v * v;
    norms[r] = std::sqrt(s) < 1e-12 ? 1.0 : std::sqrt(s);
    for (double& v : Y.row(r)) v /= norms[r];
  }
  return t.record(std::move(Y), t.needs_grad(x), [x, norms = std::move(norms)](Tape& tp, const Tensor2& G) {
    const Tensor2& X = tp.value(x);
    Tensor2& gx = tp.grad_buffer(x);
    for (std::size_t r = 0; r < X.rows(); ++r) {
      const double n = norms[r];
      double yg = 0.0;
      for (std::size_t c = 0; c < X.cols(); ++c) yg += X(r, c) / n * G(r, c);
      for (std::size_t c = 0; c < X.cols(); ++c) gx(r, c) += (G(r, c) - X(r, c) / n * yg) / n;
    }
  });
}

inline Var scale(Tape& t, Var x, double factor) {
  Tensor2 Y = t.value(x);
  for (auto& v : Y.data()) v *= factor;
  return t.record(std::move(Y), t.needs_grad(x), [x, factor](Tape& tp, const Tensor2& G) {
    Tensor2& gx = tp.grad_buffer(x);
    for (std::size_t i = 0; i < G.size(); ++i) gx[i] += factor * G[i];
  });
}

inline Var add(Tape& t, Var a, Var b) {
  require_same_shape(t.value(a), t.value(b), "add");
  Tensor2 Y = t.value(a);
  const Tensor2& B = t.value(b);
  for (std::size_t i = 0; i < Y.size(); ++i) Y[i] += B[i];
  return t.record(std::move(Y), t.needs_grad(a) || t.needs_grad(b), [a, b](Tape& tp, const Tensor2& G) {
    for (Var v : {a, b}) {
      if (!tp.needs_grad(v)) continue;
      Tensor2& gv = tp.grad_buffer(v);
      for (std::size_t i = 0; i < G.size(); ++i) gv[i] += G[i];
    }
  });
}

}  // namespace nn
}  // namespace mvd
