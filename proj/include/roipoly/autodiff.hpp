#pragma once

// Reverse-mode differentiation over dense row-major f64 matrices.
//
// A Tape records every operation of a forward pass together with a closure
// holding that operation's analytic backward rule. `Tape::backward(loss)`
// replays the closures in reverse order. Gradients only flow into nodes that
// (transitively) depend on a `variable` or `parameter` leaf.
//
// The op set is what the RoI decoder and the feature pyramid need; the
// heavier kernels (strided convolution, RoIAlign, deformable sampling) are
// single fused ops with hand-written adjoints.

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "roipoly/errors.hpp"
#include "roipoly/tensor.hpp"

namespace roipoly::ad {

class Tape;

/// Handle to a tape node.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  int rows() const;
  int cols() const;
  std::size_t size() const { return static_cast<std::size_t>(rows()) * cols(); }
  const std::vector<double>& value() const;
  double item() const;
};

class Tape {
 public:
  explicit Tape(bool track_gradients = true) : track_(track_gradients) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool tracking() const { return track_; }

  Var constant(int rows, int cols, std::vector<double> value) {
    return push(rows, cols, std::move(value), false);
  }
  Var constant(int rows, int cols, double fill) {
    return constant(rows, cols, std::vector<double>(static_cast<std::size_t>(rows) * cols, fill));
  }
  /// Differentiable leaf (inputs under test, or anything whose gradient is wanted).
  Var variable(int rows, int cols, std::vector<double> value) {
    return push(rows, cols, std::move(value), track_);
  }
  /// Differentiable leaf bound to `store[name]`; gradients are harvested by
  /// `accumulate_parameter_gradients`. Repeated requests return the same node.
  Var parameter(const ParamStore& store, const std::string& name) {
    if (auto it = param_ids_.find(name); it != param_ids_.end()) return Var{this, it->second};
    const Tensor& t = store.at(name);
    Var v = push(t.rows(), t.cols(), t.data, track_);
    params_.emplace_back(name, v.id);
    param_ids_.emplace(name, v.id);
    return v;
  }

  /// Output node of an op. `inputs` decide whether it needs a gradient.
  Var make(int rows, int cols, std::vector<double> value, std::initializer_list<Var> inputs,
           std::function<void()> backward) {
    bool needs = false;
    if (track_) {
      for (const Var& in : inputs) needs = needs || nodes_[in.id].requires_grad;
    }
    Var out = push(rows, cols, std::move(value), needs);
    if (needs) nodes_[out.id].backward = std::move(backward);
    return out;
  }
  Var make(int rows, int cols, std::vector<double> value, std::span<const Var> inputs,
           std::function<void()> backward) {
    bool needs = false;
    if (track_) {
      for (const Var& in : inputs) needs = needs || nodes_[in.id].requires_grad;
    }
    Var out = push(rows, cols, std::move(value), needs);
    if (needs) nodes_[out.id].backward = std::move(backward);
    return out;
  }

  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  int rows(Var v) const { return nodes_[v.id].rows; }
  int cols(Var v) const { return nodes_[v.id].cols; }
  const std::vector<double>& value(Var v) const { return nodes_[v.id].value; }
  std::vector<double>& grad(Var v) { return nodes_[v.id].grad; }
  const std::vector<double>& grad(Var v) const { return nodes_[v.id].grad; }

  /// Seeds d(loss)/d(loss) = 1 and propagates to every tracked node.
  void backward(Var loss) {
    if (loss.size() != 1) throw InvalidInput("backward() needs a scalar loss");
    for (Node& n : nodes_) {
      if (n.requires_grad) n.grad.assign(n.value.size(), 0.0);
    }
    if (!nodes_[loss.id].requires_grad) return;
    nodes_[loss.id].grad[0] = 1.0;
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.requires_grad && n.backward) n.backward();
    }
  }

  /// Adds parameter-leaf gradients into `grads` (same names as the store).
  void accumulate_parameter_gradients(ParamStore& grads) const {
    for (const auto& [name, id] : params_) {
      const Node& n = nodes_[id];
      if (!n.requires_grad || n.grad.empty()) continue;
      Tensor& g = grads.at(name);
      for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] += n.grad[i];
    }
  }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    int rows = 0;
    int cols = 0;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    std::function<void()> backward;
  };

  Var push(int rows, int cols, std::vector<double> value, bool requires_grad) {
    if (value.size() != static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols)) {
      throw InvalidInput("tape node value has the wrong size");
    }
    Node n;
    n.rows = rows;
    n.cols = cols;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
  }

  bool track_;
  std::vector<Node> nodes_;
  std::vector<std::pair<std::string, int>> params_;
  std::unordered_map<std::string, int> param_ids_;
};

inline int Var::rows() const { return tape->rows(*this); }
inline int Var::cols() const { return tape->cols(*this); }
inline const std::vector<double>& Var::value() const { return tape->value(*this); }
inline double Var::item() const { return tape->value(*this).at(0); }

namespace detail {

inline void check_same_shape(Var a, Var b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw InvalidInput(std::string(op) + ": shape mismatch");
  }
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// Dot product with eight interleaved partial sums. The fixed summation order
/// keeps results deterministic while letting the compiler vectorize.
inline double dot(const double* a, const double* b, int n) {
  double acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  int i = 0;
  for (; i + 8 <= n; i += 8) {
    for (int j = 0; j < 8; ++j) acc[j] += a[i + j] * b[i + j];
  }
  double s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

inline Var add(Var a, Var b) {
  detail::check_same_shape(a, b, "add");
  Tape* t = a.tape;
  std::vector<double> out(a.value());
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  const int id = static_cast<int>(t->node_count());
  return t->make(a.rows(), a.cols(), std::move(out), {a, b}, [t, a, b, id] {
    const auto& g = t->grad(Var{t, id});
    for (Var in : {a, b}) {
      if (!t->requires_grad(in)) continue;
      auto& gi = t->grad(in);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
    }
  });
}

inline Var sub(Var a, Var b) {
  detail::check_same_shape(a, b, "sub");
  Tape* t = a.tape;
  std::vector<double> out(a.value());
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  const int id = static_cast<int>(t->node_count());
  return t->make(a.rows(), a.cols(), std::move(out), {a, b}, [t, a, b, id] {
    const auto& g = t->grad(Var{t, id});
    if (t->requires_grad(a)) {
      auto& ga = t->grad(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t->requires_grad(b)) {
      auto& gb = t->grad(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

/// Hadamard product.
inline Var mul(Var a, Var b) {
  detail::check_same_shape(a, b, "mul");
  Tape* t = a.tape;
  const auto& av = a.value();
  const auto& bv = b.value();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  const int id = static_cast<int>(t->node_count());
  return t->make(a.rows(), a.cols(), std::move(out), {a, b}, [t, a, b, id] {
    const auto& g = t->grad(Var{t, id});
    const auto& av = t->value(a);
    const auto& bv = t->value(b);
    if (t->requires_grad(a)) {
      auto& ga = t->grad(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t->requires_grad(b)) {
      auto& gb = t->grad(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

inline Var scale(Var a, double s) {
  Tape* t = a.tape;
  std::vector<double> out(a.value());
  for (double& x : out) x *= s;
  const int id = static_cast<int>(t->node_count());
  return t->make(a.rows(), a.cols(), std::move(out), {a}, [t, a, s, id] {
    const auto& g = t->grad(Var{t, id});
    auto& ga = t->grad(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
  });
}

inline Var add_scalar(Var a, double s) {
  Tape* t = a.tape;
  std::vector<double> out(a.value());
  for (double& x : out) x += s;
  const int id = static_cast<int>(t->node_count());
  return t->make(a.rows(), a.cols(), std::move(out), {a}, [t, a, id] {
    const auto& g = t->grad(Var{t, id});
    auto& ga = t->grad(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

/// a (n x c) + row (1 x c), broadcast over rows.
inline Var add_row(Var a, Var row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw InvalidInput("add_row: shape mismatch");
  Tape* t = a.tape;
  const int n = a.rows(), c = a.cols();
  std::vector<double> out(a.value());
  const auto& rv = row.value();
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < c; ++j) out[static_cast<std::size_t>(i) * c + j] += rv[j];
  }
  const int id = static_cast<int>(t->node_count());
  return t->make(n, c, std::move(out), {a, row}, [t, a, row, n, c, id] {
    const auto& g = t->grad(Var{t, id});
    if (t->requires_grad(a)) {
      auto& ga = t->grad(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t->requires_grad(row)) {
      auto& gr = t->grad(row);
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < c; ++j) gr[j] += g[static_cast<std::size_t>(i) * c + j];
      }
    }
  });
}

/// Per-column affine map with constant coefficients: out[:, j] = a[:, j] * s[j] + o[j].
inline Var affine_cols(Var a, std::vector<double> s, std::vector<double> o) {
  const int n = a.rows(), c = a.cols();
  if (static_cast<int>(s.size()) != c || static_cast<int>(o.size()) != c) {
    throw InvalidInput("affine_cols: coefficient size mismatch");
  }
  Tape* t = a.tape;
  std::vector<double> out(a.value());
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < c; ++j) {
      double& x = out[static_cast<std::size_t>(i) * c + j];
      x = x * s[j] + o[j];
    }
  }
  const int id = static_cast<int>(t->node_count());
  return t->make(n, c, std::move(out), {a}, [t, a, s, n, c, id] {
    const auto& g = t->grad(Var{t, id});
    auto& ga = t->grad(a);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < c; ++j) {
        const std::size_t k = static_cast<std::size_t>(i) * c + j;
        ga[k] += g[k] * s[j];
      }
    }
  });
}

namespace detail {

template <typename F, typename DF>
Var unary(Var a, F f, DF df) {
  Tape* t = a.tape;
  const auto& av = a.value();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i]);
  const int id = static_cast<int>(t->node_count());
  return t->make(a.rows(), a.cols(), std::move(out), {a}, [t, a, df, id] {
    const auto& g = t->grad(Var{t, id});
    const auto& x = t->value(a);
    const auto& y = t->value(Var{t, id});
    auto& ga = t->grad(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * df(x[i], y[i]);
  });
}

}  // namespace detail

inline Var sigmoid(Var a) {
  return detail::unary(
      a, [](double x) { return detail::sigmoid(x); },
      [](double, double y) { return y * (1.0 - y); });
}

/// x * sigmoid(x); smooth, and zero at zero.
inline Var silu(Var a) {
  return detail::unary(
      a, [](double x) { return x * detail::sigmoid(x); },
      [](double x, double) {
        const double s = detail::sigmoid(x);
        return s * (1.0 + x * (1.0 - s));
      });
}

// ---------------------------------------------------------------------------
// Shape manipulation

inline Var slice_cols(Var a, int start, int count) {
  const int n = a.rows(), c = a.cols();
  if (start < 0 || count < 0 || start + count > c) throw InvalidInput("slice_cols: out of range");
  Tape* t = a.tape;
  const auto& av = a.value();
  std::vector<double> out(static_cast<std::size_t>(n) * count);
  for (int i = 0; i < n; ++i) {
    std::copy_n(av.begin() + static_cast<std::ptrdiff_t>(i) * c + start, count,
                out.begin() + static_cast<std::ptrdiff_t>(i) * count);
  }
  const int id = static_cast<int>(t->node_count());
  return t->make(n, count, std::move(out), {a}, [t, a, n, c, start, count, id] {
    const auto& g = t->grad(Var{t, id});
    auto& ga = t->grad(a);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < count; ++j) {
        ga[static_cast<std::size_t>(i) * c + start + j] += g[static_cast<std::size_t>(i) * count + j];
      }
    }
  });
}

inline Var slice_rows(Var a, int start, int count) {
  const int n = a.rows(), c = a.cols();
  if (start < 0 || count < 0 || start + count > n) throw InvalidInput("slice_rows: out of range");
  Tape* t = a.tape;
  const auto& av = a.value();
  std::vector<double> out(av.begin() + static_cast<std::ptrdiff_t>(start) * c,
                          av.begin() + static_cast<std::ptrdiff_t>(start + count) * c);
  const int id = static_cast<int>(t->node_count());
  return t->make(count, c, std::move(out), {a}, [t, a, c, start, id] {
    const auto& g = t->grad(Var{t, id});
    auto& ga = t->grad(a);
    const std::size_t off = static_cast<std::size_t>(start) * c;
    for (std::size_t i = 0; i < g.size(); ++i) ga[off + i] += g[i];
  });
}

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw InvalidInput("concat_cols: no inputs");
  Tape* t = parts.front().tape;
  const int n = parts.front().rows();
  std::vector<int> widths;
  int total = 0;
  for (Var p : parts) {
    if (p.rows() != n) throw InvalidInput("concat_cols: row mismatch");
    widths.push_back(p.cols());
    total += p.cols();
  }
  std::vector<double> out(static_cast<std::size_t>(n) * total);
  int off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& pv = parts[k].value();
    for (int i = 0; i < n; ++i) {
      std::copy_n(pv.begin() + static_cast<std::ptrdiff_t>(i) * widths[k], widths[k],
                  out.begin() + static_cast<std::ptrdiff_t>(i) * total + off);
    }
    off += widths[k];
  }
  const int id = static_cast<int>(t->node_count());
  return t->make(n, total, std::move(out), std::span<const Var>(parts),
                 [t, parts, widths, n, total, id] {
                   const auto& g = t->grad(Var{t, id});
                   int off = 0;
                   for (std::size_t k = 0; k < parts.size(); ++k) {
                     if (t->requires_grad(parts[k])) {
                       auto& gp = t->grad(parts[k]);
                       for (int i = 0; i < n; ++i) {
                         for (int j = 0; j < widths[k]; ++j) {
                           gp[static_cast<std::size_t>(i) * widths[k] + j] +=
                               g[static_cast<std::size_t>(i) * total + off + j];
                         }
                       }
                     }
                     off += widths[k];
                   }
                 });
}

inline Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw InvalidInput("concat_rows: no inputs");
  Tape* t = parts.front().tape;
  const int c = parts.front().cols();
  int total = 0;
  std::vector<double> out;
  for (Var p : parts) {
    if (p.cols() != c) throw InvalidInput("concat_rows: column mismatch");
    total += p.rows();
    out.insert(out.end(), p.value().begin(), p.value().end());
  }
  const int id = static_cast<int>(t->node_count());
  return t->make(total, c, std::move(out), std::span<const Var>(parts), [t, parts, id] {
    const auto& g = t->grad(Var{t, id});
    std::size_t off = 0;
    for (Var p : parts) {
      const std::size_t n = p.size();
      if (t->requires_grad(p)) {
        auto& gp = t->grad(p);
        for (std::size_t i = 0; i < n; ++i) gp[i] += g[off + i];
      }
      off += n;
    }
  });
}

/// Same data, new (rows, cols) interpretation.
inline Var reshape(Var a, int rows, int cols) {
  if (static_cast<std::size_t>(rows) * cols != a.size()) throw InvalidInput("reshape: size mismatch");
  Tape* t = a.tape;
  const int id = static_cast<int>(t->node_count());
  return t->make(rows, cols, a.value(), {a}, [t, a, id] {
    const auto& g = t->grad(Var{t, id});
    auto& ga = t->grad(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

/// a (n x k) * b (k x m).
inline Var matmul(Var a, Var b) {
  const int n = a.rows(), k = a.cols(), m = b.cols();
  if (b.rows() != k) throw InvalidInput("matmul: inner dimension mismatch");
  Tape* t = a.tape;
  const auto& av = a.value();
  const auto& bv = b.value();
  std::vector<double> out(static_cast<std::size_t>(n) * m, 0.0);
  for (int i = 0; i < n; ++i) {
    double* o = &out[static_cast<std::size_t>(i) * m];
    for (int p = 0; p < k; ++p) {
      const double x = av[static_cast<std::size_t>(i) * k + p];
      const double* br = &bv[static_cast<std::size_t>(p) * m];
      for (int j = 0; j < m; ++j) o[j] += x * br[j];
    }
  }
  const int id = static_cast<int>(t->node_count());
  return t->make(n, m, std::move(out), {a, b}, [t, a, b, n, k, m, id] {
    const auto& g = t->grad(Var{t, id});
    const auto& av = t->value(a);
    const auto& bv = t->value(b);
    if (t->requires_grad(a)) {
      auto& ga = t->grad(a);  // g * b^T
      for (int i = 0; i < n; ++i) {
        for (int p = 0; p < k; ++p) {
          ga[static_cast<std::size_t>(i) * k + p] +=
              detail::dot(&g[static_cast<std::size_t>(i) * m], &bv[static_cast<std::size_t>(p) * m], m);
        }
      }
    }
    if (t->requires_grad(b)) {
      auto& gb = t->grad(b);  // a^T * g
      for (int i = 0; i < n; ++i) {
        for (int p = 0; p < k; ++p) {
          const double x = av[static_cast<std::size_t>(i) * k + p];
          for (int j = 0; j < m; ++j) gb[static_cast<std::size_t>(p) * m + j] += x * g[static_cast<std::size_t>(i) * m + j];
        }
      }
    }
  });
}

/// a (n x k) * b^T with b (m x k).
inline Var matmul_nt(Var a, Var b) {
  const int n = a.rows(), k = a.cols(), m = b.rows();
  if (b.cols() != k) throw InvalidInput("matmul_nt: inner dimension mismatch");
  Tape* t = a.tape;
  const auto& av = a.value();
  const auto& bv = b.value();
  std::vector<double> out(static_cast<std::size_t>(n) * m);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < m; ++j) {
      out[static_cast<std::size_t>(i) * m + j] =
          detail::dot(&av[static_cast<std::size_t>(i) * k], &bv[static_cast<std::size_t>(j) * k], k);
    }
  }
  const int id = static_cast<int>(t->node_count());
  return t->make(n, m, std::move(out), {a, b}, [t, a, b, n, k, m, id] {
    const auto& g = t->grad(Var{t, id});
    const auto& av = t->value(a);
    const auto& bv = t->value(b);
    const bool need_a = t->requires_grad(a), need_b = t->requires_grad(b);
    std::vector<double>* ga = need_a ? &t->grad(a) : nullptr;
    std::vector<double>* gb = need_b ? &t->grad(b) : nullptr;
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < m; ++j) {
        const double gij = g[static_cast<std::size_t>(i) * m + j];
        if (gij == 0.0) continue;
        for (int p = 0; p < k; ++p) {
          if (need_a) (*ga)[static_cast<std::size_t>(i) * k + p] += gij * bv[static_cast<std::size_t>(j) * k + p];
          if (need_b) (*gb)[static_cast<std::size_t>(j) * k + p] += gij * av[static_cast<std::size_t>(i) * k + p];
        }
      }
    }
  });
}

/// x (n x in) * W^T + b with W (out x in), b (1 x out).
inline Var linear(Var x, Var w, Var b) {
  const int n = x.rows(), in = x.cols(), out_dim = w.rows();
  if (w.cols() != in) throw InvalidInput("linear: weight has wrong input width");
  if (b.rows() != 1 || b.cols() != out_dim) throw InvalidInput("linear: bias has wrong shape");
  Tape* t = x.tape;
  const auto& xv = x.value();
  const auto& wv = w.value();
  const auto& bv = b.value();
  std::vector<double> out(static_cast<std::size_t>(n) * out_dim);
  for (int i = 0; i < n; ++i) {
    const double* xr = &xv[static_cast<std::size_t>(i) * in];
    for (int o = 0; o < out_dim; ++o) {
      out[static_cast<std::size_t>(i) * out_dim + o] = bv[o] + detail::dot(xr, &wv[static_cast<std::size_t>(o) * in], in);
    }
  }
  const int id = static_cast<int>(t->node_count());
  return t->make(n, out_dim, std::move(out), {x, w, b}, [t, x, w, b, n, in, out_dim, id] {
    const auto& g = t->grad(Var{t, id});
    const auto& xv = t->value(x);
    const auto& wv = t->value(w);
    if (t->requires_grad(x)) {
      auto& gx = t->grad(x);
      for (int i = 0; i < n; ++i) {
        double* gxr = &gx[static_cast<std::size_t>(i) * in];
        for (int o = 0; o < out_dim; ++o) {
          const double go = g[static_cast<std::size_t>(i) * out_dim + o];
          const double* wr = &wv[static_cast<std::size_t>(o) * in];
          for (int p = 0; p < in; ++p) gxr[p] += go * wr[p];
        }
      }
    }
    if (t->requires_grad(w)) {
      auto& gw = t->grad(w);
      for (int i = 0; i < n; ++i) {
        const double* xr = &xv[static_cast<std::size_t>(i) * in];
        for (int o = 0; o < out_dim; ++o) {
          const double go = g[static_cast<std::size_t>(i) * out_dim + o];
          double* gwr = &gw[static_cast<std::size_t>(o) * in];
          for (int p = 0; p < in; ++p) gwr[p] += go * xr[p];
        }
      }
    }
    if (t->requires_grad(b)) {
      auto& gb = t->grad(b);
      for (int i = 0; i < n; ++i) {
        for (int o = 0; o < out_dim; ++o) gb[o] += g[static_cast<std::size_t>(i) * out_dim + o];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Normalization

/// Row-wise layer norm with learnable gain and bias (both 1 x c).
inline Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5) {
  const int n = x.rows(), c = x.cols();
  if (gain.cols() != c || bias.cols() != c) throw InvalidInput("layer_norm: parameter width");
  Tape* t = x.tape;
  const auto& xv = x.value();
  const auto& gv = gain.value();
  const auto& bv = bias.value();
  std::vector<double> out(xv.size());
  std::vector<double> xhat(xv.size());
  std::vector<double> inv_std(n);
  for (int i = 0; i < n; ++i) {
    const double* xr = &xv[static_cast<std::size_t>(i) * c];
    double mean = 0.0;
    for (int j = 0; j < c; ++j) mean += xr[j];
    mean /= c;
    double var = 0.0;
    for (int j = 0; j < c; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= c;
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[i] = is;
    for (int j = 0; j < c; ++j) {
      const std::size_t k = static_cast<std::size_t>(i) * c + j;
      xhat[k] = (xr[j] - mean) * is;
      out[k] = xhat[k] * gv[j] + bv[j];
    }
  }
  const int id = static_cast<int>(t->node_count());
  return t->make(n, c, std::move(out), {x, gain, bias},
                 [t, x, gain, bias, n, c, xhat = std::move(xhat), inv_std = std::move(inv_std), id] {
                   const auto& g = t->grad(Var{t, id});
                   const auto& gv = t->value(gain);
                   if (t->requires_grad(gain)) {
                     auto& gg = t->grad(gain);
                     for (std::size_t k = 0; k < g.size(); ++k) gg[k % c] += g[k] * xhat[k];
                   }
                   if (t->requires_grad(bias)) {
                     auto& gb = t->grad(bias);
                     for (std::size_t k = 0; k < g.size(); ++k) gb[k % c] += g[k];
                   }
                   if (t->requires_grad(x)) {
                     auto& gx = t->grad(x);
                     for (int i = 0; i < n; ++i) {
                       double sum_d = 0.0, sum_dx = 0.0;
                       for (int j = 0; j < c; ++j) {
                         const std::size_t k = static_cast<std::size_t>(i) * c + j;
                         const double d = g[k] * gv[j];
                         sum_d += d;
                         sum_dx += d * xhat[k];
                       }
                       for (int j = 0; j < c; ++j) {
                         const std::size_t k = static_cast<std::size_t>(i) * c + j;
                         const double d = g[k] * gv[j];
                         gx[k] += inv_std[i] * (d - sum_d / c - xhat[k] * sum_dx / c);
                       }
                     }
                   }
                 });
}

/// Softmax over consecutive column groups of width `group` (group = cols
/// gives a plain row softmax).
inline Var softmax_groups(Var x, int group) {
  const int n = x.rows(), c = x.cols();
  if (group <= 0 || c % group != 0) throw InvalidInput("softmax_groups: bad group width");
  Tape* t = x.tape;
  const auto& xv = x.value();
  std::vector<double> out(xv.size());
  for (std::size_t base = 0; base < xv.size(); base += group) {
    double mx = xv[base];
    for (int j = 1; j < group; ++j) mx = std::max(mx, xv[base + j]);
    double s = 0.0;
    for (int j = 0; j < group; ++j) {
      out[base + j] = std::exp(xv[base + j] - mx);
      s += out[base + j];
    }
    for (int j = 0; j < group; ++j) out[base + j] /= s;
  }
  const int id = static_cast<int>(t->node_count());
  return t->make(n, c, std::move(out), {x}, [t, x, group, id] {
    const auto& g = t->grad(Var{t, id});
    const auto& y = t->value(Var{t, id});
    auto& gx = t->grad(x);
    for (std::size_t base = 0; base < y.size(); base += group) {
      double dot = 0.0;
      for (int j = 0; j < group; ++j) dot += g[base + j] * y[base + j];
      for (int j = 0; j < group; ++j) gx[base + j] += y[base + j] * (g[base + j] - dot);
    }
  });
}

inline Var softmax_rows(Var x) { return softmax_groups(x, x.cols()); }

// ---------------------------------------------------------------------------
// Reductions

inline Var sum(Var a) {
  Tape* t = a.tape;
  double s = 0.0;
  for (double v : a.value()) s += v;
  const int id = static_cast<int>(t->node_count());
  return t->make(1, 1, {s}, {a}, [t, a, id] {
    const double g = t->grad(Var{t, id})[0];
    for (double& x : t->grad(a)) x += g;
  });
}

inline Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

// ---------------------------------------------------------------------------
// Sinusoidal encoding

/// Frequency of channel pair `pair` for an encoding of `width` channels per
/// scalar: 2*pi / temperature^(2*pair/width).
inline double pe_frequency(int pair, int width, double temperature = 10000.0) {
  return 2.0 * 3.14159265358979323846 /
         std::pow(temperature, 2.0 * static_cast<double>(pair) / static_cast<double>(width));
}

/// Each of the `d` scalars in a row of x (n x d) becomes width = dim/d
/// channels (sin, cos, sin, cos, ...) at geometric frequencies; the per-scalar
/// blocks are concatenated. Channel 2i of a block is sin(x * pe_frequency(i)),
/// channel 2i+1 is cos(x * pe_frequency(i)).
inline Var sinusoidal_pe(Var x, int dim, double temperature = 10000.0) {
  const int n = x.rows(), d = x.cols();
  if (dim <= 0 || dim % d != 0 || (dim / d) % 2 != 0) {
    throw InvalidInput("sinusoidal_pe: dim must be an even multiple of the input count");
  }
  const int width = dim / d;
  std::vector<double> freq(width / 2);
  for (int i = 0; i < width / 2; ++i) freq[i] = pe_frequency(i, width, temperature);
  Tape* t = x.tape;
  const auto& xv = x.value();
  std::vector<double> out(static_cast<std::size_t>(n) * dim);
  for (int r = 0; r < n; ++r) {
    for (int s = 0; s < d; ++s) {
      const double v = xv[static_cast<std::size_t>(r) * d + s];
      double* o = &out[static_cast<std::size_t>(r) * dim + static_cast<std::size_t>(s) * width];
      for (int i = 0; i < width / 2; ++i) {
        o[2 * i] = std::sin(v * freq[i]);
        o[2 * i + 1] = std::cos(v * freq[i]);
      }
    }
  }
  const int id = static_cast<int>(t->node_count());
  return t->make(n, dim, std::move(out), {x}, [t, x, n, d, dim, width, freq, id] {
    const auto& g = t->grad(Var{t, id});
    const auto& y = t->value(Var{t, id});
    auto& gx = t->grad(x);
    for (int r = 0; r < n; ++r) {
      for (int s = 0; s < d; ++s) {
        const std::size_t base = static_cast<std::size_t>(r) * dim + static_cast<std::size_t>(s) * width;
        double acc = 0.0;
        for (int i = 0; i < width / 2; ++i) {
          // d sin(vf)/dv = f cos(vf); d cos(vf)/dv = -f sin(vf)
          acc += g[base + 2 * i] * freq[i] * y[base + 2 * i + 1];
          acc -= g[base + 2 * i + 1] * freq[i] * y[base + 2 * i];
        }
        gx[static_cast<std::size_t>(r) * d + s] += acc;
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Bilinear sampling helpers shared by RoIAlign and deformable attention.

namespace detail {

/// Bilinear stencil on a map of `size` samples per axis for a continuous
/// index coordinate `u`. Positions outside [0, size-1] clamp to the border
/// and have zero derivative.
struct Stencil {
  int i0 = 0;
  int i1 = 0;
  double frac = 0.0;
  bool clamped = false;
};

inline Stencil stencil_from(int base, double local, int size) {
  // `base` is an exact integer offset and `local` the remaining offset, so
  // that shifting base by an integer never changes `frac`.
  const double fl = std::floor(local);
  Stencil s;
  const long idx = static_cast<long>(base) + static_cast<long>(fl);
  s.frac = local - fl;
  if (idx < 0) {
    s.i0 = s.i1 = 0;
    s.frac = 0.0;
    s.clamped = true;
  } else if (idx > size - 1 || (idx == size - 1 && s.frac > 0.0)) {
    s.i0 = s.i1 = size - 1;
    s.frac = 0.0;
    s.clamped = true;
  } else {
    s.i0 = static_cast<int>(idx);
    s.i1 = std::min(s.i0 + 1, size - 1);
  }
  return s;
}

inline Stencil stencil(double u, int size) {
  const double fl = std::floor(u);
  return stencil_from(static_cast<int>(fl), u - fl, size);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Strided convolution

struct ConvGeometry {
  int in_channels = 0;
  int height = 0;
  int width = 0;
  int out_channels = 0;
  int out_height() const { return (height + 1) / 2; }
  int out_width() const { return (width + 1) / 2; }
};

/// 3x3 convolution, stride 2, zero padding 1. x: (C_in x H*W), w: (C_out x
/// C_in*9), b: (1 x C_out). Output (C_out x ceil(H/2)*ceil(W/2)).
inline Var conv3x3_s2(Var x, Var w, Var b, ConvGeometry geo) {
  const int ci = geo.in_channels, h = geo.height, wd = geo.width, co = geo.out_channels;
  const int oh = geo.out_height(), ow = geo.out_width();
  const int np = oh * ow, nr = ci * 9;
  if (x.rows() != ci || x.cols() != h * wd) throw InvalidInput("conv: input shape mismatch");
  if (w.rows() != co || w.cols() != nr || b.cols() != co) throw InvalidInput("conv: weight shape");
  Tape* t = x.tape;
  const auto& xv = x.value();
  const auto& wv = w.value();
  const auto& bv = b.value();
  // Patch matrix: row (c*9 + ky*3 + kx), column (oy*ow + ox).
  std::vector<double> col(static_cast<std::size_t>(nr) * np, 0.0);
  for (int c = 0; c < ci; ++c) {
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        double* cr = &col[(static_cast<std::size_t>(c) * 9 + ky * 3 + kx) * np];
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = 2 * oy - 1 + ky;
          if (iy < 0 || iy >= h) continue;
          const double* xr = &xv[(static_cast<std::size_t>(c) * h + iy) * wd];
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = 2 * ox - 1 + kx;
            if (ix >= 0 && ix < wd) cr[oy * ow + ox] = xr[ix];
          }
        }
      }
    }
  }
  std::vector<double> out(static_cast<std::size_t>(co) * np);
  for (int o = 0; o < co; ++o) {
    double* op = &out[static_cast<std::size_t>(o) * np];
    std::fill(op, op + np, bv[o]);
    for (int r = 0; r < nr; ++r) {
      const double wk = wv[static_cast<std::size_t>(o) * nr + r];
      const double* cr = &col[static_cast<std::size_t>(r) * np];
      for (int p = 0; p < np; ++p) op[p] += wk * cr[p];
    }
  }
  const int id = static_cast<int>(t->node_count());
  return t->make(co, np, std::move(out), {x, w, b},
                 [t, x, w, b, ci, h, wd, co, oh, ow, np, nr, col = std::move(col), id] {
    const auto& g = t->grad(Var{t, id});
    const auto& wv = t->value(w);
    if (t->requires_grad(b)) {
      auto& gb = t->grad(b);
      for (int o = 0; o < co; ++o) {
        double s = 0.0;
        for (int p = 0; p < np; ++p) s += g[static_cast<std::size_t>(o) * np + p];
        gb[o] += s;
      }
    }
    if (t->requires_grad(w)) {
      auto& gw = t->grad(w);
      for (int o = 0; o < co; ++o) {
        const double* gp = &g[static_cast<std::size_t>(o) * np];
        for (int r = 0; r < nr; ++r) {
          gw[static_cast<std::size_t>(o) * nr + r] += detail::dot(gp, &col[static_cast<std::size_t>(r) * np], np);
        }
      }
    }
    if (t->requires_grad(x)) {
      std::vector<double> gcol(static_cast<std::size_t>(nr) * np, 0.0);
      for (int o = 0; o < co; ++o) {
        const double* gp = &g[static_cast<std::size_t>(o) * np];
        for (int r = 0; r < nr; ++r) {
          const double wk = wv[static_cast<std::size_t>(o) * nr + r];
          double* gc = &gcol[static_cast<std::size_t>(r) * np];
          for (int p = 0; p < np; ++p) gc[p] += wk * gp[p];
        }
      }
      auto& gx = t->grad(x);
      for (int c = 0; c < ci; ++c) {
        for (int ky = 0; ky < 3; ++ky) {
          for (int kx = 0; kx < 3; ++kx) {
            const double* gc = &gcol[(static_cast<std::size_t>(c) * 9 + ky * 3 + kx) * np];
            for (int oy = 0; oy < oh; ++oy) {
              const int iy = 2 * oy - 1 + ky;
              if (iy < 0 || iy >= h) continue;
              double* gr = &gx[(static_cast<std::size_t>(c) * h + iy) * wd];
              for (int ox = 0; ox < ow; ++ox) {
                const int ix = 2 * ox - 1 + kx;
                if (ix >= 0 && ix < wd) gr[ix] += gc[oy * ow + ox];
              }
            }
          }
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// RoIAlign (one bilinear sample at each bin centre)

struct RoiAlignGeometry {
  int channels = 0;
  int height = 0;  // feature map
  int width = 0;
  double scale = 1.0;  // image px -> map px, a power of two
  int bins_y = 7;
  int bins_x = 7;
};

namespace detail {

struct BinSample {
  Stencil sx;
  Stencil sy;
};

/// Bin-centre stencils for `box` (x_min, y_min, x_max, y_max) in image px.
/// Value of map pixel (i, j) lives at continuous position (j+0.5, i+0.5).
inline std::vector<BinSample> roi_bin_samples(const double* box, const RoiAlignGeometry& g) {
  const double x0 = box[0] * g.scale, y0 = box[1] * g.scale;
  const double bw = (box[2] - box[0]) * g.scale / g.bins_x;
  const double bh = (box[3] - box[1]) * g.scale / g.bins_y;
  const double x0i = std::floor(x0), y0i = std::floor(y0);
  const double x0f = x0 - x0i, y0f = y0 - y0i;
  std::vector<BinSample> out(static_cast<std::size_t>(g.bins_y) * g.bins_x);
  for (int by = 0; by < g.bins_y; ++by) {
    const Stencil sy = stencil_from(static_cast<int>(y0i), y0f + (by + 0.5) * bh - 0.5, g.height);
    for (int bx = 0; bx < g.bins_x; ++bx) {
      const Stencil sx = stencil_from(static_cast<int>(x0i), x0f + (bx + 0.5) * bw - 0.5, g.width);
      out[static_cast<std::size_t>(by) * g.bins_x + bx] = {sx, sy};
    }
  }
  return out;
}

}  // namespace detail

/// fmap: (C x H*W), box: (1 x 4) image-frame (x_min, y_min, x_max, y_max).
/// Output: (bins_y*bins_x x C), one row per bin in row-major bin order.
/// Differentiable with respect to both the map and the box.
inline Var roi_align(Var fmap, Var box, RoiAlignGeometry geo) {
  const int c = geo.channels, h = geo.height, w = geo.width;
  if (fmap.rows() != c || fmap.cols() != h * w) throw InvalidInput("roi_align: map shape mismatch");
  if (box.size() != 4) throw InvalidInput("roi_align: box must have 4 values");
  Tape* t = fmap.tape;
  const auto& fv = fmap.value();
  const auto samples = detail::roi_bin_samples(box.value().data(), geo);
  const int nb = geo.bins_y * geo.bins_x;
  std::vector<double> out(static_cast<std::size_t>(nb) * c);
  for (int k = 0; k < nb; ++k) {
    const auto& s = samples[k];
    const double w00 = (1 - s.sy.frac) * (1 - s.sx.frac), w01 = (1 - s.sy.frac) * s.sx.frac;
    const double w10 = s.sy.frac * (1 - s.sx.frac), w11 = s.sy.frac * s.sx.frac;
    const std::size_t p00 = static_cast<std::size_t>(s.sy.i0) * w + s.sx.i0;
    const std::size_t p01 = static_cast<std::size_t>(s.sy.i0) * w + s.sx.i1;
    const std::size_t p10 = static_cast<std::size_t>(s.sy.i1) * w + s.sx.i0;
    const std::size_t p11 = static_cast<std::size_t>(s.sy.i1) * w + s.sx.i1;
    for (int ch = 0; ch < c; ++ch) {
      const double* f = &fv[static_cast<std::size_t>(ch) * h * w];
      out[static_cast<std::size_t>(k) * c + ch] = w00 * f[p00] + w01 * f[p01] + w10 * f[p10] + w11 * f[p11];
    }
  }
  const int id = static_cast<int>(t->node_count());
  return t->make(nb, c, std::move(out), {fmap, box}, [t, fmap, box, geo, samples, id] {
    const int c = geo.channels, h = geo.height, w = geo.width;
    const int nb = geo.bins_y * geo.bins_x;
    const auto& g = t->grad(Var{t, id});
    const auto& fv = t->value(fmap);
    const bool need_f = t->requires_grad(fmap), need_b = t->requires_grad(box);
    std::vector<double>* gf = need_f ? &t->grad(fmap) : nullptr;
    double gbox[4] = {0, 0, 0, 0};
    for (int k = 0; k < nb; ++k) {
      const auto& s = samples[k];
      const int by = k / geo.bins_x, bx = k % geo.bins_x;
      const double fx = s.sx.frac, fy = s.sy.frac;
      const std::size_t p00 = static_cast<std::size_t>(s.sy.i0) * w + s.sx.i0;
      const std::size_t p01 = static_cast<std::size_t>(s.sy.i0) * w + s.sx.i1;
      const std::size_t p10 = static_cast<std::size_t>(s.sy.i1) * w + s.sx.i0;
      const std::size_t p11 = static_cast<std::size_t>(s.sy.i1) * w + s.sx.i1;
      double dpx = 0.0, dpy = 0.0;  // d(loss)/d(sample position) in map px
      for (int ch = 0; ch < c; ++ch) {
        const double go = g[static_cast<std::size_t>(k) * c + ch];
        if (go == 0.0) continue;
        const std::size_t off = static_cast<std::size_t>(ch) * h * w;
        if (need_f) {
          (*gf)[off + p00] += go * (1 - fy) * (1 - fx);
          (*gf)[off + p01] += go * (1 - fy) * fx;
          (*gf)[off + p10] += go * fy * (1 - fx);
          (*gf)[off + p11] += go * fy * fx;
        }
        if (need_b) {
          const double f00 = fv[off + p00], f01 = fv[off + p01], f10 = fv[off + p10], f11 = fv[off + p11];
          if (!s.sx.clamped) dpx += go * ((1 - fy) * (f01 - f00) + fy * (f11 - f10));
          if (!s.sy.clamped) dpy += go * ((1 - fx) * (f10 - f00) + fx * (f11 - f01));
        }
      }
      if (need_b) {
        const double tx = (bx + 0.5) / geo.bins_x, ty = (by + 0.5) / geo.bins_y;
        gbox[0] += dpx * geo.scale * (1 - tx);
        gbox[2] += dpx * geo.scale * tx;
        gbox[1] += dpy * geo.scale * (1 - ty);
        gbox[3] += dpy * geo.scale * ty;
      }
    }
    if (need_b) {
      auto& gb = t->grad(box);
      for (int i = 0; i < 4; ++i) gb[i] += gbox[i];
    }
  });
}

// ---------------------------------------------------------------------------
// Deformable sampling inside one RoI

struct DeformGeometry {
  int height = 7;  // RoI bins
  int width = 7;
  int heads = 1;
  int points = 1;  // K sampling points per head
};

/// value: (H*W x C) projected RoI features, C = heads * head_dim.
/// loc:   (M x heads*K*2) sampling locations in RoI-normalized [0,1]^2,
///        ordered (head, point, {x, y}).
/// attn:  (M x heads*K) weights (already normalized over K).
/// Output (M x C): head h fills columns [h*head_dim, (h+1)*head_dim) with
/// sum_k attn[h,k] * bilinear(value[:, head h], loc[h,k]).
/// Normalized location u maps to pixel index u*size - 0.5 (pixel centres);
/// samples clamp to the border.
inline Var deform_sample(Var value, Var loc, Var attn, DeformGeometry geo) {
  const int hw = geo.height * geo.width;
  const int c = value.cols();
  const int m = loc.rows();
  const int nh = geo.heads, kp = geo.points;
  if (value.rows() != hw || c % nh != 0) throw InvalidInput("deform_sample: value shape");
  if (loc.cols() != nh * kp * 2 || attn.cols() != nh * kp || attn.rows() != m) {
    throw InvalidInput("deform_sample: location/weight shape");
  }
  const int dh = c / nh;
  Tape* t = value.tape;
  const auto& vv = value.value();
  const auto& lv = loc.value();
  const auto& av = attn.value();
  std::vector<detail::BinSample> st(static_cast<std::size_t>(m) * nh * kp);
  std::vector<double> out(static_cast<std::size_t>(m) * c, 0.0);
  for (int q = 0; q < m; ++q) {
    for (int h = 0; h < nh; ++h) {
      for (int k = 0; k < kp; ++k) {
        const std::size_t lk = (static_cast<std::size_t>(q) * nh + h) * kp + k;
        const double ux = lv[lk * 2] * geo.width - 0.5;
        const double uy = lv[lk * 2 + 1] * geo.height - 0.5;
        const detail::BinSample s{detail::stencil(ux, geo.width), detail::stencil(uy, geo.height)};
        st[lk] = s;
        const double a = av[lk];
        const double w00 = (1 - s.sy.frac) * (1 - s.sx.frac), w01 = (1 - s.sy.frac) * s.sx.frac;
        const double w10 = s.sy.frac * (1 - s.sx.frac), w11 = s.sy.frac * s.sx.frac;
        const double* r00 = &vv[(static_cast<std::size_t>(s.sy.i0) * geo.width + s.sx.i0) * c + h * dh];
        const double* r01 = &vv[(static_cast<std::size_t>(s.sy.i0) * geo.width + s.sx.i1) * c + h * dh];
        const double* r10 = &vv[(static_cast<std::size_t>(s.sy.i1) * geo.width + s.sx.i0) * c + h * dh];
        const double* r11 = &vv[(static_cast<std::size_t>(s.sy.i1) * geo.width + s.sx.i1) * c + h * dh];
        double* o = &out[static_cast<std::size_t>(q) * c + h * dh];
        for (int d = 0; d < dh; ++d) {
          o[d] += a * (w00 * r00[d] + w01 * r01[d] + w10 * r10[d] + w11 * r11[d]);
        }
      }
    }
  }
  const int id = static_cast<int>(t->node_count());
  return t->make(m, c, std::move(out), {value, loc, attn}, [t, value, loc, attn, geo, st, m, c, dh, id] {
    const int nh = geo.heads, kp = geo.points;
    const auto& g = t->grad(Var{t, id});
    const auto& vv = t->value(value);
    const auto& av = t->value(attn);
    const bool need_v = t->requires_grad(value), need_l = t->requires_grad(loc),
               need_a = t->requires_grad(attn);
    std::vector<double>* gv = need_v ? &t->grad(value) : nullptr;
    std::vector<double>* gl = need_l ? &t->grad(loc) : nullptr;
    std::vector<double>* ga = need_a ? &t->grad(attn) : nullptr;
    for (int q = 0; q < m; ++q) {
      for (int h = 0; h < nh; ++h) {
        const double* go = &g[static_cast<std::size_t>(q) * c + h * dh];
        for (int k = 0; k < kp; ++k) {
          const std::size_t lk = (static_cast<std::size_t>(q) * nh + h) * kp + k;
          const auto& s = st[lk];
          const double a = av[lk];
          const double fx = s.sx.frac, fy = s.sy.frac;
          const std::size_t o00 = (static_cast<std::size_t>(s.sy.i0) * geo.width + s.sx.i0) * c + h * dh;
          const std::size_t o01 = (static_cast<std::size_t>(s.sy.i0) * geo.width + s.sx.i1) * c + h * dh;
          const std::size_t o10 = (static_cast<std::size_t>(s.sy.i1) * geo.width + s.sx.i0) * c + h * dh;
          const std::size_t o11 = (static_cast<std::size_t>(s.sy.i1) * geo.width + s.sx.i1) * c + h * dh;
          double da = 0.0, dx = 0.0, dy = 0.0;
          for (int d = 0; d < dh; ++d) {
            const double v00 = vv[o00 + d], v01 = vv[o01 + d], v10 = vv[o10 + d], v11 = vv[o11 + d];
            const double sample = (1 - fy) * (1 - fx) * v00 + (1 - fy) * fx * v01 + fy * (1 - fx) * v10 + fy * fx * v11;
            da += go[d] * sample;
            dx += go[d] * ((1 - fy) * (v01 - v00) + fy * (v11 - v10));
            dy += go[d] * ((1 - fx) * (v10 - v00) + fx * (v11 - v01));
            if (need_v) {
              const double ag = a * go[d];
              (*gv)[o00 + d] += ag * (1 - fy) * (1 - fx);
              (*gv)[o01 + d] += ag * (1 - fy) * fx;
              (*gv)[o10 + d] += ag * fy * (1 - fx);
              (*gv)[o11 + d] += ag * fy * fx;
            }
          }
          if (need_a) (*ga)[lk] += da;
          if (need_l) {
            if (!s.sx.clamped) (*gl)[lk * 2] += a * dx * geo.width;
            if (!s.sy.clamped) (*gl)[lk * 2 + 1] += a * dy * geo.height;
          }
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Losses

/// Sum of |pred - target| over all entries; target is constant.
inline Var l1_sum(Var pred, std::vector<double> target) {
  if (target.size() != pred.size()) throw InvalidInput("l1_sum: size mismatch");
  Tape* t = pred.tape;
  const auto& pv = pred.value();
  double s = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) s += std::abs(pv[i] - target[i]);
  const int id = static_cast<int>(t->node_count());
  return t->make(1, 1, {s}, {pred}, [t, pred, target = std::move(target), id] {
    const double g = t->grad(Var{t, id})[0];
    const auto& pv = t->value(pred);
    auto& gp = t->grad(pred);
    for (std::size_t i = 0; i < pv.size(); ++i) {
      const double d = pv[i] - target[i];
      gp[i] += g * static_cast<double>((d > 0) - (d < 0));
    }
  });
}

/// Focal term for one logit: -a_t (1 - p_t)^gamma log(max(p_t, 1e-12)).
inline double focal_term(double logit, bool positive, double alpha, double gamma) {
  const double pt = detail::sigmoid(positive ? logit : -logit);
  const double at = positive ? alpha : 1.0 - alpha;
  return -at * std::pow(1.0 - pt, gamma) * std::log(std::max(pt, 1e-12));
}

/// Sum of focal terms over all logits; labels are constant 0/1.
inline Var focal_sum(Var logits, std::vector<std::uint8_t> labels, double alpha, double gamma) {
  if (labels.size() != logits.size()) throw InvalidInput("focal_sum: size mismatch");
  Tape* t = logits.tape;
  const auto& zv = logits.value();
  double s = 0.0;
  for (std::size_t i = 0; i < zv.size(); ++i) s += focal_term(zv[i], labels[i] != 0, alpha, gamma);
  const int id = static_cast<int>(t->node_count());
  return t->make(1, 1, {s}, {logits}, [t, logits, labels = std::move(labels), alpha, gamma, id] {
    const double g = t->grad(Var{t, id})[0];
    const auto& zv = t->value(logits);
    auto& gz = t->grad(logits);
    for (std::size_t i = 0; i < zv.size(); ++i) {
      const bool pos = labels[i] != 0;
      const double sign = pos ? 1.0 : -1.0;
      const double pt = detail::sigmoid(sign * zv[i]);
      const double at = pos ? alpha : 1.0 - alpha;
      if (pt < 1e-12) continue;  // clamped log: flat
      const double one_m = 1.0 - pt;
      // d/dz = sign * a_t * [gamma (1-pt)^gamma pt log pt - (1-pt)^(gamma+1)]
      const double d = sign * at * (gamma * std::pow(one_m, gamma) * pt * std::log(pt) -
                                    std::pow(one_m, gamma + 1.0));
      gz[i] += g * d;
    }
  });
}

}  // namespace roipoly::ad
