#pragma once

// Tape-based reverse-mode differentiation over a small fixed set of dense
// operations: enough for a transformer encoder, a linear head and a
// cross-entropy loss. Each forward pass records onto a fresh Graph; node ids
// are assigned in creation order, so the reverse sweep is a plain descending
// loop over the tape.

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "adaptune/error.hpp"
#include "adaptune/tensor.hpp"

namespace adaptune::grad {

class Graph;

/// Handle to a node on a Graph. Cheap to copy; only valid while its graph lives.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, const Tensor& out_grad)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Leaf that never receives a gradient (frozen weights, inputs).
  Var constant(Tensor value) { return push(std::move(value), false, {}); }

  /// Leaf whose gradient is collected by `backward`.
  Var parameter(Tensor value) { return push(std::move(value), true, {}); }

  /// Records an operation result. The node requires a gradient iff any parent does.
  Var record(Tensor value, std::initializer_list<Var> parents, BackwardFn backward) {
    bool needs = false;
    for (const Var& p : parents) needs = needs || nodes_.at(p.id).requires_grad;
    return push(std::move(value), needs, needs ? std::move(backward) : BackwardFn{});
  }

  Var record(Tensor value, const std::vector<Var>& parents, BackwardFn backward) {
    bool needs = false;
    for (const Var& p : parents) needs = needs || nodes_.at(p.id).requires_grad;
    return push(std::move(value), needs, needs ? std::move(backward) : BackwardFn{});
  }

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Gradient of the last `backward` output with respect to `v`; zeros when
  /// no path reached it.
  Tensor grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    if (n.grad.empty()) return Tensor::zeros(n.value.shape());
    return n.grad;
  }

  /// Reverse sweep from a single-element output, seeded with 1.
  void backward(Var output) {
    if (swept_) throw ConfigError("backward already ran on this graph");
    const Node& out = nodes_.at(output.id);
    if (out.value.size() != 1) {
      throw DimensionError("backward needs a scalar output, got " + shape_str(out.value.shape()));
    }
    swept_ = true;
    if (!out.requires_grad) return;
    accumulate(output.id, Tensor::filled(out.value.shape(), 1.0));
    for (std::size_t id = output.id + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (!n.backward || n.grad.empty()) continue;
      n.backward(*this, n.grad);
    }
  }

  bool needs_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

  /// Adds `g` into the gradient slot of `v` (allocated on first use).
  void accumulate(Var v, const Tensor& g) { accumulate(v.id, g); }

  /// Mutable gradient slot, zero-initialised on first access. Lets kernels
  /// accumulate in place without a temporary.
  Tensor& grad_slot(Var v) {
    Node& n = nodes_.at(v.id);
    if (n.grad.empty()) n.grad = Tensor::zeros(n.value.shape());
    return n.grad;
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var push(Tensor value, bool requires_grad, BackwardFn backward) {
    nodes_.push_back(Node{std::move(value), Tensor{}, requires_grad, std::move(backward)});
    return Var{this, nodes_.size() - 1};
  }

  void accumulate(std::size_t id, const Tensor& g) {
    Node& n = nodes_.at(id);
    if (!n.requires_grad) return;
    if (g.shape() != n.value.shape()) {
      throw DimensionError("gradient shape " + shape_str(g.shape()) + " does not match value shape " +
                           shape_str(n.value.shape()));
    }
    if (n.grad.empty()) {
      n.grad = g;
      return;
    }
    for (std::size_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
  }

  std::vector<Node> nodes_;
  bool swept_ = false;
};

inline const Tensor& Var::value() const { return graph->value(*this); }

namespace detail {

inline Graph& same_graph(Var a, Var b) {
  if (a.graph == nullptr || a.graph != b.graph) throw ConfigError("operands live on different graphs");
  return *a.graph;
}

inline void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + " expects a matrix, got " + shape_str(t.shape()));
  }
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

/// (m×k)·(k×n). Backward: dA = dC·Bᵀ, dB = Aᵀ·dC.
inline Var matmul(Var a, Var b) {
  Graph& g = detail::same_graph(a, b);
  const Tensor& av = g.value(a);
  const Tensor& bv = g.value(b);
  detail::require_matrix(av, "matmul");
  detail::require_matrix(bv, "matmul");
  if (av.cols() != bv.rows()) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_str(av.shape()) + " x " +
                         shape_str(bv.shape()));
  }
  Tensor out = Tensor::zeros({av.rows(), bv.cols()});
  out.mat().noalias() = av.mat() * bv.mat();
  return g.record(std::move(out), {a, b}, [a, b](Graph& gr, const Tensor& dc) {
    if (gr.needs_grad(a)) gr.grad_slot(a).mat().noalias() += dc.mat() * gr.value(b).mat().transpose();
    if (gr.needs_grad(b)) gr.grad_slot(b).mat().noalias() += gr.value(a).mat().transpose() * dc.mat();
  });
}

inline Var transpose(Var a) {
  Graph& g = *a.graph;
  const Tensor& av = g.value(a);
  detail::require_matrix(av, "transpose");
  Tensor out = Tensor::zeros({av.cols(), av.rows()});
  out.mat() = av.mat().transpose();
  return g.record(std::move(out), {a}, [a](Graph& gr, const Tensor& d) {
    gr.grad_slot(a).mat() += d.mat().transpose();
  });
}

// ---------------------------------------------------------------------------
// Elementwise

inline Var add(Var a, Var b) {
  Graph& g = detail::same_graph(a, b);
  detail::require_same_shape(g.value(a), g.value(b), "add");
  Tensor out = g.value(a);
  const Tensor& bv = g.value(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return g.record(std::move(out), {a, b}, [a, b](Graph& gr, const Tensor& d) {
    gr.accumulate(a, d);
    gr.accumulate(b, d);
  });
}

inline Var add_n(const std::vector<Var>& terms) {
  if (terms.empty()) throw DimensionError("add_n needs at least one term");
  Graph& g = *terms.front().graph;
  Tensor out = g.value(terms.front());
  for (std::size_t t = 1; t < terms.size(); ++t) {
    detail::same_graph(terms.front(), terms[t]);
    const Tensor& v = g.value(terms[t]);
    detail::require_same_shape(out, v, "add_n");
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += v[i];
  }
  return g.record(std::move(out), terms, [terms](Graph& gr, const Tensor& d) {
    for (const Var& t : terms) gr.accumulate(t, d);
  });
}

inline Var mul(Var a, Var b) {
  Graph& g = detail::same_graph(a, b);
  const Tensor& av = g.value(a);
  const Tensor& bv = g.value(b);
  detail::require_same_shape(av, bv, "mul");
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return g.record(std::move(out), {a, b}, [a, b](Graph& gr, const Tensor& d) {
    if (gr.needs_grad(a)) {
      Tensor& ga = gr.grad_slot(a);
      const Tensor& bv = gr.value(b);
      for (std::size_t i = 0; i < d.size(); ++i) ga[i] += d[i] * bv[i];
    }
    if (gr.needs_grad(b)) {
      Tensor& gb = gr.grad_slot(b);
      const Tensor& av = gr.value(a);
      for (std::size_t i = 0; i < d.size(); ++i) gb[i] += d[i] * av[i];
    }
  });
}

inline Var scale(Var a, double s) {
  Graph& g = *a.graph;
  Tensor out = g.value(a);
  for (double& v : out.values()) v *= s;
  return g.record(std::move(out), {a}, [a, s](Graph& gr, const Tensor& d) {
    Tensor& ga = gr.grad_slot(a);
    for (std::size_t i = 0; i < d.size(); ++i) ga[i] += s * d[i];
  });
}

/// Sum of all elements, as a one-element tensor.
inline Var sum(Var a) {
  Graph& g = *a.graph;
  double s = 0.0;
  for (double v : g.value(a).values()) s += v;
  return g.record(Tensor::filled({1}, s), {a}, [a](Graph& gr, const Tensor& d) {
    Tensor& ga = gr.grad_slot(a);
    for (double& v : ga.values()) v += d[0];
  });
}

/// x (T×d) plus a length-d row vector broadcast over rows.
inline Var add_bias(Var x, Var bias) {
  Graph& g = detail::same_graph(x, bias);
  const Tensor& xv = g.value(x);
  const Tensor& bv = g.value(bias);
  detail::require_matrix(xv, "add_bias");
  if (bv.size() != xv.cols()) {
    throw DimensionError("add_bias: bias " + shape_str(bv.shape()) + " vs input " + shape_str(xv.shape()));
  }
  Tensor out = xv;
  const std::size_t rows = xv.rows(), cols = xv.cols();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += bv[c];
  return g.record(std::move(out), {x, bias}, [x, bias, rows, cols](Graph& gr, const Tensor& d) {
    gr.accumulate(x, d);
    if (gr.needs_grad(bias)) {
      Tensor& gb = gr.grad_slot(bias);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) gb[c] += d[r * cols + c];
    }
  });
}

/// GELU, tanh approximation: 0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³))).
inline double gelu_scalar(double x) {
  const double c = std::sqrt(2.0 / std::numbers::pi);
  return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x)));
}

inline Var gelu(Var a) {
  Graph& g = *a.graph;
  Tensor out = g.value(a);
  for (double& v : out.values()) v = gelu_scalar(v);
  return g.record(std::move(out), {a}, [a](Graph& gr, const Tensor& d) {
    const double c = std::sqrt(2.0 / std::numbers::pi);
    const Tensor& xv = gr.value(a);
    Tensor& ga = gr.grad_slot(a);
    for (std::size_t i = 0; i < d.size(); ++i) {
      const double x = xv[i];
      const double th = std::tanh(c * (x + 0.044715 * x * x * x));
      const double dudx = c * (1.0 + 3.0 * 0.044715 * x * x);
      ga[i] += d[i] * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * dudx);
    }
  });
}

// ---------------------------------------------------------------------------
// Row-wise normalisations

/// Per-row softmax with max subtraction.
inline Tensor softmax_rows(const Tensor& x) {
  detail::require_matrix(x, "softmax_rows");
  Tensor out = Tensor::zeros(x.shape());
  const std::size_t rows = x.rows(), cols = x.cols();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = &x.data()[r * cols];
    double* o = &out.data()[r * cols];
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < cols; ++c) mx = std::max(mx, in[c]);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += (o[c] = std::exp(in[c] - mx));
    for (std::size_t c = 0; c < cols; ++c) o[c] /= z;
  }
  return out;
}

inline Var softmax_rows(Var x) {
  Graph& g = *x.graph;
  Tensor out = softmax_rows(g.value(x));
  const std::size_t rows = out.rows(), cols = out.cols();
  // The output node id is the next slot on the tape.
  const std::size_t yid = g.size();
  return g.record(std::move(out), {x}, [x, yid, rows, cols](Graph& gr, const Tensor& d) {
    const Tensor& yv = gr.value(Var{&gr, yid});
    Tensor& gx = gr.grad_slot(x);
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t off = r * cols;
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dot += d[off + c] * yv[off + c];
      for (std::size_t c = 0; c < cols; ++c) gx[off + c] += yv[off + c] * (d[off + c] - dot);
    }
  });
}

/// Row-wise layer normalisation with affine gamma/beta (length d).
inline Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5) {
  Graph& g = detail::same_graph(x, gamma);
  detail::same_graph(x, beta);
  const Tensor& xv = g.value(x);
  detail::require_matrix(xv, "layer_norm");
  const std::size_t rows = xv.rows(), d = xv.cols();
  if (d < 2) throw DimensionError("layer_norm needs at least 2 features");
  const Tensor& gv = g.value(gamma);
  const Tensor& bv = g.value(beta);
  if (gv.size() != d || bv.size() != d) throw DimensionError("layer_norm: gamma/beta length must equal row width");

  Tensor xhat = Tensor::zeros(xv.shape());
  std::vector<double> inv_std(rows);
  Tensor out = Tensor::zeros(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t off = r * d;
    double mean = 0.0;
    for (std::size_t c = 0; c < d; ++c) mean += xv[off + c];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) var += (xv[off + c] - mean) * (xv[off + c] - mean);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < d; ++c) {
      xhat[off + c] = (xv[off + c] - mean) * inv_std[r];
      out[off + c] = gv[c] * xhat[off + c] + bv[c];
    }
  }
  return g.record(std::move(out), {x, gamma, beta},
                  [x, gamma, beta, rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                      Graph& gr, const Tensor& dy) {
                    const Tensor& gv = gr.value(gamma);
                    if (gr.needs_grad(gamma)) {
                      Tensor& gg = gr.grad_slot(gamma);
                      for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t c = 0; c < d; ++c) gg[c] += dy[r * d + c] * xhat[r * d + c];
                    }
                    if (gr.needs_grad(beta)) {
                      Tensor& gb = gr.grad_slot(beta);
                      for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t c = 0; c < d; ++c) gb[c] += dy[r * d + c];
                    }
                    if (!gr.needs_grad(x)) return;
                    Tensor& gx = gr.grad_slot(x);
                    const double inv_d = 1.0 / static_cast<double>(d);
                    for (std::size_t r = 0; r < rows; ++r) {
                      const std::size_t off = r * d;
                      double mean_dxh = 0.0, mean_dxh_xh = 0.0;
                      for (std::size_t c = 0; c < d; ++c) {
                        const double dxh = dy[off + c] * gv[c];
                        mean_dxh += dxh;
                        mean_dxh_xh += dxh * xhat[off + c];
                      }
                      mean_dxh *= inv_d;
                      mean_dxh_xh *= inv_d;
                      for (std::size_t c = 0; c < d; ++c) {
                        const double dxh = dy[off + c] * gv[c];
                        gx[off + c] += inv_std[r] * (dxh - mean_dxh - xhat[off + c] * mean_dxh_xh);
                      }
                    }
                  });
}

// ---------------------------------------------------------------------------
// Shape plumbing

/// Columns [begin, end) of a matrix.
inline Var slice_cols(Var x, std::size_t begin, std::size_t end) {
  Graph& g = *x.graph;
  const Tensor& xv = g.value(x);
  detail::require_matrix(xv, "slice_cols");
  if (begin >= end || end > xv.cols()) throw DimensionError("slice_cols: bad column range");
  const std::size_t rows = xv.rows(), w = end - begin;
  Tensor out = Tensor::zeros({rows, w});
  out.mat() = xv.mat().middleCols(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(w));
  return g.record(std::move(out), {x}, [x, begin, w](Graph& gr, const Tensor& d) {
    gr.grad_slot(x).mat().middleCols(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(w)) += d.mat();
  });
}

/// Rows [begin, end) of a matrix.
inline Var slice_rows(Var x, std::size_t begin, std::size_t end) {
  Graph& g = *x.graph;
  const Tensor& xv = g.value(x);
  detail::require_matrix(xv, "slice_rows");
  if (begin >= end || end > xv.rows()) throw DimensionError("slice_rows: bad row range");
  const std::size_t cols = xv.cols();
  Tensor out = Tensor::zeros({end - begin, cols});
  std::copy(xv.data().begin() + static_cast<std::ptrdiff_t>(begin * cols),
            xv.data().begin() + static_cast<std::ptrdiff_t>(end * cols), out.data().begin());
  return g.record(std::move(out), {x}, [x, begin, cols](Graph& gr, const Tensor& d) {
    Tensor& gx = gr.grad_slot(x);
    for (std::size_t i = 0; i < d.size(); ++i) gx[begin * cols + i] += d[i];
  });
}

/// Horizontal concatenation of matrices with equal row counts.
inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols needs at least one part");
  Graph& g = *parts.front().graph;
  const std::size_t rows = g.value(parts.front()).rows();
  std::size_t total = 0;
  for (const Var& p : parts) {
    detail::same_graph(parts.front(), p);
    const Tensor& v = g.value(p);
    detail::require_matrix(v, "concat_cols");
    if (v.rows() != rows) throw DimensionError("concat_cols: row counts differ");
    total += v.cols();
  }
  Tensor out = Tensor::zeros({rows, total});
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const Tensor& v = g.value(p);
    out.mat().middleCols(static_cast<Eigen::Index>(offset), static_cast<Eigen::Index>(v.cols())) = v.mat();
    offset += v.cols();
  }
  return g.record(std::move(out), parts, [parts](Graph& gr, const Tensor& d) {
    std::size_t off = 0;
    for (const Var& p : parts) {
      const std::size_t w = gr.value(p).cols();
      if (gr.needs_grad(p)) {
        gr.grad_slot(p).mat() += d.mat().middleCols(static_cast<Eigen::Index>(off), static_cast<Eigen::Index>(w));
      }
      off += w;
    }
  });
}

/// Mean over rows: T×d → 1×d.
inline Var mean_rows(Var x) {
  Graph& g = *x.graph;
  const Tensor& xv = g.value(x);
  detail::require_matrix(xv, "mean_rows");
  const std::size_t rows = xv.rows(), cols = xv.cols();
  Tensor out = Tensor::zeros({1, cols});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c] += xv[r * cols + c];
  for (double& v : out.values()) v /= static_cast<double>(rows);
  return g.record(std::move(out), {x}, [x, rows, cols](Graph& gr, const Tensor& d) {
    Tensor& gx = gr.grad_slot(x);
    const double inv = 1.0 / static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += d[c] * inv;
  });
}

/// Rescales every column of v (d×k) to unit L2 norm and multiplies column j by
/// magnitude[j]. Refuses columns whose norm is ≤ 1e-12.
inline Var scale_unit_columns(Var v, Var magnitude) {
  Graph& g = detail::same_graph(v, magnitude);
  const Tensor& vv = g.value(v);
  const Tensor& mv = g.value(magnitude);
  detail::require_matrix(vv, "scale_unit_columns");
  const std::size_t rows = vv.rows(), cols = vv.cols();
  if (mv.size() != cols) throw DimensionError("scale_unit_columns: magnitude length must equal column count");
  std::vector<double> norms(cols, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) norms[c] += vv[r * cols + c] * vv[r * cols + c];
  for (std::size_t c = 0; c < cols; ++c) {
    norms[c] = std::sqrt(norms[c]);
    if (!(norms[c] > 1e-12)) {
      throw DegeneracyError("column " + std::to_string(c) + " has norm " + std::to_string(norms[c]) +
                            "; direction is undefined");
    }
  }
  Tensor out = Tensor::zeros(vv.shape());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = mv[c] * vv[r * cols + c] / norms[c];
  return g.record(std::move(out), {v, magnitude},
                  [v, magnitude, rows, cols, norms = std::move(norms)](Graph& gr, const Tensor& d) {
                    const Tensor& vv = gr.value(v);
                    const Tensor& mv = gr.value(magnitude);
                    // u = v/‖v‖; dm = dW·u; dv = (m/‖v‖)(dW − u(u·dW)).
                    std::vector<double> proj(cols, 0.0);
                    for (std::size_t r = 0; r < rows; ++r)
                      for (std::size_t c = 0; c < cols; ++c) proj[c] += d[r * cols + c] * vv[r * cols + c] / norms[c];
                    if (gr.needs_grad(magnitude)) {
                      Tensor& gm = gr.grad_slot(magnitude);
                      for (std::size_t c = 0; c < cols; ++c) gm[c] += proj[c];
                    }
                    if (gr.needs_grad(v)) {
                      Tensor& gv = gr.grad_slot(v);
                      for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t c = 0; c < cols; ++c) {
                          const double u = vv[r * cols + c] / norms[c];
                          gv[r * cols + c] += mv[c] / norms[c] * (d[r * cols + c] - u * proj[c]);
                        }
                    }
                  });
}

// ---------------------------------------------------------------------------
// Loss

/// −log softmax(logits)[label]; logits may be any shape holding C values.
inline Var cross_entropy(Var logits, std::size_t label) {
  Graph& g = *logits.graph;
  const Tensor& z = g.value(logits);
  const std::size_t n = z.size();
  if (label >= n) {
    throw IndexError("cross_entropy: label " + std::to_string(label) + " out of range for " + std::to_string(n) +
                     " classes");
  }
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : z.values()) mx = std::max(mx, v);
  double s = 0.0;
  for (double v : z.values()) s += std::exp(v - mx);
  const double lse = mx + std::log(s);
  const double loss = lse - z[label];
  return g.record(Tensor::filled({1}, loss), {logits}, [logits, label, lse, n](Graph& gr, const Tensor& d) {
    const Tensor& z = gr.value(logits);
    Tensor& gz = gr.grad_slot(logits);
    for (std::size_t i = 0; i < n; ++i) {
      gz[i] += d[0] * (std::exp(z[i] - lse) - (i == label ? 1.0 : 0.0));
    }
  });
}

// ---------------------------------------------------------------------------
// Finite-difference oracle

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Builds the scalar loss on a graph from parameter leaves.
using ScalarFn = std::function<Var(Graph&, std::span<const Var>)>;

/// Compares reverse-mode gradients with central differences, coordinate by
/// coordinate. Relative error is |g_ad − g_fd| / max(1e-8, |g_ad| + |g_fd|).
inline GradCheckResult grad_check(const ScalarFn& f, std::vector<Tensor> params, double eps = 1e-5) {
  auto evaluate = [&](bool with_grad, std::vector<Tensor>* grads) {
    Graph g;
    std::vector<Var> vars;
    vars.reserve(params.size());
    for (const Tensor& p : params) vars.push_back(with_grad ? g.parameter(p) : g.constant(p));
    Var out = f(g, vars);
    const double value = g.value(out)[0];
    if (with_grad) {
      g.backward(out);
      for (const Var& v : vars) grads->push_back(g.grad(v));
    }
    return value;
  };

  std::vector<Tensor> analytic;
  evaluate(true, &analytic);

  GradCheckResult result;
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::size_t i = 0; i < params[p].size(); ++i) {
      const double saved = params[p][i];
      params[p][i] = saved + eps;
      const double up = evaluate(false, nullptr);
      params[p][i] = saved - eps;
      const double down = evaluate(false, nullptr);
      params[p][i] = saved;
      const double fd = (up - down) / (2.0 * eps);
      const double ad = analytic[p][i];
      const double rel = std::abs(ad - fd) / std::max(1e-8, std::abs(ad) + std::abs(fd));
      if (rel > result.max_rel_error) result = {rel, p, i, ad, fd};
    }
  }
  return result;
}

}  // namespace adaptune::grad
