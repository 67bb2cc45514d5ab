#pragma once

// Dense double-precision tensors with eager reverse-mode autodiff.
// Every numeric operation used by the reader, the retriever and the losses
// lives here. Graphs are built per forward pass and die with the tensors
// that own them; parameters are leaves and survive.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "raven/error.hpp"
#include "raven/parallel.hpp"
#include "raven/rng.hpp"

namespace raven {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

struct TensorImpl;

struct GraphNode {
  std::string op;
  std::vector<std::shared_ptr<TensorImpl>> parents;
  // Propagates `upstream` (gradient w.r.t. this node's output, same length as
  // the output) into per-parent gradient buffers supplied by the sweep.
  std::function<void(const std::vector<double>& upstream,
                     const std::vector<std::vector<double>*>& parent_grads)>
      backward;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::shared_ptr<GraphNode> node;  // null for leaves and detached tensors

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
};

// Gradient recording is on by default; NoGradGuard turns it off for pure
// inference paths (index refresh, generation, posterior scoring).
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(grad_mode()) { grad_mode() = false; }
  ~NoGradGuard() { grad_mode() = prev; }
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape) {
    return from_data(shape, std::vector<double>(shape_numel(shape), 0.0));
  }
  static Tensor full(const Shape& shape, double v) {
    return from_data(shape, std::vector<double>(shape_numel(shape), v));
  }
  static Tensor scalar(double v) { return from_data({}, {v}); }
  static Tensor from_data(const Shape& shape, std::vector<double> data) {
    require(shape_numel(shape) == static_cast<int64_t>(data.size()),
            ErrorKind::Dimension,
            "tensor data length " + std::to_string(data.size()) +
                " does not match shape " + shape_str(shape));
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = shape;
    impl->data = std::move(data);
    return Tensor(impl);
  }
  static Tensor randn(const Shape& shape, Rng& rng, double stddev = 1.0) {
    std::vector<double> d(shape_numel(shape));
    for (auto& x : d) x = normal(rng, 0.0, stddev);
    return from_data(shape, std::move(d));
  }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int64_t dim(size_t i) const { return impl_->shape[i]; }
  size_t rank() const { return impl_->shape.size(); }
  int64_t numel() const { return impl_->numel(); }

  const std::vector<double>& data() const { return impl_->data; }
  std::vector<double>& mutable_data() { return impl_->data; }
  const std::vector<double>& grad() const { return impl_->grad; }
  bool has_grad() const { return !impl_->grad.empty(); }

  double item() const {
    require(numel() == 1, ErrorKind::Contract, "item() on non-scalar tensor");
    return impl_->data[0];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool v) {
    impl_->requires_grad = v;
    return *this;
  }

  // Same values, no graph, never accumulates gradient.
  Tensor detach() const {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = impl_->shape;
    impl->data = impl_->data;
    return Tensor(impl);
  }

  void zero_grad() { impl_->grad.clear(); }

  std::shared_ptr<TensorImpl> impl() const { return impl_; }
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<TensorImpl> impl_;
};

namespace detail {

inline bool track(const std::vector<Tensor>& inputs) {
  if (!grad_mode()) return false;
  for (const auto& t : inputs)
    if (t.requires_grad() || t.impl()->node) return true;
  return false;
}

inline Tensor attach(Tensor out, const std::string& op,
                     const std::vector<Tensor>& inputs,
                     std::function<void(const std::vector<double>&,
                                        const std::vector<std::vector<double>*>&)>
                         backward) {
  if (!track(inputs)) return out;
  auto node = std::make_shared<GraphNode>();
  node->op = op;
  for (const auto& t : inputs) node->parents.push_back(t.impl());
  node->backward = std::move(backward);
  out.impl()->node = node;
  return out;
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

// ---- raw matmul kernels (row-major, accumulate into c) ----

inline void mm(const double* a, const double* b, double* c, int64_t m,
               int64_t k, int64_t n) {
  // C[m,n] += A[m,k] B[k,n]; ikj order so the inner loop is vectorizable
  for (int64_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (int64_t p = 0; p < k; ++p) {
      double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

inline void mm_at_b(const double* a, const double* b, double* c, int64_t m,
                    int64_t k, int64_t n) {
  // C[k,n] += A^T[k,m] B[m,n] where A is [m,k]
  for (int64_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* brow = b + i * n;
    for (int64_t p = 0; p < k; ++p) {
      double av = arow[p];
      if (av == 0.0) continue;
      double* crow = c + p * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

inline void mm_a_bt(const double* a, const double* b, double* c, int64_t m,
                    int64_t k, int64_t n) {
  // C[m,n] += A[m,k] B^T[k,n] where B is [n,k]; dot-product form
  for (int64_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (int64_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double acc = 0.0;
      for (int64_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] += acc;
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise and structural ops
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), ErrorKind::Dimension,
          "add: shape mismatch " + shape_str(a.shape()) + " vs " +
              shape_str(b.shape()));
  std::vector<double> out(a.numel());
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = a.data()[i] + b.data()[i];
  return detail::attach(
      Tensor::from_data(a.shape(), std::move(out)), "add", {a, b},
      [n = a.numel()](const std::vector<double>& up,
                      const std::vector<std::vector<double>*>& pg) {
        for (int64_t i = 0; i < n; ++i) {
          if (pg[0]) (*pg[0])[i] += up[i];
          if (pg[1]) (*pg[1])[i] += up[i];
        }
      });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), ErrorKind::Dimension,
          "sub: shape mismatch " + shape_str(a.shape()) + " vs " +
              shape_str(b.shape()));
  std::vector<double> out(a.numel());
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = a.data()[i] - b.data()[i];
  return detail::attach(
      Tensor::from_data(a.shape(), std::move(out)), "sub", {a, b},
      [n = a.numel()](const std::vector<double>& up,
                      const std::vector<std::vector<double>*>& pg) {
        for (int64_t i = 0; i < n; ++i) {
          if (pg[0]) (*pg[0])[i] += up[i];
          if (pg[1]) (*pg[1])[i] -= up[i];
        }
      });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), ErrorKind::Dimension,
          "mul: shape mismatch " + shape_str(a.shape()) + " vs " +
              shape_str(b.shape()));
  std::vector<double> out(a.numel());
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = a.data()[i] * b.data()[i];
  return detail::attach(
      Tensor::from_data(a.shape(), std::move(out)), "mul", {a, b},
      [ia = a.impl(), ib = b.impl(), n = a.numel()](
          const std::vector<double>& up,
          const std::vector<std::vector<double>*>& pg) {
        for (int64_t i = 0; i < n; ++i) {
          if (pg[0]) (*pg[0])[i] += up[i] * ib->data[i];
          if (pg[1]) (*pg[1])[i] += up[i] * ia->data[i];
        }
      });
}

inline Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.numel());
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = a.data()[i] * c;
  return detail::attach(
      Tensor::from_data(a.shape(), std::move(out)), "scale", {a},
      [c, n = a.numel()](const std::vector<double>& up,
                         const std::vector<std::vector<double>*>& pg) {
        if (!pg[0]) return;
        for (int64_t i = 0; i < n; ++i) (*pg[0])[i] += up[i] * c;
      });
}

// b broadcast over the last axis: x[.., d] + b[d]
inline Tensor add_bias(const Tensor& x, const Tensor& b) {
  require(b.rank() == 1 && x.rank() >= 1 &&
              x.shape().back() == b.dim(0),
          ErrorKind::Dimension,
          "add_bias: shape mismatch " + shape_str(x.shape()) + " vs " +
              shape_str(b.shape()));
  int64_t d = b.dim(0);
  int64_t rows = x.numel() / d;
  std::vector<double> out(x.numel());
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t j = 0; j < d; ++j)
      out[r * d + j] = x.data()[r * d + j] + b.data()[j];
  return detail::attach(
      Tensor::from_data(x.shape(), std::move(out)), "add_bias", {x, b},
      [rows, d](const std::vector<double>& up,
                const std::vector<std::vector<double>*>& pg) {
        for (int64_t r = 0; r < rows; ++r)
          for (int64_t j = 0; j < d; ++j) {
            if (pg[0]) (*pg[0])[r * d + j] += up[r * d + j];
            if (pg[1]) (*pg[1])[j] += up[r * d + j];
          }
      });
}

inline Tensor reshape(const Tensor& x, const Shape& shape) {
  require(shape_numel(shape) == x.numel(), ErrorKind::Dimension,
          "reshape: cannot view " + shape_str(x.shape()) + " as " +
              shape_str(shape));
  std::vector<double> out = x.data();
  return detail::attach(
      Tensor::from_data(shape, std::move(out)), "reshape", {x},
      [n = x.numel()](const std::vector<double>& up,
                      const std::vector<std::vector<double>*>& pg) {
        if (!pg[0]) return;
        for (int64_t i = 0; i < n; ++i) (*pg[0])[i] += up[i];
      });
}

inline Tensor concat_rows(const std::vector<Tensor>& parts) {
  require(!parts.empty(), ErrorKind::Contract, "concat_rows: empty list");
  int64_t d = parts[0].shape().back();
  int64_t total = 0;
  for (const auto& p : parts) {
    require(p.rank() == 2 && p.shape().back() == d, ErrorKind::Dimension,
            "concat_rows: incompatible part " + shape_str(p.shape()));
    total += p.dim(0);
  }
  std::vector<double> out;
  out.reserve(total * d);
  std::vector<int64_t> offsets;
  for (const auto& p : parts) {
    offsets.push_back(static_cast<int64_t>(out.size()));
    out.insert(out.end(), p.data().begin(), p.data().end());
  }
  return detail::attach(
      Tensor::from_data({total, d}, std::move(out)), "concat_rows", parts,
      [offsets, parts](const std::vector<double>& up,
                       const std::vector<std::vector<double>*>& pg) {
        for (size_t p = 0; p < parts.size(); ++p) {
          if (!pg[p]) continue;
          int64_t n = parts[p].numel();
          for (int64_t i = 0; i < n; ++i)
            (*pg[p])[i] += up[offsets[p] + i];
        }
      });
}

// [rows, d] -> [heads, rows, d/heads]
inline Tensor split_heads(const Tensor& x, int64_t heads) {
  require(x.rank() == 2 && x.dim(1) % heads == 0, ErrorKind::Dimension,
          "split_heads: " + shape_str(x.shape()) + " not divisible into " +
              std::to_string(heads) + " heads");
  int64_t rows = x.dim(0), d = x.dim(1), dh = d / heads;
  std::vector<double> out(x.numel());
  for (int64_t h = 0; h < heads; ++h)
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t j = 0; j < dh; ++j)
        out[(h * rows + r) * dh + j] = x.data()[r * d + h * dh + j];
  return detail::attach(
      Tensor::from_data({heads, rows, dh}, std::move(out)), "split_heads", {x},
      [heads, rows, d, dh](const std::vector<double>& up,
                           const std::vector<std::vector<double>*>& pg) {
        if (!pg[0]) return;
        for (int64_t h = 0; h < heads; ++h)
          for (int64_t r = 0; r < rows; ++r)
            for (int64_t j = 0; j < dh; ++j)
              (*pg[0])[r * d + h * dh + j] += up[(h * rows + r) * dh + j];
      });
}

// [heads, rows, dh] -> [rows, heads*dh]
inline Tensor merge_heads(const Tensor& x) {
  require(x.rank() == 3, ErrorKind::Dimension,
          "merge_heads: expected rank-3, got " + shape_str(x.shape()));
  int64_t heads = x.dim(0), rows = x.dim(1), dh = x.dim(2), d = heads * dh;
  std::vector<double> out(x.numel());
  for (int64_t h = 0; h < heads; ++h)
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t j = 0; j < dh; ++j)
        out[r * d + h * dh + j] = x.data()[(h * rows + r) * dh + j];
  return detail::attach(
      Tensor::from_data({rows, d}, std::move(out)), "merge_heads", {x},
      [heads, rows, d, dh](const std::vector<double>& up,
                           const std::vector<std::vector<double>*>& pg) {
        if (!pg[0]) return;
        for (int64_t h = 0; h < heads; ++h)
          for (int64_t r = 0; r < rows; ++r)
            for (int64_t j = 0; j < dh; ++j)
              (*pg[0])[(h * rows + r) * dh + j] += up[r * d + h * dh + j];
      });
}

// Swap the last two axes of a rank-2 or rank-3 tensor.
inline Tensor transpose_last2(const Tensor& x) {
  require(x.rank() == 2 || x.rank() == 3, ErrorKind::Dimension,
          "transpose_last2: expected rank 2 or 3, got " +
              shape_str(x.shape()));
  int64_t batch = x.rank() == 3 ? x.dim(0) : 1;
  int64_t r = x.dim(x.rank() - 2), c = x.dim(x.rank() - 1);
  std::vector<double> out(x.numel());
  for (int64_t b = 0; b < batch; ++b) {
    const double* src = x.data().data() + b * r * c;
    double* dst = out.data() + b * r * c;
    for (int64_t i = 0; i < r; ++i)
      for (int64_t j = 0; j < c; ++j) dst[j * r + i] = src[i * c + j];
  }
  Shape oshape = x.shape();
  std::swap(oshape[x.rank() - 2], oshape[x.rank() - 1]);
  return detail::attach(
      Tensor::from_data(oshape, std::move(out)), "transpose", {x},
      [batch, r, c](const std::vector<double>& up,
                    const std::vector<std::vector<double>*>& pg) {
        if (!pg[0]) return;
        for (int64_t b = 0; b < batch; ++b)
          for (int64_t i = 0; i < r; ++i)
            for (int64_t j = 0; j < c; ++j)
              (*pg[0])[b * r * c + i * c + j] += up[b * r * c + j * r + i];
      });
}

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

// a[.., i, k] @ b[.., k, j]. Batch dims must match exactly, or b may be an
// unbatched [k, j] matrix shared across a's batches. No other broadcasting.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.rank() >= 2 && b.rank() >= 2, ErrorKind::Dimension,
          "matmul: need rank >= 2, got " + shape_str(a.shape()) + " and " +
              shape_str(b.shape()));
  int64_t m = a.dim(a.rank() - 2), k = a.dim(a.rank() - 1);
  int64_t k2 = b.dim(b.rank() - 2), n = b.dim(b.rank() - 1);
  Shape abatch(a.shape().begin(), a.shape().end() - 2);
  Shape bbatch(b.shape().begin(), b.shape().end() - 2);
  bool shared_b = bbatch.empty();
  require(k == k2 && (shared_b || abatch == bbatch), ErrorKind::Dimension,
          "matmul: shape mismatch " + shape_str(a.shape()) + " x " +
              shape_str(b.shape()));
  int64_t batch = shape_numel(abatch);
  Shape oshape = abatch;
  oshape.push_back(m);
  oshape.push_back(n);

  std::vector<double> out(batch * m * n, 0.0);
  const double* ap = a.data().data();
  const double* bp = b.data().data();
  double* op = out.data();
  parallel_for(batch, [&](int64_t lo, int64_t hi) {
    for (int64_t bidx = lo; bidx < hi; ++bidx)
      detail::mm(ap + bidx * m * k, shared_b ? bp : bp + bidx * k * n,
                 op + bidx * m * n, m, k, n);
  });

  return detail::attach(
      Tensor::from_data(oshape, std::move(out)), "matmul", {a, b},
      [ia = a.impl(), ib = b.impl(), batch, m, k, n, shared_b](
          const std::vector<double>& up,
          const std::vector<std::vector<double>*>& pg) {
        const double* ap = ia->data.data();
        const double* bp = ib->data.data();
        for (int64_t bi = 0; bi < batch; ++bi) {
          const double* u = up.data() + bi * m * n;
          const double* bmat = shared_b ? bp : bp + bi * k * n;
          const double* amat = ap + bi * m * k;
          if (pg[0])  // dA = dC B^T
            detail::mm_a_bt(u, bmat, pg[0]->data() + bi * m * k, m, n, k);
          if (pg[1])  // dB = A^T dC
            detail::mm_at_b(amat, u,
                            pg[1]->data() + (shared_b ? 0 : bi * k * n), m, k,
                            n);
        }
      });
}

// ---------------------------------------------------------------------------
// activations, normalization, reductions
// ---------------------------------------------------------------------------

inline Tensor gelu(const Tensor& x) {
  // tanh approximation
  std::vector<double> out(x.numel());
  for (int64_t i = 0; i < x.numel(); ++i) {
    double v = x.data()[i];
    out[i] = 0.5 * v *
             (1.0 + std::tanh(detail::kGeluC * (v + detail::kGeluA * v * v * v)));
  }
  return detail::attach(
      Tensor::from_data(x.shape(), std::move(out)), "gelu", {x},
      [ix = x.impl()](const std::vector<double>& up,
                      const std::vector<std::vector<double>*>& pg) {
        if (!pg[0]) return;
        for (size_t i = 0; i < up.size(); ++i) {
          double v = ix->data[i];
          double inner = detail::kGeluC * (v + detail::kGeluA * v * v * v);
          double t = std::tanh(inner);
          double dinner = detail::kGeluC * (1.0 + 3.0 * detail::kGeluA * v * v);
          double d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * dinner;
          (*pg[0])[i] += up[i] * d;
        }
      });
}

// Numerically stable softmax over the last axis.
inline Tensor softmax_rows(const Tensor& x) {
  require(x.rank() >= 1, ErrorKind::Dimension, "softmax_rows: rank 0 input");
  int64_t d = x.shape().back();
  int64_t rows = x.numel() / d;
  std::vector<double> out(x.numel());
  const double* xp = x.data().data();
  for (int64_t i = 0; i < x.numel(); ++i)
    require(!std::isnan(xp[i]), ErrorKind::Numeric,
            "softmax_rows: NaN in input");
  parallel_for(rows, [&](int64_t lo, int64_t hi) {
    for (int64_t r = lo; r < hi; ++r) {
      const double* row = xp + r * d;
      double mx = row[0];
      for (int64_t j = 1; j < d; ++j) mx = std::max(mx, row[j]);
      double sum = 0.0;
      for (int64_t j = 0; j < d; ++j) {
        double e = std::exp(row[j] - mx);
        out[r * d + j] = e;
        sum += e;
      }
      double inv = 1.0 / sum;
      for (int64_t j = 0; j < d; ++j) out[r * d + j] *= inv;
    }
  });
  Tensor result = Tensor::from_data(x.shape(), out);
  // Capture a copy of the output values: capturing result.impl() would create
  // an impl -> node -> impl reference cycle and leak the graph.
  return detail::attach(
      result, "softmax_rows", {x},
      [yv = std::move(out), rows, d](
          const std::vector<double>& up,
          const std::vector<std::vector<double>*>& pg) {
        if (!pg[0]) return;
        // dx = y * (dy - sum(dy * y)) per row
        for (int64_t r = 0; r < rows; ++r) {
          const double* y = yv.data() + r * d;
          const double* u = up.data() + r * d;
          double dot = 0.0;
          for (int64_t j = 0; j < d; ++j) dot += u[j] * y[j];
          double* g = pg[0]->data() + r * d;
          for (int64_t j = 0; j < d; ++j) g[j] += y[j] * (u[j] - dot);
        }
      });
}

inline Tensor layer_norm(const Tensor& x, const Tensor& gain,
                         const Tensor& bias, double eps = 1e-6) {
  int64_t d = x.shape().back();
  require(gain.rank() == 1 && gain.dim(0) == d && bias.rank() == 1 &&
              bias.dim(0) == d,
          ErrorKind::Dimension,
          "layer_norm: gain/bias " + shape_str(gain.shape()) + "/" +
              shape_str(bias.shape()) + " vs feature dim " +
              std::to_string(d));
  int64_t rows = x.numel() / d;
  std::vector<double> out(x.numel());
  std::vector<double> xhat(x.numel());
  std::vector<double> inv_std(rows);
  for (int64_t r = 0; r < rows; ++r) {
    const double* row = x.data().data() + r * d;
    double mean = 0.0;
    for (int64_t j = 0; j < d; ++j) mean += row[j];
    mean /= d;
    double var = 0.0;
    for (int64_t j = 0; j < d; ++j) {
      double c = row[j] - mean;
      var += c * c;
    }
    var /= d;
    double inv = 1.0 / std::sqrt(var + eps);
    inv_std[r] = inv;
    for (int64_t j = 0; j < d; ++j) {
      double h = (row[j] - mean) * inv;
      xhat[r * d + j] = h;
      out[r * d + j] = h * gain.data()[j] + bias.data()[j];
    }
  }
  return detail::attach(
      Tensor::from_data(x.shape(), std::move(out)), "layer_norm",
      {x, gain, bias},
      [ig = gain.impl(), xhat = std::move(xhat), inv_std = std::move(inv_std),
       rows, d](const std::vector<double>& up,
                const std::vector<std::vector<double>*>& pg) {
        for (int64_t r = 0; r < rows; ++r) {
          const double* u = up.data() + r * d;
          const double* h = xhat.data() + r * d;
          if (pg[0]) {
            // dx = inv_std * (g*u - mean(g*u) - xhat * mean(g*u*xhat))
            double m1 = 0.0, m2 = 0.0;
            for (int64_t j = 0; j < d; ++j) {
              double gu = ig->data[j] * u[j];
              m1 += gu;
              m2 += gu * h[j];
            }
            m1 /= d;
            m2 /= d;
            double* g = pg[0]->data() + r * d;
            for (int64_t j = 0; j < d; ++j)
              g[j] += inv_std[r] * (ig->data[j] * u[j] - m1 - h[j] * m2);
          }
          if (pg[1])
            for (int64_t j = 0; j < d; ++j) (*pg[1])[j] += u[j] * h[j];
          if (pg[2])
            for (int64_t j = 0; j < d; ++j) (*pg[2])[j] += u[j];
        }
      });
}

// Rows of `table` selected by token id.
inline Tensor embedding(const Tensor& table, const std::vector<int>& ids) {
  require(table.rank() == 2, ErrorKind::Dimension,
          "embedding: table must be rank-2, got " + shape_str(table.shape()));
  int64_t v = table.dim(0), d = table.dim(1);
  int64_t t = static_cast<int64_t>(ids.size());
  std::vector<double> out(t * d);
  for (int64_t i = 0; i < t; ++i) {
    require(ids[i] >= 0 && ids[i] < v, ErrorKind::Contract,
            "embedding: id " + std::to_string(ids[i]) + " out of range [0," +
                std::to_string(v) + ")");
    std::copy_n(table.data().data() + ids[i] * d, d, out.data() + i * d);
  }
  return detail::attach(
      Tensor::from_data({t, d}, std::move(out)), "embedding", {table},
      [ids, d](const std::vector<double>& up,
               const std::vector<std::vector<double>*>& pg) {
        if (!pg[0]) return;
        for (size_t i = 0; i < ids.size(); ++i) {
          double* dst = pg[0]->data() + static_cast<int64_t>(ids[i]) * d;
          const double* src = up.data() + i * d;
          for (int64_t j = 0; j < d; ++j) dst[j] += src[j];
        }
      });
}

inline Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return detail::attach(
      Tensor::from_data({}, {s}), "sum", {x},
      [n = x.numel()](const std::vector<double>& up,
                      const std::vector<std::vector<double>*>& pg) {
        if (!pg[0]) return;
        for (int64_t i = 0; i < n; ++i) (*pg[0])[i] += up[0];
      });
}

inline Tensor mean(const Tensor& x) {
  require(x.numel() > 0, ErrorKind::Contract, "mean: empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

// Inverted dropout; identity when `training` is false or rate is 0.
inline Tensor dropout(const Tensor& x, double rate, Rng& rng, bool training) {
  if (!training || rate <= 0.0) return x;
  require(rate < 1.0, ErrorKind::Config, "dropout: rate must be < 1");
  double keep = 1.0 - rate;
  std::vector<double> mask(x.numel());
  for (auto& m : mask) m = (uniform_real(rng) < keep) ? 1.0 / keep : 0.0;
  std::vector<double> out(x.numel());
  for (int64_t i = 0; i < x.numel(); ++i) out[i] = x.data()[i] * mask[i];
  return detail::attach(
      Tensor::from_data(x.shape(), std::move(out)), "dropout", {x},
      [mask = std::move(mask)](const std::vector<double>& up,
                               const std::vector<std::vector<double>*>& pg) {
        if (!pg[0]) return;
        for (size_t i = 0; i < up.size(); ++i) (*pg[0])[i] += up[i] * mask[i];
      });
}

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

// Mean over non-ignored positions of -log softmax(logits)[target].
inline Tensor cross_entropy_nll(const Tensor& logits,
                                const std::vector<int>& targets,
                                int ignore_id = -1) {
  require(logits.rank() == 2, ErrorKind::Dimension,
          "cross_entropy_nll: logits must be [t, vocab], got " +
              shape_str(logits.shape()));
  int64_t t = logits.dim(0), v = logits.dim(1);
  require(static_cast<int64_t>(targets.size()) == t, ErrorKind::Contract,
          "cross_entropy_nll: " + std::to_string(targets.size()) +
              " targets for " + std::to_string(t) + " positions");
  std::vector<double> logprob(t * v);
  int64_t counted = 0;
  double loss = 0.0;
  for (int64_t i = 0; i < t; ++i) {
    int tgt = targets[i];
    if (tgt == ignore_id) continue;
    require(tgt >= 0 && tgt < v, ErrorKind::Contract,
            "cross_entropy_nll: target " + std::to_string(tgt) +
                " out of range [0," + std::to_string(v) + ")");
    const double* row = logits.data().data() + i * v;
    double mx = row[0];
    for (int64_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (int64_t j = 0; j < v; ++j) sum += std::exp(row[j] - mx);
    double lse = mx + std::log(sum);
    for (int64_t j = 0; j < v; ++j) logprob[i * v + j] = row[j] - lse;
    loss -= logprob[i * v + tgt];
    counted++;
  }
  require(counted > 0, ErrorKind::Numeric,
          "cross_entropy_nll: every position ignored, mean undefined");
  loss /= counted;
  return detail::attach(
      Tensor::from_data({}, {loss}), "cross_entropy_nll", {logits},
      [logprob = std::move(logprob), targets, ignore_id, t, v, counted](
          const std::vector<double>& up,
          const std::vector<std::vector<double>*>& pg) {
        if (!pg[0]) return;
        double s = up[0] / counted;
        for (int64_t i = 0; i < t; ++i) {
          if (targets[i] == ignore_id) continue;
          double* g = pg[0]->data() + i * v;
          const double* lp = logprob.data() + i * v;
          for (int64_t j = 0; j < v; ++j) g[j] += s * std::exp(lp[j]);
          g[targets[i]] -= s;
        }
      });
}

// KL(p || q) = sum p log(p/q), with 0 log 0 = 0.
inline Tensor kl_divergence(const Tensor& p, const Tensor& q) {
  require(p.shape() == q.shape() && p.rank() == 1, ErrorKind::Contract,
          "kl_divergence: need matching vectors, got " +
              shape_str(p.shape()) + " vs " + shape_str(q.shape()));
  double sp = 0.0, sq = 0.0;
  for (double v : p.data()) sp += v;
  for (double v : q.data()) sq += v;
  require(std::abs(sp - 1.0) < 1e-6 && std::abs(sq - 1.0) < 1e-6,
          ErrorKind::Numeric, "kl_divergence: inputs must sum to 1");
  double kl = 0.0;
  for (int64_t i = 0; i < p.numel(); ++i) {
    double pi = p.data()[i], qi = q.data()[i];
    require(pi >= 0.0 && qi >= 0.0, ErrorKind::Numeric,
            "kl_divergence: negative probability");
    if (pi > 0.0) {
      require(qi > 0.0, ErrorKind::Numeric,
              "kl_divergence: q has zero mass where p > 0");
      kl += pi * std::log(pi / qi);
    }
  }
  return detail::attach(
      Tensor::from_data({}, {kl}), "kl_divergence", {p, q},
      [ip = p.impl(), iq = q.impl()](
          const std::vector<double>& up,
          const std::vector<std::vector<double>*>& pg) {
        for (size_t i = 0; i < ip->data.size(); ++i) {
          double pi = ip->data[i], qi = iq->data[i];
          if (pg[0] && pi > 0.0) (*pg[0])[i] += up[0] * (std::log(pi / qi) + 1.0);
          if (pg[1] && pi > 0.0) (*pg[1])[i] -= up[0] * pi / qi;
        }
      });
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

// Reverse topological sweep from a scalar root. Gradients accumulate into
// .grad of every reachable requires-grad tensor; calling twice without a
// reset doubles them. The graph itself is left intact and is reclaimed when
// the owning tensors go out of scope.
inline void backward(const Tensor& root) {
  require(root.numel() == 1, ErrorKind::Contract,
          "backward: root must be scalar, got " + shape_str(root.shape()));
  // iterative DFS topological order over graph nodes
  std::vector<TensorImpl*> order;
  std::unordered_map<TensorImpl*, int> state;  // 0 new, 1 open, 2 done
  std::vector<TensorImpl*> stack{root.impl().get()};
  while (!stack.empty()) {
    TensorImpl* cur = stack.back();
    int& st = state[cur];
    if (st == 0) {
      st = 1;
      if (cur->node)
        for (auto& p : cur->node->parents)
          if (state[p.get()] == 0) stack.push_back(p.get());
    } else {
      stack.pop_back();
      if (st == 1) {
        st = 2;
        order.push_back(cur);
      }
    }
  }
  // sweep-local gradient buffers keep accumulation semantics clean across
  // repeated backward calls
  std::unordered_map<TensorImpl*, std::vector<double>> local;
  local[root.impl().get()] = {1.0};
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* cur = *it;
    auto found = local.find(cur);
    if (found == local.end()) continue;
    // Note: rehashing from local[...] inserts below invalidates iterators but
    // not element references, so `g` stays valid; erase by key at the end.
    std::vector<double>& g = found->second;
    if (cur->node) {
      std::vector<std::vector<double>*> parent_grads;
      parent_grads.reserve(cur->node->parents.size());
      for (auto& p : cur->node->parents) {
        bool wants = p->requires_grad || p->node;
        if (!wants) {
          parent_grads.push_back(nullptr);
          continue;
        }
        auto& buf = local[p.get()];
        if (buf.empty()) buf.assign(p->data.size(), 0.0);
        parent_grads.push_back(&buf);
      }
      cur->node->backward(g, parent_grads);
    }
    if (cur->requires_grad) {
      if (cur->grad.empty()) cur->grad.assign(cur->data.size(), 0.0);
      for (size_t i = 0; i < g.size(); ++i) cur->grad[i] += g[i];
    }
    local.erase(cur);  // free as we go
  }
}

// ---------------------------------------------------------------------------
// ParameterSet
// ---------------------------------------------------------------------------

// Named trainable tensors. Dot-separated paths, unique, all requiring grad.
class ParameterSet {
 public:
  Tensor& add(const std::string& name, Tensor t) {
    require(params_.find(name) == params_.end(), ErrorKind::Contract,
            "duplicate parameter name: " + name);
    t.set_requires_grad(true);
    auto [it, _] = params_.emplace(name, std::move(t));
    return it->second;
  }

  Tensor& get(const std::string& name) {
    auto it = params_.find(name);
    require(it != params_.end(), ErrorKind::Contract,
            "unknown parameter: " + name);
    return it->second;
  }
  const Tensor& get(const std::string& name) const {
    auto it = params_.find(name);
    require(it != params_.end(), ErrorKind::Contract,
            "unknown parameter: " + name);
    return it->second;
  }
  bool has(const std::string& name) const { return params_.count(name) > 0; }

  void zero_grad() {
    for (auto& [_, t] : params_) t.zero_grad();
  }

  size_t size() const { return params_.size(); }
  int64_t total_elements() const {
    int64_t n = 0;
    for (auto& [_, t] : params_) n += t.numel();
    return n;
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::map<std::string, Tensor> params_;  // ordered: deterministic iteration
};

}  // namespace raven
