#include "hoi/tensor.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

namespace hoi::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

thread_local bool g_grad_enabled = true;

std::int64_t numel_of(const std::vector<int>& shape) {
  std::int64_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw DimensionError("non-positive dimension in shape");
    n *= d;
  }
  return n;
}

std::string shape_str(const std::vector<int>& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
  }
}

void require_2d(const Tensor& x, const char* op) {
  if (x.ndim() != 2) throw DimensionError(std::string(op) + ": expected 2-D tensor");
}

// Ensures a grad buffer exists (zero-filled on first touch this graph walk
// for interior nodes; leaves keep accumulated values).
void ensure_grad(TensorImpl& t) {
  if (t.grad.size() != t.values.size()) t.grad.assign(t.values.size(), 0.0);
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  const auto n = numel_of(shape);
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->values.assign(static_cast<std::size_t>(n), 0.0);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::full(std::vector<int> shape, double value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  std::fill(t.values().begin(), t.values().end(), value);
  return t;
}

Tensor Tensor::from(std::vector<int> shape, std::vector<double> values, bool requires_grad) {
  const auto n = numel_of(shape);
  if (static_cast<std::int64_t>(values.size()) != n) {
    throw DimensionError("value count " + std::to_string(values.size()) +
                         " does not match shape " + shape_str(shape));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->values = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return from({1}, {v}, requires_grad);
}

Tensor Tensor::randn(std::vector<int> shape, Rng& rng, double sigma, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  for (double& v : t.values()) v = rng.normal(0.0, sigma);
  return t;
}

void Tensor::set_requires_grad(bool rg) {
  if (!impl_->parents.empty()) {
    throw DomainError("set_requires_grad only valid on leaf tensors");
  }
  impl_->requires_grad = rg;
}

const std::vector<double>& Tensor::grad() const {
  if (impl_->grad.empty()) throw DomainError("tensor has no gradient buffer");
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (impl_->requires_grad) {
    impl_->grad.assign(impl_->values.size(), 0.0);
  }
}

double Tensor::item() const {
  if (numel() != 1) throw DimensionError("item() requires a 1-element tensor");
  return impl_->values[0];
}

double Tensor::at(int i) const { return impl_->values[static_cast<std::size_t>(i)]; }

double Tensor::at(int i, int j) const {
  return impl_->values[static_cast<std::size_t>(i) * static_cast<std::size_t>(impl_->shape[1]) +
                       static_cast<std::size_t>(j)];
}

Tensor Tensor::detach() const {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = impl_->shape;
  impl->values = impl_->values;
  impl->requires_grad = false;
  return Tensor(std::move(impl));
}

void Tensor::backward() {
  if (numel() != 1) throw DimensionError("backward() requires a scalar root");
  if (!impl_->requires_grad) {
    throw DomainError("backward() on a tensor that does not require grad");
  }

  // topo order over the graph (DFS, iterative)
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> seen;
  std::vector<std::pair<TensorImpl*, std::size_t>> stack;
  stack.emplace_back(impl_.get(), 0);
  seen.insert(impl_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      TensorImpl* p = node->parents[next].impl();
      ++next;
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (TensorImpl* node : order) ensure_grad(*node);
  impl_->grad[0] += 1.0;

  // order is post-order (children before parents), so reverse = root first
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward_fn) (*it)->backward_fn(**it);
  }
}

Tensor make_node(std::vector<int> shape, std::vector<double> values,
                 std::vector<Tensor> parents, std::function<void(TensorImpl&)> backward_fn) {
  bool rg = false;
  if (g_grad_enabled) {
    for (const auto& p : parents) rg = rg || p.requires_grad();
  }
  Tensor t = Tensor::from(std::move(shape), std::move(values), rg);
  if (rg) {
    t.impl()->parents = std::move(parents);
    t.impl()->backward_fn = std::move(backward_fn);
  }
  return t;
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

Tensor reshape(const Tensor& x, std::vector<int> shape) {
  if (numel_of(shape) != x.numel()) {
    throw DimensionError("reshape: element count mismatch " + shape_str(x.shape()) +
                         " -> " + shape_str(shape));
  }
  Tensor xp = x;
  return make_node(std::move(shape), x.values(), {x}, [xp](TensorImpl& self) {
    TensorImpl* p = xp.impl();
    if (!p->requires_grad) return;
    ensure_grad(*p);
    for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
  });
}

Tensor transpose(const Tensor& x) {
  require_2d(x, "transpose");
  const int m = x.dim(0), n = x.dim(1);
  std::vector<double> out(static_cast<std::size_t>(x.numel()));
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out[static_cast<std::size_t>(j) * m + i] = x.values()[static_cast<std::size_t>(i) * n + j];
  Tensor xp = x;
  return make_node({n, m}, std::move(out), {x}, [xp, m, n](TensorImpl& self) {
    TensorImpl* p = xp.impl();
    if (!p->requires_grad) return;
    ensure_grad(*p);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j)
        p->grad[static_cast<std::size_t>(i) * n + j] +=
            self.grad[static_cast<std::size_t>(j) * m + i];
  });
}

Tensor concat(const std::vector<Tensor>& xs, int axis) {
  if (xs.empty()) throw DimensionError("concat: no inputs");
  const int nd = xs[0].ndim();
  if (axis < 0 || axis >= nd) throw DimensionError("concat: bad axis");
  for (const auto& t : xs) {
    if (t.ndim() != nd) throw DimensionError("concat: rank mismatch");
    for (int d = 0; d < nd; ++d) {
      if (d != axis && t.dim(d) != xs[0].dim(d)) {
        throw DimensionError("concat: shape mismatch " + shape_str(t.shape()) + " vs " +
                             shape_str(xs[0].shape()) + " on non-concat axis");
      }
    }
  }

  std::vector<int> out_shape = xs[0].shape();
  int total = 0;
  for (const auto& t : xs) total += t.dim(axis);
  out_shape[static_cast<std::size_t>(axis)] = total;

  // collapse to (outer, ax, inner) view
  std::int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= xs[0].dim(d);
  for (int d = axis + 1; d < nd; ++d) inner *= xs[0].dim(d);

  std::vector<double> out(static_cast<std::size_t>(outer) * total * inner);
  std::int64_t off = 0;
  for (const auto& t : xs) {
    const std::int64_t ax = t.dim(axis);
    for (std::int64_t o = 0; o < outer; ++o) {
      const double* src = t.values().data() + o * ax * inner;
      double* dst = out.data() + (o * total + off) * inner;
      std::copy(src, src + ax * inner, dst);
    }
    off += ax;
  }

  std::vector<Tensor> parents = xs;
  return make_node(std::move(out_shape), std::move(out), xs,
                   [parents, axis, outer, inner, total](TensorImpl& self) {
                     std::int64_t off2 = 0;
                     for (const auto& t : parents) {
                       TensorImpl* p = t.impl();
                       const std::int64_t ax = p->shape[static_cast<std::size_t>(axis)];
                       if (p->requires_grad) {
                         ensure_grad(*p);
                         for (std::int64_t o = 0; o < outer; ++o) {
                           const double* g = self.grad.data() + (o * total + off2) * inner;
                           double* dst = p->grad.data() + o * ax * inner;
                           for (std::int64_t i = 0; i < ax * inner; ++i) dst[i] += g[i];
                         }
                       }
                       off2 += ax;
                     }
                   });
}

std::vector<Tensor> split(const Tensor& x, int axis, const std::vector<int>& sizes) {
  const int nd = x.ndim();
  if (axis < 0 || axis >= nd) throw DimensionError("split: bad axis");
  int total = 0;
  for (int s : sizes) total += s;
  if (total != x.dim(axis)) throw DimensionError("split: sizes do not cover axis");

  std::int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= x.dim(d);
  for (int d = axis + 1; d < nd; ++d) inner *= x.dim(d);

  std::vector<Tensor> out;
  int off = 0;
  for (int s : sizes) {
    std::vector<int> shp = x.shape();
    shp[static_cast<std::size_t>(axis)] = s;
    std::vector<double> vals(static_cast<std::size_t>(outer) * s * inner);
    for (std::int64_t o = 0; o < outer; ++o) {
      const double* src = x.values().data() + (o * total + off) * inner;
      std::copy(src, src + static_cast<std::int64_t>(s) * inner, vals.data() + o * s * inner);
    }
    Tensor xp = x;
    const int off_c = off, s_c = s;
    out.push_back(make_node(std::move(shp), std::move(vals), {x},
                            [xp, axis, outer, inner, total, off_c, s_c](TensorImpl& self) {
                              TensorImpl* p = xp.impl();
                              if (!p->requires_grad) return;
                              ensure_grad(*p);
                              for (std::int64_t o = 0; o < outer; ++o) {
                                const double* g = self.grad.data() + o * s_c * inner;
                                double* dst = p->grad.data() + (o * total + off_c) * inner;
                                for (std::int64_t i = 0; i < static_cast<std::int64_t>(s_c) * inner; ++i)
                                  dst[i] += g[i];
                              }
                            }));
    off += s;
  }
  return out;
}

Tensor slice_cols(const Tensor& x, int start, int len) {
  require_2d(x, "slice_cols");
  const int m = x.dim(0), n = x.dim(1);
  if (start < 0 || len <= 0 || start + len > n) throw DimensionError("slice_cols: bad range");
  std::vector<double> out(static_cast<std::size_t>(m) * len);
  for (int i = 0; i < m; ++i)
    std::copy(x.values().data() + static_cast<std::size_t>(i) * n + start,
              x.values().data() + static_cast<std::size_t>(i) * n + start + len,
              out.data() + static_cast<std::size_t>(i) * len);
  Tensor xp = x;
  return make_node({m, len}, std::move(out), {x}, [xp, m, n, start, len](TensorImpl& self) {
    TensorImpl* p = xp.impl();
    if (!p->requires_grad) return;
    ensure_grad(*p);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < len; ++j)
        p->grad[static_cast<std::size_t>(i) * n + start + j] +=
            self.grad[static_cast<std::size_t>(i) * len + j];
  });
}

Tensor gather_rows(const Tensor& x, const std::vector<int>& rows) {
  require_2d(x, "gather_rows");
  const int m = x.dim(0), n = x.dim(1);
  for (int r : rows) {
    if (r < 0 || r >= m) throw DimensionError("gather_rows: row index out of range");
  }
  std::vector<double> out(rows.size() * static_cast<std::size_t>(n));
  for (std::size_t k = 0; k < rows.size(); ++k)
    std::copy(x.values().data() + static_cast<std::size_t>(rows[k]) * n,
              x.values().data() + static_cast<std::size_t>(rows[k]) * n + n,
              out.data() + k * static_cast<std::size_t>(n));
  Tensor xp = x;
  std::vector<int> rows_c = rows;
  return make_node({static_cast<int>(rows.size()), n}, std::move(out), {x},
                   [xp, rows_c, n](TensorImpl& self) {
                     TensorImpl* p = xp.impl();
                     if (!p->requires_grad) return;
                     ensure_grad(*p);
                     for (std::size_t k = 0; k < rows_c.size(); ++k)
                       for (int j = 0; j < n; ++j)
                         p->grad[static_cast<std::size_t>(rows_c[k]) * n + j] +=
                             self.grad[k * static_cast<std::size_t>(n) + j];
                   });
}

Tensor repeat_interleave_rows(const Tensor& x, int times) {
  require_2d(x, "repeat_interleave_rows");
  if (times <= 0) throw DimensionError("repeat_interleave_rows: times must be positive");
  const int m = x.dim(0), n = x.dim(1);
  std::vector<double> out(static_cast<std::size_t>(m) * times * n);
  for (int i = 0; i < m; ++i)
    for (int t = 0; t < times; ++t)
      std::copy(x.values().data() + static_cast<std::size_t>(i) * n,
                x.values().data() + static_cast<std::size_t>(i) * n + n,
                out.data() + (static_cast<std::size_t>(i) * times + t) * n);
  Tensor xp = x;
  return make_node({m * times, n}, std::move(out), {x}, [xp, m, n, times](TensorImpl& self) {
    TensorImpl* p = xp.impl();
    if (!p->requires_grad) return;
    ensure_grad(*p);
    for (int i = 0; i < m; ++i)
      for (int t = 0; t < times; ++t)
        for (int j = 0; j < n; ++j)
          p->grad[static_cast<std::size_t>(i) * n + j] +=
              self.grad[(static_cast<std::size_t>(i) * times + t) * n + j];
  });
}

Tensor tile_rows(const Tensor& x, int times) {
  require_2d(x, "tile_rows");
  if (times <= 0) throw DimensionError("tile_rows: times must be positive");
  const int m = x.dim(0), n = x.dim(1);
  std::vector<double> out(static_cast<std::size_t>(m) * times * n);
  for (int t = 0; t < times; ++t)
    std::copy(x.values().begin(), x.values().end(),
              out.begin() + static_cast<std::size_t>(t) * m * n);
  Tensor xp = x;
  return make_node({m * times, n}, std::move(out), {x}, [xp, m, n, times](TensorImpl& self) {
    TensorImpl* p = xp.impl();
    if (!p->requires_grad) return;
    ensure_grad(*p);
    const std::size_t block = static_cast<std::size_t>(m) * n;
    for (int t = 0; t < times; ++t)
      for (std::size_t i = 0; i < block; ++i)
        p->grad[i] += self.grad[static_cast<std::size_t>(t) * block + i];
  });
}

// ---------------------------------------------------------------------------
// arithmetic
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  if (a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: inner dimensions differ " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(static_cast<std::size_t>(m) * n);
  {
    CMapMat A(a.values().data(), m, k);
    CMapMat B(b.values().data(), k, n);
    MapMat C(out.data(), m, n);
    C.noalias() = A * B;
  }
  Tensor ap = a, bp = b;
  return make_node({m, n}, std::move(out), {a, b}, [ap, bp, m, k, n](TensorImpl& self) {
    CMapMat G(self.grad.data(), m, n);
    TensorImpl* pa = ap.impl();
    TensorImpl* pb = bp.impl();
    if (pa->requires_grad) {
      ensure_grad(*pa);
      CMapMat B(pb->values.data(), k, n);
      MapMat GA(pa->grad.data(), m, k);
      GA.noalias() += G * B.transpose();
    }
    if (pb->requires_grad) {
      ensure_grad(*pb);
      CMapMat A(pa->values.data(), m, k);
      MapMat GB(pb->grad.data(), k, n);
      GB.noalias() += A.transpose() * G;
    }
  });
}

namespace {

template <class Fwd, class Bwd>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* name, Fwd fwd, Bwd bwd) {
  require_same_shape(a, b, name);
  const std::size_t n = a.values().size();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(a.values()[i], b.values()[i]);
  Tensor ap = a, bp = b;
  return make_node(a.shape(), std::move(out), {a, b}, [ap, bp, bwd](TensorImpl& self) {
    TensorImpl* pa = ap.impl();
    TensorImpl* pb = bp.impl();
    const bool ga = pa->requires_grad, gb = pb->requires_grad;
    if (ga) ensure_grad(*pa);
    if (gb) ensure_grad(*pb);
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const auto [da, db] = bwd(pa->values[i], pb->values[i], self.values[i]);
      if (ga) pa->grad[i] += self.grad[i] * da;
      if (gb) pb->grad[i] += self.grad[i] * db;
    }
  });
}

struct Pair {
  double a, b;
};

template <class Fwd, class Bwd>
Tensor unary_op(const Tensor& x, Fwd fwd, Bwd bwd) {
  const std::size_t n = x.values().size();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(x.values()[i]);
  Tensor xp = x;
  return make_node(x.shape(), std::move(out), {x}, [xp, bwd](TensorImpl& self) {
    TensorImpl* p = xp.impl();
    if (!p->requires_grad) return;
    ensure_grad(*p);
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      p->grad[i] += self.grad[i] * bwd(p->values[i], self.values[i]);
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double, double) { return Pair{1.0, 1.0}; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double, double) { return Pair{1.0, -1.0}; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double x, double y, double) { return Pair{y, x}; });
}

Tensor divide(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "divide", [](double x, double y) { return x / y; },
      [](double x, double y, double) { return Pair{1.0 / y, -x / (y * y)}; });
}

// Ties route the full gradient to the first operand.
Tensor minimum(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "minimum", [](double x, double y) { return x <= y ? x : y; },
      [](double x, double y, double) {
        return x <= y ? Pair{1.0, 0.0} : Pair{0.0, 1.0};
      });
}

Tensor maximum(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "maximum", [](double x, double y) { return x >= y ? x : y; },
      [](double x, double y, double) {
        return x >= y ? Pair{1.0, 0.0} : Pair{0.0, 1.0};
      });
}

Tensor add_rowvec(const Tensor& x, const Tensor& b) {
  require_2d(x, "add_rowvec");
  if (b.ndim() != 1 || b.dim(0) != x.dim(1)) {
    throw DimensionError("add_rowvec: vector length " + shape_str(b.shape()) +
                         " does not match columns of " + shape_str(x.shape()));
  }
  const int m = x.dim(0), n = x.dim(1);
  std::vector<double> out(x.values().size());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out[static_cast<std::size_t>(i) * n + j] =
          x.values()[static_cast<std::size_t>(i) * n + j] + b.values()[static_cast<std::size_t>(j)];
  Tensor xp = x, bpv = b;
  return make_node({m, n}, std::move(out), {x, b}, [xp, bpv, m, n](TensorImpl& self) {
    TensorImpl* px = xp.impl();
    TensorImpl* pb = bpv.impl();
    if (px->requires_grad) {
      ensure_grad(*px);
      for (std::size_t i = 0; i < self.grad.size(); ++i) px->grad[i] += self.grad[i];
    }
    if (pb->requires_grad) {
      ensure_grad(*pb);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          pb->grad[static_cast<std::size_t>(j)] += self.grad[static_cast<std::size_t>(i) * n + j];
    }
  });
}

Tensor scale(const Tensor& x, double s) {
  return unary_op(
      x, [s](double v) { return v * s; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& x, double s) {
  return unary_op(
      x, [s](double v) { return v + s; }, [](double, double) { return 1.0; });
}

// ---------------------------------------------------------------------------
// nonlinearities
// ---------------------------------------------------------------------------

Tensor relu(const Tensor& x) {
  return unary_op(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

double stable_sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Tensor sigmoid(const Tensor& x) {
  return unary_op(
      x, [](double v) { return stable_sigmoid(v); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor absolute(const Tensor& x) {
  return unary_op(
      x, [](double v) { return std::fabs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor softmax(const Tensor& x, int axis) {
  if (x.ndim() == 1) {
    if (axis != 0 && axis != -1) throw DimensionError("softmax: bad axis for 1-D input");
  } else if (x.ndim() == 2) {
    if (axis == -1) axis = 1;
    if (axis != 0 && axis != 1) throw DimensionError("softmax: bad axis");
  } else {
    throw DimensionError("softmax: only 1-D/2-D supported");
  }

  const int rows = x.ndim() == 1 ? 1 : (axis == 1 ? x.dim(0) : x.dim(1));
  const int n = x.ndim() == 1 ? x.dim(0) : (axis == 1 ? x.dim(1) : x.dim(0));
  // strides over the softmax axis
  const std::int64_t row_stride = (x.ndim() == 1 || axis == 1) ? n : 1;
  const std::int64_t el_stride = (x.ndim() == 1 || axis == 1) ? 1 : x.dim(1);

  std::vector<double> out(x.values().size());
  for (int r = 0; r < rows; ++r) {
    const double* src = x.values().data() + r * row_stride;
    double* dst = out.data() + r * row_stride;
    double mx = src[0];
    for (int i = 1; i < n; ++i) mx = std::max(mx, src[i * el_stride]);
    double z = 0.0;
    for (int i = 0; i < n; ++i) {
      const double e = std::exp(src[i * el_stride] - mx);
      dst[i * el_stride] = e;
      z += e;
    }
    for (int i = 0; i < n; ++i) dst[i * el_stride] /= z;
  }

  Tensor xp = x;
  return make_node(x.shape(), std::move(out), {x},
                   [xp, rows, n, row_stride, el_stride](TensorImpl& self) {
                     TensorImpl* p = xp.impl();
                     if (!p->requires_grad) return;
                     ensure_grad(*p);
                     for (int r = 0; r < rows; ++r) {
                       const double* y = self.values.data() + r * row_stride;
                       const double* g = self.grad.data() + r * row_stride;
                       double dot = 0.0;
                       for (int i = 0; i < n; ++i) dot += g[i * el_stride] * y[i * el_stride];
                       double* dx = p->grad.data() + r * row_stride;
                       for (int i = 0; i < n; ++i)
                         dx[i * el_stride] += y[i * el_stride] * (g[i * el_stride] - dot);
                     }
                   });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  constexpr double kEps = 1e-5;
  if (x.ndim() < 1) throw DimensionError("layer_norm: empty shape");
  const int d = x.dim(x.ndim() - 1);
  if (gain.ndim() != 1 || gain.dim(0) != d || bias.ndim() != 1 || bias.dim(0) != d) {
    throw DimensionError("layer_norm: gain/bias must be 1-D of the feature width");
  }
  const std::int64_t rows = x.numel() / d;

  std::vector<double> out(x.values().size());
  std::vector<double> inv_sigma(static_cast<std::size_t>(rows));
  std::vector<double> xhat(x.values().size());
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* src = x.values().data() + r * d;
    double mu = 0.0;
    for (int i = 0; i < d; ++i) mu += src[i];
    mu /= d;
    double var = 0.0;
    for (int i = 0; i < d; ++i) var += (src[i] - mu) * (src[i] - mu);
    var /= d;
    const double is = 1.0 / std::sqrt(var + kEps);
    inv_sigma[static_cast<std::size_t>(r)] = is;
    for (int i = 0; i < d; ++i) {
      const double h = (src[i] - mu) * is;
      xhat[static_cast<std::size_t>(r * d + i)] = h;
      out[static_cast<std::size_t>(r * d + i)] =
          h * gain.values()[static_cast<std::size_t>(i)] + bias.values()[static_cast<std::size_t>(i)];
    }
  }

  Tensor xp = x, gp = gain, bp = bias;
  return make_node(
      x.shape(), std::move(out), {x, gain, bias},
      [xp, gp, bp, rows, d, inv_sigma = std::move(inv_sigma), xhat = std::move(xhat)](TensorImpl& self) {
        TensorImpl* px = xp.impl();
        TensorImpl* pg = gp.impl();
        TensorImpl* pb = bp.impl();
        if (pg->requires_grad) ensure_grad(*pg);
        if (pb->requires_grad) ensure_grad(*pb);
        if (px->requires_grad) ensure_grad(*px);
        for (std::int64_t r = 0; r < rows; ++r) {
          const double* g = self.grad.data() + r * d;
          const double* h = xhat.data() + r * d;
          if (pg->requires_grad || pb->requires_grad) {
            for (int i = 0; i < d; ++i) {
              if (pg->requires_grad) pg->grad[static_cast<std::size_t>(i)] += g[i] * h[i];
              if (pb->requires_grad) pb->grad[static_cast<std::size_t>(i)] += g[i];
            }
          }
          if (px->requires_grad) {
            double mean_gg = 0.0, mean_ggh = 0.0;
            for (int i = 0; i < d; ++i) {
              const double gg = g[i] * pg->values[static_cast<std::size_t>(i)];
              mean_gg += gg;
              mean_ggh += gg * h[i];
            }
            mean_gg /= d;
            mean_ggh /= d;
            const double is = inv_sigma[static_cast<std::size_t>(r)];
            double* dx = px->grad.data() + r * d;
            for (int i = 0; i < d; ++i) {
              const double gg = g[i] * pg->values[static_cast<std::size_t>(i)];
              dx[i] += (gg - mean_gg - h[i] * mean_ggh) * is;
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// reductions / losses
// ---------------------------------------------------------------------------

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  Tensor xp = x;
  return make_node({1}, {s}, {x}, [xp](TensorImpl& self) {
    TensorImpl* p = xp.impl();
    if (!p->requires_grad) return;
    ensure_grad(*p);
    for (double& g : p->grad) g += self.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  const double inv = 1.0 / static_cast<double>(x.numel());
  Tensor xp = x;
  return make_node({1}, {s * inv}, {x}, [xp, inv](TensorImpl& self) {
    TensorImpl* p = xp.impl();
    if (!p->requires_grad) return;
    ensure_grad(*p);
    for (double& g : p->grad) g += self.grad[0] * inv;
  });
}

Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& targets) {
  require_2d(logits, "softmax_cross_entropy");
  const int m = logits.dim(0), c = logits.dim(1);
  if (static_cast<int>(targets.size()) != m) {
    throw DimensionError("softmax_cross_entropy: one target per row required");
  }
  for (int t : targets) {
    if (t < 0 || t >= c) throw DomainError("softmax_cross_entropy: target class out of range");
  }
  double total = 0.0;
  for (int i = 0; i < m; ++i) {
    const double* row = logits.values().data() + static_cast<std::size_t>(i) * c;
    double mx = row[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (int j = 0; j < c; ++j) z += std::exp(row[j] - mx);
    total += mx + std::log(z) - row[targets[static_cast<std::size_t>(i)]];
  }
  const double inv_m = 1.0 / m;
  Tensor lp = logits;
  std::vector<int> tg = targets;
  return make_node({1}, {total * inv_m}, {logits}, [lp, tg, m, c, inv_m](TensorImpl& self) {
    TensorImpl* p = lp.impl();
    if (!p->requires_grad) return;
    ensure_grad(*p);
    const double g0 = self.grad[0] * inv_m;
    for (int i = 0; i < m; ++i) {
      const double* row = p->values.data() + static_cast<std::size_t>(i) * c;
      double mx = row[0];
      for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
      double z = 0.0;
      for (int j = 0; j < c; ++j) z += std::exp(row[j] - mx);
      double* dst = p->grad.data() + static_cast<std::size_t>(i) * c;
      for (int j = 0; j < c; ++j) {
        const double soft = std::exp(row[j] - mx) / z;
        dst[j] += g0 * (soft - (j == tg[static_cast<std::size_t>(i)] ? 1.0 : 0.0));
      }
    }
  });
}

Tensor bce_with_logits(const Tensor& logits, const std::vector<double>& targets) {
  if (static_cast<std::size_t>(logits.numel()) != targets.size()) {
    throw DimensionError("bce_with_logits: target count mismatch");
  }
  for (double t : targets) {
    if (t != 0.0 && t != 1.0) throw DomainError("bce_with_logits: targets must be 0 or 1");
  }
  const std::size_t n = targets.size();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = logits.values()[i];
    total += std::max(x, 0.0) - x * targets[i] + std::log1p(std::exp(-std::fabs(x)));
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  Tensor lp = logits;
  std::vector<double> tg = targets;
  return make_node({1}, {total * inv_n}, {logits}, [lp, tg, inv_n](TensorImpl& self) {
    TensorImpl* p = lp.impl();
    if (!p->requires_grad) return;
    ensure_grad(*p);
    const double g0 = self.grad[0] * inv_n;
    for (std::size_t i = 0; i < tg.size(); ++i) {
      p->grad[i] += g0 * (stable_sigmoid(p->values[i]) - tg[i]);
    }
  });
}

}  // namespace hoi::ad
