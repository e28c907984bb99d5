#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "hoi/common.hpp"
#include "hoi/rng.hpp"

namespace hoi::ad {

class Tensor;

struct TensorImpl {
  std::vector<int> shape;
  std::vector<double> values;
  std::vector<double> grad;  // sized lazily; persists on leaves until zero_grad
  bool requires_grad = false;
  std::vector<Tensor> parents;
  std::function<void(TensorImpl&)> backward_fn;
};

// Thread-local gradient mode. Ops record no graph while disabled, which is
// how frozen-model evaluation stays cheap.
bool grad_enabled();

struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// Dense row-major 64-bit tensor handle with reverse-mode autodiff.
// Value-semantic copy shares storage; gradients accumulate across uses and
// across backward calls until zero_grad().
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor full(std::vector<int> shape, double value, bool requires_grad = false);
  static Tensor from(std::vector<int> shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);
  static Tensor randn(std::vector<int> shape, Rng& rng, double sigma,
                      bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const std::vector<int>& shape() const { return impl_->shape; }
  int ndim() const { return static_cast<int>(impl_->shape.size()); }
  int dim(int i) const { return impl_->shape[static_cast<std::size_t>(i)]; }
  std::int64_t numel() const { return static_cast<std::int64_t>(impl_->values.size()); }

  std::vector<double>& values() { return impl_->values; }
  const std::vector<double>& values() const { return impl_->values; }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool rg);

  bool has_grad() const { return !impl_->grad.empty(); }
  const std::vector<double>& grad() const;
  void zero_grad();

  double item() const;
  double at(int i) const;
  double at(int i, int j) const;

  // Runs reverse-mode on the graph below this scalar; seeds d(this)/d(this)=1.
  void backward();

  Tensor detach() const;

  TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<TensorImpl>& impl_ptr() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<TensorImpl> impl_;

  friend Tensor make_node(std::vector<int> shape, std::vector<double> values,
                          std::vector<Tensor> parents,
                          std::function<void(TensorImpl&)> backward_fn);
};

Tensor make_node(std::vector<int> shape, std::vector<double> values,
                 std::vector<Tensor> parents,
                 std::function<void(TensorImpl&)> backward_fn);

// ---- shape ops ----
Tensor reshape(const Tensor& x, std::vector<int> shape);
Tensor transpose(const Tensor& x);  // 2-D
Tensor concat(const std::vector<Tensor>& xs, int axis);
std::vector<Tensor> split(const Tensor& x, int axis, const std::vector<int>& sizes);
Tensor slice_cols(const Tensor& x, int start, int len);          // 2-D
Tensor gather_rows(const Tensor& x, const std::vector<int>& rows);  // 2-D
Tensor repeat_interleave_rows(const Tensor& x, int times);       // 2-D, each row k times
Tensor tile_rows(const Tensor& x, int times);                    // 2-D, whole block k times

// ---- arithmetic ----
Tensor matmul(const Tensor& a, const Tensor& b);  // 2-D
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor divide(const Tensor& a, const Tensor& b);
Tensor minimum(const Tensor& a, const Tensor& b);
Tensor maximum(const Tensor& a, const Tensor& b);
Tensor add_rowvec(const Tensor& x, const Tensor& b);  // x[m,n] + b[n] per row
Tensor scale(const Tensor& x, double s);
Tensor add_scalar(const Tensor& x, double s);

// ---- nonlinearities ----
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor absolute(const Tensor& x);
Tensor softmax(const Tensor& x, int axis);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias);

// ---- reductions / losses ----
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// mean over rows of (logsumexp(row) - row[target])
Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& targets);
// mean over all elements of max(x,0) - x*t + log1p(exp(-|x|)); targets must be 0/1
Tensor bce_with_logits(const Tensor& logits, const std::vector<double>& targets);

double stable_sigmoid(double x);

}  // namespace hoi::ad
