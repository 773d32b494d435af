#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "mgmo/rng.hpp"

namespace mgmo {

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);
int64_t shape_numel(const Shape& s);

namespace detail {
struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
};
}  // namespace detail

// Dense row-major tensor of 64-bit floats. Copying a Tensor copies the
// handle, not the storage; ops produce fresh tensors.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor constant(Shape shape, double value);
  static Tensor from_values(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int64_t numel() const { return static_cast<int64_t>(impl_->data.size()); }
  bool requires_grad() const { return impl_ && impl_->requires_grad; }

  std::vector<double>& data() { return impl_->data; }
  const std::vector<double>& data() const { return impl_->data; }

  // Gradient buffer, allocated (zeroed) on first access.
  std::vector<double>& grad();
  const std::vector<double>& grad() const;
  void zero_grad();

  double item() const;  // requires numel() == 1

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }
  detail::TensorImpl* impl() const { return impl_.get(); }

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
  friend Tensor make_tensor(Shape, bool);
};

Tensor make_tensor(Shape shape, bool requires_grad);

// Ordered record of differentiable operations for one thread. Nodes are
// appended in execution order; reverse traversal therefore visits every node
// after all of its consumers.
class Tape {
 public:
  static Tape& current();  // thread-local instance

  void record(std::function<void()> backward_fn);
  void reset();
  size_t size() const { return nodes_.size(); }

  bool grad_enabled() const { return grad_enabled_; }

  void run_backward_from_end();

 private:
  std::vector<std::function<void()>> nodes_;
  bool grad_enabled_ = true;
  friend struct NoGradGuard;
};

// Disables tape recording in scope; values are still computed.
struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  bool previous;
};

// ---- forward ops ------------------------------------------------------
//
// Broadcasting rule: binary elementwise ops accept equal shapes, or a
// right operand whose shape is a suffix of the left's (the right operand is
// expanded over the leading dimensions). Anything else is a hard error that
// names both shapes.

Tensor matmul(const Tensor& a, const Tensor& b);  // [m,k] x [k,n]
Tensor transpose(const Tensor& a);                // rank 2
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor neg(const Tensor& a);
Tensor softmax_lastdim(const Tensor& a);      // rank 1 or 2
Tensor log_softmax_lastdim(const Tensor& a);  // rank 1 or 2
Tensor log(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor sum(const Tensor& a);   // -> scalar
Tensor mean(const Tensor& a);  // -> scalar
Tensor sum_lastdim(const Tensor& a);   // [r,c] -> [r]
Tensor mean_rows(const Tensor& a);     // [r,c] -> [c]
Tensor reshape(const Tensor& a, Shape shape);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);
Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids);
// rows [r,c] + indices (size r) -> [r]; rank-1 input takes one index.
Tensor gather_lastdim(const Tensor& rows, const std::vector<int>& indices);
Tensor slice_cols(const Tensor& a, int offset, int len);  // rank 2
Tensor concat_cols(const std::vector<Tensor>& parts);     // rank 2
Tensor stack_scalars(const std::vector<Tensor>& parts);   // k scalars -> [k]
// Inverted-dropout mask applied as a constant (no gradient through the mask).
Tensor dropout(const Tensor& a, double p, Rng& rng);

// ---- backward ---------------------------------------------------------

// Seeds d(loss)/d(loss) = 1 and runs the tape backwards. Gradients
// accumulate into each tensor's grad buffer; leaves keep theirs until
// zero_grad. Hard error if loss is not a scalar.
void backward(const Tensor& scalar_loss);

// Compares the analytic gradient of f (a freshly built scalar graph per
// call) against central finite differences over every element of params.
// Returns max over elements of |analytic - fd| / (|fd| + denom_eps).
double finite_difference_check(const std::function<Tensor()>& f,
                               const std::vector<Tensor>& params, double h,
                               double denom_eps = 1e-6);

}  // namespace mgmo
