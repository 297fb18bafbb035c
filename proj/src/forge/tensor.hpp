#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "forge/rng.hpp"

namespace forge::diff {

class TensorImpl;
using TensorPtr = std::shared_ptr<TensorImpl>;

// Dense row-major f64 array plus its place in the compute graph. Operations
// record backward closures onto the result node whenever any operand requires
// gradients; backward() replays them in reverse topological order.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor full(std::vector<int> shape, double value,
                     bool requires_grad = false);
  static Tensor from_data(std::vector<int> shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar_value(double v, bool requires_grad = false);
  static Tensor randn(std::vector<int> shape, Rng& rng, double stddev,
                      bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const std::vector<int>& shape() const;
  int64_t size() const;
  bool requires_grad() const;

  std::span<double> data();
  std::span<const double> data() const;
  // Gradient buffer; zero-filled until a backward pass reaches this tensor.
  std::span<double> grad() const;
  void zero_grad();

  double scalar() const;
  double at(std::initializer_list<int> idx) const;

  TensorImpl* impl() const { return impl_.get(); }
  TensorPtr ptr() const { return impl_; }

  explicit Tensor(TensorPtr impl) : impl_(std::move(impl)) {}

 private:
  TensorPtr impl_;
};

class TensorImpl {
 public:
  std::vector<int> shape;
  std::vector<double> value;
  std::vector<double> grad;  // sized on first use
  bool requires_grad = false;

  std::vector<TensorPtr> parents;
  std::function<void(TensorImpl&)> backward_fn;

  int64_t size() const { return static_cast<int64_t>(value.size()); }
  void ensure_grad();
};

// While a guard is alive no graph is recorded; forwards run value-only.
// Used by finite-difference probes and inference.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};
bool grad_enabled();

// ---- primitives -------------------------------------------------------
//
// Shapes must conform exactly; the only implicit broadcast is a trailing
// operand over leading batch dimensions (bias patterns). Anything else is a
// ShapeMismatch error naming the primitive and both shapes.

// a:(...,m,k) x b:(k,n), or batched a:(B,m,k) x b:(B,k,n)
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);

// Normalizes the last dimension; variance floor 1e-6 under the square root
// keeps constant inputs finite (and maps them to zero).
Tensor layer_norm(const Tensor& a);
Tensor softmax(const Tensor& a);
Tensor tanh_act(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);

Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& a, int axis, int start, int end);
Tensor reshape(const Tensor& a, std::vector<int> shape);

Tensor mean_all(const Tensor& a);
Tensor sum_all(const Tensor& a);
Tensor sum_of_squares(const Tensor& a);

// table:(N,d) gathered by row index -> (k,d); scatter-add on backward
Tensor take_rows(const Tensor& table, const std::vector<int>& idx);
// (B,d) -> (B,T,d), each row repeated T times; backward sums over T
Tensor expand_tokens(const Tensor& a, int t);
// Identity forward, zero gradient backward.
Tensor stopgrad(const Tensor& a);

// Multi-head scaled dot-product attention over already-projected q:(B,T,d),
// k,v:(B,S,d). Fused into one primitive to keep the graph small.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads);

// ---- graph ------------------------------------------------------------

// Reverse-mode accumulation from a scalar loss. Repeated calls without
// zero_grad accumulate. Deterministic: same graph, same order, same bits.
void backward(const Tensor& loss);

using ParamStore = std::map<std::string, Tensor>;

void zero_grads(ParamStore& params);

// Max over parameter entries of |analytic - central difference| /
// max(1, |central difference|). f must be deterministic.
double grad_check(const std::function<Tensor()>& f, ParamStore& params,
                  double eps);

}  // namespace forge::diff
