#include "forge/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>
#include <unordered_map>

#include "forge/error.hpp"

namespace forge::diff {

namespace {

thread_local int no_grad_depth = 0;

int64_t shape_size(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << ")";
  return os.str();
}

[[noreturn]] void shape_fail(const char* op, const std::vector<int>& a,
                             const std::vector<int>& b) {
  raise(FORGE_ERR_SHAPE_MISMATCH, std::string(op) + ": shapes " +
                                      shape_str(a) + " and " + shape_str(b) +
                                      " do not conform");
}

void check_shape(bool ok, const char* op, const std::vector<int>& a,
                 const std::vector<int>& b) {
  if (!ok) shape_fail(op, a, b);
}

TensorPtr new_impl(std::vector<int> shape) {
  for (int d : shape) {
    if (d < 0)
      raise(FORGE_ERR_SHAPE_MISMATCH,
            "negative dimension in shape " + shape_str(shape));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->value.assign(static_cast<size_t>(shape_size(shape)), 0.0);
  impl->shape = std::move(shape);
  return impl;
}

// Attach graph edges to a freshly computed result. Skipped entirely when
// gradients are disabled or no parent tracks them.
Tensor wire(TensorPtr out, std::vector<TensorPtr> parents,
            std::function<void(TensorImpl&)> bw) {
  if (no_grad_depth == 0) {
    bool need = false;
    for (const auto& p : parents)
      if (p && p->requires_grad) need = true;
    if (need) {
      out->requires_grad = true;
      out->parents = std::move(parents);
      out->backward_fn = std::move(bw);
    }
  }
  return Tensor(std::move(out));
}

// C += A * B with A:(m,k) B:(k,n), row major.
void mm_acc(const double* A, const double* B, double* C, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* a_row = A + static_cast<size_t>(i) * k;
    double* c_row = C + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      double a = a_row[p];
      if (a == 0.0) continue;
      const double* b_row = B + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) c_row[j] += a * b_row[j];
    }
  }
}

// dA += dC * B^T with dC:(m,n) B:(k,n); row dot row, both contiguous.
void mm_acc_bt(const double* dC, const double* B, double* dA, int m, int k,
               int n) {
  for (int i = 0; i < m; ++i) {
    const double* dc_row = dC + static_cast<size_t>(i) * n;
    double* da_row = dA + static_cast<size_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const double* b_row = B + static_cast<size_t>(p) * n;
      double s = 0.0;
      for (int j = 0; j < n; ++j) s += dc_row[j] * b_row[j];
      da_row[p] += s;
    }
  }
}

// dB += A^T * dC with A:(m,k) dC:(m,n).
void mm_acc_at(const double* A, const double* dC, double* dB, int m, int k,
               int n) {
  for (int i = 0; i < m; ++i) {
    const double* a_row = A + static_cast<size_t>(i) * k;
    const double* dc_row = dC + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      double a = a_row[p];
      if (a == 0.0) continue;
      double* db_row = dB + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) db_row[j] += a * dc_row[j];
    }
  }
}

}  // namespace

NoGradGuard::NoGradGuard() { ++no_grad_depth; }
NoGradGuard::~NoGradGuard() { --no_grad_depth; }
bool grad_enabled() { return no_grad_depth == 0; }

void TensorImpl::ensure_grad() {
  if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
}

// ---- Tensor handle ----------------------------------------------------

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  auto impl = new_impl(std::move(shape));
  impl->requires_grad = requires_grad && grad_enabled();
  return Tensor(std::move(impl));
}

Tensor Tensor::full(std::vector<int> shape, double value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  std::fill(t.impl()->value.begin(), t.impl()->value.end(), value);
  return t;
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<double> data,
                         bool requires_grad) {
  if (shape_size(shape) != static_cast<int64_t>(data.size()))
    raise(FORGE_ERR_SHAPE_MISMATCH,
          "from_data: " + std::to_string(data.size()) +
              " values for shape " + shape_str(shape));
  auto impl = new_impl(std::move(shape));
  impl->value = std::move(data);
  impl->requires_grad = requires_grad && grad_enabled();
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar_value(double v, bool requires_grad) {
  return from_data({}, {v}, requires_grad);
}

Tensor Tensor::randn(std::vector<int> shape, Rng& rng, double stddev,
                     bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  for (double& x : t.impl()->value) x = rng.normal() * stddev;
  return t;
}

const std::vector<int>& Tensor::shape() const { return impl_->shape; }
int64_t Tensor::size() const { return impl_->size(); }
bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

std::span<double> Tensor::data() { return impl_->value; }
std::span<const double> Tensor::data() const { return impl_->value; }

std::span<double> Tensor::grad() const {
  impl_->ensure_grad();
  return impl_->grad;
}

void Tensor::zero_grad() {
  impl_->ensure_grad();
  std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

double Tensor::scalar() const {
  if (size() != 1)
    raise(FORGE_ERR_NON_SCALAR_LOSS,
          "scalar() on tensor of shape " + shape_str(impl_->shape));
  return impl_->value[0];
}

double Tensor::at(std::initializer_list<int> idx) const {
  const auto& shape = impl_->shape;
  if (idx.size() != shape.size())
    raise(FORGE_ERR_SHAPE_MISMATCH,
          "at(): rank " + std::to_string(idx.size()) + " index for shape " +
              shape_str(shape));
  int64_t flat = 0;
  int axis = 0;
  for (int i : idx) {
    if (i < 0 || i >= shape[axis])
      raise(FORGE_ERR_SHAPE_MISMATCH, "at(): index out of range");
    flat = flat * shape[axis] + i;
    ++axis;
  }
  return impl_->value[static_cast<size_t>(flat)];
}

// ---- matmul -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  int an = static_cast<int>(as.size());
  int bn = static_cast<int>(bs.size());
  check_shape((an == 2 || an == 3) && (bn == 2 || bn == 3) && !(an == 2 && bn == 3),
              "matmul", as, bs);
  int batch = an == 3 ? as[0] : 1;
  int m = as[an - 2], k = as[an - 1];
  int n = bs[bn - 1];
  check_shape(bs[bn - 2] == k, "matmul", as, bs);
  if (bn == 3) check_shape(as[0] == bs[0], "matmul", as, bs);

  std::vector<int> out_shape =
      an == 3 ? std::vector<int>{batch, m, n} : std::vector<int>{m, n};
  auto out = new_impl(out_shape);
  const size_t a_stride = static_cast<size_t>(m) * k;
  const size_t b_stride = bn == 3 ? static_cast<size_t>(k) * n : 0;
  const size_t c_stride = static_cast<size_t>(m) * n;
  for (int t = 0; t < batch; ++t) {
    mm_acc(a.impl()->value.data() + t * a_stride,
           b.impl()->value.data() + t * b_stride,
           out->value.data() + t * c_stride, m, k, n);
  }
  return wire(std::move(out), {a.ptr(), b.ptr()},
              [batch, m, k, n, a_stride, b_stride, c_stride](TensorImpl& node) {
                auto& pa = *node.parents[0];
                auto& pb = *node.parents[1];
                for (int t = 0; t < batch; ++t) {
                  const double* dC = node.grad.data() + t * c_stride;
                  if (pa.requires_grad) {
                    pa.ensure_grad();
                    mm_acc_bt(dC, pb.value.data() + t * b_stride,
                              pa.grad.data() + t * a_stride, m, k, n);
                  }
                  if (pb.requires_grad) {
                    pb.ensure_grad();
                    mm_acc_at(pa.value.data() + t * a_stride, dC,
                              pb.grad.data() + t * b_stride, m, k, n);
                  }
                }
              });
}

// ---- elementwise with trailing broadcast ------------------------------

namespace {

// Returns how many copies of b tile across a; 1 means same shape. b must be
// a suffix of a's shape.
int64_t broadcast_reps(const char* op, const Tensor& a, const Tensor& b) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  check_shape(bs.size() <= as.size(), op, as, bs);
  size_t off = as.size() - bs.size();
  for (size_t i = 0; i < bs.size(); ++i)
    check_shape(as[off + i] == bs[i], op, as, bs);
  return b.size() == 0 ? 0 : a.size() / b.size();
}

template <class Fwd, class Bwd>
Tensor binary_op(const char* op, const Tensor& a, const Tensor& b, Fwd fwd,
                 Bwd bwd) {
  int64_t reps = broadcast_reps(op, a, b);
  auto out = new_impl(a.shape());
  const int64_t bn = b.size();
  const double* av = a.impl()->value.data();
  const double* bv = b.impl()->value.data();
  double* cv = out->value.data();
  for (int64_t r = 0; r < reps; ++r)
    for (int64_t i = 0; i < bn; ++i) {
      int64_t j = r * bn + i;
      cv[j] = fwd(av[j], bv[i]);
    }
  return wire(std::move(out), {a.ptr(), b.ptr()},
              [reps, bn, bwd](TensorImpl& node) {
                auto& pa = *node.parents[0];
                auto& pb = *node.parents[1];
                if (pa.requires_grad) pa.ensure_grad();
                if (pb.requires_grad) pb.ensure_grad();
                for (int64_t r = 0; r < reps; ++r)
                  for (int64_t i = 0; i < bn; ++i) {
                    int64_t j = r * bn + i;
                    double da, db;
                    bwd(pa.value[j], pb.value[i], node.grad[j], da, db);
                    if (pa.requires_grad) pa.grad[j] += da;
                    if (pb.requires_grad) pb.grad[i] += db;
                  }
              });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double, double g, double& da, double& db) {
        da = g;
        db = g;
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double, double g, double& da, double& db) {
        da = g;
        db = -g;
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double x, double y, double g, double& da, double& db) {
        da = g * y;
        db = g * x;
      });
}

Tensor scale(const Tensor& a, double c) {
  auto out = new_impl(a.shape());
  const auto& av = a.impl()->value;
  for (size_t i = 0; i < av.size(); ++i) out->value[i] = av[i] * c;
  return wire(std::move(out), {a.ptr()}, [c](TensorImpl& node) {
    auto& p = *node.parents[0];
    p.ensure_grad();
    for (size_t i = 0; i < node.grad.size(); ++i) p.grad[i] += c * node.grad[i];
  });
}

Tensor add_scalar(const Tensor& a, double c) {
  auto out = new_impl(a.shape());
  const auto& av = a.impl()->value;
  for (size_t i = 0; i < av.size(); ++i) out->value[i] = av[i] + c;
  return wire(std::move(out), {a.ptr()}, [](TensorImpl& node) {
    auto& p = *node.parents[0];
    p.ensure_grad();
    for (size_t i = 0; i < node.grad.size(); ++i) p.grad[i] += node.grad[i];
  });
}

// ---- row-wise normalizations ------------------------------------------

namespace {
constexpr double kVarianceFloor = 1e-6;

void row_extent(const char* op, const Tensor& a, int64_t& rows, int64_t& cols) {
  if (a.shape().empty())
    raise(FORGE_ERR_SHAPE_MISMATCH,
          std::string(op) + ": scalar input has no last dimension");
  cols = a.shape().back();
  rows = cols == 0 ? 0 : a.size() / cols;
}
}  // namespace

Tensor layer_norm(const Tensor& a) {
  int64_t rows, cols;
  row_extent("layer_norm", a, rows, cols);
  auto out = new_impl(a.shape());
  std::vector<double> inv(static_cast<size_t>(rows));
  const double* x = a.impl()->value.data();
  double* y = out->value.data();
  for (int64_t r = 0; r < rows; ++r) {
    const double* xr = x + r * cols;
    double mean = 0.0;
    for (int64_t c = 0; c < cols; ++c) mean += xr[c];
    mean /= static_cast<double>(cols);
    double var = 0.0;
    for (int64_t c = 0; c < cols; ++c) {
      double d = xr[c] - mean;
      var += d * d;
    }
    var /= static_cast<double>(cols);
    double iv = 1.0 / std::sqrt(var + kVarianceFloor);
    inv[static_cast<size_t>(r)] = iv;
    for (int64_t c = 0; c < cols; ++c) y[r * cols + c] = (xr[c] - mean) * iv;
  }
  return wire(std::move(out), {a.ptr()},
              [rows, cols, inv = std::move(inv)](TensorImpl& node) {
                auto& p = *node.parents[0];
                p.ensure_grad();
                for (int64_t r = 0; r < rows; ++r) {
                  const double* yr = node.value.data() + r * cols;
                  const double* gr = node.grad.data() + r * cols;
                  double g_mean = 0.0, gy_mean = 0.0;
                  for (int64_t c = 0; c < cols; ++c) {
                    g_mean += gr[c];
                    gy_mean += gr[c] * yr[c];
                  }
                  g_mean /= static_cast<double>(cols);
                  gy_mean /= static_cast<double>(cols);
                  double iv = inv[static_cast<size_t>(r)];
                  for (int64_t c = 0; c < cols; ++c)
                    p.grad[r * cols + c] +=
                        iv * (gr[c] - g_mean - yr[c] * gy_mean);
                }
              });
}

Tensor softmax(const Tensor& a) {
  int64_t rows, cols;
  row_extent("softmax", a, rows, cols);
  auto out = new_impl(a.shape());
  const double* x = a.impl()->value.data();
  double* y = out->value.data();
  for (int64_t r = 0; r < rows; ++r) {
    const double* xr = x + r * cols;
    double mx = xr[0];
    for (int64_t c = 1; c < cols; ++c) mx = std::max(mx, xr[c]);
    double sum = 0.0;
    for (int64_t c = 0; c < cols; ++c) {
      double e = std::exp(xr[c] - mx);
      y[r * cols + c] = e;
      sum += e;
    }
    for (int64_t c = 0; c < cols; ++c) y[r * cols + c] /= sum;
  }
  return wire(std::move(out), {a.ptr()}, [rows, cols](TensorImpl& node) {
    auto& p = *node.parents[0];
    p.ensure_grad();
    for (int64_t r = 0; r < rows; ++r) {
      const double* yr = node.value.data() + r * cols;
      const double* gr = node.grad.data() + r * cols;
      double dot = 0.0;
      for (int64_t c = 0; c < cols; ++c) dot += gr[c] * yr[c];
      for (int64_t c = 0; c < cols; ++c)
        p.grad[r * cols + c] += yr[c] * (gr[c] - dot);
    }
  });
}

// ---- pointwise activations --------------------------------------------

namespace {
template <class Fwd, class Deriv>
Tensor unary_op(const Tensor& a, Fwd fwd, Deriv deriv) {
  auto out = new_impl(a.shape());
  const auto& av = a.impl()->value;
  for (size_t i = 0; i < av.size(); ++i) out->value[i] = fwd(av[i]);
  return wire(std::move(out), {a.ptr()}, [deriv](TensorImpl& node) {
    auto& p = *node.parents[0];
    p.ensure_grad();
    for (size_t i = 0; i < node.grad.size(); ++i)
      p.grad[i] += node.grad[i] * deriv(p.value[i], node.value[i]);
  });
}
}  // namespace

Tensor tanh_act(const Tensor& a) {
  return unary_op(
      a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor gelu(const Tensor& a) {
  constexpr double inv_sqrt2 = 0.7071067811865476;
  constexpr double inv_sqrt2pi = 0.3989422804014327;
  return unary_op(
      a,
      [=](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); },
      [=](double x, double) {
        double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
        return cdf + x * inv_sqrt2pi * std::exp(-0.5 * x * x);
      });
}

Tensor sigmoid(const Tensor& a) {
  return unary_op(
      a,
      [](double x) {
        return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                        : std::exp(x) / (1.0 + std::exp(x));
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& a) {
  return unary_op(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

// ---- structural ops ---------------------------------------------------

namespace {
void axis_extents(const std::vector<int>& shape, int axis, int64_t& outer,
                  int64_t& inner) {
  outer = 1;
  for (int i = 0; i < axis; ++i) outer *= shape[i];
  inner = 1;
  for (size_t i = static_cast<size_t>(axis) + 1; i < shape.size(); ++i)
    inner *= shape[i];
}
}  // namespace

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty())
    raise(FORGE_ERR_SHAPE_MISMATCH, "concat: no inputs");
  const auto& base = parts[0].shape();
  if (axis < 0 || axis >= static_cast<int>(base.size()))
    raise(FORGE_ERR_SHAPE_MISMATCH,
          "concat: axis " + std::to_string(axis) + " for shape " +
              shape_str(base));
  std::vector<int> out_shape = base;
  for (size_t i = 1; i < parts.size(); ++i) {
    const auto& s = parts[i].shape();
    bool ok = s.size() == base.size();
    if (ok)
      for (size_t d = 0; d < s.size(); ++d)
        if (d != static_cast<size_t>(axis) && s[d] != base[d]) ok = false;
    check_shape(ok, "concat", base, s);
    out_shape[axis] += s[axis];
  }
  int64_t outer, inner;
  axis_extents(base, axis, outer, inner);
  auto out = new_impl(out_shape);
  int64_t total_axis = out_shape[axis];
  std::vector<TensorPtr> parents;
  std::vector<int> lens;
  int64_t off = 0;
  for (const auto& part : parts) {
    int len = part.shape()[axis];
    const double* src = part.impl()->value.data();
    for (int64_t o = 0; o < outer; ++o) {
      double* dst =
          out->value.data() + (o * total_axis + off) * inner;
      std::memcpy(dst, src + o * len * inner,
                  static_cast<size_t>(len) * inner * sizeof(double));
    }
    off += len;
    parents.push_back(part.ptr());
    lens.push_back(len);
  }
  return wire(std::move(out), std::move(parents),
              [outer, inner, total_axis, lens](TensorImpl& node) {
                int64_t off = 0;
                for (size_t pi = 0; pi < node.parents.size(); ++pi) {
                  auto& p = *node.parents[pi];
                  int len = lens[pi];
                  if (p.requires_grad) {
                    p.ensure_grad();
                    for (int64_t o = 0; o < outer; ++o) {
                      const double* g =
                          node.grad.data() + (o * total_axis + off) * inner;
                      double* dst = p.grad.data() + o * len * inner;
                      for (int64_t i = 0; i < len * inner; ++i) dst[i] += g[i];
                    }
                  }
                  off += len;
                }
              });
}

Tensor slice(const Tensor& a, int axis, int start, int end) {
  const auto& shape = a.shape();
  if (axis < 0 || axis >= static_cast<int>(shape.size()) || start < 0 ||
      end > shape[axis] || start >= end)
    raise(FORGE_ERR_SHAPE_MISMATCH,
          "slice: [" + std::to_string(start) + "," + std::to_string(end) +
              ") on axis " + std::to_string(axis) + " of shape " +
              shape_str(shape));
  int64_t outer, inner;
  axis_extents(shape, axis, outer, inner);
  int64_t full = shape[axis];
  int len = end - start;
  std::vector<int> out_shape = shape;
  out_shape[axis] = len;
  auto out = new_impl(out_shape);
  for (int64_t o = 0; o < outer; ++o)
    std::memcpy(out->value.data() + o * len * inner,
                a.impl()->value.data() + (o * full + start) * inner,
                static_cast<size_t>(len) * inner * sizeof(double));
  return wire(std::move(out), {a.ptr()},
              [outer, inner, full, len, start](TensorImpl& node) {
                auto& p = *node.parents[0];
                p.ensure_grad();
                for (int64_t o = 0; o < outer; ++o) {
                  const double* g = node.grad.data() + o * len * inner;
                  double* dst = p.grad.data() + (o * full + start) * inner;
                  for (int64_t i = 0; i < len * inner; ++i) dst[i] += g[i];
                }
              });
}

Tensor reshape(const Tensor& a, std::vector<int> shape) {
  if (shape_size(shape) != a.size())
    raise(FORGE_ERR_SHAPE_MISMATCH, "reshape: " + shape_str(a.shape()) +
                                        " to " + shape_str(shape) +
                                        " changes element count");
  auto out = new_impl(std::move(shape));
  out->value = a.impl()->value;
  return wire(std::move(out), {a.ptr()}, [](TensorImpl& node) {
    auto& p = *node.parents[0];
    p.ensure_grad();
    for (size_t i = 0; i < node.grad.size(); ++i) p.grad[i] += node.grad[i];
  });
}

// ---- reductions -------------------------------------------------------

Tensor mean_all(const Tensor& a) {
  int64_t n = a.size();
  if (n == 0) raise(FORGE_ERR_SHAPE_MISMATCH, "mean_all: empty tensor");
  double s = 0.0;
  for (double v : a.impl()->value) s += v;
  auto out = new_impl({});
  out->value[0] = s / static_cast<double>(n);
  return wire(std::move(out), {a.ptr()}, [n](TensorImpl& node) {
    auto& p = *node.parents[0];
    p.ensure_grad();
    double g = node.grad[0] / static_cast<double>(n);
    for (size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += g;
  });
}

Tensor sum_all(const Tensor& a) {
  double s = 0.0;
  for (double v : a.impl()->value) s += v;
  auto out = new_impl({});
  out->value[0] = s;
  return wire(std::move(out), {a.ptr()}, [](TensorImpl& node) {
    auto& p = *node.parents[0];
    p.ensure_grad();
    double g = node.grad[0];
    for (size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += g;
  });
}

Tensor sum_of_squares(const Tensor& a) {
  double s = 0.0;
  for (double v : a.impl()->value) s += v * v;
  auto out = new_impl({});
  out->value[0] = s;
  return wire(std::move(out), {a.ptr()}, [](TensorImpl& node) {
    auto& p = *node.parents[0];
    p.ensure_grad();
    double g = node.grad[0];
    for (size_t i = 0; i < p.grad.size(); ++i)
      p.grad[i] += 2.0 * p.value[i] * g;
  });
}

// ---- gather / broadcast helpers ---------------------------------------

Tensor take_rows(const Tensor& table, const std::vector<int>& idx) {
  const auto& shape = table.shape();
  if (shape.size() != 2)
    raise(FORGE_ERR_SHAPE_MISMATCH,
          "take_rows: table must be 2d, got " + shape_str(shape));
  int rows = shape[0], d = shape[1];
  for (int i : idx)
    if (i < 0 || i >= rows)
      raise(FORGE_ERR_SHAPE_MISMATCH,
            "take_rows: index " + std::to_string(i) + " out of " +
                std::to_string(rows) + " rows");
  auto out = new_impl({static_cast<int>(idx.size()), d});
  for (size_t r = 0; r < idx.size(); ++r)
    std::memcpy(out->value.data() + r * d,
                table.impl()->value.data() + static_cast<size_t>(idx[r]) * d,
                static_cast<size_t>(d) * sizeof(double));
  return wire(std::move(out), {table.ptr()}, [idx, d](TensorImpl& node) {
    auto& p = *node.parents[0];
    p.ensure_grad();
    for (size_t r = 0; r < idx.size(); ++r) {
      const double* g = node.grad.data() + r * d;
      double* dst = p.grad.data() + static_cast<size_t>(idx[r]) * d;
      for (int c = 0; c < d; ++c) dst[c] += g[c];
    }
  });
}

Tensor expand_tokens(const Tensor& a, int t) {
  const auto& shape = a.shape();
  if (shape.size() != 2 || t <= 0)
    raise(FORGE_ERR_SHAPE_MISMATCH,
          "expand_tokens: need 2d input and positive count, got " +
              shape_str(shape) + " x " + std::to_string(t));
  int b = shape[0], d = shape[1];
  auto out = new_impl({b, t, d});
  for (int i = 0; i < b; ++i)
    for (int j = 0; j < t; ++j)
      std::memcpy(out->value.data() + (static_cast<size_t>(i) * t + j) * d,
                  a.impl()->value.data() + static_cast<size_t>(i) * d,
                  static_cast<size_t>(d) * sizeof(double));
  return wire(std::move(out), {a.ptr()}, [b, t, d](TensorImpl& node) {
    auto& p = *node.parents[0];
    p.ensure_grad();
    for (int i = 0; i < b; ++i)
      for (int j = 0; j < t; ++j) {
        const double* g =
            node.grad.data() + (static_cast<size_t>(i) * t + j) * d;
        double* dst = p.grad.data() + static_cast<size_t>(i) * d;
        for (int c = 0; c < d; ++c) dst[c] += g[c];
      }
  });
}

Tensor stopgrad(const Tensor& a) {
  auto out = new_impl(a.shape());
  out->value = a.impl()->value;
  return Tensor(std::move(out));
}

// ---- fused attention --------------------------------------------------

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v,
                 int heads) {
  const auto& qs = q.shape();
  const auto& ks = k.shape();
  const auto& vs = v.shape();
  check_shape(qs.size() == 3 && ks.size() == 3, "attention", qs, ks);
  check_shape(vs.size() == 3 && ks == vs, "attention", ks, vs);
  check_shape(qs[0] == ks[0] && qs[2] == ks[2], "attention", qs, ks);
  int B = qs[0], T = qs[1], S = ks[1], d = qs[2];
  if (heads <= 0 || d % heads != 0)
    raise(FORGE_ERR_SHAPE_MISMATCH,
          "attention: " + std::to_string(heads) + " heads for width " +
              std::to_string(d));
  int dh = d / heads;
  double alpha = 1.0 / std::sqrt(static_cast<double>(dh));

  auto out = new_impl(qs);
  // Softmaxed scores, kept for backward: [B][heads][T][S] flattened.
  std::vector<double> probs(static_cast<size_t>(B) * heads * T * S);
  const double* qv = q.impl()->value.data();
  const double* kv = k.impl()->value.data();
  const double* vv = v.impl()->value.data();
  double* ov = out->value.data();

  for (int b = 0; b < B; ++b) {
    for (int h = 0; h < heads; ++h) {
      int off = h * dh;
      double* p_bh =
          probs.data() + ((static_cast<size_t>(b) * heads + h) * T) * S;
      for (int t = 0; t < T; ++t) {
        const double* q_row = qv + (static_cast<size_t>(b) * T + t) * d + off;
        double* p_row = p_bh + static_cast<size_t>(t) * S;
        double mx = -1e300;
        for (int s = 0; s < S; ++s) {
          const double* k_row =
              kv + (static_cast<size_t>(b) * S + s) * d + off;
          double dot = 0.0;
          for (int c = 0; c < dh; ++c) dot += q_row[c] * k_row[c];
          p_row[s] = dot * alpha;
          mx = std::max(mx, p_row[s]);
        }
        double sum = 0.0;
        for (int s = 0; s < S; ++s) {
          p_row[s] = std::exp(p_row[s] - mx);
          sum += p_row[s];
        }
        double* o_row = ov + (static_cast<size_t>(b) * T + t) * d + off;
        for (int s = 0; s < S; ++s) {
          p_row[s] /= sum;
          const double* v_row =
              vv + (static_cast<size_t>(b) * S + s) * d + off;
          for (int c = 0; c < dh; ++c) o_row[c] += p_row[s] * v_row[c];
        }
      }
    }
  }

  return wire(
      std::move(out), {q.ptr(), k.ptr(), v.ptr()},
      [B, T, S, d, heads, dh, alpha, probs = std::move(probs)](
          TensorImpl& node) {
        auto& pq = *node.parents[0];
        auto& pk = *node.parents[1];
        auto& pv = *node.parents[2];
        pq.ensure_grad();
        pk.ensure_grad();
        pv.ensure_grad();
        std::vector<double> dp(static_cast<size_t>(S));
        for (int b = 0; b < B; ++b) {
          for (int h = 0; h < heads; ++h) {
            int off = h * dh;
            const double* p_bh =
                probs.data() + ((static_cast<size_t>(b) * heads + h) * T) * S;
            for (int t = 0; t < T; ++t) {
              const double* go =
                  node.grad.data() + (static_cast<size_t>(b) * T + t) * d + off;
              const double* p_row = p_bh + static_cast<size_t>(t) * S;
              // dV and dP
              double dot = 0.0;
              for (int s = 0; s < S; ++s) {
                const double* v_row =
                    pv.value.data() + (static_cast<size_t>(b) * S + s) * d +
                    off;
                double* gv =
                    pv.grad.data() + (static_cast<size_t>(b) * S + s) * d + off;
                double dps = 0.0;
                for (int c = 0; c < dh; ++c) {
                  gv[c] += p_row[s] * go[c];
                  dps += go[c] * v_row[c];
                }
                dp[static_cast<size_t>(s)] = dps;
                dot += dps * p_row[s];
              }
              // softmax backward then score gradient, scaled
              const double* q_row =
                  pq.value.data() + (static_cast<size_t>(b) * T + t) * d + off;
              double* gq =
                  pq.grad.data() + (static_cast<size_t>(b) * T + t) * d + off;
              for (int s = 0; s < S; ++s) {
                double ds =
                    alpha * p_row[s] * (dp[static_cast<size_t>(s)] - dot);
                const double* k_row =
                    pk.value.data() + (static_cast<size_t>(b) * S + s) * d +
                    off;
                double* gk =
                    pk.grad.data() + (static_cast<size_t>(b) * S + s) * d + off;
                for (int c = 0; c < dh; ++c) {
                  gq[c] += ds * k_row[c];
                  gk[c] += ds * q_row[c];
                }
              }
            }
          }
        }
      });
}

// ---- backward ---------------------------------------------------------

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1)
    raise(FORGE_ERR_NON_SCALAR_LOSS,
          loss.defined() ? "backward from tensor of shape " +
                               shape_str(loss.shape())
                         : "backward from empty tensor");
  TensorImpl* root = loss.impl();
  root->ensure_grad();
  root->grad[0] += 1.0;
  if (!root->requires_grad) return;

  // Iterative postorder; reverse gives a valid execution order.
  std::vector<TensorImpl*> order;
  std::unordered_map<TensorImpl*, char> state;
  std::vector<std::pair<TensorImpl*, size_t>> stack;
  stack.emplace_back(root, 0);
  state[root] = 1;
  while (!stack.empty()) {
    auto& top = stack.back();
    TensorImpl* node = top.first;
    if (top.second < node->parents.size()) {
      TensorImpl* p = node->parents[top.second++].get();
      if (p->requires_grad && state[p] == 0) {
        state[p] = 1;
        stack.emplace_back(p, 0);
      }
    } else {
      state[node] = 2;
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* node = *it;
    if (node->backward_fn) {
      node->ensure_grad();
      node->backward_fn(*node);
    }
  }
}

void zero_grads(ParamStore& params) {
  for (auto& [name, p] : params) p.zero_grad();
}

double grad_check(const std::function<Tensor()>& f, ParamStore& params,
                  double eps) {
  zero_grads(params);
  Tensor loss = f();
  backward(loss);
  std::map<std::string, std::vector<double>> analytic;
  for (auto& [name, p] : params) {
    auto g = p.grad();
    analytic[name].assign(g.begin(), g.end());
  }
  double max_rel = 0.0;
  for (auto& [name, p] : params) {
    auto vals = p.data();
    for (size_t i = 0; i < vals.size(); ++i) {
      double orig = vals[i];
      double fp, fm;
      {
        NoGradGuard guard;
        vals[i] = orig + eps;
        fp = f().scalar();
        vals[i] = orig - eps;
        fm = f().scalar();
        vals[i] = orig;
      }
      double fd = (fp - fm) / (2.0 * eps);
      if (!std::isfinite(fd))
        raise(FORGE_ERR_NON_FINITE,
              "grad_check: non-finite difference at " + name + "[" +
                  std::to_string(i) + "]");
      double rel =
          std::abs(analytic[name][i] - fd) / std::max(1.0, std::abs(fd));
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

}  // namespace forge::diff
