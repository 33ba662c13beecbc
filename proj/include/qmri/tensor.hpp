#pragma once

// Dense row-major tensors with a minimal reverse-mode autodiff engine.
//
// A Tensor is a cheap handle to immutable storage. Operations on tensors that
// require gradients record a node in a dynamic graph; Tensor::backward() walks
// that graph once in reverse topological order and accumulates gradients
// into the requires_grad leaves. Complex data is carried as a trailing axis of
// size 2 (real, imag).

#include <cstdint>
#include <initializer_list>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace qmri {

enum class DType { f32, f64 };

using Shape = std::vector<std::int64_t>;

std::int64_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);
std::string dtype_name(DType dtype);

namespace detail {
struct TensorImpl;
struct Access;
}  // namespace detail

class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, DType dtype = DType::f64);

  static Tensor zeros(Shape shape, DType dtype = DType::f64);
  static Tensor full(Shape shape, double value, DType dtype = DType::f64);
  static Tensor scalar(double value, DType dtype = DType::f64);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::int64_t dim(int axis) const;  // negative axes count from the end
  int ndim() const;
  std::int64_t numel() const;
  DType dtype() const;

  std::span<const double> values() const;
  std::vector<double> to_vector() const;
  double item() const;
  double at(std::initializer_list<std::int64_t> index) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool flag);
  bool is_leaf() const;

  // Accumulated gradient of a leaf; an all-zero tensor when nothing reached it.
  Tensor grad() const;
  bool has_grad() const;
  void zero_grad();

  // Reverse pass from a scalar. Consumes the graph: a second call on the same
  // graph throws.
  void backward() const;

  // Same values, no graph history, requires_grad off.
  Tensor detach() const;

  // Overwrites the values of a leaf (optimizer updates, deserialization).
  void assign(std::span<const double> values);

  Tensor to(DType dtype) const;

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  const detail::TensorImpl& checked() const;

  std::shared_ptr<detail::TensorImpl> impl_;
  friend struct detail::Access;
};

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// Gaussian samples scaled by stddev.
Tensor randn(Shape shape, std::mt19937_64& rng, double stddev = 1.0, DType dtype = DType::f64);
Tensor rand_uniform(Shape shape, std::mt19937_64& rng, double lo, double hi,
                    DType dtype = DType::f64);

// ---- primitive operations -------------------------------------------------
//
// Binary elementwise ops broadcast the second operand when its shape is a
// suffix of the first operand's shape, or when it holds a single element.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);

Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor square(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor abs(const Tensor& a);

Tensor sum(const Tensor& a);   // -> scalar
Tensor mean(const Tensor& a);  // -> scalar
Tensor dot(const Tensor& a, const Tensor& b);

Tensor matmul(const Tensor& a, const Tensor& b);  // [M,K] x [K,N]
Tensor bmm(const Tensor& a, const Tensor& b);     // [B,M,K] x [B,K,N]

Tensor reshape(const Tensor& a, Shape shape);
Tensor permute(const Tensor& a, const std::vector<int>& axes);
Tensor slice(const Tensor& a, int axis, std::int64_t start, std::int64_t length);
Tensor concat(const std::vector<Tensor>& parts, int axis);

// x [N,Cin,H,W], weight [Cout,Cin,K,K] (K odd), bias [Cout] or undefined.
// Stride 1, zero padding K/2 ("same").
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias);
Tensor avg_pool2(const Tensor& x);   // [N,C,H,W] -> [N,C,H/2,W/2]
Tensor upsample2(const Tensor& x);   // nearest neighbour, [N,C,H,W] -> [N,C,2H,2W]

Tensor softmax(const Tensor& a);  // over the last axis
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// Complex helpers on the trailing size-2 axis. cmul broadcasts b like add().
Tensor cmul(const Tensor& a, const Tensor& b);
Tensor conj(const Tensor& a);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }

}  // namespace qmri
