#include "qmri/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include "qmri/autograd.hpp"

namespace qmri {

namespace detail {

struct Node {
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  BackwardFn backward;
  bool consumed = false;
};

struct TensorImpl {
  Shape shape;
  DType dtype = DType::f64;
  std::vector<double> data;
  bool requires_grad = false;
  std::vector<double> grad;  // empty until a gradient is accumulated
  std::shared_ptr<Node> grad_fn;
};

struct Access {
  static std::shared_ptr<TensorImpl> impl(const Tensor& t) { return t.impl_; }
  static Tensor wrap(std::shared_ptr<TensorImpl> impl) { return Tensor(std::move(impl)); }
};

namespace {

thread_local bool t_grad_enabled = true;

void round_to_dtype(std::vector<double>& values, DType dtype) {
  if (dtype == DType::f32) {
    for (double& v : values) v = static_cast<double>(static_cast<float>(v));
  }
}

}  // namespace

Tensor make_op(Shape shape, std::vector<double> values, DType dtype, std::vector<Tensor> inputs,
               BackwardFn backward) {
  if (static_cast<std::int64_t>(values.size()) != numel_of(shape)) {
    throw std::logic_error("make_op: value count does not match shape " + shape_str(shape));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->dtype = dtype;
  impl->data = std::move(values);
  round_to_dtype(impl->data, dtype);

  bool needs_graph = false;
  if (t_grad_enabled) {
    for (const auto& in : inputs) needs_graph = needs_graph || in.requires_grad();
  }
  if (needs_graph) {
    auto node = std::make_shared<Node>();
    node->inputs.reserve(inputs.size());
    for (const auto& in : inputs) node->inputs.push_back(Access::impl(in));
    node->backward = std::move(backward);
    impl->requires_grad = true;
    impl->grad_fn = std::move(node);
  }
  return Access::wrap(std::move(impl));
}

void require_same_dtype(const Tensor& a, const Tensor& b, const char* op) {
  if (a.dtype() != b.dtype()) {
    throw std::invalid_argument(std::string(op) + ": dtype mismatch (" + dtype_name(a.dtype()) +
                                " vs " + dtype_name(b.dtype()) + ")");
  }
}

void require_complex(const Tensor& a, const char* op) {
  if (a.ndim() < 1 || a.dim(-1) != 2) {
    throw std::invalid_argument(std::string(op) + ": expected trailing complex axis of size 2, got " +
                                shape_str(a.shape()));
  }
}

}  // namespace detail

using detail::TensorImpl;

std::int64_t numel_of(const Shape& shape) {
  std::int64_t n = 1;
  for (auto e : shape) {
    if (e < 0) throw std::invalid_argument("negative extent in shape " + shape_str(shape));
    n *= e;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ']';
  return os.str();
}

std::string dtype_name(DType dtype) { return dtype == DType::f32 ? "f32" : "f64"; }

Tensor::Tensor(Shape shape, std::vector<double> values, DType dtype) {
  if (static_cast<std::int64_t>(values.size()) != numel_of(shape)) {
    throw std::invalid_argument("Tensor: " + std::to_string(values.size()) +
                                " values for shape " + shape_str(shape));
  }
  impl_ = std::make_shared<TensorImpl>();
  impl_->shape = std::move(shape);
  impl_->dtype = dtype;
  impl_->data = std::move(values);
  detail::round_to_dtype(impl_->data, dtype);
}

Tensor Tensor::zeros(Shape shape, DType dtype) { return full(std::move(shape), 0.0, dtype); }

Tensor Tensor::full(Shape shape, double value, DType dtype) {
  const auto n = numel_of(shape);
  return Tensor(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), value), dtype);
}

Tensor Tensor::scalar(double value, DType dtype) { return Tensor(Shape{}, {value}, dtype); }

const TensorImpl& Tensor::checked() const {
  if (!impl_) throw std::logic_error("use of an undefined Tensor");
  return *impl_;
}

const Shape& Tensor::shape() const { return checked().shape; }

std::int64_t Tensor::dim(int axis) const {
  const auto& s = checked().shape;
  const int n = static_cast<int>(s.size());
  const int a = axis < 0 ? axis + n : axis;
  if (a < 0 || a >= n) {
    throw std::out_of_range("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  }
  return s[static_cast<std::size_t>(a)];
}

int Tensor::ndim() const { return static_cast<int>(checked().shape.size()); }
std::int64_t Tensor::numel() const { return static_cast<std::int64_t>(checked().data.size()); }
DType Tensor::dtype() const { return checked().dtype; }
std::span<const double> Tensor::values() const { return checked().data; }
std::vector<double> Tensor::to_vector() const { return checked().data; }

double Tensor::item() const {
  const auto& d = checked().data;
  if (d.size() != 1) throw std::invalid_argument("item() on tensor with " + std::to_string(d.size()) + " elements");
  return d[0];
}

double Tensor::at(std::initializer_list<std::int64_t> index) const {
  const auto& impl = checked();
  if (index.size() != impl.shape.size()) throw std::invalid_argument("at(): rank mismatch");
  std::int64_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i < 0 || i >= impl.shape[axis]) throw std::out_of_range("at(): index out of range");
    flat = flat * impl.shape[axis] + i;
    ++axis;
  }
  return impl.data[static_cast<std::size_t>(flat)];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool flag) {
  checked();
  if (impl_->grad_fn) throw std::logic_error("set_requires_grad on a non-leaf tensor");
  impl_->requires_grad = flag;
  return *this;
}

bool Tensor::is_leaf() const { return !checked().grad_fn; }

Tensor Tensor::grad() const {
  const auto& impl = checked();
  if (impl.grad.empty()) return zeros(impl.shape, impl.dtype);
  return Tensor(impl.shape, impl.grad, impl.dtype);
}

bool Tensor::has_grad() const { return !checked().grad.empty(); }

void Tensor::zero_grad() {
  checked();
  impl_->grad.clear();
}

Tensor Tensor::detach() const {
  const auto& impl = checked();
  return Tensor(impl.shape, impl.data, impl.dtype);
}

void Tensor::assign(std::span<const double> values) {
  checked();
  if (impl_->grad_fn) throw std::logic_error("assign() on a graph-produced tensor");
  if (values.size() != impl_->data.size()) throw std::invalid_argument("assign(): size mismatch");
  std::copy(values.begin(), values.end(), impl_->data.begin());
  detail::round_to_dtype(impl_->data, impl_->dtype);
}

Tensor Tensor::to(DType dtype) const {
  const auto& impl = checked();
  if (dtype == impl.dtype) return *this;
  return detail::make_op(impl.shape, impl.data, dtype, {*this},
                         [](std::span<const double>, std::span<const double> g,
                            std::span<std::vector<double>*> gin) {
                           auto& ga = *gin[0];
                           for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                         });
}

void Tensor::backward() const {
  const auto& root = checked();
  if (root.data.size() != 1 || !root.shape.empty()) {
    throw std::invalid_argument("backward() requires a scalar loss, got shape " + shape_str(root.shape));
  }
  if (!root.requires_grad) throw std::logic_error("backward() on a tensor that does not require grad");
  if (root.grad_fn && root.grad_fn->consumed) {
    throw std::logic_error("backward() on a graph that was already consumed");
  }

  // Iterative post-order DFS gives a topological order (inputs before users).
  // The order holds ownership: releasing a consumed node's inputs must not free
  // impls that are still waiting to be processed.
  std::vector<std::shared_ptr<TensorImpl>> order;
  std::unordered_set<TensorImpl*> visited;
  std::vector<std::pair<std::shared_ptr<TensorImpl>, std::size_t>> stack;
  stack.emplace_back(impl_, 0);
  visited.insert(impl_.get());
  while (!stack.empty()) {
    auto& top = stack.back();
    const auto* fn = top.first->grad_fn.get();
    if (fn && top.second < fn->inputs.size()) {
      std::shared_ptr<TensorImpl> child = fn->inputs[top.second++];
      if (child->requires_grad && visited.insert(child.get()).second) {
        if (child->grad_fn && child->grad_fn->consumed) {
          throw std::logic_error("backward() reached a graph node that was already consumed");
        }
        stack.emplace_back(std::move(child), 0);
      }
      continue;
    }
    order.push_back(std::move(top.first));
    stack.pop_back();
  }

  std::unordered_map<TensorImpl*, std::vector<double>> grads;
  grads[impl_.get()] = {1.0};

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* node = it->get();
    auto found = grads.find(node);
    if (!node->grad_fn) {
      if (found == grads.end()) continue;
      if (node->grad.empty()) {
        node->grad = std::move(found->second);
      } else {
        for (std::size_t i = 0; i < node->grad.size(); ++i) node->grad[i] += found->second[i];
      }
      grads.erase(found);
      continue;
    }

    auto& fn = *node->grad_fn;
    if (found != grads.end()) {
      std::vector<std::vector<double>*> gin(fn.inputs.size(), nullptr);
      for (std::size_t i = 0; i < fn.inputs.size(); ++i) {
        TensorImpl* in = fn.inputs[i].get();
        if (!in->requires_grad) continue;
        auto& buf = grads[in];
        if (buf.empty()) buf.assign(in->data.size(), 0.0);
        gin[i] = &buf;
      }
      // grads may rehash while inserting above; re-lookup the output gradient.
      const auto& gout = grads.at(node);
      fn.backward(node->data, gout, gin);
      grads.erase(node);
    }
    fn.backward = nullptr;
    fn.inputs.clear();
    fn.consumed = true;
  }
}

NoGradGuard::NoGradGuard() : previous_(detail::t_grad_enabled) { detail::t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { detail::t_grad_enabled = previous_; }
bool grad_enabled() { return detail::t_grad_enabled; }

Tensor randn(Shape shape, std::mt19937_64& rng, double stddev, DType dtype) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> v(static_cast<std::size_t>(numel_of(shape)));
  for (auto& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v), dtype);
}

Tensor rand_uniform(Shape shape, std::mt19937_64& rng, double lo, double hi, DType dtype) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(static_cast<std::size_t>(numel_of(shape)));
  for (auto& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v), dtype);
}

}  // namespace qmri
