#include "mi3d/tensor.hpp"

#include <cmath>
#include <unordered_set>

#include "mi3d/errors.hpp"

namespace mi3d {

namespace detail {

void TensorNode::ensure_grad() {
  if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
}

}  // namespace detail

namespace {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_to_string(shape));
    n *= d;
  }
  return n;
}

std::shared_ptr<detail::TensorNode> make_leaf(std::vector<std::size_t> shape,
                                              detail::Buffer values, bool requires_grad) {
  auto node = std::make_shared<detail::TensorNode>();
  if (shape_product(shape) != values.size()) {
    throw DimensionError("value count " + std::to_string(values.size()) +
                         " does not match shape " + shape_to_string(shape));
  }
  node->shape = std::move(shape);
  node->values = std::move(values);
  node->requires_grad = requires_grad;
  if (requires_grad) node->ensure_grad();
  return node;
}

}  // namespace

std::string shape_to_string(const std::vector<std::size_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor Tensor::zeros(std::vector<std::size_t> shape, bool requires_grad) {
  std::size_t n = shape_product(shape);
  return Tensor(make_leaf(std::move(shape), detail::Buffer(n, 0.0), requires_grad));
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value, bool requires_grad) {
  std::size_t n = shape_product(shape);
  return Tensor(make_leaf(std::move(shape), detail::Buffer(n, value), requires_grad));
}

Tensor Tensor::from_values(std::vector<std::size_t> shape, std::vector<double> values,
                           bool requires_grad) {
  return Tensor(make_leaf(std::move(shape), detail::Buffer(values.begin(), values.end()),
                          requires_grad));
}

Tensor Tensor::from_buffer(std::vector<std::size_t> shape, detail::Buffer values,
                           bool requires_grad) {
  return Tensor(make_leaf(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_values({1}, {value}, requires_grad);
}

Tensor Tensor::identity(std::size_t n, bool requires_grad) {
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
  return from_values({n, n}, std::move(v), requires_grad);
}

const std::vector<std::size_t>& Tensor::shape() const {
  if (!node_) throw Error("use of undefined tensor");
  return node_->shape;
}

std::size_t Tensor::size() const {
  if (!node_) throw Error("use of undefined tensor");
  return node_->values.size();
}

std::span<const double> Tensor::values() const {
  if (!node_) throw Error("use of undefined tensor");
  return node_->values;
}

std::span<double> Tensor::mutable_values() {
  if (!node_) throw Error("use of undefined tensor");
  return node_->values;
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

bool Tensor::has_grad() const { return node_ && node_->grad.size() == node_->values.size(); }

std::span<const double> Tensor::grad() const {
  if (!has_grad()) throw Error("tensor has no gradient buffer");
  return node_->grad;
}

double Tensor::scalar_value() const {
  if (size() != 1) throw DimensionError("scalar_value on tensor of shape " + shape_to_string(shape()));
  return node_->values[0];
}

double Tensor::at(std::initializer_list<std::size_t> idx) const {
  const auto& sh = shape();
  if (idx.size() != sh.size()) {
    throw DimensionError("index rank " + std::to_string(idx.size()) + " does not match shape " +
                         shape_to_string(sh));
  }
  std::size_t flat = 0;
  std::size_t dim = 0;
  for (std::size_t i : idx) {
    if (i >= sh[dim]) throw DimensionError("index out of bounds");
    flat = flat * sh[dim] + i;
    ++dim;
  }
  return node_->values[flat];
}

bool Tensor::all_finite() const {
  for (double v : values()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Tensor Tensor::clone_detached() const {
  if (!node_) return Tensor();
  return from_buffer(node_->shape, node_->values, node_->requires_grad);
}

std::size_t Tensor::backward() {
  if (!node_) throw Error("backward on undefined tensor");
  if (size() != 1) {
    throw DimensionError("backward requires a scalar tensor, got shape " + shape_to_string(shape()));
  }

  // Topological order via iterative post-order DFS over parents.
  std::vector<detail::TensorNode*> order;
  std::unordered_set<detail::TensorNode*> visited;
  struct Frame {
    detail::TensorNode* node;
    std::size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({node_.get(), 0});
  visited.insert(node_.get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      detail::TensorNode* p = f.node->parents[f.next_parent++].get();
      if (visited.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  for (detail::TensorNode* n : order) {
    if (n->requires_grad || n->backward_fn) n->ensure_grad();
  }
  node_->grad[0] += 1.0;

  std::size_t ops_run = 0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::TensorNode* n = *it;
    if (n->backward_fn) {
      for (const auto& p : n->parents) {
        if (p->requires_grad || p->backward_fn) p->ensure_grad();
      }
      n->backward_fn(*n);
      ++ops_run;
    }
  }
  return ops_run;
}

void Tensor::zero_grad() {
  if (!node_) throw Error("zero_grad on undefined tensor");
  node_->grad.assign(node_->values.size(), 0.0);
}

}  // namespace mi3d
