#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mi3d {

enum class Mode { kTrain, kEval };

namespace detail {

// 64-byte-aligned, default-initialized storage. Fixed alignment keeps
// Eigen's vectorized kernels on one code path for a given shape, which
// makes results bit-identical across repeated runs regardless of heap
// state; skipping value-initialization avoids zero-filling buffers that
// every op overwrites in full.
template <typename T>
struct BufferAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  BufferAllocator() noexcept = default;
  template <typename U>
  BufferAllocator(const BufferAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), kAlign));
  }
  void deallocate(T* p, std::size_t n) noexcept {
    ::operator delete(p, n * sizeof(T), kAlign);
  }
  template <typename U, typename... Args>
  void construct(U* p, Args&&... args) {
    if constexpr (sizeof...(Args) == 0) {
      ::new (static_cast<void*>(p)) U;  // default-init: no zero fill
    } else {
      ::new (static_cast<void*>(p)) U(static_cast<Args&&>(args)...);
    }
  }
  bool operator==(const BufferAllocator&) const noexcept { return true; }
  bool operator!=(const BufferAllocator&) const noexcept { return false; }
};

using Buffer = std::vector<double, BufferAllocator<double>>;

struct TensorNode {
  std::vector<std::size_t> shape;
  Buffer values;
  Buffer grad;  // allocated on demand, same length as values
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<TensorNode>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(TensorNode&)> backward_fn;

  std::size_t size() const { return values.size(); }
  void ensure_grad();
};

}  // namespace detail

// Dense 64-bit float tensor, row-major, with an optional gradient buffer.
// Ops record the chain of producing operations; Tensor::backward() replays
// it in reverse topological order, visiting every op exactly once.
//
// Tensors are immutable once they enter a graph, except for gradient
// accumulation during a backward pass. Leaf (parameter) values may be
// rewritten between graphs via mutable_values(); each forward call builds
// a fresh graph on top of the current leaf values.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<detail::TensorNode> node) : node_(std::move(node)) {}

  static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false);
  static Tensor full(std::vector<std::size_t> shape, double value, bool requires_grad = false);
  static Tensor from_values(std::vector<std::size_t> shape, std::vector<double> values,
                            bool requires_grad = false);
  static Tensor from_buffer(std::vector<std::size_t> shape, detail::Buffer values,
                            bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor identity(std::size_t n, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const std::vector<std::size_t>& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const;
  std::span<const double> values() const;
  std::span<double> mutable_values();
  bool requires_grad() const;
  bool has_grad() const;
  std::span<const double> grad() const;

  double scalar_value() const;
  double at(std::initializer_list<std::size_t> idx) const;

  // True when every value is finite (the validity check for the
  // no-NaN/Inf invariant).
  bool all_finite() const;

  // Detached deep copy of shape/values; fresh leaf, no graph history.
  Tensor clone_detached() const;

  // Reverse-mode sweep from this scalar tensor. Seeds d(this)=1,
  // accumulates gradients into every reachable tensor that requires
  // them, and returns the number of op nodes whose backward ran
  // (each exactly once).
  std::size_t backward();

  // Zeroes this tensor's gradient buffer (allocates it if absent).
  void zero_grad();

  const std::shared_ptr<detail::TensorNode>& node() const { return node_; }

 private:
  std::shared_ptr<detail::TensorNode> node_;
};

std::string shape_to_string(const std::vector<std::size_t>& shape);

}  // namespace mi3d
