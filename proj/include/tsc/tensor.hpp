#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace tsc {

/// Extents of a rank-4 tensor in (batch, channel, height, width) order.
struct Shape {
  std::size_t n = 0;
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  constexpr std::size_t numel() const noexcept { return n * c * h * w; }
  constexpr std::size_t plane() const noexcept { return h * w; }
  constexpr std::size_t offset(std::size_t in, std::size_t ic, std::size_t iy,
                               std::size_t ix) const noexcept {
    return ((in * c + ic) * h + iy) * w + ix;
  }

  friend constexpr bool operator==(const Shape&, const Shape&) = default;
};

std::string to_string(const Shape& shape);

namespace detail {

/// One vertex of the autodiff graph. Interior nodes are created by operations
/// and carry a backward closure that reads `grad` and accumulates into the
/// gradients of `inputs`.
template <typename Real>
struct Node {
  Shape shape;
  std::vector<Real> value;
  std::vector<Real> grad;
  bool leaf = true;
  bool requires_grad = false;
  bool consumed = false;
  std::uint64_t sequence = 0;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  std::vector<Real>& ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), Real(0));
    return grad;
  }
};

std::uint64_t next_sequence() noexcept;

}  // namespace detail

/// Dense NCHW tensor with value semantics for its handle: copies share the
/// same underlying node, so a parameter tensor held by a layer and by an
/// optimizer refers to one storage.
template <typename Real>
class Tensor {
 public:
  using value_type = Real;
  using NodePtr = std::shared_ptr<detail::Node<Real>>;

  Tensor() = default;
  explicit Tensor(Shape shape, Real fill = Real(0), bool requires_grad = false);
  Tensor(Shape shape, std::vector<Real> values, bool requires_grad = false);
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor scalar(Real value, bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const { return get().shape; }
  std::size_t numel() const { return get().shape.numel(); }

  std::span<const Real> data() const { return get().value; }
  /// Writable view of a leaf's values; interior nodes are immutable.
  std::span<Real> mutable_data();

  Real at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const;
  Real& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x);
  /// Value of a single-element tensor.
  Real item() const;

  bool requires_grad() const { return get().requires_grad; }
  void set_requires_grad(bool value);
  bool is_leaf() const { return get().leaf; }

  bool has_grad() const;
  std::span<const Real> grad() const;
  void zero_grad();

  /// Leaf copy of the values, detached from any graph.
  Tensor detach() const;

  const NodePtr& node() const noexcept { return node_; }

 private:
  detail::Node<Real>& get() const;

  NodePtr node_;
};

/// Populates gradients of every requires-grad leaf reachable from `loss`.
/// Nodes are visited in exact reverse construction order. A graph can be
/// differentiated once; calling backward again on any part of it throws.
template <typename Real>
void backward(const Tensor<Real>& loss);

template <typename To, typename From>
Tensor<To> tensor_cast(const Tensor<From>& source) {
  const auto values = source.data();
  std::vector<To> converted(values.begin(), values.end());
  return Tensor<To>(source.shape(), std::move(converted));
}

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled() noexcept;

namespace detail {

/// Wraps the output of an operation. The inputs and backward closure are kept
/// only when at least one input requires a gradient.
template <typename Real>
Tensor<Real> make_result(Shape shape, std::vector<Real> value,
                         std::vector<std::shared_ptr<Node<Real>>> inputs,
                         std::function<void(Node<Real>&)> backward);

}  // namespace detail

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace tsc
