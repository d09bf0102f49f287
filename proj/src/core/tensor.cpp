#include "tsc/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <stdexcept>
#include <unordered_set>

namespace tsc {

std::string to_string(const Shape& shape) {
  return "(" + std::to_string(shape.n) + ", " + std::to_string(shape.c) + ", " +
         std::to_string(shape.h) + ", " + std::to_string(shape.w) + ")";
}

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

bool grad_enabled() noexcept { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

namespace detail {

std::uint64_t next_sequence() noexcept {
  static std::atomic<std::uint64_t> counter{0};
  return counter.fetch_add(1, std::memory_order_relaxed) + 1;
}

template <typename Real>
Tensor<Real> make_result(Shape shape, std::vector<Real> value,
                         std::vector<std::shared_ptr<Node<Real>>> inputs,
                         std::function<void(Node<Real>&)> backward) {
  auto node = std::make_shared<Node<Real>>();
  node->shape = shape;
  node->value = std::move(value);
  node->leaf = false;
  node->sequence = next_sequence();
  const bool needs_grad = g_grad_enabled && std::any_of(inputs.begin(), inputs.end(),
                                      [](const auto& in) { return in && in->requires_grad; });
  if (needs_grad) {
    node->requires_grad = true;
    node->inputs = std::move(inputs);
    node->backward = std::move(backward);
  }
  return Tensor<Real>(std::move(node));
}

}  // namespace detail

template <typename Real>
Tensor<Real>::Tensor(Shape shape, Real fill, bool requires_grad)
    : Tensor(shape, std::vector<Real>(shape.numel(), fill), requires_grad) {}

template <typename Real>
Tensor<Real>::Tensor(Shape shape, std::vector<Real> values, bool requires_grad) {
  if (values.size() != shape.numel()) {
    throw std::invalid_argument("Tensor: " + std::to_string(values.size()) +
                                " values do not fill shape " + to_string(shape));
  }
  node_ = std::make_shared<detail::Node<Real>>();
  node_->shape = shape;
  node_->value = std::move(values);
  node_->requires_grad = requires_grad;
  node_->sequence = detail::next_sequence();
}

template <typename Real>
Tensor<Real> Tensor<Real>::scalar(Real value, bool requires_grad) {
  return Tensor(Shape{1, 1, 1, 1}, std::vector<Real>{value}, requires_grad);
}

template <typename Real>
detail::Node<Real>& Tensor<Real>::get() const {
  if (!node_) throw std::logic_error("Tensor: use of an undefined tensor");
  return *node_;
}

template <typename Real>
std::span<Real> Tensor<Real>::mutable_data() {
  auto& node = get();
  if (!node.leaf) throw std::logic_error("Tensor: values of an operation result are read-only");
  return node.value;
}

template <typename Real>
Real Tensor<Real>::at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
  const auto& node = get();
  if (n >= node.shape.n || c >= node.shape.c || y >= node.shape.h || x >= node.shape.w) {
    throw std::out_of_range("Tensor::at: index outside " + to_string(node.shape));
  }
  return node.value[node.shape.offset(n, c, y, x)];
}

template <typename Real>
Real& Tensor<Real>::at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) {
  auto& node = get();
  if (n >= node.shape.n || c >= node.shape.c || y >= node.shape.h || x >= node.shape.w) {
    throw std::out_of_range("Tensor::at: index outside " + to_string(node.shape));
  }
  if (!node.leaf) throw std::logic_error("Tensor: values of an operation result are read-only");
  return node.value[node.shape.offset(n, c, y, x)];
}

template <typename Real>
Real Tensor<Real>::item() const {
  const auto& node = get();
  if (node.value.size() != 1) {
    throw std::logic_error("Tensor::item: tensor of shape " + to_string(node.shape) +
                           " is not a scalar");
  }
  return node.value.front();
}

template <typename Real>
void Tensor<Real>::set_requires_grad(bool value) {
  auto& node = get();
  if (!node.leaf) throw std::logic_error("Tensor: requires_grad can only be set on leaves");
  node.requires_grad = value;
}

template <typename Real>
bool Tensor<Real>::has_grad() const {
  const auto& node = get();
  return !node.grad.empty() && node.grad.size() == node.value.size();
}

template <typename Real>
std::span<const Real> Tensor<Real>::grad() const {
  if (!has_grad()) throw std::logic_error("Tensor::grad: no gradient has been computed");
  return get().grad;
}

template <typename Real>
void Tensor<Real>::zero_grad() {
  auto& node = get();
  node.grad.clear();
}

template <typename Real>
Tensor<Real> Tensor<Real>::detach() const {
  return Tensor(shape(), std::vector<Real>(data().begin(), data().end()));
}

template <typename Real>
void backward(const Tensor<Real>& loss) {
  using NodeT = detail::Node<Real>;
  if (!loss.defined()) throw std::invalid_argument("backward: undefined loss tensor");
  if (loss.numel() != 1) {
    throw std::invalid_argument("backward: root must be a scalar, got shape " +
                                to_string(loss.shape()));
  }
  NodeT* root = loss.node().get();
  if (!root->requires_grad) {
    throw std::logic_error("backward: loss does not depend on any tensor that requires grad");
  }

  std::vector<NodeT*> order;
  std::unordered_set<NodeT*> seen;
  std::vector<NodeT*> stack{root};
  seen.insert(root);
  while (!stack.empty()) {
    NodeT* node = stack.back();
    stack.pop_back();
    if (!node->leaf && node->consumed) {
      throw std::logic_error(
          "backward: graph was already differentiated; run a fresh forward pass");
    }
    order.push_back(node);
    for (const auto& input : node->inputs) {
      if (input->requires_grad && seen.insert(input.get()).second) stack.push_back(input.get());
    }
  }
  std::sort(order.begin(), order.end(),
            [](const NodeT* a, const NodeT* b) { return a->sequence > b->sequence; });

  for (NodeT* node : order) node->ensure_grad();
  root->grad[0] += Real(1);
  for (NodeT* node : order) {
    if (node->backward) node->backward(*node);
  }
  for (NodeT* node : order) {
    if (node->leaf) continue;
    node->consumed = true;
    node->backward = nullptr;
    std::vector<Real>().swap(node->grad);
  }
}

template class Tensor<float>;
template class Tensor<double>;
template void backward(const Tensor<float>&);
template void backward(const Tensor<double>&);
template Tensor<float> detail::make_result(Shape, std::vector<float>,
                                           std::vector<std::shared_ptr<detail::Node<float>>>,
                                           std::function<void(detail::Node<float>&)>);
template Tensor<double> detail::make_result(Shape, std::vector<double>,
                                            std::vector<std::shared_ptr<detail::Node<double>>>,
                                            std::function<void(detail::Node<double>&)>);

}  // namespace tsc
