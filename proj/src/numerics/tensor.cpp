#include "cemb/numerics/tensor.hpp"

#include <atomic>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "cemb/errors.hpp"

namespace cemb::numerics {

const char* dtype_name(DType dtype) {
  return dtype == DType::kFloat32 ? "float32" : "float64";
}

DType parse_dtype(const std::string& name) {
  if (name == "float32") return DType::kFloat32;
  if (name == "float64") return DType::kFloat64;
  throw FormatError("unknown dtype '" + name + "'");
}

std::size_t dtype_size(DType dtype) { return dtype == DType::kFloat32 ? 4 : 8; }

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

namespace detail {

std::uint64_t next_node_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

template <typename T>
void check_finite(const char* op, std::span<const T> values) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw NumericError(std::string("non-finite value produced by ") + op + " at index " +
                         std::to_string(i));
    }
  }
}

template <typename T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> values,
                      std::vector<Tensor<T>> inputs, std::function<void(Node<T>&)> backward) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError(std::string(op) + ": shape " + shape_to_string(shape) +
                         " does not match " + std::to_string(values.size()) + " values");
  }
  check_finite<T>(op, values);
  auto node = std::make_shared<Node<T>>();
  node->id = next_node_id();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->op = op;
  bool track = false;
  if (grad_enabled()) {
    for (const auto& in : inputs) track = track || (in.defined() && in.requires_grad());
  }
  if (track) {
    node->requires_grad = true;
    for (auto& in : inputs) {
      if (in.defined()) node->inputs.push_back(in.node());
    }
    node->backward = std::move(backward);
  }
  return Tensor<T>(std::move(node));
}

template void check_finite<float>(const char*, std::span<const float>);
template void check_finite<double>(const char*, std::span<const double>);
template Tensor<float> make_result(const char*, Shape, std::vector<float>,
                                   std::vector<Tensor<float>>,
                                   std::function<void(Node<float>&)>);
template Tensor<double> make_result(const char*, Shape, std::vector<double>,
                                    std::vector<Tensor<double>>,
                                    std::function<void(Node<double>&)>);

}  // namespace detail

namespace {
thread_local bool t_grad_enabled = true;

template <typename T>
std::vector<detail::Node<T>*> topological_order(detail::Node<T>* root) {
  std::vector<detail::Node<T>*> order;
  std::unordered_set<detail::Node<T>*> seen;
  // Iterative post-order DFS; graphs from deep models overflow recursion.
  std::vector<std::pair<detail::Node<T>*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      detail::Node<T>* child = node->inputs[next++].get();
      if (seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}
}  // namespace

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T fill, bool requires_grad) {
  std::vector<T> values(shape_numel(shape), fill);
  return from(std::move(shape), std::move(values), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::from(Shape shape, std::vector<T> values, bool requires_grad) {
  for (std::size_t d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_to_string(shape));
  }
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("shape " + shape_to_string(shape) + " does not match " +
                         std::to_string(values.size()) + " values");
  }
  auto node = std::make_shared<detail::Node<T>>();
  node->id = detail::next_node_id();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) {
    throw ContractError("item() on a tensor of shape " + shape_to_string(shape()));
  }
  return node_->value[0];
}

template <typename T>
void Tensor<T>::backward() {
  if (numel() != 1) {
    throw ContractError("backward() requires a scalar, got shape " + shape_to_string(shape()));
  }
  if (!node_->requires_grad) return;
  auto order = topological_order(node_.get());
  node_->grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node<T>* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return from(shape(), node_->value, false);
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  return from(shape(), node_->value, node_->requires_grad);
}

template <typename T>
ComputationRecord computation_record(const Tensor<T>& root) {
  ComputationRecord record;
  for (detail::Node<T>* n : topological_order(root.node().get())) {
    RecordEntry entry;
    entry.op = n->op;
    entry.output = n->id;
    for (const auto& in : n->inputs) entry.inputs.push_back(in->id);
    record.push_back(std::move(entry));
  }
  return record;
}

template class Tensor<float>;
template class Tensor<double>;
template ComputationRecord computation_record(const Tensor<float>&);
template ComputationRecord computation_record(const Tensor<double>&);

}  // namespace cemb::numerics
