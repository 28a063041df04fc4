#ifndef CEMB_NUMERICS_TENSOR_HPP_
#define CEMB_NUMERICS_TENSOR_HPP_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace cemb::numerics {

using Shape = std::vector<std::size_t>;

enum class DType { kFloat32, kFloat64 };

template <typename T>
struct DTypeOf;
template <>
struct DTypeOf<float> {
  static constexpr DType value = DType::kFloat32;
};
template <>
struct DTypeOf<double> {
  static constexpr DType value = DType::kFloat64;
};

const char* dtype_name(DType dtype);
DType parse_dtype(const std::string& name);
std::size_t dtype_size(DType dtype);

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

namespace detail {

template <typename T>
struct Node {
  std::uint64_t id = 0;
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until the first accumulation
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this->grad and accumulates into the inputs' grads.
  std::function<void(Node&)> backward;

  std::vector<T>& grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad;
  }
};

std::uint64_t next_node_id();

}  // namespace detail

// Gradient recording is on by default. A NoGradGuard switches it off for the
// current thread, which is what inference and finite differencing use.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// One entry per graph node, in topological order (inputs before outputs).
struct RecordEntry {
  std::string op;
  std::vector<std::uint64_t> inputs;
  std::uint64_t output = 0;
};
using ComputationRecord = std::vector<RecordEntry>;

// Dense row-major tensor with shared handle semantics: copying a Tensor copies
// the handle, not the storage. Use clone() or detach() for a deep copy.
template <typename T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T fill, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  std::uint64_t id() const { return node_->id; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->value.size(); }
  // Width of the last axis and the number of rows when all leading axes are
  // flattened; every row-wise kernel uses this view.
  std::size_t cols() const { return node_->shape.empty() ? 1 : node_->shape.back(); }
  std::size_t rows() const { return cols() == 0 ? 0 : numel() / cols(); }
  static constexpr DType dtype() { return DTypeOf<T>::value; }
  const char* op() const { return node_->op; }

  std::span<T> data() { return node_->value; }
  std::span<const T> data() const { return node_->value; }
  std::span<const T> row(std::size_t r) const {
    return std::span<const T>(node_->value).subspan(r * cols(), cols());
  }
  T item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool value) { node_->requires_grad = value; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad.clear(); }

  // Reverse-mode sweep from a scalar. Seeds d(self)/d(self) = 1.
  void backward();

  Tensor detach() const;
  Tensor clone() const;  // deep copy that keeps requires_grad, drops history

  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

// Topological order of the graph that produced root.
template <typename T>
ComputationRecord computation_record(const Tensor<T>& root);

namespace detail {

// Builds the output of a differentiable op. The node is attached to the graph
// only when recording is enabled and some input requires a gradient; backward
// is dropped otherwise. Checks the values for NaN/Inf before returning.
template <typename T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> values,
                      std::vector<Tensor<T>> inputs, std::function<void(Node<T>&)> backward);

template <typename T>
void check_finite(const char* op, std::span<const T> values);

}  // namespace detail

}  // namespace cemb::numerics

#endif  // CEMB_NUMERICS_TENSOR_HPP_
