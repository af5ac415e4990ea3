#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace adamix {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Thrown for shape, range and domain violations detected by any module.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A NaN or infinity reached an operation that cannot accept it.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

struct Node;
using NodePtr = std::shared_ptr<Node>;

/// One vertex of the computation record. Leaves have no inputs and no
/// reverse rule; results of an operation keep their inputs alive until the
/// root of the record is released.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::string op = "leaf";
  std::vector<NodePtr> inputs;
  // Fixed when the node is created: which inputs receive gradient.
  std::vector<char> input_wants_grad;
  // Reads this node's grad and accumulates into the inputs' grads.
  std::function<void(Node&)> reverse;
};

/// Dense row-major array taking part in reverse-mode differentiation.
/// Copies are shallow handles; use clone() for an independent leaf.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }

  std::span<const double> data() const { return node_->value; }
  // Direct writes are only meaningful on leaves (parameters, inputs).
  std::span<double> mutable_data() { return node_->value; }
  double item() const;
  double at(std::size_t flat_index) const { return node_->value.at(flat_index); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }
  bool is_leaf() const { return node_->inputs.empty(); }
  const std::string& op() const { return node_->op; }

  // Empty span until a backward sweep has reached this tensor.
  std::span<const double> grad() const { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad();

  /// New leaf holding a copy of the values, cut off from the record.
  Tensor detach() const;
  /// New leaf with copied values that keeps the requires_grad flag.
  Tensor clone() const;

  /// Reverse sweep from a scalar root. Leaf gradients accumulate across
  /// calls; gradients of intermediate nodes are recomputed each sweep.
  void backward() const;

  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

struct RecordEntry {
  std::string op;
  std::vector<std::size_t> inputs;  // positions of inputs in the record
  std::size_t output;
};

/// Topologically ordered computation record reachable from root through
/// nodes that require gradients (leaves included).
std::vector<RecordEntry> computation_record(const Tensor& root);

/// While alive, newly created operation results record no reverse rules.
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

/// Temporarily clears requires_grad on a parameter set; restores on exit.
class FreezeGuard {
 public:
  explicit FreezeGuard(std::vector<Tensor> params);
  ~FreezeGuard();
  FreezeGuard(const FreezeGuard&) = delete;
  FreezeGuard& operator=(const FreezeGuard&) = delete;

 private:
  std::vector<Tensor> params_;
  std::vector<bool> saved_;
};

}  // namespace adamix
