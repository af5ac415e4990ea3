#include "adamix/tensor.hpp"

#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace adamix {

namespace {
thread_local bool g_grad_enabled = true;

NodePtr make_leaf(Shape shape, std::vector<double> values, bool requires_grad) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return node;
}

// Post-order DFS restricted to nodes that carry gradient.
std::vector<Node*> topological_order(Node* root) {
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      const std::size_t i = next++;
      Node* child = node->inputs[i].get();
      if (node->input_wants_grad[i] && visited.insert(child).second) {
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}
}  // namespace

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ',';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_size(shape);
  return Tensor(make_leaf(std::move(shape), std::vector<double>(n, value),
                          requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_size(shape) != values.size()) {
    throw Error("Tensor::from: " + std::to_string(values.size()) +
                " values do not fill shape " + shape_str(shape));
  }
  return Tensor(make_leaf(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({}, {value}, requires_grad);
}

double Tensor::item() const {
  if (size() != 1) {
    throw Error("item() on tensor of shape " + shape_str(shape()));
  }
  return node_->value[0];
}

void Tensor::zero_grad() {
  std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach() const {
  return Tensor(make_leaf(node_->shape, node_->value, false));
}

Tensor Tensor::clone() const {
  return Tensor(make_leaf(node_->shape, node_->value, node_->requires_grad));
}

void Tensor::backward() const {
  if (size() != 1) {
    throw Error("backward() needs a scalar root, got " + shape_str(shape()));
  }
  if (!node_->requires_grad) {
    throw Error("backward() on a tensor that does not require grad");
  }
  const auto order = topological_order(node_.get());
  for (Node* n : order) {
    if (n->inputs.empty()) {
      if (n->grad.size() != n->value.size()) n->grad.assign(n->value.size(), 0.0);
    } else {
      n->grad.assign(n->value.size(), 0.0);
    }
  }
  node_->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->reverse) n->reverse(*n);
  }
}

std::vector<RecordEntry> computation_record(const Tensor& root) {
  std::vector<RecordEntry> record;
  if (!root.requires_grad()) return record;
  const auto order = topological_order(root.node().get());
  std::unordered_map<const Node*, std::size_t> position;
  for (std::size_t i = 0; i < order.size(); ++i) position[order[i]] = i;
  for (std::size_t i = 0; i < order.size(); ++i) {
    RecordEntry entry{order[i]->op, {}, i};
    for (const auto& in : order[i]->inputs) {
      auto found = position.find(in.get());
      if (found != position.end()) entry.inputs.push_back(found->second);
    }
    record.push_back(std::move(entry));
  }
  return record;
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

FreezeGuard::FreezeGuard(std::vector<Tensor> params) : params_(std::move(params)) {
  saved_.reserve(params_.size());
  for (auto& p : params_) {
    saved_.push_back(p.requires_grad());
    p.set_requires_grad(false);
  }
}

FreezeGuard::~FreezeGuard() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    params_[i].set_requires_grad(saved_[i]);
  }
}

}  // namespace adamix
