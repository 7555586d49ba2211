#include "nilmprune/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>

#include "nilmprune/errors.hpp"

namespace nilmprune {

struct Tensor::Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<Tensor> parents;
  BackwardFn backward_fn;
};

namespace {
thread_local bool grad_mode = true;
}

NoGradGuard::NoGradGuard() : previous_(grad_mode) { grad_mode = false; }
NoGradGuard::~NoGradGuard() { grad_mode = previous_; }

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->data.assign(shape_numel(shape), fill);
  node_->shape = std::move(shape);
  node_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : node_(std::make_shared<Node>()) {
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("tensor shape " + shape_str(shape) + " does not hold " +
                         std::to_string(data.size()) + " values");
  }
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(Shape{1}, std::vector<double>{value}, requires_grad);
}

Tensor Tensor::from_op(Shape shape, std::vector<double> data, std::vector<Tensor> parents,
                       BackwardFn backward) {
  Tensor out(std::move(shape), std::move(data));
#ifndef NDEBUG
  for (double v : out.node_->data) {
    if (!std::isfinite(v)) throw NumericError("non-finite value produced by tensor op");
  }
#endif
  bool any = false;
  if (grad_mode)
    for (const auto& p : parents) any = any || p.requires_grad();
  if (any) {
    out.node_->requires_grad = true;
    out.node_->parents = std::move(parents);
    out.node_->backward_fn = std::move(backward);
  }
  return out;
}

const Shape& Tensor::shape() const {
  static const Shape empty;
  return node_ ? node_->shape : empty;
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_str(shape()));
  }
  return node_->shape[axis];
}

std::size_t Tensor::numel() const { return node_ ? node_->data.size() : 0; }

std::span<double> Tensor::data() { return node_->data; }
std::span<const double> Tensor::data() const { return node_->data; }

double Tensor::item() const {
  if (numel() != 1) {
    throw ContractViolation("item() on tensor of shape " + shape_str(shape()));
  }
  return node_->data[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
void Tensor::set_requires_grad(bool on) { node_->requires_grad = on; }

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<double> Tensor::grad() {
  if (node_->grad.size() != node_->data.size()) node_->grad.assign(node_->data.size(), 0.0);
  return node_->grad;
}

std::span<const double> Tensor::grad() const { return node_->grad; }

void Tensor::zero_grad() {
  if (node_) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::clone() const {
  if (!node_) return {};
  return Tensor(node_->shape, node_->data, node_->requires_grad && !node_->backward_fn);
}

Tensor Tensor::reshape(Shape shape) const {
  if (shape_numel(shape) != numel()) {
    throw DimensionError("cannot reshape " + shape_str(this->shape()) + " to " + shape_str(shape));
  }
  return from_op(std::move(shape), node_->data, {*this},
                 [](std::span<const double> g, std::span<Tensor> parents) {
                   auto pg = parents[0].grad();
                   for (std::size_t i = 0; i < g.size(); ++i) pg[i] += g[i];
                 });
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractViolation("backward() needs a scalar loss, got shape " +
                            shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) {
    throw ContractViolation("backward() on a loss that does not depend on any parameter");
  }

  // Iterative post-order DFS gives a topological order.
  std::vector<Tensor::Node*> order;
  std::unordered_set<Tensor::Node*> seen;
  std::vector<std::pair<Tensor::Node*, std::size_t>> stack;
  stack.emplace_back(loss.node_.get(), 0);
  seen.insert(loss.node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Tensor::Node* parent = node->parents[next++].node_.get();
      if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (auto* node : order) {
    if (node->backward_fn) node->grad.assign(node->data.size(), 0.0);
  }
  if (loss.node_->grad.size() != 1) loss.node_->grad.assign(1, 0.0);
  loss.node_->grad[0] += 1.0;

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto* node = *it;
    if (node->backward_fn) node->backward_fn(node->grad, node->parents);
  }
}

}  // namespace nilmprune
