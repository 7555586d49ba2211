#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace nilmprune {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/**
 * Dense row-major array of doubles with an optional gradient buffer.
 *
 * Tensor is a shared handle: copies alias the same storage, use clone() for a
 * deep copy. Operations on tensors that require gradients record a node in a
 * dynamic graph; backward() walks that graph in reverse topological order.
 */
class Tensor {
 public:
  /// Receives the output gradient and the op's parents (whose grad() may be
  /// written to). Must not capture the output tensor.
  using BackwardFn =
      std::function<void(std::span<const double> out_grad, std::span<Tensor> parents)>;

  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false);
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor scalar(double value, bool requires_grad = false);

  /// Builds the output of a differentiable op. The node is only linked into
  /// the graph when at least one parent requires gradients.
  static Tensor from_op(Shape shape, std::vector<double> data, std::vector<Tensor> parents,
                        BackwardFn backward);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<double> data();
  std::span<const double> data() const;
  double item() const;
  double& at(std::size_t flat) { return data()[flat]; }
  double at(std::size_t flat) const { return data()[flat]; }

  bool requires_grad() const;
  void set_requires_grad(bool on);

  bool has_grad() const;
  /// Gradient buffer, allocated zero-filled on first access.
  std::span<double> grad();
  std::span<const double> grad() const;
  void zero_grad();

  /// Deep copy of data without graph history.
  Tensor clone() const;
  /// Same storage semantics as clone(), kept for readability at call sites
  /// that only want to cut the graph.
  Tensor detach() const { return clone(); }

  /// Differentiable view with a new shape (element count must match).
  Tensor reshape(Shape shape) const;

  bool same_node(const Tensor& other) const { return node_ == other.node_; }

 private:
  struct Node;
  std::shared_ptr<Node> node_;

  friend void backward(const Tensor& loss);
};

/// While alive on a thread, ops on that thread record no graph (inference).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Populates grad() on every tensor reachable from `loss` that requires
/// gradients. Leaf gradients accumulate across calls until zero_grad().
void backward(const Tensor& loss);

enum class Activation { ReLU, Sigmoid };

// Ops below accept an optional leading batch axis.

/// Valid (unpadded) cross-correlation. input [C_in, L] or [N, C_in, L];
/// kernels [C_out, C_in, K]; bias [C_out].
Tensor conv1d(const Tensor& input, const Tensor& kernels, const Tensor& bias,
              std::size_t stride = 1);

/// input [F_in] or [N, F_in]; weights [F_out, F_in]; bias [F_out].
Tensor linear(const Tensor& input, const Tensor& weights, const Tensor& bias);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor activation(const Tensor& x, Activation kind);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// Mean of squared differences over all elements.
Tensor mse_loss(const Tensor& pred, const Tensor& target);

std::size_t conv1d_output_length(std::size_t length, std::size_t kernel, std::size_t stride);

}  // namespace nilmprune
