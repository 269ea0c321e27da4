#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "unida/rng.hpp"

namespace unida {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

namespace detail {

/// One vertex of the dynamic autograd graph.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until something is accumulated
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads self.grad and accumulates into parents. Empty for leaves.
  std::function<void(const Node& self)> backward;

  bool is_leaf() const { return !backward; }
  std::vector<double>& grad_buffer();
};

}  // namespace detail

/// Dense row-major float64 tensor with reverse-mode gradient tracking.
///
/// Tensors are cheap handles: copies share the same storage and graph node.
/// Operations build a fresh graph on every call; backward() walks it once.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0, bool requires_grad = false);
  static Tensor uniform(Shape shape, Rng& rng, double lo, double hi, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return values().size(); }

  std::span<const double> values() const;
  /// Direct write access; intended for leaves (parameters, inputs).
  std::span<double> mutable_values();
  double item() const;

  bool requires_grad() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  /// Populates a zero-filled gradient buffer.
  void zero_grad();
  /// Drops the gradient buffer entirely.
  void clear_grad();

  /// A leaf copy of the current values, cut from the graph.
  Tensor detach() const;

  /// Reverse-mode sweep from this scalar. Leaf gradients accumulate across
  /// calls; gradients of intermediate nodes are recomputed each time.
  void backward() const;

  const detail::Node* id() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node() const { return node_; }
  static Tensor from_node(std::shared_ptr<detail::Node> node);

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Complex tensor stored as two real tensors of identical shape.
struct ComplexTensor {
  Tensor real;
  Tensor imag;

  const Shape& shape() const { return real.shape(); }
};

/// A named trainable tensor.
struct Parameter {
  std::string name;
  Tensor tensor;
};

/// Throws ContractError when two parameters share a name.
void check_unique_names(std::span<const Parameter> params);

/// Builds an op result node. The backward closure receives the result node and
/// must accumulate into self.parents[i]->grad_buffer() for parents that
/// require grad. When no input requires grad the graph edge is dropped.
Tensor make_op(Shape shape, std::vector<double> value, const std::vector<Tensor>& inputs,
               std::function<void(const detail::Node& self)> backward);

}  // namespace unida
