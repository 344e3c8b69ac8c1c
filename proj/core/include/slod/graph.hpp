#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "slod/tensor.hpp"

namespace slod {

enum class OpKind {
  Leaf,
  Constant,
  MatMul,
  Conv2d,
  AddRowBias,
  AddChannelBias,
  Relu,
  MaxPool2,
  Flatten,
  LogSoftmax,
  Sum,
  Mean,
  Square,
  Scale,
  Add,
  SoftCrossEntropy,
};

const char* op_name(OpKind kind);

// Handle to a node of a Graph. Only meaningful for the graph that issued it.
struct Var {
  std::size_t id = 0;
};

/// Define-by-run tape for reverse-mode differentiation.
///
/// Nodes are appended in construction order, so every node's inputs precede
/// it. `backward` walks the tape once in reverse. Leaves bound with `leaf()`
/// receive their gradient (accumulated) in the bound tensor's grad buffer
/// when that tensor requires gradients. The bound tensors must outlive the
/// graph.
template <typename T>
class Graph {
 public:
  // Called during backward with this graph and the node's own id; reads
  // `upstream(self)` and accumulates into its inputs via `grad_of`.
  using BackwardFn = std::function<void(Graph&, std::size_t)>;

  Var leaf(Tensor<T>& tensor);
  Var constant(Tensor<T> value);

  // Appends an op node. `fn` is dropped when no input is tracked.
  Var record(OpKind kind, std::vector<Var> inputs, Tensor<T> value, BackwardFn fn);

  const Tensor<T>& value(Var v) const { return node(v.id).value; }
  bool tracked(Var v) const { return node(v.id).tracked; }
  OpKind kind(Var v) const { return node(v.id).kind; }
  const std::vector<std::size_t>& inputs(Var v) const { return node(v.id).inputs; }
  std::size_t size() const { return nodes_.size(); }

  // Gradient of the last backward's loss w.r.t. node `v` (zeros if the node
  // received none). Valid after backward().
  std::vector<T> grad(Var v) const;

  void backward(Var loss);

  // For backward functions.
  const std::vector<T>& upstream(std::size_t self) const;
  // Lazily allocated zero-initialized accumulator; nullptr for untracked nodes.
  T* grad_of(std::size_t id);
  const Tensor<T>& value_of(std::size_t id) const { return node(id).value; }
  std::size_t input(std::size_t self, std::size_t k) const { return node(self).inputs[k]; }

 private:
  struct Node {
    OpKind kind = OpKind::Constant;
    std::vector<std::size_t> inputs;
    Tensor<T> value;
    bool tracked = false;
    BackwardFn backward;
    Tensor<T>* bound = nullptr;
    std::vector<T> grad;
  };

  const Node& node(std::size_t id) const;
  Node& node(std::size_t id);

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace slod
