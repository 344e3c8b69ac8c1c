#include "slod/graph.hpp"

#include <algorithm>
#include <string>

#include "slod/errors.hpp"

namespace slod {

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Leaf: return "leaf";
    case OpKind::Constant: return "constant";
    case OpKind::MatMul: return "matmul";
    case OpKind::Conv2d: return "conv2d";
    case OpKind::AddRowBias: return "add_row_bias";
    case OpKind::AddChannelBias: return "add_channel_bias";
    case OpKind::Relu: return "relu";
    case OpKind::MaxPool2: return "max_pool2";
    case OpKind::Flatten: return "flatten";
    case OpKind::LogSoftmax: return "log_softmax";
    case OpKind::Sum: return "sum";
    case OpKind::Mean: return "mean";
    case OpKind::Square: return "square";
    case OpKind::Scale: return "scale";
    case OpKind::Add: return "add";
    case OpKind::SoftCrossEntropy: return "soft_cross_entropy";
  }
  return "unknown";
}

template <typename T>
const typename Graph<T>::Node& Graph<T>::node(std::size_t id) const {
  if (id >= nodes_.size()) throw UsageError("variable does not belong to this graph");
  return nodes_[id];
}

template <typename T>
typename Graph<T>::Node& Graph<T>::node(std::size_t id) {
  if (id >= nodes_.size()) throw UsageError("variable does not belong to this graph");
  return nodes_[id];
}

template <typename T>
Var Graph<T>::leaf(Tensor<T>& tensor) {
  Node n;
  n.kind = OpKind::Leaf;
  n.value = Tensor<T>(tensor.shape(), tensor.values());
  n.tracked = tensor.requires_grad();
  n.bound = &tensor;
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

template <typename T>
Var Graph<T>::constant(Tensor<T> value) {
  Node n;
  n.kind = OpKind::Constant;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

template <typename T>
Var Graph<T>::record(OpKind kind, std::vector<Var> inputs, Tensor<T> value, BackwardFn fn) {
  Node n;
  n.kind = kind;
  for (Var v : inputs) {
    n.inputs.push_back(v.id);
    n.tracked = n.tracked || node(v.id).tracked;
  }
  n.value = std::move(value);
  if (n.tracked) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

template <typename T>
const std::vector<T>& Graph<T>::upstream(std::size_t self) const {
  return node(self).grad;
}

template <typename T>
T* Graph<T>::grad_of(std::size_t id) {
  Node& n = node(id);
  if (!n.tracked) return nullptr;
  if (n.grad.empty()) n.grad.assign(n.value.size(), T{0});
  return n.grad.data();
}

template <typename T>
std::vector<T> Graph<T>::grad(Var v) const {
  const Node& n = node(v.id);
  if (n.grad.empty()) return std::vector<T>(n.value.size(), T{0});
  return n.grad;
}

template <typename T>
void Graph<T>::backward(Var loss) {
  Node& root = node(loss.id);
  if (root.value.size() != 1) {
    throw UsageError("backward requires a scalar loss, got shape " + shape_string(root.value.shape()));
  }
  if (backward_done_) throw UsageError("backward already ran on this graph");
  backward_done_ = true;
  if (!root.tracked) return;
  root.grad.assign(1, T{1});

  for (std::size_t id = loss.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.tracked || n.grad.empty()) continue;
    if (n.backward) {
      n.backward(*this, id);
    } else if (n.bound != nullptr && n.bound->requires_grad()) {
      if (!n.bound->has_grad()) n.bound->zero_grad();
      auto dst = n.bound->grad();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += n.grad[i];
    }
  }
}

template class Graph<float>;
template class Graph<double>;

}  // namespace slod
