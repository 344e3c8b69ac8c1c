#pragma once

#include "slod/graph.hpp"

// Differentiable operations. Each takes the graph it records into; inputs
// must come from that graph.

namespace slod {

// (m×k)·(k×n) → m×n.
template <typename T>
Var matmul(Graph<T>& g, Var a, Var b);

// N×C×H×W input, F×C×3×3 kernel, stride 1, zero padding 1 → N×F×H×W.
// Cross-correlation (the kernel is not flipped).
template <typename T>
Var conv2d(Graph<T>& g, Var input, Var kernel);

// x (N×K) plus bias (K) broadcast over rows.
template <typename T>
Var add_row_bias(Graph<T>& g, Var x, Var bias);

// x (N×C×H×W) plus bias (C) broadcast over batch and space.
template <typename T>
Var add_channel_bias(Graph<T>& g, Var x, Var bias);

template <typename T>
Var relu(Graph<T>& g, Var x);

// 2×2 window, stride 2, on N×C×H×W with even H and W. The gradient goes to
// the first maximal element of each window in row-major order.
template <typename T>
Var max_pool2(Graph<T>& g, Var x);

// N×... → N×(rest).
template <typename T>
Var flatten(Graph<T>& g, Var x);

// Row-wise, max-subtracted. Rank-2 input.
template <typename T>
Var log_softmax(Graph<T>& g, Var logits);

template <typename T>
Var sum(Graph<T>& g, Var x);

template <typename T>
Var mean(Graph<T>& g, Var x);

template <typename T>
Var square(Graph<T>& g, Var x);

template <typename T>
Var scale(Graph<T>& g, Var x, T factor);

// Elementwise, identical shapes.
template <typename T>
Var add(Graph<T>& g, Var a, Var b);

}  // namespace slod
