#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "slod/graph.hpp"
#include "slod/tensor.hpp"

namespace slod {

/// Architecture of the small CNN:
/// conv(C→w0)-relu-pool-conv(w0→w1)-relu-pool-flatten-fc(→fc)-relu-fc(→K).
struct ModelSpec {
  int input_channels = 1;
  int input_side = 28;
  int num_classes = 10;
  std::array<int, 2> conv_widths{16, 32};
  int fc_width = 128;

  void validate() const;
  // Side length after both pools.
  int pooled_side() const { return input_side / 4; }

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

void to_json(nlohmann::json& j, const ModelSpec& spec);
void from_json(const nlohmann::json& j, ModelSpec& spec);

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

// Ordered by architecture definition; names are unique.
template <typename T>
using Parameters = std::vector<NamedTensor<T>>;

// (name, shape) of every parameter in forward order.
std::vector<std::pair<std::string, Shape>> parameter_layout(const ModelSpec& spec);
std::size_t parameter_count(const ModelSpec& spec);

// Kaiming-uniform fan-in weights (negative slope √5, bound 1/sqrt(fan_in)),
// zero biases.
Parameters<float> init_model(const ModelSpec& spec, std::uint64_t seed);

// Binds every parameter as a graph leaf (tracked iff requires_grad).
template <typename T>
std::vector<Var> bind_parameters(Graph<T>& g, Parameters<T>& params);

template <typename T>
Var forward(Graph<T>& g, std::span<const Var> params, const ModelSpec& spec, Var batch);

// Gradient-free forward in chunks; returns N×K logits.
Tensor<float> predict_logits(const Parameters<float>& params, const ModelSpec& spec, const Tensor<float>& images,
                             std::size_t chunk = 500);

template <typename T>
void zero_grads(Parameters<T>& params) {
  for (auto& p : params) p.tensor.zero_grad();
}

template <typename T>
void set_requires_grad(Parameters<T>& params, bool on) {
  for (auto& p : params) p.tensor.set_requires_grad(on);
}

}  // namespace slod
