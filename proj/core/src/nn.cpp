#include "slod/nn.hpp"

#include <cmath>
#include <random>

#include "slod/errors.hpp"
#include "slod/ops.hpp"

namespace slod {

void ModelSpec::validate() const {
  if (input_channels != 1 && input_channels != 3) {
    throw DomainError("model.input_channels must be 1 or 3, got " + std::to_string(input_channels));
  }
  if (input_side <= 0 || input_side % 4 != 0) {
    throw DomainError("model.input_side must be a positive multiple of 4, got " + std::to_string(input_side));
  }
  if (num_classes < 2) throw DomainError("model.num_classes must be >= 2, got " + std::to_string(num_classes));
  if (conv_widths[0] <= 0 || conv_widths[1] <= 0 || fc_width <= 0) {
    throw DomainError("model widths must be positive");
  }
}

void to_json(nlohmann::json& j, const ModelSpec& spec) {
  j = nlohmann::json{{"input_channels", spec.input_channels},
                     {"input_side", spec.input_side},
                     {"num_classes", spec.num_classes},
                     {"conv_widths", spec.conv_widths},
                     {"fc_width", spec.fc_width}};
}

void from_json(const nlohmann::json& j, ModelSpec& spec) {
  j.at("input_channels").get_to(spec.input_channels);
  j.at("input_side").get_to(spec.input_side);
  j.at("num_classes").get_to(spec.num_classes);
  j.at("conv_widths").get_to(spec.conv_widths);
  j.at("fc_width").get_to(spec.fc_width);
}

std::vector<std::pair<std::string, Shape>> parameter_layout(const ModelSpec& spec) {
  spec.validate();
  const auto c = static_cast<std::size_t>(spec.input_channels);
  const auto w0 = static_cast<std::size_t>(spec.conv_widths[0]);
  const auto w1 = static_cast<std::size_t>(spec.conv_widths[1]);
  const auto fc = static_cast<std::size_t>(spec.fc_width);
  const auto k = static_cast<std::size_t>(spec.num_classes);
  const auto side = static_cast<std::size_t>(spec.pooled_side());
  const std::size_t flat = w1 * side * side;
  return {
      {"conv1.weight", {w0, c, 3, 3}}, {"conv1.bias", {w0}},     {"conv2.weight", {w1, w0, 3, 3}},
      {"conv2.bias", {w1}},            {"fc1.weight", {flat, fc}}, {"fc1.bias", {fc}},
      {"fc2.weight", {fc, k}},         {"fc2.bias", {k}},
  };
}

std::size_t parameter_count(const ModelSpec& spec) {
  std::size_t total = 0;
  for (const auto& [name, shape] : parameter_layout(spec)) total += element_count(shape);
  return total;
}

Parameters<float> init_model(const ModelSpec& spec, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Parameters<float> params;
  for (auto& [name, shape] : parameter_layout(spec)) {
    Tensor<float> t(shape);
    if (shape.size() > 1) {
      // conv: fan_in = C·3·3; fc stored in×out: fan_in = rows
      const std::size_t fan_in = shape.size() == 4 ? shape[1] * 9 : shape[0];
      // Kaiming-uniform with negative slope √5: sqrt(6 / ((1 + 5)·fan_in)).
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (float& v : t.data()) v = static_cast<float>(dist(rng));
    }
    t.set_requires_grad(true);
    params.push_back({name, std::move(t)});
  }
  return params;
}

template <typename T>
std::vector<Var> bind_parameters(Graph<T>& g, Parameters<T>& params) {
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (auto& p : params) vars.push_back(g.leaf(p.tensor));
  return vars;
}

template <typename T>
Var forward(Graph<T>& g, std::span<const Var> params, const ModelSpec& spec, Var batch) {
  if (params.size() != 8) throw ShapeError("SmallCNN expects 8 parameter tensors, got " + std::to_string(params.size()));
  const Tensor<T>& x = g.value(batch);
  const Shape expected{x.rank() > 0 ? x.dim(0) : 0, static_cast<std::size_t>(spec.input_channels),
                       static_cast<std::size_t>(spec.input_side), static_cast<std::size_t>(spec.input_side)};
  if (x.shape() != expected) {
    throw ShapeError("batch shape " + shape_string(x.shape()) + " does not match model input " +
                     shape_string(expected));
  }
  Var h = relu(g, add_channel_bias(g, conv2d(g, batch, params[0]), params[1]));
  h = max_pool2(g, h);
  h = relu(g, add_channel_bias(g, conv2d(g, h, params[2]), params[3]));
  h = max_pool2(g, h);
  h = flatten(g, h);
  h = relu(g, add_row_bias(g, matmul(g, h, params[4]), params[5]));
  return add_row_bias(g, matmul(g, h, params[6]), params[7]);
}

Tensor<float> predict_logits(const Parameters<float>& params, const ModelSpec& spec, const Tensor<float>& images,
                             std::size_t chunk) {
  const std::size_t n = images.dim(0);
  const std::size_t per = images.size() / n;
  const auto k = static_cast<std::size_t>(spec.num_classes);
  Tensor<float> logits({n, k});
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t len = std::min(chunk, n - start);
    Graph<float> g;
    std::vector<Var> vars;
    for (const auto& p : params) vars.push_back(g.constant(p.tensor));
    Shape shape = images.shape();
    shape[0] = len;
    std::vector<float> slice(images.data().begin() + start * per, images.data().begin() + (start + len) * per);
    Var out = forward<float>(g, vars, spec, g.constant(Tensor<float>(shape, std::move(slice))));
    std::copy_n(g.value(out).data().begin(), len * k, logits.data().begin() + start * k);
  }
  return logits;
}

template std::vector<Var> bind_parameters(Graph<float>&, Parameters<float>&);
template std::vector<Var> bind_parameters(Graph<double>&, Parameters<double>&);
template Var forward(Graph<float>&, std::span<const Var>, const ModelSpec&, Var);
template Var forward(Graph<double>&, std::span<const Var>, const ModelSpec&, Var);

}  // namespace slod
