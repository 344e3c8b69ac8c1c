#include "slod/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "slod/errors.hpp"

namespace slod {

void retain_freed_memory() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::string out = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) out += ", ";
    out += std::to_string(shape[i]);
  }
  return out + ")";
}

namespace {

void check_dims(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor shape must have at least one dimension");
  for (std::size_t d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_string(shape));
  }
}

}  // namespace

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)) {
  check_dims(shape_);
  data_.assign(element_count(shape_), fill);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
  check_dims(shape_);
  if (data_.size() != element_count(shape_)) {
    throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " +
                     shape_string(shape_));
  }
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_string(shape_));
  }
  return shape_[axis];
}

template <typename T>
std::span<T> Tensor<T>::grad() {
  if (!grad_) throw UsageError("tensor has no gradient");
  return *grad_;
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  if (!grad_) throw UsageError("tensor has no gradient");
  return *grad_;
}

template <typename T>
void Tensor<T>::zero_grad() {
  if (grad_) {
    std::fill(grad_->begin(), grad_->end(), T{0});
  } else {
    grad_.emplace(data_.size(), T{0});
  }
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
  if (element_count(shape) != data_.size()) {
    throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

template class Tensor<float>;
template class Tensor<double>;

namespace {

template <typename T>
void check_logits(const Tensor<T>& logits) {
  if (logits.rank() != 2) throw ShapeError("expected a matrix, got " + shape_string(logits.shape()));
  for (T v : logits.data()) {
    if (!std::isfinite(v)) throw NumericError("non-finite logit");
  }
}

}  // namespace

template <typename T>
Tensor<T> log_softmax_rows(const Tensor<T>& logits) {
  check_logits(logits);
  const std::size_t rows = logits.dim(0);
  const std::size_t cols = logits.dim(1);
  Tensor<T> out(logits.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = logits.data().data() + r * cols;
    T* o = out.data().data() + r * cols;
    const T peak = *std::max_element(in, in + cols);
    T total{0};
    for (std::size_t c = 0; c < cols; ++c) total += std::exp(in[c] - peak);
    const T log_norm = peak + std::log(total);
    for (std::size_t c = 0; c < cols; ++c) o[c] = in[c] - log_norm;
  }
  return out;
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits) {
  Tensor<T> out = log_softmax_rows(logits);
  for (T& v : out.data()) v = std::exp(v);
  return out;
}

template Tensor<float> log_softmax_rows(const Tensor<float>&);
template Tensor<double> log_softmax_rows(const Tensor<double>&);
template Tensor<float> softmax_rows(const Tensor<float>&);
template Tensor<double> softmax_rows(const Tensor<double>&);

}  // namespace slod
