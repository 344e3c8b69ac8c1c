#include "slod/soft_targets.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <string>

#include "slod/errors.hpp"
#include "slod/ops.hpp"

namespace slod {

namespace {

constexpr double kSumTolerance = 1e-6;

void check_alpha(double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw DomainError("alpha must lie in [0,1], got " + std::to_string(alpha));
}

template <typename T>
void check_target_rows(const Tensor<T>& target, const Tensor<T>& log_probs) {
  if (target.shape() != log_probs.shape() || target.rank() != 2) {
    throw ShapeError("target " + shape_string(target.shape()) + " does not match log-probabilities " +
                     shape_string(log_probs.shape()));
  }
}

}  // namespace

TargetDistribution::TargetDistribution(std::vector<double> probs) : probs_(std::move(probs)) {
  if (probs_.size() < 2) throw DomainError("a target distribution needs at least 2 classes");
  double total = 0.0;
  for (double p : probs_) {
    if (!(p >= 0.0 && p <= 1.0)) throw DomainError("target probabilities must lie in [0,1]");
    total += p;
  }
  if (std::abs(total - 1.0) > kSumTolerance) {
    throw DomainError("target probabilities sum to " + std::to_string(total) + ", expected 1");
  }
}

std::size_t TargetDistribution::argmax() const {
  return static_cast<std::size_t>(std::max_element(probs_.begin(), probs_.end()) - probs_.begin());
}

bool TargetDistribution::is_one_hot() const {
  std::size_t ones = 0;
  for (double p : probs_) {
    if (p == 1.0) {
      ++ones;
    } else if (p != 0.0) {
      return false;
    }
  }
  return ones == 1;
}

void SoftLabelConfig::validate() const {
  check_alpha(alpha);
  if (!(temperature > 0.0)) throw DomainError("temperature must be > 0");
}

void OEConfig::validate() const {
  if (!(lambda >= 0.0)) throw DomainError("lambda must be >= 0, got " + std::to_string(lambda));
}

TargetDistribution uniform_target(std::size_t num_classes) {
  if (num_classes < 2) throw DomainError("uniform target needs K >= 2, got " + std::to_string(num_classes));
  return TargetDistribution(std::vector<double>(num_classes, 1.0 / static_cast<double>(num_classes)));
}

TargetDistribution one_hot(std::size_t num_classes, std::size_t label) {
  if (label >= num_classes) throw DomainError("label " + std::to_string(label) + " out of range");
  std::vector<double> probs(num_classes, 0.0);
  probs[label] = 1.0;
  return TargetDistribution(std::move(probs));
}

TargetDistribution mix_soft_target(const TargetDistribution& q, const TargetDistribution& q_prime, double alpha) {
  check_alpha(alpha);
  if (!q.is_one_hot()) throw DomainError("mix_soft_target: q must be one-hot");
  if (q.num_classes() != q_prime.num_classes()) {
    throw ShapeError("mix_soft_target: q has " + std::to_string(q.num_classes()) + " classes, q' has " +
                     std::to_string(q_prime.num_classes()));
  }
  const std::size_t label = q.argmax();
  std::vector<double> mixed(q.num_classes());
  for (std::size_t k = 0; k < mixed.size(); ++k) mixed[k] = (1.0 - alpha) * q[k] + alpha * q_prime[k];
  const double total = std::accumulate(mixed.begin(), mixed.end(), 0.0);
  for (double& v : mixed) v /= total;
  for (std::size_t k = 0; k < mixed.size(); ++k) {
    if (mixed[k] > mixed[label]) {
      throw ConstraintError("mixed target moves the argmax from class " + std::to_string(label) + " to class " +
                            std::to_string(k));
    }
  }
  return TargetDistribution(std::move(mixed));
}

template <typename T>
Tensor<T> one_hot_batch(std::span<const int> labels, std::size_t num_classes) {
  Tensor<T> out({labels.size(), num_classes});
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= num_classes) {
      throw ValueError("label " + std::to_string(labels[r]) + " out of range for K=" + std::to_string(num_classes));
    }
    out.at(r, static_cast<std::size_t>(labels[r])) = T{1};
  }
  return out;
}

template <typename T>
Tensor<T> uniform_batch(std::size_t rows, std::size_t num_classes) {
  return Tensor<T>({rows, num_classes}, T{1} / static_cast<T>(num_classes));
}

template <typename T>
Tensor<T> target_batch(std::span<const TargetDistribution> targets) {
  if (targets.empty()) throw UsageError("empty target batch");
  const std::size_t k = targets[0].num_classes();
  Tensor<T> out({targets.size(), k});
  for (std::size_t r = 0; r < targets.size(); ++r) {
    if (targets[r].num_classes() != k) throw ShapeError("target batch rows disagree on K");
    for (std::size_t c = 0; c < k; ++c) out.at(r, c) = static_cast<T>(targets[r][c]);
  }
  return out;
}

template <typename T>
Tensor<T> teacher_targets(const Tensor<T>& teacher_logits, double temperature) {
  if (!(temperature > 0.0)) throw DomainError("temperature must be > 0");
  if (temperature == 1.0) return softmax_rows(teacher_logits);
  Tensor<T> scaled = teacher_logits;
  const T inv = static_cast<T>(1.0 / temperature);
  for (T& v : scaled.data()) v *= inv;
  return softmax_rows(scaled);
}

template <typename T>
Var soft_cross_entropy(Graph<T>& g, const Tensor<T>& target, Var log_probs) {
  const Tensor<T>& lp = g.value(log_probs);
  check_target_rows(target, lp);
  const std::size_t rows = lp.dim(0);
  T total{0};
  for (std::size_t i = 0; i < lp.size(); ++i) {
    if (target[i] != T{0}) total -= target[i] * lp[i];
  }
  const T n = static_cast<T>(rows);
  auto held = std::make_shared<Tensor<T>>(target);
  return g.record(OpKind::SoftCrossEntropy, {log_probs}, Tensor<T>({1}, total / n),
                  [held, n](Graph<T>& gr, std::size_t self) {
                    if (T* d = gr.grad_of(gr.input(self, 0))) {
                      const T up = gr.upstream(self)[0] / n;
                      for (std::size_t i = 0; i < held->size(); ++i) d[i] -= (*held)[i] * up;
                    }
                  });
}

template <typename T>
Var label_smoothing_loss(Graph<T>& g, const Tensor<T>& q, Var log_probs, double alpha) {
  check_alpha(alpha);
  // Read dims before adding nodes: growing the graph invalidates value references.
  const std::size_t n = g.value(log_probs).dim(0), k = g.value(log_probs).dim(1);
  Var hard = soft_cross_entropy(g, q, log_probs);
  Var smooth = soft_cross_entropy(g, uniform_batch<T>(n, k), log_probs);
  return add(g, scale(g, hard, static_cast<T>(1.0 - alpha)), scale(g, smooth, static_cast<T>(alpha)));
}

template <typename T>
Var distillation_loss(Graph<T>& g, const Tensor<T>& q, Var log_probs, const Tensor<T>& teacher_probs, double alpha) {
  check_alpha(alpha);
  check_target_rows(teacher_probs, g.value(log_probs));
  const std::size_t k = teacher_probs.dim(1);
  for (std::size_t r = 0; r < teacher_probs.dim(0); ++r) {
    double total = 0.0;
    for (std::size_t c = 0; c < k; ++c) total += static_cast<double>(teacher_probs.at(r, c));
    if (std::abs(total - 1.0) > 1e-4) throw DomainError("teacher probabilities do not sum to 1");
  }
  Var hard = soft_cross_entropy(g, q, log_probs);
  Var soft = soft_cross_entropy(g, teacher_probs, log_probs);
  return add(g, scale(g, hard, static_cast<T>(1.0 - alpha)), scale(g, soft, static_cast<T>(alpha)));
}

template <typename T>
Var outlier_exposure_loss(Graph<T>& g, const Tensor<T>& q_id, Var log_probs_id, Var log_probs_ood, double lambda) {
  if (!(lambda >= 0.0)) throw DomainError("lambda must be >= 0");
  Var id_term = soft_cross_entropy(g, q_id, log_probs_id);
  const Tensor<T>& lo = g.value(log_probs_ood);
  if (lo.rank() != 2 || lo.dim(1) != g.value(log_probs_id).dim(1)) {
    throw ShapeError("OOD log-probabilities " + shape_string(lo.shape()) + " do not match ID " +
                     shape_string(g.value(log_probs_id).shape()));
  }
  Var ood_term = soft_cross_entropy(g, uniform_batch<T>(lo.dim(0), lo.dim(1)), log_probs_ood);
  return add(g, id_term, scale(g, ood_term, static_cast<T>(lambda)));
}

template <typename T>
double mean_entropy(const Tensor<T>& target) {
  double total = 0.0;
  for (T v : target.data()) {
    if (v > T{0}) total -= static_cast<double>(v) * std::log(static_cast<double>(v));
  }
  return total / static_cast<double>(target.dim(0));
}

#define SLOD_INSTANTIATE_TARGETS(T)                                                      \
  template Tensor<T> one_hot_batch(std::span<const int>, std::size_t);                  \
  template Tensor<T> uniform_batch(std::size_t, std::size_t);                           \
  template Tensor<T> target_batch(std::span<const TargetDistribution>);                  \
  template Tensor<T> teacher_targets(const Tensor<T>&, double);                          \
  template Var soft_cross_entropy(Graph<T>&, const Tensor<T>&, Var);                    \
  template Var label_smoothing_loss(Graph<T>&, const Tensor<T>&, Var, double);          \
  template Var distillation_loss(Graph<T>&, const Tensor<T>&, Var, const Tensor<T>&, double); \
  template Var outlier_exposure_loss(Graph<T>&, const Tensor<T>&, Var, Var, double);    \
  template double mean_entropy(const Tensor<T>&);

SLOD_INSTANTIATE_TARGETS(float)
SLOD_INSTANTIATE_TARGETS(double)

#undef SLOD_INSTANTIATE_TARGETS

}  // namespace slod
