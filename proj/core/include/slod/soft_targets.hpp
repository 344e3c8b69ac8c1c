#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "slod/graph.hpp"
#include "slod/tensor.hpp"

namespace slod {

/// Probability vector over K classes. Entries lie in [0,1] and sum to 1
/// within 1e-6; the constructor enforces both.
class TargetDistribution {
 public:
  explicit TargetDistribution(std::vector<double> probs);

  std::size_t num_classes() const { return probs_.size(); }
  std::span<const double> probs() const { return probs_; }
  double operator[](std::size_t k) const { return probs_[k]; }
  // Lowest index among maximal entries.
  std::size_t argmax() const;
  bool is_one_hot() const;

 private:
  std::vector<double> probs_;
};

enum class SoftLabelMode { Uniform, Teacher };

struct SoftLabelConfig {
  double alpha = 0.0;
  SoftLabelMode mode = SoftLabelMode::Uniform;
  double temperature = 1.0;  // teacher mode only

  void validate() const;
};

struct OEConfig {
  double lambda = 0.5;

  void validate() const;
};

TargetDistribution uniform_target(std::size_t num_classes);
TargetDistribution one_hot(std::size_t num_classes, std::size_t label);

// (1-α)·q + α·q′. Throws ConstraintError if the true class of the one-hot q
// would no longer be a maximal entry of the result.
TargetDistribution mix_soft_target(const TargetDistribution& q, const TargetDistribution& q_prime, double alpha);

// Batch targets as N×K tensors.
template <typename T>
Tensor<T> one_hot_batch(std::span<const int> labels, std::size_t num_classes);
template <typename T>
Tensor<T> uniform_batch(std::size_t rows, std::size_t num_classes);
template <typename T>
Tensor<T> target_batch(std::span<const TargetDistribution> targets);
// softmax(teacher_logits / temperature), row-wise.
template <typename T>
Tensor<T> teacher_targets(const Tensor<T>& teacher_logits, double temperature);

// Mean over rows of -Σ_k target_k · log_prob_k. The target is a constant.
template <typename T>
Var soft_cross_entropy(Graph<T>& g, const Tensor<T>& target, Var log_probs);

// (1-α)·H(q, p) + α·H(U(K), p).
template <typename T>
Var label_smoothing_loss(Graph<T>& g, const Tensor<T>& q, Var log_probs, double alpha);

// (1-α)·H(q, p) + α·H(p_t, p); teacher_probs is treated as a constant.
template <typename T>
Var distillation_loss(Graph<T>& g, const Tensor<T>& q, Var log_probs, const Tensor<T>& teacher_probs, double alpha);

// mean H(q, p_id) + λ · mean H(U(K), p_ood).
template <typename T>
Var outlier_exposure_loss(Graph<T>& g, const Tensor<T>& q_id, Var log_probs_id, Var log_probs_ood, double lambda);

// Σ_k -t_k log t_k of each row, averaged (0·log 0 = 0).
template <typename T>
double mean_entropy(const Tensor<T>& target);

}  // namespace slod
