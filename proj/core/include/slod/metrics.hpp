#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "slod/data.hpp"
#include "slod/tensor.hpp"
#include "slod/train.hpp"

namespace slod {

inline constexpr int kDefaultEceBins = 15;

// Maximum softmax probability per row.
std::vector<double> msp_score(const Tensor<float>& logits);

// Lowest index among each row's maximal entries.
std::vector<int> argmax_rows(const Tensor<float>& logits);

double accuracy(const Tensor<float>& logits, std::span<const int> labels);

// P(id > ood) + ½·P(id = ood) over all (id, ood) pairs, via average ranks.
double auroc(std::span<const double> id_scores, std::span<const double> ood_scores);

// Equal-width bins over (0,1], right-closed; confidence 0 falls in the first
// bin. Σ_b |B_b|/N · |acc(B_b) − conf(B_b)|.
double ece(std::span<const double> confidences, std::span<const std::uint8_t> correct, int n_bins = kDefaultEceBins);

struct ScoreSet {
  std::vector<double> id_scores;
  std::vector<double> ood_scores;
  std::string score_kind = "msp";

  // Finite scores, msp scores within [1/K, 1].
  void validate(int num_classes) const;
  double auroc() const { return slod::auroc(id_scores, ood_scores); }
};

/// One report line. ID rows carry accuracy and ECE; OOD rows carry AUROC.
struct MetricsRow {
  std::string experiment;
  std::string study;
  std::string checkpoint_hash;
  std::string id_dataset;
  std::string ood_dataset;  // empty for ID rows
  double alpha = 0.0;
  double lambda = 0.0;
  double temperature = 1.0;
  std::uint64_t seed = 0;
  std::size_t epoch_budget = 0;
  std::optional<double> accuracy;
  std::optional<double> ece;
  std::optional<double> auroc;

  friend bool operator==(const MetricsRow&, const MetricsRow&) = default;
};

using MetricsReport = std::vector<MetricsRow>;

// Fields shared by every row produced for one checkpoint.
struct RowContext {
  std::string experiment;
  std::string study = "single";
  double alpha = 0.0;
  double lambda = 0.0;
  double temperature = 1.0;
  std::uint64_t seed = 0;
  std::size_t epoch_budget = 0;
};

// One ID row (accuracy, ECE) followed by one AUROC row per OOD set, in the
// order given. Does not modify the checkpoint.
MetricsReport evaluate_checkpoint(const Checkpoint& ckpt, const LabeledDataset& id_test,
                                  std::span<const LabeledDataset> ood_sets, const RowContext& ctx,
                                  int ece_bins = kDefaultEceBins);

}  // namespace slod
