#include "slod/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "slod/errors.hpp"

namespace slod {

std::vector<double> msp_score(const Tensor<float>& logits) {
  const Tensor<double> probs = softmax_rows(logits.cast<double>());
  const std::size_t rows = probs.dim(0), cols = probs.dim(1);
  std::vector<double> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = probs.data().data() + r * cols;
    out[r] = *std::max_element(row, row + cols);
  }
  return out;
}

std::vector<int> argmax_rows(const Tensor<float>& logits) {
  if (logits.rank() != 2) throw ShapeError("argmax_rows: expected a matrix, got " + shape_string(logits.shape()));
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  std::vector<int> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const float* row = logits.data().data() + r * cols;
    out[r] = static_cast<int>(std::max_element(row, row + cols) - row);
  }
  return out;
}

double accuracy(const Tensor<float>& logits, std::span<const int> labels) {
  const auto pred = argmax_rows(logits);
  if (pred.size() != labels.size()) {
    throw ShapeError("accuracy: " + std::to_string(pred.size()) + " predictions for " +
                     std::to_string(labels.size()) + " labels");
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == labels[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

double auroc(std::span<const double> id_scores, std::span<const double> ood_scores) {
  if (id_scores.empty() || ood_scores.empty()) throw UsageError("auroc: both score sets must be nonempty");
  const std::size_t n_id = id_scores.size(), n_ood = ood_scores.size(), n = n_id + n_ood;
  std::vector<std::pair<double, bool>> all;
  all.reserve(n);
  for (double s : id_scores) all.emplace_back(s, true);
  for (double s : ood_scores) all.emplace_back(s, false);
  for (const auto& [s, is_id] : all) {
    if (!std::isfinite(s)) throw NumericError("auroc: non-finite score");
  }
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.first < b.first; });

  // Ranks are 1-based; a tie group spanning positions [i, j) shares rank (i+j+1)/2.
  // Twice the rank sum stays an integer, so the statistic is exact.
  std::uint64_t twice_rank_sum = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && all[j].first == all[i].first) ++j;
    std::uint64_t id_in_group = 0;
    for (std::size_t k = i; k < j; ++k) id_in_group += all[k].second ? 1 : 0;
    twice_rank_sum += id_in_group * static_cast<std::uint64_t>(i + j + 1);
    i = j;
  }
  // 2·U = 2·R_id − n_id(n_id+1); U counts wins plus half-ties.
  const std::uint64_t twice_u = twice_rank_sum - static_cast<std::uint64_t>(n_id) * (n_id + 1);
  return static_cast<double>(twice_u) / (2.0 * static_cast<double>(n_id) * static_cast<double>(n_ood));
}

double ece(std::span<const double> confidences, std::span<const std::uint8_t> correct, int n_bins) {
  if (confidences.empty()) throw UsageError("ece: empty input");
  if (confidences.size() != correct.size()) throw ShapeError("ece: confidences and correctness differ in length");
  if (n_bins < 1) throw DomainError("ece: n_bins must be >= 1");
  const auto bins = static_cast<std::size_t>(n_bins);
  std::vector<double> conf_sum(bins, 0.0), hit_sum(bins, 0.0);
  std::vector<std::size_t> count(bins, 0);
  for (std::size_t i = 0; i < confidences.size(); ++i) {
    const double c = confidences[i];
    if (!(c >= 0.0 && c <= 1.0)) throw DomainError("ece: confidence outside [0,1]");
    const double pos = std::ceil(c * static_cast<double>(bins));
    std::size_t b = pos <= 1.0 ? 0 : std::min(bins - 1, static_cast<std::size_t>(pos) - 1);
    // c·bins can round up past an edge; edges are right-closed.
    if (b > 0 && c <= static_cast<double>(b) / static_cast<double>(bins)) --b;
    conf_sum[b] += c;
    hit_sum[b] += correct[i] ? 1.0 : 0.0;
    ++count[b];
  }
  const double total = static_cast<double>(confidences.size());
  double out = 0.0;
  for (std::size_t b = 0; b < bins; ++b) {
    if (count[b] == 0) continue;
    const double n = static_cast<double>(count[b]);
    out += (n / total) * std::abs(hit_sum[b] / n - conf_sum[b] / n);
  }
  return out;
}

void ScoreSet::validate(int num_classes) const {
  const double floor = 1.0 / static_cast<double>(num_classes) - 1e-9;
  for (const auto* set : {&id_scores, &ood_scores}) {
    for (double s : *set) {
      if (!std::isfinite(s)) throw NumericError("score set contains a non-finite score");
      if (score_kind == "msp" && (s < floor || s > 1.0 + 1e-9)) {
        throw DomainError("msp score " + std::to_string(s) + " outside [1/K, 1]");
      }
    }
  }
}

MetricsReport evaluate_checkpoint(const Checkpoint& ckpt, const LabeledDataset& id_test,
                                  std::span<const LabeledDataset> ood_sets, const RowContext& ctx, int ece_bins) {
  const std::string hash = checkpoint_hash(ckpt);
  MetricsRow base;
  base.experiment = ctx.experiment;
  base.study = ctx.study;
  base.checkpoint_hash = hash;
  base.id_dataset = id_test.name();
  base.alpha = ctx.alpha;
  base.lambda = ctx.lambda;
  base.temperature = ctx.temperature;
  base.seed = ctx.seed;
  base.epoch_budget = ctx.epoch_budget;

  const Tensor<float> id_logits = predict_logits(ckpt.params, ckpt.spec, id_test.images());
  const auto predictions = argmax_rows(id_logits);
  const auto& labels = id_test.labels();
  std::vector<std::uint8_t> correct(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) correct[i] = predictions[i] == labels[i] ? 1 : 0;
  const auto id_scores = msp_score(id_logits);

  MetricsReport rows;
  MetricsRow id_row = base;
  id_row.accuracy = accuracy(id_logits, labels);
  id_row.ece = ece(id_scores, correct, ece_bins);
  rows.push_back(std::move(id_row));

  for (const auto& ood : ood_sets) {
    ScoreSet scores{id_scores, msp_score(predict_logits(ckpt.params, ckpt.spec, ood.images())), "msp"};
    scores.validate(ckpt.spec.num_classes);
    MetricsRow row = base;
    row.ood_dataset = ood.name();
    row.auroc = scores.auroc();
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace slod
