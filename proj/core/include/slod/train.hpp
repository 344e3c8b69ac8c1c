#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "slod/data.hpp"
#include "slod/nn.hpp"
#include "slod/soft_targets.hpp"

namespace slod {

enum class LossKind { Hard, LabelSmoothing, Distill, OutlierExposure };

const char* loss_kind_name(LossKind kind);
LossKind parse_loss_kind(const std::string& name);

struct LossSpec {
  LossKind kind = LossKind::Hard;
  double alpha = 0.0;
  double temperature = 1.0;
  double lambda = 0.5;
  std::string teacher_ref;  // distill: hash of the teacher checkpoint
  std::string ood_ref;      // oe: name of the outlier set

  friend bool operator==(const LossSpec&, const LossSpec&) = default;
};

struct TrainConfig {
  std::size_t epochs = 5;
  std::size_t batch_size = 128;
  double lr0 = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::uint64_t seed = 0;
  bool hflip = false;
  LossSpec loss;

  void validate() const;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

void to_json(nlohmann::json& j, const LossSpec& spec);
void from_json(const nlohmann::json& j, LossSpec& spec);
void to_json(nlohmann::json& j, const TrainConfig& config);
void from_json(const nlohmann::json& j, TrainConfig& config);

struct OptimizerState {
  std::vector<std::vector<float>> velocity;

  static OptimizerState for_parameters(const Parameters<float>& params);
};

// v ← momentum·v + grad + weight_decay·w ;  w ← w − lr·v
// Gradients are read from each parameter's grad buffer.
void sgd_step(Parameters<float>& params, OptimizerState& state, double lr, double momentum, double weight_decay);

// lr0 · ½ · (1 + cos(π · step / total_steps))
double cosine_lr(std::size_t step, std::size_t total_steps, double lr0);

struct Provenance {
  std::string stage = "init";  // init | train | finetune_oe | distill
  TrainConfig config;
  std::vector<std::string> datasets;
  std::size_t epochs_completed = 0;
  std::size_t steps = 0;
  std::uint64_t seed = 0;
  int workers = 1;
  std::string parent_hash;
  // Mean training loss over the first and last 50 steps (0 when untrained).
  double loss_first_window = 0.0;
  double loss_last_window = 0.0;

  friend bool operator==(const Provenance&, const Provenance&) = default;
};

void to_json(nlohmann::json& j, const Provenance& p);
void from_json(const nlohmann::json& j, Provenance& p);

struct Checkpoint {
  ModelSpec spec;
  Parameters<float> params;
  Provenance provenance;
};

// Bitwise comparison of spec, parameters and provenance.
bool same_checkpoint(const Checkpoint& a, const Checkpoint& b);

struct TrainStats {
  std::vector<double> losses;
  std::uint64_t ood_batches = 0;
};

struct TrainResult {
  Checkpoint checkpoint;
  TrainStats stats;
};

// Fresh model trained with a hard or label-smoothing loss.
TrainResult train_model(const ModelSpec& spec, const TrainConfig& config, const LabeledDataset& id_train);

// Continues from `start` with the loss in `config` (hard or label smoothing),
// fresh optimizer state and schedule.
TrainResult continue_training(const Checkpoint& start, const TrainConfig& config, const LabeledDataset& id_train);

// Outlier-exposure fine-tuning from `teacher`: each step pairs one ID batch
// with one OOD batch; OOD batches cycle with their own seeded order.
// `config.lr0` is used as given (callers scale it for fine-tuning).
TrainResult finetune_oe(const Checkpoint& teacher, const LabeledDataset& id_train, const LabeledDataset& ood_train,
                        const OEConfig& oe, const TrainConfig& config);

// The effective configs recorded in provenance by finetune_oe / distill.
TrainConfig oe_train_config(const TrainConfig& base, const OEConfig& oe, const LabeledDataset& ood_train);
TrainConfig distill_train_config(const TrainConfig& base, const std::string& teacher_hash);

// Fresh student (same architecture as the teacher unless `student_spec` is
// given) trained with the distillation loss against the frozen teacher's
// predictions on each (un-augmented) training batch.
TrainResult distill(const Checkpoint& teacher, const LabeledDataset& id_train, const TrainConfig& config,
                    std::optional<ModelSpec> student_spec = std::nullopt);

// Checkpoint container: "SLOD", u32 LE version, u64 LE header length,
// UTF-8 JSON header, then float32 LE parameter arrays in manifest order.
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);
// The JSON header of a serialized checkpoint.
nlohmann::json checkpoint_header(std::span<const std::uint8_t> bytes);

// SHA-256 hex digests.
std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string checkpoint_hash(const Checkpoint& ckpt);
std::string parameters_hash(const Parameters<float>& params);
// "<name>@<16 hex digits of SHA-256 over images and labels>".
std::string dataset_tag(const LabeledDataset& ds);

}  // namespace slod
