#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "slod/data.hpp"
#include "slod/metrics.hpp"
#include "slod/nn.hpp"
#include "slod/train.hpp"

namespace slod {

enum class StudyKind { LsSweep, DistillStudy, OeStudy, OdPipeline, Single };

const char* study_name(StudyKind kind);

struct DataConfig {
  std::filesystem::path data_root = "data";
  std::string id = "mnist";
  std::vector<std::string> oe_outliers{"fashion_mnist"};
  std::vector<std::string> ood_test{"fashion_mnist", "uniform", "gaussian"};
  std::size_t train_limit = 0;
  std::size_t test_limit = 0;
  std::size_t ood_limit = 0;
  std::size_t outlier_limit = 0;
  std::size_t noise_count = 2000;
  std::uint64_t noise_seed = 7;
};

struct ExperimentPlan {
  StudyKind kind = StudyKind::Single;
  std::string name = "default";
  std::vector<double> alpha_grid{0, 0.001, 0.01, 0.05, 0.1, 0.2, 0.3};
  std::vector<double> distill_alphas{0.5, 0.9, 1.0};
  std::vector<std::uint64_t> seeds{0, 1, 2};
  DataConfig data;
  // Input channels/side/classes are filled in from the ID dataset.
  ModelSpec model;
  // Baseline training template; loss and seed are set per run.
  TrainConfig train;
  std::size_t oe_epochs = 2;
  double oe_lr_scale = 0.1;
  double oe_lambda = 0.5;
  std::size_t distill_epochs = 5;
  double temperature = 1.0;
  double od_alpha = 0.9;
  int ece_bins = kDefaultEceBins;
  std::filesystem::path out_dir = "out";
  // Load a persisted checkpoint instead of retraining when its provenance
  // matches the run exactly.
  bool reuse_checkpoints = false;

  void validate() const;
};

ExperimentPlan plan_from_config(const nlohmann::json& config, StudyKind kind);

struct DataBundle {
  LabeledDataset id_train;
  LabeledDataset id_test;
  std::optional<LabeledDataset> outliers;  // OE training outliers
  std::vector<LabeledDataset> ood_tests;
};

// Loads the ID splits, normalizes everything with the ID train statistics,
// builds the outlier union and the held-out OOD test sets.
DataBundle load_data(const DataConfig& config, bool need_outliers);

// Fills input_channels / input_side / num_classes from the ID data.
ModelSpec model_for(const ModelSpec& widths, const DataBundle& data, const std::string& id_name);

struct PairedDifference {
  std::string teacher;  // experiment id of the reference row
  std::string student;
  std::string ood_dataset;
  double alpha = 0.0;
  std::uint64_t seed = 0;
  double teacher_auroc = 0.0;
  double student_auroc = 0.0;
  double difference = 0.0;  // student − teacher

  friend bool operator==(const PairedDifference&, const PairedDifference&) = default;
};

struct ReportTable {
  std::string study;
  MetricsReport rows;
  std::vector<PairedDifference> paired;
  nlohmann::json diagnostics = nlohmann::json::object();
};

ReportTable run_single(const ExperimentPlan& plan, const DataBundle& data);
ReportTable run_ls_sweep(const ExperimentPlan& plan, const DataBundle& data);
ReportTable run_distillation_study(const ExperimentPlan& plan, const DataBundle& data);
// Baseline then OE fine-tune per seed; pairs every OE AUROC with its baseline.
ReportTable run_oe_study(const ExperimentPlan& plan, const DataBundle& data);
ReportTable run_od_pipeline(const ExperimentPlan& plan, const DataBundle& data);
ReportTable run_plan(const ExperimentPlan& plan, const DataBundle& data);

// ---- reports ----

enum class ReportFormat { Csv, Json };

inline constexpr const char* kCsvHeader =
    "experiment,study,checkpoint_hash,id_dataset,ood_dataset,alpha,lambda,temperature,seed,epoch_budget,"
    "accuracy,ece,auroc";

double median(std::vector<double> values);

// Per-cell medians over seeds; cells keyed by every row field except seed
// and checkpoint hash, in sorted key order.
nlohmann::json aggregate(const ReportTable& table);

std::string render_csv(const ReportTable& table);
nlohmann::json render_json(const ReportTable& table);
ReportTable parse_report_json(const nlohmann::json& doc);
ReportTable read_report_json(const std::filesystem::path& path);

void emit_report(const ReportTable& table, ReportFormat format, const std::filesystem::path& path);
// Writes <out>/reports/report.{csv,json}; returns the report directory.
std::filesystem::path write_reports(const ReportTable& table, const std::filesystem::path& out_dir,
                                    const std::vector<std::string>& formats);

}  // namespace slod
