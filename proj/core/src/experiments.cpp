#include "slod/experiments.hpp"

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>

#include "slod/errors.hpp"

namespace slod {

const char* study_name(StudyKind kind) {
  switch (kind) {
    case StudyKind::LsSweep: return "ls_sweep";
    case StudyKind::DistillStudy: return "distill_study";
    case StudyKind::OeStudy: return "oe_study";
    case StudyKind::OdPipeline: return "od_pipeline";
    case StudyKind::Single: return "single";
  }
  return "unknown";
}

void ExperimentPlan::validate() const {
  if (seeds.empty()) throw UsageError("experiment.seeds must be nonempty");
  for (const auto* grid : {&alpha_grid, &distill_alphas}) {
    for (double a : *grid) {
      if (!(a >= 0.0 && a <= 1.0)) throw DomainError("alpha grid values must lie in [0,1], got " + std::to_string(a));
    }
  }
  if (kind == StudyKind::LsSweep && alpha_grid.empty()) throw UsageError("experiment.alpha_grid must be nonempty");
  if (kind == StudyKind::DistillStudy && distill_alphas.empty()) {
    throw UsageError("experiment.distill_alphas must be nonempty");
  }
  if (!(od_alpha >= 0.0 && od_alpha <= 1.0)) throw DomainError("experiment.od_alpha must lie in [0,1]");
  if (!(oe_lr_scale > 0.0)) throw DomainError("experiment.oe_lr_scale must be > 0");
  if (ece_bins < 1) throw DomainError("experiment.ece_bins must be >= 1");
  train.validate();
}

ExperimentPlan plan_from_config(const nlohmann::json& config, StudyKind kind) {
  ExperimentPlan plan;
  plan.kind = kind;
  try {
    const auto& d = config.at("data");
    plan.data.data_root = d.at("data_root").get<std::string>();
    plan.data.id = d.at("id").get<std::string>();
    plan.data.oe_outliers = d.at("oe_outliers").get<std::vector<std::string>>();
    plan.data.ood_test = d.at("ood_test").get<std::vector<std::string>>();
    plan.data.train_limit = d.at("train_limit").get<std::size_t>();
    plan.data.test_limit = d.at("test_limit").get<std::size_t>();
    plan.data.ood_limit = d.at("ood_limit").get<std::size_t>();
    plan.data.outlier_limit = d.at("outlier_limit").get<std::size_t>();
    plan.data.noise_count = d.at("noise_count").get<std::size_t>();
    plan.data.noise_seed = d.at("noise_seed").get<std::uint64_t>();

    const auto& m = config.at("model");
    plan.model.conv_widths = m.at("conv_widths").get<std::array<int, 2>>();
    plan.model.fc_width = m.at("fc_width").get<int>();

    const auto& t = config.at("train");
    plan.train.epochs = t.at("epochs").get<std::size_t>();
    plan.train.batch_size = t.at("batch_size").get<std::size_t>();
    plan.train.lr0 = t.at("lr0").get<double>();
    plan.train.momentum = t.at("momentum").get<double>();
    plan.train.weight_decay = t.at("weight_decay").get<double>();
    plan.train.seed = t.at("seed").get<std::uint64_t>();
    plan.train.hflip = d.at("hflip").get<bool>();

    const auto& l = config.at("loss");
    plan.train.loss.kind = parse_loss_kind(l.at("kind").get<std::string>());
    plan.train.loss.alpha = l.at("alpha").get<double>();
    plan.train.loss.temperature = l.at("temperature").get<double>();
    plan.train.loss.lambda = l.at("lambda").get<double>();
    plan.temperature = plan.train.loss.temperature;
    plan.oe_lambda = plan.train.loss.lambda;

    const auto& e = config.at("experiment");
    plan.name = e.at("name").get<std::string>();
    plan.alpha_grid = e.at("alpha_grid").get<std::vector<double>>();
    plan.distill_alphas = e.at("distill_alphas").get<std::vector<double>>();
    plan.seeds = e.at("seeds").get<std::vector<std::uint64_t>>();
    plan.oe_epochs = e.at("oe_epochs").get<std::size_t>();
    plan.oe_lr_scale = e.at("oe_lr_scale").get<double>();
    plan.distill_epochs = e.at("distill_epochs").get<std::size_t>();
    plan.od_alpha = e.at("od_alpha").get<double>();
    plan.ece_bins = e.at("ece_bins").get<int>();
    plan.reuse_checkpoints = e.at("reuse_checkpoints").get<bool>();

    plan.out_dir = config.at("output").at("dir").get<std::string>();
  } catch (const nlohmann::json::exception& ex) {
    throw UsageError(std::string("invalid config: ") + ex.what());
  }
  if (kind == StudyKind::Single) plan.seeds = {plan.train.seed};
  plan.validate();
  return plan;
}

namespace {

LabeledDataset load_ood_named(const DataConfig& cfg, const std::string& name, Split split, const Normalization& norm,
                              const Shape& sample, std::size_t limit, std::uint64_t noise_seed) {
  if (is_noise_name(name)) {
    const NoiseKind kind = name == "uniform" ? NoiseKind::Uniform : NoiseKind::Gaussian;
    return synth_ood(kind, cfg.noise_count, sample, noise_seed, norm);
  }
  RawSplit raw = load_named_split(cfg.data_root, name, split);
  return make_dataset(name, DatasetRole::OutOfDistribution, raw.images, std::nullopt, norm).head(limit);
}

std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

void log_line(const std::string& msg) { std::cerr << "[slod] " << msg << std::endl; }

}  // namespace

DataBundle load_data(const DataConfig& cfg, bool need_outliers) {
  RawSplit train_raw = load_named_split(cfg.data_root, cfg.id, Split::Train);
  RawSplit test_raw = load_named_split(cfg.data_root, cfg.id, Split::Test);
  const Normalization norm = compute_normalization(train_raw.images);
  LabeledDataset id_train =
      make_dataset(cfg.id, DatasetRole::InDistribution, train_raw.images, train_raw.labels, norm).head(cfg.train_limit);
  LabeledDataset id_test =
      make_dataset(cfg.id, DatasetRole::InDistribution, test_raw.images, test_raw.labels, norm).head(cfg.test_limit);
  const Shape sample = id_train.sample_shape();

  std::optional<LabeledDataset> outliers;
  if (need_outliers) {
    if (cfg.oe_outliers.empty()) throw UsageError("data.oe_outliers must name at least one outlier set");
    std::vector<LabeledDataset> parts;
    std::string name;
    for (const auto& n : cfg.oe_outliers) {
      if (n == cfg.id) throw UsageError("outlier set '" + n + "' is the in-distribution dataset");
      // Outlier noise uses its own seed so the noise test sets stay unseen.
      parts.push_back(
          load_ood_named(cfg, n, Split::Train, norm, sample, cfg.outlier_limit, cfg.noise_seed + 1000003));
      name += (name.empty() ? "" : "+") + n;
    }
    outliers = parts.size() == 1 ? std::move(parts[0])
                                 : concat_datasets(name, DatasetRole::OutOfDistribution, parts);
  }

  std::vector<LabeledDataset> ood_tests;
  std::uint64_t noise_seed = cfg.noise_seed;
  for (const auto& n : cfg.ood_test) {
    if (n == cfg.id) throw UsageError("OOD test set '" + n + "' is the in-distribution dataset");
    ood_tests.push_back(load_ood_named(cfg, n, Split::Test, norm, sample, cfg.ood_limit, noise_seed++));
  }
  return DataBundle{std::move(id_train), std::move(id_test), std::move(outliers), std::move(ood_tests)};
}

ModelSpec model_for(const ModelSpec& widths, const DataBundle& data, const std::string& id_name) {
  ModelSpec spec = widths;
  const Shape sample = data.id_train.sample_shape();
  spec.input_channels = static_cast<int>(sample[0]);
  spec.input_side = static_cast<int>(sample[1]);
  spec.num_classes = static_cast<int>(named_num_classes(id_name));
  spec.validate();
  return spec;
}

namespace {

// Trains (or reuses) the checkpoints of one study, persisting each under
// <out>/checkpoints/<stem>.slod.
class Runner {
 public:
  Runner(const ExperimentPlan& plan, const DataBundle& data)
      : plan_(plan), data_(data), spec_(model_for(plan.model, data, plan.data.id)) {
    id_tag_ = dataset_tag(data_.id_train);
    if (data_.outliers) outlier_tag_ = dataset_tag(*data_.outliers);
  }

  const ModelSpec& spec() const { return spec_; }

  TrainConfig base_config(std::uint64_t seed, std::size_t epochs) const {
    TrainConfig cfg = plan_.train;
    cfg.seed = seed;
    cfg.epochs = epochs;
    cfg.loss = LossSpec{};
    cfg.loss.lambda = 0.0;
    return cfg;
  }

  Checkpoint baseline(std::uint64_t seed) {
    const TrainConfig cfg = base_config(seed, plan_.train.epochs);
    return obtain("baseline_s" + std::to_string(seed), "train", cfg, {id_tag_}, "",
                  [&] { return train_model(spec_, cfg, data_.id_train); });
  }

  Checkpoint label_smoothed(double alpha, std::uint64_t seed) {
    if (alpha == 0.0) return baseline(seed);
    TrainConfig cfg = base_config(seed, plan_.train.epochs);
    cfg.loss.kind = LossKind::LabelSmoothing;
    cfg.loss.alpha = alpha;
    return obtain("ls_a" + format_number(alpha) + "_s" + std::to_string(seed), "train", cfg, {id_tag_}, "",
                  [&] { return train_model(spec_, cfg, data_.id_train); });
  }

  Checkpoint single(const TrainConfig& cfg) {
    const std::string stem = std::string(loss_kind_name(cfg.loss.kind)) +
                             (cfg.loss.kind == LossKind::LabelSmoothing ? "_a" + format_number(cfg.loss.alpha) : "") +
                             "_s" + std::to_string(cfg.seed);
    return obtain(stem, cfg.epochs == 0 ? "init" : "train", cfg, {id_tag_}, "",
                  [&] { return train_model(spec_, cfg, data_.id_train); });
  }

  Checkpoint outlier_exposed(const Checkpoint& teacher, std::uint64_t seed) {
    if (!data_.outliers) throw UsageError("outlier exposure needs data.oe_outliers");
    TrainConfig cfg = base_config(seed, plan_.oe_epochs);
    cfg.lr0 = plan_.train.lr0 * plan_.oe_lr_scale;
    const OEConfig oe{plan_.oe_lambda};
    const std::string parent = checkpoint_hash(teacher);
    return obtain("oe_s" + std::to_string(seed), "finetune_oe", oe_train_config(cfg, oe, *data_.outliers),
                  {id_tag_, outlier_tag_}, parent,
                  [&] { return finetune_oe(teacher, data_.id_train, *data_.outliers, oe, cfg); });
  }

  Checkpoint student(const Checkpoint& teacher, const std::string& stem, double alpha, std::uint64_t seed) {
    TrainConfig cfg = base_config(seed, plan_.distill_epochs);
    cfg.loss.alpha = alpha;
    cfg.loss.temperature = plan_.temperature;
    const std::string parent = checkpoint_hash(teacher);
    return obtain(stem, "distill", distill_train_config(cfg, parent), {id_tag_}, parent,
                  [&] { return distill(teacher, data_.id_train, cfg); });
  }

  MetricsReport evaluate(const Checkpoint& ckpt, const RowContext& ctx) const {
    return evaluate_checkpoint(ckpt, data_.id_test, data_.ood_tests, ctx, plan_.ece_bins);
  }

 private:
  Checkpoint obtain(const std::string& stem, const std::string& stage, const TrainConfig& expected,
                    const std::vector<std::string>& datasets, const std::string& parent,
                    const std::function<TrainResult()>& train) {
    const auto path = plan_.out_dir / "checkpoints" / (stem + ".slod");
    if (plan_.reuse_checkpoints && std::filesystem::exists(path)) {
      Checkpoint found = load_checkpoint(path);
      const auto& p = found.provenance;
      if (found.spec == spec_ && p.stage == stage && p.config == expected && p.datasets == datasets &&
          p.parent_hash == parent) {
        log_line("reusing " + path.string());
        return found;
      }
    }
    log_line("training " + stem);
    const auto start = std::chrono::steady_clock::now();
    TrainResult result = train();
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    char buf[128];
    std::snprintf(buf, sizeof buf, "%s done in %.1fs (loss %.4f -> %.4f)", stem.c_str(), secs,
                  result.checkpoint.provenance.loss_first_window, result.checkpoint.provenance.loss_last_window);
    log_line(buf);
    save_checkpoint(result.checkpoint, path);
    return std::move(result.checkpoint);
  }

  const ExperimentPlan& plan_;
  const DataBundle& data_;
  ModelSpec spec_;
  std::string id_tag_;
  std::string outlier_tag_;
};

RowContext context(const ExperimentPlan& plan, std::string experiment, double alpha, double lambda, double temperature,
                   std::uint64_t seed, std::size_t epochs) {
  return RowContext{std::move(experiment), study_name(plan.kind), alpha, lambda, temperature, seed, epochs};
}

void append(MetricsReport& dst, const MetricsReport& src) { dst.insert(dst.end(), src.begin(), src.end()); }

void add_pairs(ReportTable& table, const MetricsReport& teacher, const MetricsReport& student) {
  for (const auto& s : student) {
    if (!s.auroc) continue;
    for (const auto& t : teacher) {
      if (t.ood_dataset == s.ood_dataset && t.auroc) {
        table.paired.push_back(PairedDifference{t.experiment, s.experiment, s.ood_dataset, s.alpha, s.seed, *t.auroc,
                                                *s.auroc, *s.auroc - *t.auroc});
      }
    }
  }
}

}  // namespace

ReportTable run_single(const ExperimentPlan& plan, const DataBundle& data) {
  Runner runner(plan, data);
  ReportTable table{study_name(plan.kind), {}, {}, nlohmann::json::object()};
  TrainConfig cfg = plan.train;
  Checkpoint ckpt = runner.single(cfg);
  const double alpha = cfg.loss.kind == LossKind::LabelSmoothing ? cfg.loss.alpha : 0.0;
  append(table.rows, runner.evaluate(ckpt, context(plan, loss_kind_name(cfg.loss.kind), alpha, 0.0, 1.0, cfg.seed,
                                                   cfg.epochs)));
  return table;
}

ReportTable run_ls_sweep(const ExperimentPlan& plan, const DataBundle& data) {
  if (plan.kind != StudyKind::LsSweep) throw UsageError("run_ls_sweep needs an ls_sweep plan");
  Runner runner(plan, data);
  ReportTable table{study_name(plan.kind), {}, {}, nlohmann::json::object()};
  std::map<double, std::vector<double>> ece_by_alpha;
  for (double alpha : plan.alpha_grid) {
    for (std::uint64_t seed : plan.seeds) {
      Checkpoint ckpt = runner.label_smoothed(alpha, seed);
      const auto rows = runner.evaluate(ckpt, context(plan, "ls", alpha, 0.0, 1.0, seed, plan.train.epochs));
      ece_by_alpha[alpha].push_back(*rows.front().ece);
      append(table.rows, rows);
    }
  }
  double best_alpha = 0.0, best_ece = 2.0;
  for (const auto& [alpha, values] : ece_by_alpha) {
    const double m = median(values);
    if (m < best_ece) {
      best_ece = m;
      best_alpha = alpha;
    }
  }
  table.diagnostics["ece_argmin_alpha"] = best_alpha;
  table.diagnostics["ece_argmin_median"] = best_ece;
  return table;
}

ReportTable run_distillation_study(const ExperimentPlan& plan, const DataBundle& data) {
  if (plan.kind != StudyKind::DistillStudy) throw UsageError("run_distillation_study needs a distill_study plan");
  Runner runner(plan, data);
  ReportTable table{study_name(plan.kind), {}, {}, nlohmann::json::object()};
  for (std::uint64_t seed : plan.seeds) {
    Checkpoint teacher = runner.baseline(seed);
    const auto teacher_rows = runner.evaluate(teacher, context(plan, "teacher", 0.0, 0.0, 1.0, seed, plan.train.epochs));
    append(table.rows, teacher_rows);
    for (double alpha : plan.distill_alphas) {
      Checkpoint student = runner.student(teacher, "student_a" + format_number(alpha) + "_s" + std::to_string(seed),
                                          alpha, seed);
      const auto rows =
          runner.evaluate(student, context(plan, "student", alpha, 0.0, plan.temperature, seed, plan.distill_epochs));
      add_pairs(table, teacher_rows, rows);
      append(table.rows, rows);
    }
  }
  return table;
}

ReportTable run_oe_study(const ExperimentPlan& plan, const DataBundle& data) {
  if (plan.kind != StudyKind::OeStudy) throw UsageError("run_oe_study needs an oe_study plan");
  if (!data.outliers) throw UsageError("run_oe_study needs OE outliers in the data bundle");
  Runner runner(plan, data);
  ReportTable table{study_name(plan.kind), {}, {}, nlohmann::json::object()};
  for (std::uint64_t seed : plan.seeds) {
    Checkpoint base = runner.baseline(seed);
    const auto base_rows = runner.evaluate(base, context(plan, "baseline", 0.0, 0.0, 1.0, seed, plan.train.epochs));
    Checkpoint oe = runner.outlier_exposed(base, seed);
    const auto oe_rows = runner.evaluate(oe, context(plan, "oe", 0.0, plan.oe_lambda, 1.0, seed, plan.oe_epochs));
    add_pairs(table, base_rows, oe_rows);
    append(table.rows, base_rows);
    append(table.rows, oe_rows);
  }
  return table;
}

ReportTable run_od_pipeline(const ExperimentPlan& plan, const DataBundle& data) {
  if (plan.kind != StudyKind::OdPipeline) throw UsageError("run_od_pipeline needs an od_pipeline plan");
  if (!data.outliers) throw UsageError("run_od_pipeline needs OE outliers in the data bundle");
  Runner runner(plan, data);
  ReportTable table{study_name(plan.kind), {}, {}, nlohmann::json::object()};
  nlohmann::json draws = nlohmann::json::object(), chain = nlohmann::json::object(),
                 acc_delta = nlohmann::json::object();
  for (std::uint64_t seed : plan.seeds) {
    const std::string key = std::to_string(seed);
    Checkpoint base = runner.baseline(seed);
    const auto base_rows = runner.evaluate(base, context(plan, "baseline", 0.0, 0.0, 1.0, seed, plan.train.epochs));
    Checkpoint oe = runner.outlier_exposed(base, seed);
    const auto oe_rows = runner.evaluate(oe, context(plan, "oe", 0.0, plan.oe_lambda, 1.0, seed, plan.oe_epochs));

    const std::uint64_t before = ood_draw_count();
    Checkpoint od = runner.student(oe, "od_a" + format_number(plan.od_alpha) + "_s" + key, plan.od_alpha, seed);
    draws[key] = ood_draw_count() - before;
    const auto od_rows =
        runner.evaluate(od, context(plan, "od", plan.od_alpha, 0.0, plan.temperature, seed, plan.distill_epochs));

    const std::string base_hash = checkpoint_hash(base), oe_hash = checkpoint_hash(oe), od_hash = checkpoint_hash(od);
    chain[key] = {{"baseline", base_hash},
                  {"oe", oe_hash},
                  {"od", od_hash},
                  {"linked", oe.provenance.parent_hash == base_hash && od.provenance.parent_hash == oe_hash}};
    acc_delta[key] = *oe_rows.front().accuracy - *base_rows.front().accuracy;

    add_pairs(table, oe_rows, od_rows);
    append(table.rows, base_rows);
    append(table.rows, oe_rows);
    append(table.rows, od_rows);
  }
  table.diagnostics["od_ood_draws"] = draws;
  table.diagnostics["provenance_chain"] = chain;
  table.diagnostics["oe_accuracy_delta"] = acc_delta;
  return table;
}

ReportTable run_plan(const ExperimentPlan& plan, const DataBundle& data) {
  switch (plan.kind) {
    case StudyKind::LsSweep: return run_ls_sweep(plan, data);
    case StudyKind::DistillStudy: return run_distillation_study(plan, data);
    case StudyKind::OeStudy: return run_oe_study(plan, data);
    case StudyKind::OdPipeline: return run_od_pipeline(plan, data);
    case StudyKind::Single: return run_single(plan, data);
  }
  throw UsageError("unknown study kind");
}

}  // namespace slod
