#include "slod/train.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "slod/errors.hpp"
#include "slod/ops.hpp"

namespace slod {

const char* loss_kind_name(LossKind kind) {
  switch (kind) {
    case LossKind::Hard: return "hard";
    case LossKind::LabelSmoothing: return "label_smoothing";
    case LossKind::Distill: return "distill";
    case LossKind::OutlierExposure: return "oe";
  }
  return "unknown";
}

LossKind parse_loss_kind(const std::string& name) {
  if (name == "hard") return LossKind::Hard;
  if (name == "label_smoothing") return LossKind::LabelSmoothing;
  if (name == "distill") return LossKind::Distill;
  if (name == "oe") return LossKind::OutlierExposure;
  throw UsageError("unknown loss kind '" + name + "' (expected hard, label_smoothing, distill, oe)");
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw DomainError("train.batch_size must be >= 1");
  if (!(lr0 > 0.0)) throw DomainError("train.lr0 must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw DomainError("train.momentum must lie in [0,1)");
  if (!(weight_decay >= 0.0)) throw DomainError("train.weight_decay must be >= 0");
  if (!(loss.alpha >= 0.0 && loss.alpha <= 1.0)) throw DomainError("loss.alpha must lie in [0,1]");
  if (!(loss.temperature > 0.0)) throw DomainError("loss.temperature must be > 0");
  if (!(loss.lambda >= 0.0)) throw DomainError("loss.lambda must be >= 0");
}

void to_json(nlohmann::json& j, const LossSpec& spec) {
  j = nlohmann::json{{"kind", loss_kind_name(spec.kind)}, {"alpha", spec.alpha},
                     {"temperature", spec.temperature}, {"lambda", spec.lambda},
                     {"teacher_ref", spec.teacher_ref},  {"ood_ref", spec.ood_ref}};
}

void from_json(const nlohmann::json& j, LossSpec& spec) {
  spec.kind = parse_loss_kind(j.at("kind").get<std::string>());
  j.at("alpha").get_to(spec.alpha);
  j.at("temperature").get_to(spec.temperature);
  j.at("lambda").get_to(spec.lambda);
  j.at("teacher_ref").get_to(spec.teacher_ref);
  j.at("ood_ref").get_to(spec.ood_ref);
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"epochs", c.epochs},
                     {"batch_size", c.batch_size},
                     {"lr0", c.lr0},
                     {"momentum", c.momentum},
                     {"weight_decay", c.weight_decay},
                     {"seed", c.seed},
                     {"hflip", c.hflip},
                     {"loss", c.loss}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  j.at("epochs").get_to(c.epochs);
  j.at("batch_size").get_to(c.batch_size);
  j.at("lr0").get_to(c.lr0);
  j.at("momentum").get_to(c.momentum);
  j.at("weight_decay").get_to(c.weight_decay);
  j.at("seed").get_to(c.seed);
  j.at("hflip").get_to(c.hflip);
  j.at("loss").get_to(c.loss);
}

void to_json(nlohmann::json& j, const Provenance& p) {
  j = nlohmann::json{{"stage", p.stage},
                     {"config", p.config},
                     {"datasets", p.datasets},
                     {"epochs_completed", p.epochs_completed},
                     {"steps", p.steps},
                     {"seed", p.seed},
                     {"workers", p.workers},
                     {"parent_hash", p.parent_hash},
                     {"loss_first_window", p.loss_first_window},
                     {"loss_last_window", p.loss_last_window}};
}

void from_json(const nlohmann::json& j, Provenance& p) {
  j.at("stage").get_to(p.stage);
  j.at("config").get_to(p.config);
  j.at("datasets").get_to(p.datasets);
  j.at("epochs_completed").get_to(p.epochs_completed);
  j.at("steps").get_to(p.steps);
  j.at("seed").get_to(p.seed);
  j.at("workers").get_to(p.workers);
  j.at("parent_hash").get_to(p.parent_hash);
  j.at("loss_first_window").get_to(p.loss_first_window);
  j.at("loss_last_window").get_to(p.loss_last_window);
}

OptimizerState OptimizerState::for_parameters(const Parameters<float>& params) {
  OptimizerState state;
  for (const auto& p : params) state.velocity.emplace_back(p.tensor.size(), 0.0f);
  return state;
}

void sgd_step(Parameters<float>& params, OptimizerState& state, double lr, double momentum, double weight_decay) {
  if (state.velocity.size() != params.size()) {
    throw ShapeError("optimizer state has " + std::to_string(state.velocity.size()) + " buffers for " +
                     std::to_string(params.size()) + " parameters");
  }
  const auto flr = static_cast<float>(lr);
  const auto fm = static_cast<float>(momentum);
  const auto fwd = static_cast<float>(weight_decay);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& t = params[i].tensor;
    auto& v = state.velocity[i];
    if (v.size() != t.size()) {
      throw ShapeError("velocity buffer for " + params[i].name + " has " + std::to_string(v.size()) +
                       " elements, parameter has " + std::to_string(t.size()));
    }
    if (!t.has_grad()) throw UsageError("parameter " + params[i].name + " has no gradient");
    auto w = t.data();
    auto g = t.grad();
    for (std::size_t k = 0; k < w.size(); ++k) {
      v[k] = fm * v[k] + g[k] + fwd * w[k];
      w[k] -= flr * v[k];
    }
  }
}

double cosine_lr(std::size_t step, std::size_t total_steps, double lr0) {
  if (total_steps == 0) throw DomainError("cosine_lr: total_steps must be >= 1");
  if (step > total_steps) throw DomainError("cosine_lr: step exceeds total_steps");
  if (step == total_steps) return 0.0;
  return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(total_steps)));
}

namespace {

constexpr std::size_t kLossWindow = 50;
constexpr std::uint64_t kOodStreamSalt = 0x9e3779b97f4a7c15ULL;
constexpr std::uint64_t kFlipStreamSalt = 0xbf58476d1ce4e5b9ULL;

struct LoopInputs {
  const LabeledDataset* id = nullptr;
  const LabeledDataset* ood = nullptr;      // outlier exposure
  const Checkpoint* teacher = nullptr;      // distillation
};

double window_mean(const std::vector<double>& losses, bool first) {
  if (losses.empty()) return 0.0;
  const std::size_t n = std::min(kLossWindow, losses.size());
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) total += first ? losses[i] : losses[losses.size() - n + i];
  return total / static_cast<double>(n);
}

TrainResult train_loop(Parameters<float> params, const ModelSpec& spec, const TrainConfig& config,
                       const LoopInputs& in, Provenance provenance) {
  config.validate();
  const LabeledDataset& id = *in.id;
  if (id.sample_shape() != Shape{static_cast<std::size_t>(spec.input_channels),
                                 static_cast<std::size_t>(spec.input_side),
                                 static_cast<std::size_t>(spec.input_side)}) {
    throw ShapeError("dataset " + id.name() + " sample shape " + shape_string(id.sample_shape()) +
                     " does not match the model input");
  }
  const auto k = static_cast<std::size_t>(spec.num_classes);
  set_requires_grad(params, true);

  const std::size_t per_epoch = (id.size() + config.batch_size - 1) / config.batch_size;
  const std::size_t total = per_epoch * config.epochs;
  OptimizerState state = OptimizerState::for_parameters(params);
  TrainStats stats;
  stats.losses.reserve(total);

  std::vector<std::vector<std::size_t>> ood_batches;
  std::size_t ood_cursor = 0, ood_cycle = 0;
  std::mt19937_64 flip_rng(config.seed ^ kFlipStreamSalt);
  std::bernoulli_distribution coin(0.5);

  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto batches = make_batches(id.size(), {config.batch_size, config.seed, true, epoch});
    for (std::size_t b = 0; b < batches.size(); ++b, ++step) {
      const auto& idx = batches[b];
      Tensor<float> images = id.gather(idx);
      const std::vector<int> labels = id.gather_labels(idx);

      Tensor<float> teacher_probs;
      if (config.loss.kind == LossKind::Distill) {
        teacher_probs = teacher_targets(predict_logits(in.teacher->params, in.teacher->spec, images),
                                        config.loss.temperature);
      }
      if (config.hflip) {
        std::vector<bool> mask(idx.size());
        for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = coin(flip_rng);
        hflip_inplace(images, mask);
      }

      zero_grads(params);
      Graph<float> g;
      const auto vars = bind_parameters(g, params);
      Var log_probs = log_softmax(g, forward<float>(g, vars, spec, g.constant(std::move(images))));
      const Tensor<float> q = one_hot_batch<float>(labels, k);

      Var loss;
      switch (config.loss.kind) {
        case LossKind::Hard:
          loss = soft_cross_entropy(g, q, log_probs);
          break;
        case LossKind::LabelSmoothing:
          loss = label_smoothing_loss(g, q, log_probs, config.loss.alpha);
          break;
        case LossKind::Distill:
          loss = distillation_loss(g, q, log_probs, teacher_probs, config.loss.alpha);
          break;
        case LossKind::OutlierExposure: {
          if (ood_cursor == ood_batches.size()) {
            ood_batches = make_batches(in.ood->size(), {config.batch_size, config.seed ^ kOodStreamSalt, true, ood_cycle++});
            ood_cursor = 0;
          }
          Tensor<float> outliers = in.ood->gather(ood_batches[ood_cursor++]);
          ++stats.ood_batches;
          Var ood_lp = log_softmax(g, forward<float>(g, vars, spec, g.constant(std::move(outliers))));
          loss = outlier_exposure_loss(g, q, log_probs, ood_lp, config.loss.lambda);
          break;
        }
      }

      const double value = g.value(loss)[0];
      if (!std::isfinite(value)) {
        std::ostringstream msg;
        msg << "non-finite training loss " << value << " at epoch " << epoch << ", batch " << b << " (step "
            << step << ")";
        throw NumericError(msg.str());
      }
      g.backward(loss);
      sgd_step(params, state, cosine_lr(step, total, config.lr0), config.momentum, config.weight_decay);
      stats.losses.push_back(value);
    }
  }

  for (auto& p : params) p.tensor.clear_grad();
  provenance.config = config;
  provenance.epochs_completed = config.epochs;
  provenance.steps = step;
  provenance.seed = config.seed;
  provenance.workers = 1;
  provenance.loss_first_window = window_mean(stats.losses, true);
  provenance.loss_last_window = window_mean(stats.losses, false);
  return {Checkpoint{spec, std::move(params), std::move(provenance)}, std::move(stats)};
}

}  // namespace

TrainConfig oe_train_config(const TrainConfig& base, const OEConfig& oe, const LabeledDataset& ood_train) {
  TrainConfig cfg = base;
  cfg.loss.kind = LossKind::OutlierExposure;
  cfg.loss.lambda = oe.lambda;
  cfg.loss.ood_ref = ood_train.name();
  return cfg;
}

TrainConfig distill_train_config(const TrainConfig& base, const std::string& teacher_hash) {
  TrainConfig cfg = base;
  cfg.loss.kind = LossKind::Distill;
  cfg.loss.teacher_ref = teacher_hash;
  return cfg;
}

TrainResult train_model(const ModelSpec& spec, const TrainConfig& config, const LabeledDataset& id_train) {
  if (config.loss.kind != LossKind::Hard && config.loss.kind != LossKind::LabelSmoothing) {
    throw UsageError("train_model supports hard and label_smoothing losses; use distill/finetune_oe otherwise");
  }
  spec.validate();
  Provenance prov;
  prov.stage = config.epochs == 0 ? "init" : "train";
  prov.datasets = {dataset_tag(id_train)};
  return train_loop(init_model(spec, config.seed), spec, config, {&id_train, nullptr, nullptr}, std::move(prov));
}

TrainResult continue_training(const Checkpoint& start, const TrainConfig& config, const LabeledDataset& id_train) {
  if (config.loss.kind != LossKind::Hard && config.loss.kind != LossKind::LabelSmoothing) {
    throw UsageError("continue_training supports hard and label_smoothing losses");
  }
  Provenance prov;
  prov.stage = "train";
  prov.datasets = {dataset_tag(id_train)};
  prov.parent_hash = checkpoint_hash(start);
  return train_loop(start.params, start.spec, config, {&id_train, nullptr, nullptr}, std::move(prov));
}

TrainResult finetune_oe(const Checkpoint& teacher, const LabeledDataset& id_train, const LabeledDataset& ood_train,
                        const OEConfig& oe, const TrainConfig& config) {
  oe.validate();
  if (ood_train.role() != DatasetRole::OutOfDistribution) {
    throw UsageError("finetune_oe: outlier set " + ood_train.name() + " must have the out_of_distribution role");
  }
  if (ood_train.size() == 0) throw UsageError("finetune_oe: empty outlier set");
  if (ood_train.sample_shape() != id_train.sample_shape()) {
    throw ShapeError("finetune_oe: outlier sample shape " + shape_string(ood_train.sample_shape()) +
                     " differs from ID " + shape_string(id_train.sample_shape()));
  }
  const TrainConfig cfg = oe_train_config(config, oe, ood_train);
  Provenance prov;
  prov.stage = "finetune_oe";
  prov.datasets = {dataset_tag(id_train), dataset_tag(ood_train)};
  prov.parent_hash = checkpoint_hash(teacher);
  return train_loop(teacher.params, teacher.spec, cfg, {&id_train, &ood_train, nullptr}, std::move(prov));
}

TrainResult distill(const Checkpoint& teacher, const LabeledDataset& id_train, const TrainConfig& config,
                    std::optional<ModelSpec> student_spec) {
  const ModelSpec spec = student_spec.value_or(teacher.spec);
  spec.validate();
  if (spec.num_classes != teacher.spec.num_classes) {
    throw ShapeError("distill: student has " + std::to_string(spec.num_classes) + " classes, teacher has " +
                     std::to_string(teacher.spec.num_classes));
  }
  const std::string teacher_hash = checkpoint_hash(teacher);
  const TrainConfig cfg = distill_train_config(config, teacher_hash);
  Provenance prov;
  prov.stage = "distill";
  prov.datasets = {dataset_tag(id_train)};
  prov.parent_hash = teacher_hash;
  return train_loop(init_model(spec, cfg.seed), spec, cfg, {&id_train, nullptr, &teacher}, std::move(prov));
}

}  // namespace slod
