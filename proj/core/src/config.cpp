#include "slod/config.hpp"

#include <cstdlib>
#include <fstream>

#include "slod/errors.hpp"

namespace slod {

nlohmann::json default_config() {
  return nlohmann::json::parse(R"({
    "data": {
      "data_root": "data",
      "id": "mnist",
      "oe_outliers": ["fashion_mnist"],
      "ood_test": ["fashion_mnist", "uniform", "gaussian"],
      "train_limit": 0,
      "test_limit": 0,
      "ood_limit": 0,
      "outlier_limit": 0,
      "noise_count": 2000,
      "noise_seed": 7,
      "hflip": false
    },
    "model": {
      "conv_widths": [16, 32],
      "fc_width": 128
    },
    "train": {
      "epochs": 5,
      "batch_size": 128,
      "lr0": 0.1,
      "momentum": 0.9,
      "weight_decay": 0.0005,
      "seed": 0
    },
    "loss": {
      "kind": "hard",
      "alpha": 0.0,
      "temperature": 1.0,
      "lambda": 0.5
    },
    "experiment": {
      "name": "default",
      "alpha_grid": [0, 0.001, 0.01, 0.05, 0.1, 0.2, 0.3],
      "distill_alphas": [0.5, 0.9, 1.0],
      "seeds": [0, 1, 2],
      "oe_epochs": 2,
      "oe_lr_scale": 0.1,
      "distill_epochs": 5,
      "od_alpha": 0.9,
      "ece_bins": 15,
      "reuse_checkpoints": false
    },
    "output": {
      "dir": "out",
      "formats": ["csv", "json"]
    }
  })");
}

namespace {

bool same_kind(const nlohmann::json& a, const nlohmann::json& b) {
  if (a.is_number() && b.is_number()) return true;
  return a.type() == b.type();
}

void merge_into(nlohmann::json& base, const nlohmann::json& overlay, const std::string& prefix) {
  if (!overlay.is_object()) throw UsageError("config section '" + prefix + "' must be an object");
  for (const auto& [key, value] : overlay.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!base.contains(key)) throw UsageError("unknown config key '" + path + "'");
    auto& slot = base[key];
    if (slot.is_object()) {
      merge_into(slot, value, path);
    } else {
      if (!same_kind(slot, value)) {
        throw UsageError("config key '" + path + "' expects " + std::string(slot.type_name()) + ", got " +
                         value.type_name());
      }
      slot = value;
    }
  }
}

}  // namespace

void merge_config(nlohmann::json& base, const nlohmann::json& overlay) { merge_into(base, overlay, ""); }

void apply_override(nlohmann::json& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw UsageError("override '" + assignment + "' is not key=value");
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  nlohmann::json overlay = value;
  std::size_t end = path.size();
  while (true) {
    const auto dot = path.rfind('.', end - 1);
    const std::string key = path.substr(dot == std::string::npos ? 0 : dot + 1,
                                        end - (dot == std::string::npos ? 0 : dot + 1));
    if (key.empty()) throw UsageError("override '" + assignment + "' has an empty key");
    overlay = nlohmann::json{{key, overlay}};
    if (dot == std::string::npos) break;
    end = dot;
  }
  merge_config(config, overlay);
}

nlohmann::json load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  nlohmann::json config = default_config();
  bool file_sets_root = false;
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    nlohmann::json file;
    try {
      file = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw UsageError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    merge_config(config, file);
    file_sets_root = file.contains("data") && file["data"].contains("data_root");
  }
  if (const char* env = std::getenv("SLOD_DATA_ROOT"); env != nullptr && *env != '\0' && !file_sets_root) {
    config["data"]["data_root"] = env;
  }
  for (const auto& o : overrides) apply_override(config, o);
  return config;
}

}  // namespace slod
