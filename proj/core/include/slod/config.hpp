#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace slod {

// Every accepted key with its default value. Sections: data, model, train,
// loss, experiment, output.
nlohmann::json default_config();

// Merges `overlay` onto `base`, rejecting keys absent from the defaults and
// values whose JSON type differs from the default's (numbers interchange).
void merge_config(nlohmann::json& base, const nlohmann::json& overlay);

// Applies "section.key=value"; value is parsed as JSON, else taken as a string.
void apply_override(nlohmann::json& config, const std::string& assignment);

// Defaults ← file (if non-empty path) ← SLOD_DATA_ROOT (only when the file
// does not set data.data_root) ← overrides.
nlohmann::json load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides);

}  // namespace slod
