#pragma once

#include <json.hpp>

#include <string>
#include <vector>

namespace rf {

// Key/value run configuration with sections {dataset, net, bridge, train,
// infer, inverse, eval}. A config file holds a subset of keys; unknown keys
// are errors, never silently ignored. CLI --set overrides use dotted paths.
struct RunConfig {
    nlohmann::json tree;

    const nlohmann::json& section(const std::string& name) const { return tree.at(name); }
    std::string dump(int indent = 2) const { return tree.dump(indent); }
};

// The full documented default tree.
nlohmann::json default_config();

// Merge file (optional, "" = none) + dotted-path overrides over defaults and
// validate every invariant. Errors name the offending dotted path.
RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides);

// Same, starting from an explicit JSON tree (used by tests).
RunConfig load_config_json(const nlohmann::json& user, const std::vector<std::string>& overrides);

void validate_config(const nlohmann::json& tree);

}  // namespace rf
