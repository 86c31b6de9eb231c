#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "memdpc/evaluation/probe.hpp"
#include "memdpc/evaluation/unintentional.hpp"
#include "memdpc/training/config.hpp"
#include "memdpc/videodata/synthetic.hpp"

namespace memdpc::cli {

enum class KeyType { Int, Real, Bool, String, IntList, RealList };

std::string to_string(KeyType t);

struct KeyDef {
  std::string name;
  KeyType type;
  nlohmann::json default_value;
  std::string doc;
};

/// Every accepted configuration key, in display order.
const std::vector<KeyDef>& registry();
const KeyDef* find_key(const std::string& name);

/// Flat object holding every registered key at its default.
nlohmann::json defaults();

std::vector<std::string> profile_names();
/// Overrides applied on top of the defaults. Throws ConfigError for an unknown name.
nlohmann::json profile(const std::string& name);

/// Converts a command-line string to the key's type. Throws ConfigError.
nlohmann::json parse_value(const KeyDef& key, const std::string& text);

/// Checks one value against its key. Integers are accepted for real keys.
nlohmann::json coerce(const KeyDef& key, const nlohmann::json& value);

/// Merges a flat override object into `into`, rejecting unknown keys by name.
void merge(nlohmann::json& into, const nlohmann::json& overrides, const std::string& origin);

/// defaults <- profile <- config file <- flag overrides.
nlohmann::json resolve(const std::optional<std::string>& profile_name,
                       const std::optional<std::string>& config_file,
                       const std::vector<std::pair<std::string, std::string>>& flags);

training::TrainConfig train_config(const nlohmann::json& cfg);
videodata::SyntheticSpec synthetic_spec(const nlohmann::json& cfg);
evaluation::ProbeConfig probe_config(const nlohmann::json& cfg);
evaluation::UnintentionalConfig unintentional_config(const nlohmann::json& cfg);

}  // namespace memdpc::cli
