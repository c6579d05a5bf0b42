#pragma once

#include <string>
#include <utility>
#include <vector>

#include "asconv/model.hpp"
#include "asconv/training.hpp"

// Flat `key = value` text. Keys are the ModelConfig / TrainConfig field
// names; `#` starts a comment; blank lines are ignored.

namespace asconv {

using KeyValues = std::vector<std::pair<std::string, std::string>>;

/// Throws FormatError naming `source` and the line for malformed lines or
/// duplicate keys.
KeyValues parse_key_values(const std::string& text, const std::string& source = "<config>");

std::string format_key_values(const KeyValues& entries);

KeyValues model_config_entries(const ModelConfig& config);
KeyValues train_config_entries(const TrainConfig& config);

/// Sets one field. Returns false when `key` is not a field of the struct;
/// throws ValueError when the value does not parse.
bool set_model_field(ModelConfig& config, const std::string& key, const std::string& value);
bool set_train_field(TrainConfig& config, const std::string& key, const std::string& value);

/// Shortest text that parses back to the same double.
std::string format_double(double value);

}  // namespace asconv
