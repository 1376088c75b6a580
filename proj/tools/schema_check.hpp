#pragma once

#include <string>

#include <nlohmann/json.hpp>

namespace factrfm_cli {

/// Validates `value` against the named definition of the bundled config
/// schema (a draft-07 subset: type, properties, required,
/// additionalProperties, enum, bounds, array items, $ref into definitions).
/// Throws factrfm::Error(InvalidConfig) with a JSON-pointer-style path on the
/// first violation.
void validate_config(const nlohmann::json& value, const std::string& command);

/// The embedded schema text, identical to tools/schemas/config.schema.json.
const nlohmann::json& config_schema();

}  // namespace factrfm_cli
