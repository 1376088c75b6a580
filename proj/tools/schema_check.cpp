#include "schema_check.hpp"

#include <cmath>

#include "factrfm/error.hpp"

namespace factrfm_cli {

extern const char* kConfigSchemaText;  // generated from schemas/config.schema.json

using nlohmann::json;
using factrfm::Error;
using factrfm::ErrorCode;

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& message) {
  throw Error(ErrorCode::InvalidConfig, "config" + path + ": " + message);
}

const json& resolve_ref(const json& root, const std::string& ref) {
  const std::string prefix = "#/definitions/";
  if (ref.rfind(prefix, 0) != 0) {
    fail("", "unsupported $ref '" + ref + "'");
  }
  const auto& defs = root.at("definitions");
  const std::string name = ref.substr(prefix.size());
  if (!defs.contains(name)) {
    fail("", "dangling $ref '" + ref + "'");
  }
  return defs.at(name);
}

bool type_matches(const json& value, const std::string& type) {
  if (type == "object") return value.is_object();
  if (type == "array") return value.is_array();
  if (type == "string") return value.is_string();
  if (type == "boolean") return value.is_boolean();
  if (type == "integer") {
    if (value.is_number_integer()) return true;
    // accept 5.0 for integer fields; config files often carry plain numbers
    return value.is_number_float() &&
           std::floor(value.get<double>()) == value.get<double>();
  }
  if (type == "number") return value.is_number();
  return false;
}

void check(const json& root, const json& schema, const json& value,
           const std::string& path) {
  if (schema.contains("$ref")) {
    check(root, resolve_ref(root, schema["$ref"].get<std::string>()), value, path);
    return;
  }
  if (schema.contains("type") &&
      !type_matches(value, schema["type"].get<std::string>())) {
    fail(path, "expected " + schema["type"].get<std::string>());
  }
  if (schema.contains("enum")) {
    bool hit = false;
    for (const auto& allowed : schema["enum"]) {
      if (allowed == value) hit = true;
    }
    if (!hit) fail(path, "value " + value.dump() + " not in " + schema["enum"].dump());
  }
  if (value.is_number()) {
    const double v = value.get<double>();
    if (schema.contains("minimum") && v < schema["minimum"].get<double>()) {
      fail(path, "below minimum " + schema["minimum"].dump());
    }
    if (schema.contains("exclusiveMinimum") &&
        v <= schema["exclusiveMinimum"].get<double>()) {
      fail(path, "must exceed " + schema["exclusiveMinimum"].dump());
    }
    if (schema.contains("maximum") && v > schema["maximum"].get<double>()) {
      fail(path, "above maximum " + schema["maximum"].dump());
    }
  }
  if (value.is_object()) {
    const json props = schema.value("properties", json::object());
    if (schema.contains("required")) {
      for (const auto& req : schema["required"]) {
        if (!value.contains(req.get<std::string>())) {
          fail(path, "missing required key '" + req.get<std::string>() + "'");
        }
      }
    }
    const bool extra_ok = schema.value("additionalProperties", true);
    for (const auto& [key, sub] : value.items()) {
      if (props.contains(key)) {
        check(root, props.at(key), sub, path + "/" + key);
      } else if (!extra_ok) {
        fail(path, "unknown key '" + key + "'");
      }
    }
  }
  if (value.is_array()) {
    if (schema.contains("minItems") &&
        value.size() < schema["minItems"].get<std::size_t>()) {
      fail(path, "needs at least " + schema["minItems"].dump() + " items");
    }
    if (schema.contains("items")) {
      for (std::size_t i = 0; i < value.size(); ++i) {
        check(root, schema["items"], value[i], path + "/" + std::to_string(i));
      }
    }
  }
}

}  // namespace

const json& config_schema() {
  static const json schema = json::parse(kConfigSchemaText);
  return schema;
}

void validate_config(const json& value, const std::string& command) {
  const json& root = config_schema();
  if (!root.at("definitions").contains(command)) {
    throw Error(ErrorCode::InvalidConfig, "no schema for command '" + command + "'");
  }
  check(root, root.at("definitions").at(command), value, "");
}

}  // namespace factrfm_cli
