#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "russ/errors.hpp"

namespace russ {

using Json = nlohmann::json;

/// Names every scene must provide in its landmark table (canonical lowercase).
inline constexpr std::array<std::string_view, 13> kLandmarkNames = {
    "xiphoid",          "umbilicus",         "right_costal_margin", "left_costal_margin",
    "right_iliac_crest", "left_iliac_crest", "l1",                  "l2",
    "l3",               "l4",                "l5",                  "right_midaxillary",
    "left_midaxillary",
};

inline constexpr std::array<std::string_view, 6> kTargetOrgans = {
    "gallbladder", "spine", "kidney", "carotid", "liver", "aorta"};

namespace text {

inline std::string trim(std::string_view s) {
  auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
  while (!s.empty() && is_space(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && is_space(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return std::string(s);
}

inline std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

inline std::string canonical_token(std::string_view s) { return lower(trim(s)); }

}  // namespace text

inline bool is_landmark_name(std::string_view name) {
  return std::find(kLandmarkNames.begin(), kLandmarkNames.end(), name) != kLandmarkNames.end();
}

/// Parses "latest" or "<prefix>_<n>"; returns the index, or -1 for latest.
inline std::optional<long> parse_ref(std::string_view ref, std::string_view prefix) {
  if (ref == "latest") return -1;
  if (ref.size() <= prefix.size() + 1 || ref.substr(0, prefix.size()) != prefix ||
      ref[prefix.size()] != '_')
    return std::nullopt;
  long value = 0;
  for (char c : ref.substr(prefix.size() + 1)) {
    if (!std::isdigit(static_cast<unsigned char>(c))) return std::nullopt;
    value = value * 10 + (c - '0');
    if (value > 1'000'000) return std::nullopt;
  }
  return value;
}

enum class ParamKind {
  text,
  enumeration,
  number,
  integer,
  boolean,
  landmark,
  sweep_ref,
  trajectory_ref,
  motion_target,  // trajectory_ref, or pose triple [x_mm, y_mm, tilt_deg]
};

inline std::string_view to_string(ParamKind kind) {
  switch (kind) {
    case ParamKind::text: return "text";
    case ParamKind::enumeration: return "enum";
    case ParamKind::number: return "number";
    case ParamKind::integer: return "integer";
    case ParamKind::boolean: return "boolean";
    case ParamKind::landmark: return "landmark";
    case ParamKind::sweep_ref: return "sweep_ref";
    case ParamKind::trajectory_ref: return "trajectory_ref";
    case ParamKind::motion_target: return "trajectory_ref|pose";
  }
  return "?";
}

/// Kinds whose string values are matched as case-insensitive tokens.
inline bool is_discrete_token(ParamKind kind) {
  return kind == ParamKind::enumeration || kind == ParamKind::landmark ||
         kind == ParamKind::sweep_ref || kind == ParamKind::trajectory_ref ||
         kind == ParamKind::motion_target;
}

inline bool is_numeric(ParamKind kind) {
  return kind == ParamKind::number || kind == ParamKind::integer ||
         kind == ParamKind::motion_target;
}

struct Tolerance {
  enum class Mode { absolute, relative };
  Mode mode = Mode::absolute;
  double value = 0.0;

  bool matches(double predicted, double reference) const {
    const double delta = std::abs(predicted - reference);
    if (mode == Mode::absolute) return delta <= value;
    return delta <= value * std::abs(reference);
  }

  friend bool operator==(const Tolerance&, const Tolerance&) = default;
};

struct ParamSpec {
  std::string name;
  ParamKind kind = ParamKind::text;
  bool required = false;
  double weight = 1.0;
  std::string unit;
  std::vector<std::string> allowed;  // enumeration values, canonical form
  std::optional<Tolerance> tolerance;
  std::string description;

  friend bool operator==(const ParamSpec&, const ParamSpec&) = default;
};

struct ToolSchema {
  std::string name;
  std::string description;
  std::vector<ParamSpec> params;
  bool terminal = false;

  const ParamSpec* find(std::string_view param) const {
    for (const auto& p : params)
      if (p.name == param) return &p;
    return nullptr;
  }

  /// The scored key set: the required parameters.
  std::vector<const ParamSpec*> scored_params() const {
    std::vector<const ParamSpec*> out;
    for (const auto& p : params)
      if (p.required) out.push_back(&p);
    return out;
  }

  friend bool operator==(const ToolSchema&, const ToolSchema&) = default;
};

struct ToolCall {
  std::string tool_name;
  Json args = Json::object();

  friend bool operator==(const ToolCall&, const ToolCall&) = default;
};

inline Json to_json(const ToolCall& call) { return Json{{"tool", call.tool_name}, {"args", call.args}}; }

/// Accepts `{"tool": string, "args": object}`; extra top-level keys are rejected.
inline ToolCall tool_call_from_json(const Json& j) {
  if (!j.is_object()) throw SchemaError("tool call must be a JSON object");
  if (!j.contains("tool") || !j.at("tool").is_string())
    throw SchemaError("tool call needs a string \"tool\" field");
  if (!j.contains("args") || !j.at("args").is_object())
    throw SchemaError("tool call needs an object \"args\" field");
  if (j.size() != 2) throw SchemaError("tool call has unexpected top-level fields");
  return ToolCall{j.at("tool").get<std::string>(), j.at("args")};
}

struct ValidationReport {
  bool valid = true;
  std::vector<std::string> missing_required;
  std::vector<std::string> unknown_keys;
  std::vector<std::pair<std::string, std::string>> type_errors;

  std::string summary() const {
    std::ostringstream os;
    if (valid) return "valid";
    const char* sep = "";
    if (!missing_required.empty()) {
      os << "missing required:";
      for (const auto& k : missing_required) os << ' ' << k;
      sep = "; ";
    }
    if (!unknown_keys.empty()) {
      os << sep << "unknown keys:";
      for (const auto& k : unknown_keys) os << ' ' << k;
      sep = "; ";
    }
    for (const auto& [k, why] : type_errors) {
      os << sep << k << ": " << why;
      sep = "; ";
    }
    return os.str();
  }
};

inline Json to_json(const ValidationReport& r) {
  Json type_errors = Json::array();
  for (const auto& [k, why] : r.type_errors) type_errors.push_back(Json::array({k, why}));
  return Json{{"valid", r.valid},
              {"missing_required", r.missing_required},
              {"unknown_keys", r.unknown_keys},
              {"type_errors", type_errors}};
}

inline ValidationReport validation_report_from_json(const Json& j) {
  ValidationReport r;
  r.valid = j.at("valid").get<bool>();
  r.missing_required = j.at("missing_required").get<std::vector<std::string>>();
  r.unknown_keys = j.at("unknown_keys").get<std::vector<std::string>>();
  for (const auto& e : j.at("type_errors"))
    r.type_errors.emplace_back(e.at(0).get<std::string>(), e.at(1).get<std::string>());
  return r;
}

/// Immutable set of tool schemas, keyed and iterated by name.
class ToolRegistry {
 public:
  ToolRegistry() = default;

  explicit ToolRegistry(std::vector<ToolSchema> tools) {
    for (auto& t : tools) {
      check_schema(t);
      const std::string name = t.name;
      if (!tools_.emplace(name, std::move(t)).second)
        throw ConfigError("duplicate tool '" + name + "'");
    }
    std::size_t terminals = 0;
    for (const auto& [_, t] : tools_) terminals += t.terminal ? 1 : 0;
    if (terminals > 1) throw ConfigError("more than one terminal tool");
  }

  const ToolSchema* find(std::string_view name) const {
    auto it = tools_.find(std::string(name));
    return it == tools_.end() ? nullptr : &it->second;
  }

  const ToolSchema& at(std::string_view name) const {
    if (const auto* t = find(name)) return *t;
    throw UnknownTool("'" + std::string(name) + "'");
  }

  bool contains(std::string_view name) const { return find(name) != nullptr; }
  std::size_t size() const { return tools_.size(); }
  bool empty() const { return tools_.empty(); }

  std::vector<const ToolSchema*> tools() const {
    std::vector<const ToolSchema*> out;
    for (const auto& [_, t] : tools_) out.push_back(&t);
    return out;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& [n, _] : tools_) out.push_back(n);
    return out;
  }

  const ToolSchema* terminal_tool() const {
    for (const auto& [_, t] : tools_)
      if (t.terminal) return &t;
    return nullptr;
  }

  /// Returns a copy with per-param weight/tolerance overrides applied.
  ///
  /// Config shape: {"tools": {"<tool>": {"<param>": {"weight": w,
  /// "tolerance": {"relative": f} | {"absolute": v}}}}}
  ToolRegistry with_overrides(const Json& config) const {
    if (!config.is_object() || !config.contains("tools") || !config.at("tools").is_object())
      throw ConfigError("override config needs a \"tools\" object");
    std::vector<ToolSchema> tools;
    for (const auto& [_, t] : tools_) tools.push_back(t);
    for (const auto& [tool_name, params] : config.at("tools").items()) {
      auto it = std::find_if(tools.begin(), tools.end(),
                             [&](const ToolSchema& t) { return t.name == tool_name; });
      if (it == tools.end()) throw ConfigError("override for unknown tool '" + tool_name + "'");
      if (!params.is_object()) throw ConfigError("overrides for '" + tool_name + "' must be an object");
      for (const auto& [param_name, ov] : params.items()) {
        auto pit = std::find_if(it->params.begin(), it->params.end(),
                                [&](const ParamSpec& p) { return p.name == param_name; });
        if (pit == it->params.end())
          throw ConfigError("override for unknown param '" + tool_name + "." + param_name + "'");
        apply_param_override(*pit, ov);
      }
    }
    return ToolRegistry(std::move(tools));
  }

 private:
  static void apply_param_override(ParamSpec& p, const Json& ov) {
    if (!ov.is_object()) throw ConfigError("param override for '" + p.name + "' must be an object");
    for (const auto& [key, value] : ov.items()) {
      if (key == "weight") {
        if (!value.is_number() || !(value.get<double>() > 0.0))
          throw ConfigError("weight for '" + p.name + "' must be a positive number");
        p.weight = value.get<double>();
      } else if (key == "tolerance") {
        if (!is_numeric(p.kind)) throw ConfigError("'" + p.name + "' does not take a tolerance");
        if (!value.is_object() || value.size() != 1)
          throw ConfigError("tolerance needs exactly one of relative/absolute");
        const auto& [mode, v] = *value.items().begin();
        if (!v.is_number() || v.get<double>() < 0.0)
          throw ConfigError("tolerance value must be a non-negative number");
        if (mode == "relative")
          p.tolerance = Tolerance{Tolerance::Mode::relative, v.get<double>()};
        else if (mode == "absolute")
          p.tolerance = Tolerance{Tolerance::Mode::absolute, v.get<double>()};
        else
          throw ConfigError("unknown tolerance mode '" + mode + "'");
      } else {
        throw ConfigError("unknown override field '" + key + "'");
      }
    }
  }

  static void check_schema(const ToolSchema& t) {
    if (t.name.empty()) throw ConfigError("tool with empty name");
    for (std::size_t i = 0; i < t.params.size(); ++i) {
      const auto& p = t.params[i];
      for (std::size_t j = i + 1; j < t.params.size(); ++j)
        if (t.params[j].name == p.name)
          throw ConfigError("duplicate param '" + p.name + "' in '" + t.name + "'");
      if (p.required && !(p.weight > 0.0))
        throw ConfigError("required param '" + p.name + "' needs a positive weight");
      if ((p.kind == ParamKind::number || p.kind == ParamKind::integer) && !p.tolerance)
        throw ConfigError("numeric param '" + p.name + "' needs a tolerance");
      if (p.kind == ParamKind::enumeration && p.allowed.empty())
        throw ConfigError("enum param '" + p.name + "' has no allowed values");
    }
  }

  std::map<std::string, ToolSchema> tools_;
};

inline ToolRegistry default_registry() {
  using K = ParamKind;
  const auto rel = [](double v) { return Tolerance{Tolerance::Mode::relative, v}; };
  const auto abs = [](double v) { return Tolerance{Tolerance::Mode::absolute, v}; };
  std::vector<std::string> organs(kTargetOrgans.begin(), kTargetOrgans.end());

  std::vector<ToolSchema> tools;
  tools.push_back(ToolSchema{
      "plan_trajectory",
      "Generate an initial scanning trajectory for the target organ between two "
      "anatomical landmarks, projected onto the patient surface.",
      {
          {"target_organ", K::enumeration, true, 1.0, "", organs, std::nullopt, "organ to image"},
          {"start_landmark", K::landmark, true, 1.0, "", {}, std::nullopt, "landmark where the sweep starts"},
          {"end_landmark", K::landmark, true, 1.0, "", {}, std::nullopt, "landmark where the sweep ends"},
          {"n_points", K::integer, false, 1.0, "", {}, abs(0.0), "number of poses (default 50)"},
      },
      false});
  tools.push_back(ToolSchema{
      "execute_motion",
      "Move the robot along a planned trajectory while acquiring tracked ultrasound "
      "frames, or move the probe to a single pose.",
      {
          {"target", K::motion_target, true, 1.0, "mm", {}, abs(1.0),
           "trajectory reference (latest | traj_<n>) or pose [x_mm, y_mm, tilt_deg]"},
          {"speed", K::number, true, 1.0, "mm/s", {}, rel(0.10), "probe speed, 1..50 mm/s"},
      },
      false});
  tools.push_back(ToolSchema{
      "adjust_contact",
      "Assess image and contact quality and re-align the probe with the surface, "
      "raising the contact force if needed.",
      {
          {"sweep", K::sweep_ref, false, 1.0, "", {}, std::nullopt, "sweep to assess (latest | sweep_<n>)"},
      },
      false});
  tools.push_back(ToolSchema{
      "voice_guidance",
      "Speak an instruction to the patient, such as a breath-hold request.",
      {
          {"message", K::text, true, 1.0, "", {}, std::nullopt, "sentence spoken to the patient"},
      },
      false});
  tools.push_back(ToolSchema{
      "refine_trajectory",
      "Localize the organ in a recorded sweep and replan the trajectory over it when "
      "the organ is off-center or poorly visualized.",
      {
          {"sweep", K::sweep_ref, true, 1.0, "", {}, std::nullopt, "sweep to evaluate (latest | sweep_<n>)"},
      },
      false});
  tools.push_back(ToolSchema{
      "complete_scan",
      "Finish the examination and report a summary. Ends the episode.",
      {
          {"summary", K::text, true, 1.0, "", {}, std::nullopt, "short report of the scan"},
      },
      true});
  return ToolRegistry(std::move(tools));
}

namespace detail {

inline bool is_plain_number(const Json& v) { return v.is_number(); }

inline bool is_integral_number(const Json& v) {
  if (v.is_number_integer() || v.is_number_unsigned()) return true;
  if (!v.is_number_float()) return false;
  const double d = v.get<double>();
  return std::isfinite(d) && std::floor(d) == d;
}

inline std::optional<std::string> check_value(const ParamSpec& p, const Json& v) {
  switch (p.kind) {
    case ParamKind::text:
      if (!v.is_string()) return "not a string";
      return std::nullopt;
    case ParamKind::enumeration: {
      if (!v.is_string()) return "not a string";
      const auto canon = text::canonical_token(v.get<std::string>());
      if (std::find(p.allowed.begin(), p.allowed.end(), canon) == p.allowed.end())
        return "not an allowed value";
      return std::nullopt;
    }
    case ParamKind::number:
      if (!is_plain_number(v)) return "not a number";
      if (!std::isfinite(v.get<double>())) return "not finite";
      return std::nullopt;
    case ParamKind::integer:
      if (!is_integral_number(v)) return "not an integer";
      return std::nullopt;
    case ParamKind::boolean:
      if (!v.is_boolean()) return "not a boolean";
      return std::nullopt;
    case ParamKind::landmark:
      if (!v.is_string()) return "not a string";
      if (!is_landmark_name(text::canonical_token(v.get<std::string>()))) return "unknown landmark";
      return std::nullopt;
    case ParamKind::sweep_ref:
      if (v.is_null()) return std::nullopt;
      if (!v.is_string() || !parse_ref(text::canonical_token(v.get<std::string>()), "sweep"))
        return "not a sweep reference";
      return std::nullopt;
    case ParamKind::trajectory_ref:
      if (!v.is_string() || !parse_ref(text::canonical_token(v.get<std::string>()), "traj"))
        return "not a trajectory reference";
      return std::nullopt;
    case ParamKind::motion_target:
      if (v.is_string()) {
        if (!parse_ref(text::canonical_token(v.get<std::string>()), "traj"))
          return "not a trajectory reference";
        return std::nullopt;
      }
      if (v.is_array() && v.size() == 3 &&
          std::all_of(v.begin(), v.end(), [](const Json& e) { return e.is_number(); }))
        return std::nullopt;
      return "neither a trajectory reference nor a pose triple";
  }
  return "unsupported kind";
}

}  // namespace detail

inline ValidationReport validate_call(const ToolCall& call, const ToolRegistry& registry) {
  const ToolSchema& schema = registry.at(call.tool_name);
  ValidationReport report;
  for (const auto& p : schema.params)
    if (p.required && !call.args.contains(p.name)) report.missing_required.push_back(p.name);
  for (const auto& [key, value] : call.args.items()) {
    const ParamSpec* p = schema.find(key);
    if (!p) {
      report.unknown_keys.push_back(key);
      continue;
    }
    if (auto why = detail::check_value(*p, value)) report.type_errors.emplace_back(key, *why);
  }
  report.valid = report.missing_required.empty() && report.unknown_keys.empty() &&
                 report.type_errors.empty();
  return report;
}

/// Trims string values and lowercases discrete tokens; numbers and unknown
/// keys are left untouched.
inline ToolCall canonicalize(const ToolCall& call, const ToolRegistry& registry) {
  const ToolSchema& schema = registry.at(call.tool_name);
  ToolCall out{call.tool_name, call.args.is_object() ? call.args : Json::object()};
  for (auto& [key, value] : out.args.items()) {
    const ParamSpec* p = schema.find(key);
    if (!p || !value.is_string()) continue;
    const auto& s = value.get_ref<const std::string&>();
    value = is_discrete_token(p->kind) ? text::canonical_token(s) : text::trim(s);
  }
  return out;
}

inline std::string render_tool_prompt(const ToolRegistry& registry) {
  std::ostringstream os;
  os << "AVAILABLE TOOLS (" << registry.size() << ")\n";
  for (const ToolSchema* t : registry.tools()) {
    os << "## " << t->name << (t->terminal ? " [ends the episode]" : "") << "\n";
    os << t->description << "\n";
    for (const auto& p : t->params) {
      os << "  - " << p.name << ": " << to_string(p.kind);
      if (!p.allowed.empty()) {
        os << " {";
        for (std::size_t i = 0; i < p.allowed.size(); ++i) os << (i ? ", " : "") << p.allowed[i];
        os << "}";
      }
      os << (p.required ? ", required" : ", optional");
      if (!p.unit.empty()) os << ", unit " << p.unit;
      if (p.tolerance) {
        os << ", tolerance "
           << (p.tolerance->mode == Tolerance::Mode::relative ? "relative " : "absolute ")
           << Json(p.tolerance->value).dump();
      }
      os << ", weight " << Json(p.weight).dump();
      if (!p.description.empty()) os << " -- " << p.description;
      os << "\n";
    }
  }
  os << "Respond with <think>...</think><tool>{\"tool\": <name>, \"args\": {...}}</tool>\n";
  return os.str();
}

}  // namespace russ
