#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "russ/errors.hpp"
#include "russ/tool_registry.hpp"

namespace russ {

enum class ConditionKind {
  confidence_below,
  confidence_at_least,
  organ_off_center,
  organ_visible,
  breath_hold_active,
};

inline std::string_view to_string(ConditionKind k) {
  switch (k) {
    case ConditionKind::confidence_below: return "confidence_below";
    case ConditionKind::confidence_at_least: return "confidence_at_least";
    case ConditionKind::organ_off_center: return "organ_off_center";
    case ConditionKind::organ_visible: return "organ_visible";
    case ConditionKind::breath_hold_active: return "breath_hold_active";
  }
  return "?";
}

inline std::optional<ConditionKind> condition_kind_from_string(std::string_view s) {
  for (auto k : {ConditionKind::confidence_below, ConditionKind::confidence_at_least,
                 ConditionKind::organ_off_center, ConditionKind::organ_visible,
                 ConditionKind::breath_hold_active})
    if (to_string(k) == s) return k;
  return std::nullopt;
}

inline bool needs_threshold(ConditionKind k) {
  return k == ConditionKind::confidence_below || k == ConditionKind::confidence_at_least ||
         k == ConditionKind::organ_off_center;
}

struct ConditionSpec {
  ConditionKind kind = ConditionKind::organ_visible;
  std::optional<double> threshold;

  friend bool operator==(const ConditionSpec&, const ConditionSpec&) = default;
};

struct GuidelineStep {
  int index = 0;
  std::string instruction;
  ToolCall reference_call;
  std::optional<ConditionSpec> condition;
  std::optional<ConditionSpec> repeat_until;
  std::optional<int> max_repeats;  // total executions allowed for a repeating step

  friend bool operator==(const GuidelineStep&, const GuidelineStep&) = default;
};

struct Guideline {
  std::string id;
  std::string title;
  std::string target_organ;
  std::string description;
  std::vector<GuidelineStep> steps;

  friend bool operator==(const Guideline&, const Guideline&) = default;
};

namespace detail {

inline void require_fields(const Json& obj, std::string_view where,
                           std::initializer_list<std::string_view> required,
                           std::initializer_list<std::string_view> optional) {
  if (!obj.is_object()) throw SchemaError(std::string(where) + " must be an object");
  for (auto f : required)
    if (!obj.contains(std::string(f)))
      throw SchemaError(std::string(where) + " is missing field '" + std::string(f) + "'");
  for (const auto& [key, _] : obj.items()) {
    const bool known =
        std::find(required.begin(), required.end(), key) != required.end() ||
        std::find(optional.begin(), optional.end(), key) != optional.end();
    if (!known) throw SchemaError(std::string(where) + " has unexpected field '" + key + "'");
  }
}

inline std::string string_field(const Json& obj, const char* name, std::string_view where) {
  const auto& v = obj.at(name);
  if (!v.is_string())
    throw SchemaError(std::string(where) + "." + name + " must be a string");
  return v.get<std::string>();
}

inline ConditionSpec parse_condition(const Json& j, const std::string& where) {
  require_fields(j, where, {"kind"}, {"threshold"});
  if (!j.at("kind").is_string()) throw SchemaError(where + ".kind must be a string");
  auto kind = condition_kind_from_string(j.at("kind").get<std::string>());
  if (!kind) throw SchemaError(where + ".kind '" + j.at("kind").get<std::string>() + "' is unknown");
  ConditionSpec c{*kind, std::nullopt};
  if (j.contains("threshold")) {
    if (!j.at("threshold").is_number()) throw SchemaError(where + ".threshold must be a number");
    c.threshold = j.at("threshold").get<double>();
  }
  if (needs_threshold(*kind) != c.threshold.has_value())
    throw SchemaError(where + ": threshold " +
                      (needs_threshold(*kind) ? "required" : "not allowed") + " for " +
                      std::string(to_string(*kind)));
  if (c.threshold && (*c.threshold < 0.0 || *c.threshold > 1.0))
    throw SchemaError(where + ".threshold must lie in [0,1]");
  return c;
}

inline Json condition_to_json(const ConditionSpec& c) {
  Json j{{"kind", to_string(c.kind)}};
  if (c.threshold) j["threshold"] = *c.threshold;
  return j;
}

}  // namespace detail

/// Checks the invariants that need a registry: known tools, valid reference calls.
inline void validate_guideline(const Guideline& g, const ToolRegistry& registry) {
  for (const auto& step : g.steps) {
    const std::string where = g.id + " step " + std::to_string(step.index);
    if (!registry.contains(step.reference_call.tool_name))
      throw ReferenceError(where + " uses unknown tool '" + step.reference_call.tool_name + "'");
    const auto report = validate_call(step.reference_call, registry);
    if (!report.valid) throw SchemaError(where + " reference_call invalid: " + report.summary());
  }
}

inline Guideline guideline_from_json(const Json& j, const ToolRegistry* registry = nullptr) {
  using detail::require_fields;
  using detail::string_field;
  require_fields(j, "guideline", {"id", "title", "target_organ", "description", "steps"}, {});
  Guideline g;
  g.id = string_field(j, "id", "guideline");
  g.title = string_field(j, "title", "guideline");
  g.target_organ = text::canonical_token(string_field(j, "target_organ", "guideline"));
  g.description = string_field(j, "description", "guideline");
  if (g.id.empty()) throw SchemaError("guideline.id is empty");
  const auto& steps = j.at("steps");
  if (!steps.is_array()) throw SchemaError("guideline.steps must be an array");
  if (steps.empty()) throw SchemaError("guideline '" + g.id + "' has no steps");
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const std::string where = g.id + ".steps[" + std::to_string(i) + "]";
    const Json& s = steps[i];
    require_fields(s, where, {"index", "instruction", "reference_call"},
                   {"condition", "repeat_until", "max_repeats"});
    GuidelineStep step;
    if (!s.at("index").is_number_integer()) throw SchemaError(where + ".index must be an integer");
    step.index = s.at("index").get<int>();
    if (step.index != static_cast<int>(i))
      throw SchemaError(where + ".index must be " + std::to_string(i));
    step.instruction = string_field(s, "instruction", where);
    try {
      step.reference_call = tool_call_from_json(s.at("reference_call"));
    } catch (const SchemaError& e) {
      throw SchemaError(where + ".reference_call: " + e.what());
    }
    if (s.contains("condition")) step.condition = detail::parse_condition(s.at("condition"), where + ".condition");
    if (s.contains("repeat_until"))
      step.repeat_until = detail::parse_condition(s.at("repeat_until"), where + ".repeat_until");
    if (s.contains("max_repeats")) {
      if (!s.at("max_repeats").is_number_integer())
        throw SchemaError(where + ".max_repeats must be an integer");
      step.max_repeats = s.at("max_repeats").get<int>();
    }
    if (step.repeat_until.has_value() != step.max_repeats.has_value())
      throw SchemaError(where + ": max_repeats present iff repeat_until present");
    if (step.max_repeats && (*step.max_repeats < 1 || *step.max_repeats > 10))
      throw SchemaError(where + ".max_repeats must lie in [1,10]");
    g.steps.push_back(std::move(step));
  }
  if (registry) validate_guideline(g, *registry);
  return g;
}

inline Guideline parse_guideline(std::string_view document, const ToolRegistry* registry = nullptr) {
  Json j;
  try {
    j = Json::parse(document);
  } catch (const Json::parse_error& e) {
    throw FormatError(e.what());
  }
  if (!j.is_object()) throw FormatError("guideline document must be a JSON object");
  return guideline_from_json(j, registry);
}

inline Json to_json(const Guideline& g) {
  Json steps = Json::array();
  for (const auto& s : g.steps) {
    Json js{{"index", s.index}, {"instruction", s.instruction}, {"reference_call", to_json(s.reference_call)}};
    if (s.condition) js["condition"] = detail::condition_to_json(*s.condition);
    if (s.repeat_until) js["repeat_until"] = detail::condition_to_json(*s.repeat_until);
    if (s.max_repeats) js["max_repeats"] = *s.max_repeats;
    steps.push_back(std::move(js));
  }
  return Json{{"id", g.id},
              {"title", g.title},
              {"target_organ", g.target_organ},
              {"description", g.description},
              {"steps", steps}};
}

inline std::string serialize_guideline(const Guideline& g) { return to_json(g).dump(2) + "\n"; }

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Loaded guideline collection, ordered by id. Immutable after construction.
class GuidelineStore {
 public:
  GuidelineStore() = default;

  explicit GuidelineStore(std::vector<Guideline> guidelines) : guidelines_(std::move(guidelines)) {
    std::sort(guidelines_.begin(), guidelines_.end(),
              [](const Guideline& a, const Guideline& b) { return a.id < b.id; });
    for (std::size_t i = 1; i < guidelines_.size(); ++i)
      if (guidelines_[i].id == guidelines_[i - 1].id)
        throw SchemaError("duplicate guideline id '" + guidelines_[i].id + "'");
  }

  /// Loads every `*.guideline.json` in `dir`.
  static GuidelineStore load_directory(const std::filesystem::path& dir,
                                       const ToolRegistry* registry = nullptr) {
    if (!std::filesystem::is_directory(dir)) throw FormatError("not a directory: " + dir.string());
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
      const auto name = entry.path().filename().string();
      if (entry.is_regular_file() && name.size() > 15 &&
          name.compare(name.size() - 15, 15, ".guideline.json") == 0)
        files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    std::vector<Guideline> out;
    for (const auto& f : files) out.push_back(parse_guideline(read_file(f), registry));
    return GuidelineStore(std::move(out));
  }

  const std::vector<Guideline>& all() const { return guidelines_; }
  std::size_t size() const { return guidelines_.size(); }
  bool empty() const { return guidelines_.empty(); }

  const Guideline* find(std::string_view id) const {
    auto it = std::lower_bound(guidelines_.begin(), guidelines_.end(), id,
                               [](const Guideline& g, std::string_view v) { return g.id < v; });
    return it != guidelines_.end() && it->id == id ? &*it : nullptr;
  }

  const Guideline& at(std::string_view id) const {
    if (const auto* g = find(id)) return *g;
    throw SchemaError("unknown guideline '" + std::string(id) + "'");
  }

 private:
  std::vector<Guideline> guidelines_;
};

}  // namespace russ
