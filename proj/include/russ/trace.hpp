#pragma once

#include <cstdint>
#include <cstdio>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "russ/errors.hpp"
#include "russ/sim_world.hpp"
#include "russ/tool_registry.hpp"

namespace russ {

/// Dense tool-call reward and its components.
///
/// When the tool name does not match only `r` (= -0.5) is meaningful.
struct RewardBreakdown {
  bool tool_match = false;
  double s_pres = 0.0;
  double s_corr = 0.0;
  double s_extra = 0.0;
  double s_args = 0.0;
  double r = -0.5;

  friend bool operator==(const RewardBreakdown&, const RewardBreakdown&) = default;
};

inline Json to_json(const RewardBreakdown& b) {
  if (!b.tool_match) return Json{{"tool_match", false}, {"r", b.r}};
  return Json{{"tool_match", true}, {"s_pres", b.s_pres}, {"s_corr", b.s_corr},
              {"s_extra", b.s_extra}, {"s_args", b.s_args}, {"r", b.r}};
}

inline RewardBreakdown reward_from_json(const Json& j) {
  RewardBreakdown b;
  b.tool_match = j.at("tool_match").get<bool>();
  b.r = j.at("r").get<double>();
  if (b.tool_match) {
    b.s_pres = j.at("s_pres").get<double>();
    b.s_corr = j.at("s_corr").get<double>();
    b.s_extra = j.at("s_extra").get<double>();
    b.s_args = j.at("s_args").get<double>();
  }
  return b;
}

enum class Termination { completed, max_steps, malformed, tool_error };

inline std::string_view to_string(Termination t) {
  switch (t) {
    case Termination::completed: return "completed";
    case Termination::max_steps: return "max_steps";
    case Termination::malformed: return "malformed";
    case Termination::tool_error: return "tool_error";
  }
  return "?";
}

inline Termination termination_from_string(std::string_view s) {
  for (auto t : {Termination::completed, Termination::max_steps, Termination::malformed, Termination::tool_error})
    if (to_string(t) == s) return t;
  throw TraceFormatError("unknown termination '" + std::string(s) + "'");
}

struct AgentTurn {
  int step_index = 0;
  int repeat_index = 0;  // prior executions of this step in the episode
  std::string think_text;
  ToolCall tool_call;
  ValidationReport validation;
  bool executed = false;
  ToolResult tool_result;
  std::optional<std::string> error;  // tool failure message, when execution threw
  std::string world_digest;          // world state after this turn
  std::optional<RewardBreakdown> reward;
  std::uint64_t timestamp = 0;       // logical clock: policy invocation count

  friend bool operator==(const AgentTurn&, const AgentTurn&) = default;
};

struct TraceOutcome {
  bool success = false;
  Termination termination = Termination::malformed;
  std::string detail;

  friend bool operator==(const TraceOutcome&, const TraceOutcome&) = default;
};

struct Trace {
  std::string guideline_id;
  std::string fixture_id;
  std::uint64_t seed = 0;
  std::vector<AgentTurn> turns;
  TraceOutcome outcome;
  std::string initial_digest;
  std::string final_digest;
  std::optional<Json> metrics;

  friend bool operator==(const Trace&, const Trace&) = default;
};

inline std::string hex_digest(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::string digest_of(const WorldState& w) { return hex_digest(world_digest(w)); }

inline Json to_json(const AgentTurn& t) {
  Json j{{"kind", "turn"},
         {"step_index", t.step_index},
         {"repeat_index", t.repeat_index},
         {"think", t.think_text},
         {"tool_call", to_json(t.tool_call)},
         {"validation", to_json(t.validation)},
         {"executed", t.executed},
         {"result", {{"summary", t.tool_result.summary}, {"payload", t.tool_result.payload}}},
         {"error", t.error ? Json(*t.error) : Json(nullptr)},
         {"world_digest", t.world_digest},
         {"timestamp", t.timestamp}};
  if (t.reward) j["reward"] = to_json(*t.reward);
  return j;
}

inline AgentTurn turn_from_json(const Json& j) {
  AgentTurn t;
  t.step_index = j.at("step_index").get<int>();
  t.repeat_index = j.at("repeat_index").get<int>();
  t.think_text = j.at("think").get<std::string>();
  t.tool_call = ToolCall{j.at("tool_call").at("tool").get<std::string>(), j.at("tool_call").at("args")};
  t.validation = validation_report_from_json(j.at("validation"));
  t.executed = j.at("executed").get<bool>();
  t.tool_result = ToolResult{j.at("result").at("summary").get<std::string>(), j.at("result").at("payload")};
  if (!j.at("error").is_null()) t.error = j.at("error").get<std::string>();
  t.world_digest = j.at("world_digest").get<std::string>();
  t.timestamp = j.at("timestamp").get<std::uint64_t>();
  if (j.contains("reward")) t.reward = reward_from_json(j.at("reward"));
  return t;
}

/// JSONL: one line per turn, then a closing outcome line. Keys are sorted.
inline std::string serialize_trace(const Trace& trace) {
  std::string out;
  for (const auto& t : trace.turns) out += to_json(t).dump() + "\n";
  Json outcome{{"kind", "outcome"},
               {"guideline_id", trace.guideline_id},
               {"fixture_id", trace.fixture_id},
               {"seed", trace.seed},
               {"turns", trace.turns.size()},
               {"success", trace.outcome.success},
               {"termination", to_string(trace.outcome.termination)},
               {"detail", trace.outcome.detail},
               {"initial_digest", trace.initial_digest},
               {"final_digest", trace.final_digest}};
  if (trace.metrics) outcome["metrics"] = *trace.metrics;
  out += outcome.dump() + "\n";
  return out;
}

inline Trace parse_trace(std::string_view jsonl) {
  Trace trace;
  std::istringstream in{std::string(jsonl)};
  std::string line;
  bool have_outcome = false;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (have_outcome) throw TraceFormatError("content after the outcome line");
    try {
      const Json j = Json::parse(line);
      const auto kind = j.at("kind").get<std::string>();
      if (kind == "turn") {
        trace.turns.push_back(turn_from_json(j));
      } else if (kind == "outcome") {
        trace.guideline_id = j.at("guideline_id").get<std::string>();
        trace.fixture_id = j.at("fixture_id").get<std::string>();
        trace.seed = j.at("seed").get<std::uint64_t>();
        trace.outcome.success = j.at("success").get<bool>();
        trace.outcome.termination = termination_from_string(j.at("termination").get<std::string>());
        trace.outcome.detail = j.at("detail").get<std::string>();
        trace.initial_digest = j.at("initial_digest").get<std::string>();
        trace.final_digest = j.at("final_digest").get<std::string>();
        if (j.contains("metrics")) trace.metrics = j.at("metrics");
        if (j.at("turns").get<std::size_t>() != trace.turns.size())
          throw TraceFormatError("turn count does not match the outcome line");
        have_outcome = true;
      } else {
        throw TraceFormatError("unknown line kind '" + kind + "'");
      }
    } catch (const Json::exception& e) {
      throw TraceFormatError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (!have_outcome) throw TraceFormatError("missing outcome line");
  return trace;
}

}  // namespace russ
