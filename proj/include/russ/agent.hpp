#pragma once

#include <cctype>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "russ/errors.hpp"
#include "russ/guideline.hpp"
#include "russ/sim_world.hpp"
#include "russ/tool_registry.hpp"
#include "russ/trace.hpp"

namespace russ {

/// Response generator driven by the rendered context.
///
/// Implementations may throw russ::Error for transport failures; the episode
/// loop treats those like an unusable response.
class Policy {
 public:
  virtual ~Policy() = default;
  virtual std::string generate(const std::string& context) = 0;
  virtual std::string name() const = 0;
};

// ---------------------------------------------------------------------------
// Response grammar: ws <think> ... </think> ws <tool> {json} </tool> ws

struct ParsedResponse {
  std::string think_text;
  ToolCall call;
};

namespace detail {

inline std::size_t skip_ws(std::string_view s, std::size_t pos) {
  while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
  return pos;
}

}  // namespace detail

inline ParsedResponse parse_response(std::string_view text) {
  constexpr std::string_view kThinkOpen = "<think>", kThinkClose = "</think>";
  constexpr std::string_view kToolOpen = "<tool>", kToolClose = "</tool>";
  std::size_t pos = detail::skip_ws(text, 0);
  if (text.substr(pos, kThinkOpen.size()) != kThinkOpen) {
    if (text.substr(pos, kToolOpen.size()) == kToolOpen)
      throw MalformedResponse("wrong order: <tool> before <think>");
    throw MalformedResponse("missing <think> tag");
  }
  pos += kThinkOpen.size();
  const auto think_end = text.find(kThinkClose, pos);
  if (think_end == std::string_view::npos) throw MalformedResponse("missing </think> tag");
  ParsedResponse out;
  out.think_text = std::string(text.substr(pos, think_end - pos));
  pos = detail::skip_ws(text, think_end + kThinkClose.size());
  if (text.substr(pos, kToolOpen.size()) != kToolOpen) throw MalformedResponse("missing <tool> tag");
  pos += kToolOpen.size();
  const auto tool_end = text.rfind(kToolClose);
  if (tool_end == std::string_view::npos || tool_end < pos) throw MalformedResponse("missing </tool> tag");
  if (detail::skip_ws(text, tool_end + kToolClose.size()) != text.size())
    throw MalformedResponse("trailing content after </tool>");
  Json body;
  try {
    body = Json::parse(text.substr(pos, tool_end - pos));
  } catch (const Json::parse_error& e) {
    throw MalformedResponse(std::string("invalid JSON in <tool>: ") + e.what());
  }
  if (!body.is_object()) throw MalformedResponse("tool body is not a JSON object");
  if (!body.contains("tool") || !body.at("tool").is_string()) throw MalformedResponse("missing \"tool\" field");
  if (!body.contains("args") || !body.at("args").is_object()) throw MalformedResponse("missing \"args\" field");
  if (body.size() != 2) throw MalformedResponse("unexpected fields in tool body");
  out.call = ToolCall{body.at("tool").get<std::string>(), body.at("args")};
  return out;
}

inline std::string format_response(std::string_view think, const ToolCall& call) {
  return "<think>" + std::string(think) + "</think><tool>" + to_json(call).dump() + "</tool>";
}

// ---------------------------------------------------------------------------
// Context rendering

inline const std::string& default_prefix_prompt() {
  static const std::string prompt =
      "You control a robotic ultrasound system. Work through the scanning guideline "
      "one step at a time. At every turn reason briefly inside <think></think>, then "
      "emit exactly one tool call as JSON inside <tool></tool>. Tool outputs from "
      "earlier turns are listed under HISTORY.";
  return prompt;
}

inline constexpr std::string_view kGuidelineMarker = "GUIDELINE: ";
inline constexpr std::string_view kStepMarker = "CURRENT STEP: ";

struct AgentContext {
  std::string prefix_prompt = default_prefix_prompt();
  const Guideline* guideline = nullptr;
  std::string tool_catalog;
  std::vector<AgentTurn> history;
  int current_step_index = 0;
  int repeat_count = 0;
  std::vector<std::string> notices;  // errors from rejected responses in this step

  std::string render() const;
};

namespace detail {

inline std::string describe_condition(const ConditionSpec& c) {
  std::string s(to_string(c.kind));
  if (c.threshold) s += " " + Json(*c.threshold).dump();
  return s;
}

}  // namespace detail

inline std::string AgentContext::render() const {
  std::ostringstream os;
  os << "# ROLE\n" << prefix_prompt << "\n\n";
  os << "# " << kGuidelineMarker << guideline->id << "\n";
  os << "title: " << guideline->title << "\n";
  os << "target organ: " << guideline->target_organ << "\n";
  os << guideline->description << "\n";
  for (const auto& step : guideline->steps) {
    os << (step.index == current_step_index ? ">> " : "   ") << step.index << ". " << step.instruction;
    if (step.condition) os << " [only if " << detail::describe_condition(*step.condition) << "]";
    if (step.repeat_until)
      os << " [repeat until " << detail::describe_condition(*step.repeat_until) << ", at most "
         << *step.max_repeats << " times]";
    os << "\n";
  }
  if (current_step_index >= 0 && current_step_index < static_cast<int>(guideline->steps.size())) {
    os << kStepMarker << current_step_index << "\n";
    if (repeat_count > 0) os << "REPEAT: " << repeat_count << "\n";
  }
  os << "\n# TOOLS\n" << tool_catalog << "\n# HISTORY\n";
  if (history.empty()) os << "(none)\n";
  for (const auto& t : history) {
    os << "TOOL CALL [step " << t.step_index << "]: " << to_json(t.tool_call).dump() << "\n";
    os << "TOOL RESULT: " << (t.error ? "error: " + *t.error : t.tool_result.summary) << "\n";
    if (!t.tool_result.payload.empty()) os << "  " << t.tool_result.payload.dump() << "\n";
  }
  for (const auto& n : notices) os << "\n# NOTICE\n" << n << "\n";
  return os.str();
}

inline std::string build_context(const Guideline& guideline, const ToolRegistry& registry,
                                 const std::vector<AgentTurn>& history, int step_index, int repeat_count = 0,
                                 std::vector<std::string> notices = {},
                                 const std::string& prefix_prompt = default_prefix_prompt()) {
  if (step_index < 0 || step_index > static_cast<int>(guideline.steps.size()))
    throw InvalidArgument("step index " + std::to_string(step_index) + " out of range");
  AgentContext ctx;
  ctx.prefix_prompt = prefix_prompt;
  ctx.guideline = &guideline;
  ctx.tool_catalog = render_tool_prompt(registry);
  ctx.history = history;
  ctx.current_step_index = step_index;
  ctx.repeat_count = repeat_count;
  ctx.notices = std::move(notices);
  return ctx.render();
}

/// Guideline id and marked step read back from a rendered context.
struct ContextMarker {
  std::string guideline_id;
  int step_index = 0;
};

inline std::optional<ContextMarker> find_context_marker(std::string_view context) {
  std::optional<std::string> id;
  std::optional<int> step;
  std::size_t start = 0;
  while (start <= context.size()) {
    auto end = context.find('\n', start);
    if (end == std::string_view::npos) end = context.size();
    std::string_view line = context.substr(start, end - start);
    if (line.rfind("# ", 0) == 0 && line.substr(2).rfind(kGuidelineMarker, 0) == 0 && !id)
      id = std::string(line.substr(2 + kGuidelineMarker.size()));
    if (line.rfind(kStepMarker, 0) == 0 && !step) {
      try {
        step = std::stoi(std::string(line.substr(kStepMarker.size())));
      } catch (const std::exception&) {
        return std::nullopt;
      }
    }
    start = end + 1;
  }
  if (!id || !step) return std::nullopt;
  return ContextMarker{*id, *step};
}

// ---------------------------------------------------------------------------
// Episode loop

struct EpisodeConfig {
  int max_steps = 24;
  int max_retries = 2;
  std::uint64_t seed = 0;
  std::string prefix_prompt = default_prefix_prompt();
};

namespace detail {

/// Condition value for step sequencing; a condition that needs a sweep
/// before any exists is treated as not holding.
inline bool condition_holds(const ConditionSpec& c, const WorldState& w) {
  try {
    return evaluate_condition(c, w);
  } catch (const NoSweepYet&) {
    return false;
  }
}

inline int next_active_step(const Guideline& g, const WorldState& w, int from) {
  int step = from;
  while (step < static_cast<int>(g.steps.size()) && g.steps[step].condition &&
         !condition_holds(*g.steps[step].condition, w))
    ++step;
  return step;
}

}  // namespace detail

/// Runs one episode against `world`, which the episode owns while it runs.
inline Trace run_episode(const Guideline& guideline, WorldState& world, Policy& policy,
                         const ToolRegistry& registry, const EpisodeConfig& config = {}) {
  Trace trace;
  trace.guideline_id = guideline.id;
  trace.fixture_id = world.fixture_id;
  trace.seed = config.seed;
  trace.initial_digest = digest_of(world);

  const int step_count = static_cast<int>(guideline.steps.size());
  const ToolSchema* terminal = registry.terminal_tool();
  int step = detail::next_active_step(guideline, world, 0);
  int repeat_count = 0;
  int turns_used = 0;
  std::uint64_t clock = 0;
  std::optional<TraceOutcome> outcome;

  while (!outcome) {
    if (step >= step_count) {
      outcome = TraceOutcome{false, Termination::max_steps, "guideline steps exhausted without completion"};
      break;
    }
    if (turns_used >= config.max_steps) {
      outcome = TraceOutcome{false, Termination::max_steps, "step budget exhausted"};
      break;
    }
    std::vector<std::string> notices;
    bool accepted = false;
    bool last_rejection_was_invalid = false;
    for (int attempt = 0; attempt <= config.max_retries && !accepted && !outcome; ++attempt) {
      const std::string context =
          build_context(guideline, registry, trace.turns, step, repeat_count, notices, config.prefix_prompt);
      ++clock;
      std::string response;
      ParsedResponse parsed;
      try {
        response = policy.generate(context);
        parsed = parse_response(response);
      } catch (const Error& e) {
        notices.push_back(std::string("Previous response rejected: ") + e.what());
        last_rejection_was_invalid = false;
        continue;
      }
      AgentTurn turn;
      turn.step_index = step;
      turn.repeat_index = repeat_count;
      turn.think_text = parsed.think_text;
      turn.timestamp = clock;
      if (!registry.contains(parsed.call.tool_name)) {
        turn.tool_call = parsed.call;
        turn.validation.valid = false;
        turn.validation.type_errors.emplace_back("tool", "unknown tool '" + parsed.call.tool_name + "'");
      } else {
        turn.tool_call = canonicalize(parsed.call, registry);
        turn.validation = validate_call(turn.tool_call, registry);
      }
      if (!turn.validation.valid) {
        turn.tool_result.summary = "rejected: " + turn.validation.summary();
        turn.world_digest = digest_of(world);
        trace.turns.push_back(std::move(turn));
        ++turns_used;
        notices.push_back("Previous tool call rejected: " + trace.turns.back().validation.summary());
        last_rejection_was_invalid = true;
        if (turns_used >= config.max_steps) break;
        continue;
      }
      turn.executed = true;
      try {
        turn.tool_result = execute_tool_call(world, turn.tool_call);
      } catch (const Error& e) {
        turn.error = e.what();
        turn.tool_result.summary = "tool failed";
        outcome = TraceOutcome{false, Termination::tool_error, e.what()};
      }
      turn.world_digest = digest_of(world);
      trace.turns.push_back(std::move(turn));
      ++turns_used;
      accepted = true;
    }
    if (outcome) break;
    if (!accepted) {
      if (last_rejection_was_invalid)
        outcome = TraceOutcome{false, Termination::tool_error, "no valid tool call after retries"};
      else
        outcome = TraceOutcome{false, Termination::malformed, notices.empty() ? "" : notices.back()};
      break;
    }
    const AgentTurn& last = trace.turns.back();
    if (terminal && last.tool_call.tool_name == terminal->name) {
      bool success = false;
      try {
        success = is_scan_successful(world, guideline);
      } catch (const NoSweepYet&) {
      }
      outcome = TraceOutcome{success, Termination::completed, ""};
      break;
    }
    const GuidelineStep& current = guideline.steps[step];
    ++repeat_count;
    const bool stay = current.repeat_until && repeat_count < *current.max_repeats &&
                      !detail::condition_holds(*current.repeat_until, world);
    if (!stay) {
      step = detail::next_active_step(guideline, world, step + 1);
      repeat_count = 0;
    }
  }
  trace.outcome = *outcome;
  trace.final_digest = digest_of(world);
  return trace;
}

/// Re-executes the recorded tool calls on a fresh world and checks every
/// recorded state digest.
inline WorldState replay(const Trace& trace, const SceneFixture& fixture) {
  WorldState world = init_world(trace.seed, fixture);
  if (!trace.initial_digest.empty() && digest_of(world) != trace.initial_digest)
    throw ReplayDivergence(0, "initial world differs (seed or fixture mismatch)");
  for (std::size_t i = 0; i < trace.turns.size(); ++i) {
    const AgentTurn& turn = trace.turns[i];
    if (turn.executed) {
      std::optional<std::string> error;
      ToolResult result;
      try {
        result = execute_tool_call(world, turn.tool_call);
      } catch (const Error& e) {
        error = e.what();
      }
      if (error != turn.error) throw ReplayDivergence(i, "tool error differs");
      if (!error && result != turn.tool_result) throw ReplayDivergence(i, "tool result differs");
    }
    if (digest_of(world) != turn.world_digest) throw ReplayDivergence(i, "world state differs");
  }
  if (!trace.final_digest.empty() && digest_of(world) != trace.final_digest)
    throw ReplayDivergence(trace.turns.size(), "final world state differs");
  return world;
}

}  // namespace russ
