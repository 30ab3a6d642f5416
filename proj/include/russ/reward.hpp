#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "russ/errors.hpp"
#include "russ/guideline.hpp"
#include "russ/policy.hpp"
#include "russ/tool_registry.hpp"
#include "russ/trace.hpp"

namespace russ {

namespace detail {

inline double clip01(double x) { return std::clamp(x, 0.0, 1.0); }

inline bool number_matches(const Json& pred, const Json& ref, const std::optional<Tolerance>& tol) {
  if (!pred.is_number() || !ref.is_number()) return false;
  const double p = pred.get<double>();
  const double r = ref.get<double>();
  return tol ? tol->matches(p, r) : p == r;
}

/// The approximate-equality relation between a predicted and reference value.
inline bool values_match(const ParamSpec& spec, const Json& pred, const Json& ref) {
  switch (spec.kind) {
    case ParamKind::number:
    case ParamKind::integer:
      return number_matches(pred, ref, spec.tolerance);
    case ParamKind::text:
      return pred.is_string() && ref.is_string() &&
             text::canonical_token(pred.get<std::string>()) == text::canonical_token(ref.get<std::string>());
    case ParamKind::motion_target:
      if (ref.is_array()) {
        if (!pred.is_array() || pred.size() != ref.size()) return false;
        for (std::size_t i = 0; i < ref.size(); ++i)
          if (!number_matches(pred[i], ref[i], spec.tolerance)) return false;
        return true;
      }
      [[fallthrough]];
    default:
      return pred == ref;
  }
}

}  // namespace detail

/// Dense reward of a predicted call against the reference call.
///
/// Scored keys are the required params of the reference tool. A tool with no
/// required params has nothing to miss, so presence and correctness are 1.
inline RewardBreakdown score_tool_call(const ToolCall& pred, const ToolCall& ref, const ToolRegistry& registry) {
  const ToolSchema* schema = registry.find(ref.tool_name);
  if (!schema) throw ReferenceInvalid("unknown reference tool '" + ref.tool_name + "'");
  if (const auto report = validate_call(ref, registry); !report.valid)
    throw ReferenceInvalid(report.summary());
  RewardBreakdown b;
  if (pred.tool_name != ref.tool_name) {
    b.tool_match = false;
    b.r = -0.5;
    return b;
  }
  b.tool_match = true;
  const ToolCall p = canonicalize(pred, registry);
  const ToolCall r = canonicalize(ref, registry);

  double total = 0.0, present = 0.0, correct = 0.0;
  for (const ParamSpec* spec : schema->scored_params()) {
    total += spec->weight;
    if (!p.args.contains(spec->name)) continue;
    present += spec->weight;
    if (r.args.contains(spec->name) && detail::values_match(*spec, p.args.at(spec->name), r.args.at(spec->name)))
      correct += spec->weight;
  }
  b.s_pres = total > 0.0 ? present / total : 1.0;
  b.s_corr = total > 0.0 ? correct / total : 1.0;

  std::size_t extra = 0;
  for (const auto& [key, _] : p.args.items())
    if (!r.args.contains(key)) ++extra;
  b.s_extra = static_cast<double>(extra) / static_cast<double>(std::max<std::size_t>(1, p.args.size()));

  b.s_args = detail::clip01(0.5 * b.s_pres + 0.5 * b.s_corr - 0.1 * b.s_extra);
  b.r = detail::clip01(0.1 + 0.9 * b.s_args);
  return b;
}

struct StepScore {
  int step_index = 0;
  RewardBreakdown reward;
  bool step_correct = false;
};

inline bool is_step_correct(const RewardBreakdown& b) {
  return b.tool_match && b.s_pres == 1.0 && b.s_corr == 1.0;
}

struct EpisodeMetrics {
  std::string guideline_id;
  std::uint64_t seed = 0;
  std::size_t scored_turns = 0;
  std::size_t correct_turns = 0;
  bool success = false;

  /// Empty when the episode has no scored turn.
  std::optional<double> step_wise_accuracy() const {
    if (scored_turns == 0) return std::nullopt;
    return static_cast<double>(correct_turns) / static_cast<double>(scored_turns);
  }
};

struct TraceScore {
  EpisodeMetrics metrics;
  std::vector<StepScore> steps;
};

inline TraceScore score_trace(const Trace& trace, const Guideline& guideline, const ToolRegistry& registry) {
  TraceScore out;
  out.metrics.guideline_id = trace.guideline_id;
  out.metrics.seed = trace.seed;
  out.metrics.success = trace.outcome.success;
  for (const auto& turn : trace.turns) {
    if (turn.step_index < 0 || turn.step_index >= static_cast<int>(guideline.steps.size()))
      throw UnknownStepIndex(std::to_string(turn.step_index) + " in guideline '" + guideline.id + "'");
    const auto& ref = guideline.steps[static_cast<std::size_t>(turn.step_index)].reference_call;
    StepScore s;
    s.step_index = turn.step_index;
    s.reward = score_tool_call(turn.tool_call, ref, registry);
    s.step_correct = is_step_correct(s.reward);
    ++out.metrics.scored_turns;
    out.metrics.correct_turns += s.step_correct ? 1 : 0;
    out.steps.push_back(s);
  }
  return out;
}

/// Writes each turn's reward into the trace and records per-trace metrics.
inline TraceScore attach_scores(Trace& trace, const Guideline& guideline, const ToolRegistry& registry) {
  TraceScore score = score_trace(trace, guideline, registry);
  for (std::size_t i = 0; i < trace.turns.size(); ++i) trace.turns[i].reward = score.steps[i].reward;
  const auto acc = score.metrics.step_wise_accuracy();
  trace.metrics = Json{{"scored_turns", score.metrics.scored_turns},
                       {"correct_turns", score.metrics.correct_turns},
                       {"step_wise_accuracy", acc ? Json(*acc) : Json(nullptr)}};
  return score;
}

struct AggregateMetrics {
  std::size_t episodes = 0;
  std::size_t successes = 0;
  std::size_t scored_turns = 0;
  std::size_t correct_turns = 0;
  std::optional<double> step_wise_accuracy;  // pooled over turns
  double overall_success_rate = 0.0;
};

inline AggregateMetrics aggregate(const std::vector<EpisodeMetrics>& metrics) {
  if (metrics.empty()) throw EmptyInput("no episodes to aggregate");
  AggregateMetrics a;
  for (const auto& m : metrics) {
    ++a.episodes;
    a.successes += m.success ? 1 : 0;
    a.scored_turns += m.scored_turns;
    a.correct_turns += m.correct_turns;
  }
  if (a.scored_turns > 0)
    a.step_wise_accuracy = static_cast<double>(a.correct_turns) / static_cast<double>(a.scored_turns);
  a.overall_success_rate = static_cast<double>(a.successes) / static_cast<double>(a.episodes);
  return a;
}

inline Json to_json(const AggregateMetrics& a) {
  return Json{{"episodes", a.episodes},
              {"successes", a.successes},
              {"scored_turns", a.scored_turns},
              {"correct_turns", a.correct_turns},
              {"step_wise_accuracy", a.step_wise_accuracy ? Json(*a.step_wise_accuracy) : Json(nullptr)},
              {"overall_success_rate", a.overall_success_rate}};
}

/// Per-guideline table plus the pooled aggregate row.
inline Json metrics_report(const std::vector<EpisodeMetrics>& metrics) {
  std::map<std::string, std::vector<EpisodeMetrics>> by_guideline;
  for (const auto& m : metrics) by_guideline[m.guideline_id].push_back(m);
  Json table = Json::object();
  for (const auto& [id, ms] : by_guideline) table[id] = to_json(aggregate(ms));
  return Json{{"aggregate", to_json(aggregate(metrics))}, {"per_guideline", table}};
}

// ---------------------------------------------------------------------------
// Training data export

/// One record per scored turn, ordered by (guideline id, seed, turn index).
/// Contexts are re-rendered from the trace; retry notices are not included.
inline std::vector<Json> export_sft_dataset(std::vector<Trace> traces, const GuidelineStore& guidelines,
                                            const ToolRegistry& registry) {
  std::stable_sort(traces.begin(), traces.end(), [](const Trace& a, const Trace& b) {
    if (a.guideline_id != b.guideline_id) return a.guideline_id < b.guideline_id;
    return a.seed < b.seed;
  });
  std::vector<Json> records;
  for (const auto& trace : traces) {
    const Guideline& g = guidelines.at(trace.guideline_id);
    std::vector<AgentTurn> history;
    for (const auto& turn : trace.turns) {
      if (turn.step_index < 0 || turn.step_index >= static_cast<int>(g.steps.size()))
        throw UnknownStepIndex(std::to_string(turn.step_index) + " in guideline '" + g.id + "'");
      const auto& step = g.steps[static_cast<std::size_t>(turn.step_index)];
      const RewardBreakdown reward = score_tool_call(turn.tool_call, step.reference_call, registry);
      records.push_back(Json{{"context", build_context(g, registry, history, turn.step_index, turn.repeat_index)},
                             {"target", oracle_response(step, registry)},
                             {"reward", reward.r},
                             {"guideline_id", g.id},
                             {"step_index", turn.step_index}});
      history.push_back(turn);
    }
  }
  return records;
}

inline std::string to_jsonl(const std::vector<Json>& records) {
  std::string out;
  for (const auto& r : records) out += r.dump() + "\n";
  return out;
}

}  // namespace russ
