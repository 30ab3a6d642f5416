#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "russ/agent.hpp"
#include "russ/errors.hpp"
#include "russ/guideline.hpp"
#include "russ/rng.hpp"
#include "russ/tool_registry.hpp"

namespace russ {

/// Templated rationale naming the step objective.
inline std::string oracle_think(const GuidelineStep& step) {
  return "Step " + std::to_string(step.index) + ": " + step.instruction + " The tool for this is " +
         step.reference_call.tool_name + ".";
}

/// Reference-format response for a step: rationale plus canonical reference call.
inline std::string oracle_response(const GuidelineStep& step, const ToolRegistry& registry) {
  return format_response(oracle_think(step), canonicalize(step.reference_call, registry));
}

inline std::string oracle_generate(const std::string& context, const GuidelineStore& store,
                                   const ToolRegistry& registry) {
  const auto marker = find_context_marker(context);
  if (!marker) throw NoCurrentStep("context has no guideline or current-step marker");
  const Guideline* g = store.find(marker->guideline_id);
  if (!g) throw NoCurrentStep("unknown guideline '" + marker->guideline_id + "'");
  if (marker->step_index < 0 || marker->step_index >= static_cast<int>(g->steps.size()))
    throw NoCurrentStep("step " + std::to_string(marker->step_index) + " out of range");
  return oracle_response(g->steps[static_cast<std::size_t>(marker->step_index)], registry);
}

/// Scripted policy that answers every step with its reference call.
class OraclePolicy : public Policy {
 public:
  OraclePolicy(const GuidelineStore& store, const ToolRegistry& registry) : store_(&store), registry_(&registry) {}

  std::string generate(const std::string& context) override { return oracle_generate(context, *store_, *registry_); }
  std::string name() const override { return "oracle"; }

 private:
  const GuidelineStore* store_;
  const ToolRegistry* registry_;
};

struct PerturbationConfig {
  double p_wrong_tool = 0.0;
  double p_drop_required = 0.0;
  double p_extra_key = 0.0;
  double p_numeric_noise = 0.0;
  double numeric_noise_rel = 0.5;
  std::uint64_t seed = 0;

  void check() const {
    for (double p : {p_wrong_tool, p_drop_required, p_extra_key, p_numeric_noise})
      if (!(p >= 0.0 && p <= 1.0)) throw InvalidArgument("perturbation probabilities must lie in [0,1]");
    if (!(numeric_noise_rel >= 0.0)) throw InvalidArgument("numeric_noise_rel must be non-negative");
  }
};

inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Applies seeded corruptions to the oracle response. The stream is seeded from
/// (cfg.seed, context), so the output is a pure function of both.
inline std::string perturbed_generate(const std::string& context, const PerturbationConfig& cfg,
                                      const GuidelineStore& store, const ToolRegistry& registry) {
  const std::string base = oracle_generate(context, store, registry);
  ParsedResponse parsed = parse_response(base);
  DeterministicRng rng(fnv1a(context, fnv1a(std::to_string(cfg.seed))));
  // Fixed draw order keeps the stream aligned regardless of which branches fire.
  const double u_tool = rng.uniform01();
  const double u_drop = rng.uniform01();
  const double u_extra = rng.uniform01();
  const double u_noise = rng.uniform01();
  ToolCall call = parsed.call;
  const ToolSchema& reference_schema = registry.at(call.tool_name);
  bool changed = false;

  if (u_tool < cfg.p_wrong_tool) {
    std::vector<std::string> others;
    for (const auto& n : registry.names())
      if (n != call.tool_name) others.push_back(n);
    if (!others.empty()) {
      call.tool_name = others[rng.below(others.size())];
      changed = true;
    }
  }
  if (u_drop < cfg.p_drop_required) {
    std::vector<std::string> present;
    for (const auto* p : reference_schema.scored_params())
      if (call.args.contains(p->name)) present.push_back(p->name);
    if (!present.empty()) {
      call.args.erase(present[rng.below(present.size())]);
      changed = true;
    }
  }
  if (u_extra < cfg.p_extra_key) {
    const std::string key = "spurious_" + std::to_string(rng.below(1000));
    call.args[key] = std::round(rng.uniform(0.0, 100.0) * 100.0) / 100.0;
    changed = true;
  }
  if (u_noise < cfg.p_numeric_noise) {
    std::vector<std::string> numeric;
    for (const auto& [k, v] : call.args.items())
      if (v.is_number() && k.rfind("spurious_", 0) != 0) numeric.push_back(k);
    if (!numeric.empty()) {
      const std::string& key = numeric[rng.below(numeric.size())];
      const double sign = rng.below(2) == 0 ? 1.0 : -1.0;
      Json& v = call.args[key];
      const double scaled = v.get<double>() * (1.0 + sign * cfg.numeric_noise_rel);
      if (v.is_number_integer() || v.is_number_unsigned())
        v = static_cast<std::int64_t>(std::llround(scaled));
      else
        v = scaled;
      changed = true;
    }
  }
  if (!changed) return base;
  return format_response(parsed.think_text, call);
}

class PerturbedPolicy : public Policy {
 public:
  PerturbedPolicy(const GuidelineStore& store, const ToolRegistry& registry, PerturbationConfig cfg)
      : store_(&store), registry_(&registry), cfg_(cfg) {
    cfg_.check();
  }

  std::string generate(const std::string& context) override {
    return perturbed_generate(context, cfg_, *store_, *registry_);
  }
  std::string name() const override { return "perturbed"; }
  const PerturbationConfig& config() const { return cfg_; }

 private:
  const GuidelineStore* store_;
  const ToolRegistry* registry_;
  PerturbationConfig cfg_;
};

}  // namespace russ
