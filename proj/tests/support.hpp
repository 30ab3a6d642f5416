#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include "russ/russ.hpp"

namespace russ::testing {

inline std::filesystem::path test_data_dir() { return RUSS_TEST_DATA_DIR; }
inline std::filesystem::path guidelines_dir() { return default_data_dir() / "guidelines"; }
inline std::filesystem::path fixtures_dir() { return default_data_dir() / "fixtures"; }

inline Json load_json(const std::filesystem::path& p) { return Json::parse(read_file(p)); }

inline const ToolRegistry& registry() {
  static const ToolRegistry r = default_registry();
  return r;
}

inline const GuidelineStore& store() {
  static const GuidelineStore s = GuidelineStore::load_directory(guidelines_dir(), &registry());
  return s;
}

inline ToolCall call(std::string tool, Json args) { return ToolCall{std::move(tool), std::move(args)}; }

/// Oracle episode on the guideline's own fixture.
inline Trace oracle_trace(const std::string& guideline_id, std::uint64_t seed) {
  const Guideline& g = store().at(guideline_id);
  WorldState world = init_world(seed, g.target_organ);
  OraclePolicy oracle(store(), registry());
  EpisodeConfig cfg;
  cfg.seed = seed;
  return run_episode(g, world, oracle, registry(), cfg);
}

/// First seed whose oracle kidney_long episode needs no refinement (4 turns).
inline std::uint64_t kidney_seed_without_refinement() {
  for (std::uint64_t seed = 0;; ++seed)
    if (oracle_trace("kidney_long", seed).turns.size() == 4) return seed;
}

/// Policy returning a fixed script of responses, then repeating the last one.
class ScriptedPolicy : public Policy {
 public:
  explicit ScriptedPolicy(std::vector<std::string> script) : script_(std::move(script)) {}
  std::string generate(const std::string& context) override {
    contexts.push_back(context);
    const std::size_t i = std::min(calls++, script_.size() - 1);
    return script_[i];
  }
  std::string name() const override { return "scripted"; }

  std::size_t calls = 0;
  std::vector<std::string> contexts;

 private:
  std::vector<std::string> script_;
};

}  // namespace russ::testing
