// Runs the oracle policy on one bundled guideline and prints the trace.
#include <iostream>

#include "russ/russ.hpp"

int main(int argc, char** argv) {
  const std::string id = argc > 1 ? argv[1] : "kidney_long";
  const auto registry = russ::default_registry();
  const auto store = russ::GuidelineStore::load_directory(russ::default_data_dir() / "guidelines", &registry);
  const auto& guideline = store.at(id);

  auto world = russ::init_world(7, guideline.target_organ);
  russ::OraclePolicy oracle(store, registry);
  const auto trace = russ::run_episode(guideline, world, oracle, registry, {.seed = 7});

  for (const auto& turn : trace.turns)
    std::cout << "step " << turn.step_index << "  " << russ::to_json(turn.tool_call).dump() << "\n    -> "
              << turn.tool_result.summary << "\n";
  std::cout << "termination: " << russ::to_string(trace.outcome.termination)
            << ", success: " << std::boolalpha << trace.outcome.success << "\n";
  return trace.outcome.success ? 0 : 1;
}
