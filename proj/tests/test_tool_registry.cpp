#include <gtest/gtest.h>

#include <random>

#include "support.hpp"

using namespace russ;
using russ::testing::call;
using russ::testing::registry;

TEST(ToolRegistry, DefaultHasSixToolsOneTerminal) {
  const auto& reg = registry();
  EXPECT_EQ(reg.size(), 6u);
  int terminal = 0;
  for (const ToolSchema* t : reg.tools()) terminal += t->terminal ? 1 : 0;
  EXPECT_EQ(terminal, 1);
  ASSERT_NE(reg.terminal_tool(), nullptr);
  EXPECT_EQ(reg.terminal_tool()->name, "complete_scan");
}

TEST(ToolRegistry, PlanTrajectoryRequiredParams) {
  std::vector<std::string> required;
  for (const ParamSpec* p : registry().at("plan_trajectory").scored_params()) required.push_back(p->name);
  std::sort(required.begin(), required.end());
  EXPECT_EQ(required, (std::vector<std::string>{"end_landmark", "start_landmark", "target_organ"}));
  const ParamSpec* n = registry().at("plan_trajectory").find("n_points");
  ASSERT_NE(n, nullptr);
  EXPECT_FALSE(n->required);
}

TEST(ToolRegistry, AdjustContactSweepOptional) {
  const ParamSpec* p = registry().at("adjust_contact").find("sweep");
  ASSERT_NE(p, nullptr);
  EXPECT_FALSE(p->required);
}

TEST(ToolRegistry, DefaultWeightsAreOne) {
  for (const ToolSchema* t : registry().tools())
    for (const ParamSpec* p : t->scored_params()) EXPECT_DOUBLE_EQ(p->weight, 1.0) << t->name << "." << p->name;
}

TEST(ToolRegistry, SpeedToleranceIsTenPercent) {
  const ParamSpec* speed = registry().at("execute_motion").find("speed");
  ASSERT_TRUE(speed && speed->tolerance);
  EXPECT_EQ(speed->tolerance->mode, Tolerance::Mode::relative);
  EXPECT_DOUBLE_EQ(speed->tolerance->value, 0.10);
}

TEST(ToolRegistry, UnknownToolLookupThrows) {
  EXPECT_THROW(registry().at("teleport"), UnknownTool);
  EXPECT_EQ(registry().find("teleport"), nullptr);
}

TEST(ToolRegistry, OverridesChangeWeightAndTolerance) {
  const Json cfg = Json::parse(R"({"tools": {"execute_motion": {"speed": {"weight": 3.0, "tolerance": {"absolute": 2.0}}}}})");
  const ToolRegistry r = registry().with_overrides(cfg);
  const ParamSpec* speed = r.at("execute_motion").find("speed");
  EXPECT_DOUBLE_EQ(speed->weight, 3.0);
  EXPECT_EQ(speed->tolerance->mode, Tolerance::Mode::absolute);
  EXPECT_DOUBLE_EQ(speed->tolerance->value, 2.0);
  // the source registry is untouched
  EXPECT_DOUBLE_EQ(registry().at("execute_motion").find("speed")->weight, 1.0);
}

TEST(ToolRegistry, OverridesRejectUnknownNamesAndBadWeights) {
  EXPECT_THROW(registry().with_overrides(Json::parse(R"({"tools": {"teleport": {}}})")), ConfigError);
  EXPECT_THROW(registry().with_overrides(Json::parse(R"({"tools": {"voice_guidance": {"volume": {"weight": 1}}}})")),
               ConfigError);
  EXPECT_THROW(registry().with_overrides(Json::parse(R"({"tools": {"voice_guidance": {"message": {"weight": 0}}}})")),
               ConfigError);
  EXPECT_THROW(registry().with_overrides(Json::parse(R"({"weights": {}})")), ConfigError);
}

TEST(ValidateCall, WellFormedPlanIsValid) {
  const auto r = validate_call(call("plan_trajectory", {{"target_organ", "kidney"},
                                                        {"start_landmark", "right_costal_margin"},
                                                        {"end_landmark", "right_iliac_crest"}}),
                               registry());
  EXPECT_TRUE(r.valid) << r.summary();
}

TEST(ValidateCall, MissingRequired) {
  const auto r = validate_call(
      call("plan_trajectory", {{"target_organ", "kidney"}, {"start_landmark", "right_costal_margin"}}), registry());
  EXPECT_FALSE(r.valid);
  EXPECT_EQ(r.missing_required, std::vector<std::string>{"end_landmark"});
}

TEST(ValidateCall, TypeErrorOnNonNumericSpeed) {
  const auto r = validate_call(call("execute_motion", {{"target", "latest"}, {"speed", "fast"}}), registry());
  EXPECT_FALSE(r.valid);
  ASSERT_EQ(r.type_errors.size(), 1u);
  EXPECT_EQ(r.type_errors[0].first, "speed");
}

TEST(ValidateCall, UnknownKeysAndEnumCase) {
  const auto r = validate_call(call("plan_trajectory", {{"target_organ", " KIDNEY "},
                                                        {"start_landmark", "Right_Costal_Margin"},
                                                        {"end_landmark", "right_iliac_crest"},
                                                        {"speed", 3}}),
                               registry());
  EXPECT_FALSE(r.valid);
  EXPECT_TRUE(r.missing_required.empty());
  EXPECT_TRUE(r.type_errors.empty());
  EXPECT_EQ(r.unknown_keys, std::vector<std::string>{"speed"});
}

TEST(ValidateCall, BadEnumValueAndLandmark) {
  const auto r = validate_call(call("plan_trajectory", {{"target_organ", "heart"},
                                                        {"start_landmark", "nose"},
                                                        {"end_landmark", "l5"}}),
                               registry());
  EXPECT_FALSE(r.valid);
  EXPECT_EQ(r.type_errors.size(), 2u);
}

TEST(ValidateCall, MotionTargetAcceptsRefsAndPoseTriples) {
  for (const Json& target : {Json("latest"), Json("traj_3"), Json::array({0.0, 10.0, 5.0})})
    EXPECT_TRUE(validate_call(call("execute_motion", {{"target", target}, {"speed", 10}}), registry()).valid)
        << target;
  for (const Json& target : {Json("sweep_0"), Json::array({1, 2}), Json(4)})
    EXPECT_FALSE(validate_call(call("execute_motion", {{"target", target}, {"speed", 10}}), registry()).valid)
        << target;
}

TEST(ValidateCall, UnknownToolThrows) {
  EXPECT_THROW(validate_call(call("teleport", Json::object()), registry()), UnknownTool);
}

TEST(Canonicalize, TrimsAndLowercasesDiscreteValues) {
  const ToolCall c = canonicalize(call("plan_trajectory", {{"target_organ", " Kidney "},
                                                           {"start_landmark", "L1"},
                                                           {"end_landmark", "l5"}}),
                                  registry());
  EXPECT_EQ(c.args.at("target_organ"), "kidney");
  EXPECT_EQ(c.args.at("start_landmark"), "l1");
}

TEST(Canonicalize, NumbersBitExactAndUnknownKeysUntouched) {
  const ToolCall c = canonicalize(call("execute_motion", {{"target", " Latest "}, {"speed", 12.50}, {"Extra", " X "}}),
                                  registry());
  EXPECT_EQ(c.args.at("speed").get<double>(), 12.50);
  EXPECT_EQ(c.args.at("Extra"), " X ");
  EXPECT_EQ(c.args.at("target"), "latest");
}

TEST(Canonicalize, IdempotentAndPreservesValidity) {
  std::mt19937_64 gen(11);
  const std::vector<std::string> organs{" Kidney", "SPINE ", "liver", "Heart"};
  const std::vector<std::string> marks{"L1", " xiphoid ", "Umbilicus", "nowhere"};
  for (int i = 0; i < 500; ++i) {
    Json args = Json::object();
    if (gen() % 4) args["target_organ"] = organs[gen() % organs.size()];
    if (gen() % 4) args["start_landmark"] = marks[gen() % marks.size()];
    if (gen() % 4) args["end_landmark"] = marks[gen() % marks.size()];
    if (gen() % 3 == 0) args["n_points"] = static_cast<int>(gen() % 600);
    if (gen() % 5 == 0) args["noise"] = " Q ";
    const ToolCall c = call("plan_trajectory", args);
    const ToolCall once = canonicalize(c, registry());
    EXPECT_EQ(canonicalize(once, registry()), once);
    EXPECT_EQ(validate_call(once, registry()).valid, validate_call(c, registry()).valid) << args;
  }
}

TEST(RenderToolPrompt, ListsEveryToolOnceAndIsStable) {
  const std::string text = render_tool_prompt(registry());
  for (const char* name : {"plan_trajectory", "execute_motion", "adjust_contact", "voice_guidance",
                           "refine_trajectory", "complete_scan"}) {
    const std::string heading = std::string("\n## ") + name;
    const auto first = text.find(heading);
    ASSERT_NE(first, std::string::npos) << name;
    EXPECT_EQ(text.find(heading, first + 1), std::string::npos) << name;
  }
  EXPECT_EQ(text, render_tool_prompt(registry()));
}

TEST(RenderToolPrompt, EmptyRegistryRendersEmptyCatalog) {
  const std::string text = render_tool_prompt(ToolRegistry{});
  EXPECT_NE(text.find("AVAILABLE TOOLS (0)"), std::string::npos);
  EXPECT_EQ(text.find("## "), std::string::npos);
}

TEST(RenderToolPrompt, DistinctRegistriesRenderDistinctly) {
  const auto heavier = registry().with_overrides(Json::parse(R"({"tools": {"voice_guidance": {"message": {"weight": 2}}}})"));
  const auto looser = registry().with_overrides(
      Json::parse(R"({"tools": {"execute_motion": {"speed": {"tolerance": {"relative": 0.2}}}}})"));
  EXPECT_NE(render_tool_prompt(registry()), render_tool_prompt(heavier));
  EXPECT_NE(render_tool_prompt(registry()), render_tool_prompt(looser));
  EXPECT_NE(render_tool_prompt(heavier), render_tool_prompt(looser));
}

TEST(ToolCallJson, StrictShape) {
  EXPECT_NO_THROW(tool_call_from_json(Json::parse(R"({"tool":"complete_scan","args":{"summary":"ok"}})")));
  EXPECT_THROW(tool_call_from_json(Json::parse(R"({"tool":"complete_scan"})")), SchemaError);
  EXPECT_THROW(tool_call_from_json(Json::parse(R"({"tool":"x","args":{},"id":1})")), SchemaError);
  EXPECT_THROW(tool_call_from_json(Json::parse(R"({"tool":3,"args":{}})")), SchemaError);
}
