#pragma once

#include <atomic>
#include <chrono>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <glob.h>

#include <CLI11.hpp>

#include "russ/russ.hpp"

namespace russ::cli {

enum ExitCode : int { kOk = 0, kDomainFailure = 1, kUsage = 2, kReferenceError = 3 };

/// Expands shell-style patterns; a pattern naming a directory yields its *.jsonl files.
inline std::vector<std::string> expand_patterns(const std::vector<std::string>& patterns) {
  std::vector<std::string> out;
  for (const auto& pattern : patterns) {
    if (std::filesystem::is_directory(pattern)) {
      for (const auto& e : std::filesystem::directory_iterator(pattern))
        if (e.is_regular_file() && e.path().extension() == ".jsonl") out.push_back(e.path().string());
      continue;
    }
    glob_t g{};
    if (::glob(pattern.c_str(), 0, nullptr, &g) == 0)
      for (std::size_t i = 0; i < g.gl_pathc; ++i) out.emplace_back(g.gl_pathv[i]);
    ::globfree(&g);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot write " + path.string());
  f << content;
}

/// Reads a JSON argument given inline or as a file path.
inline Json json_argument(const std::string& arg) {
  const auto first = arg.find_first_not_of(" \t\r\n");
  const std::string textual = first != std::string::npos && (arg[first] == '{' || arg[first] == '[')
                                  ? arg
                                  : read_file(arg);
  try {
    return Json::parse(textual);
  } catch (const Json::parse_error& e) {
    throw FormatError(e.what());
  }
}

inline ToolRegistry load_registry(const std::string& overrides_path) {
  ToolRegistry registry = default_registry();
  if (!overrides_path.empty()) registry = registry.with_overrides(json_argument(overrides_path));
  return registry;
}

inline std::atomic<bool>& stop_requested() {
  static std::atomic<bool> flag{false};
  return flag;
}

extern "C" inline void handle_stop_signal(int) { stop_requested() = true; }

struct RunOptions {
  std::string query;
  std::string guideline;
  std::string guidelines_dir = (default_data_dir() / "guidelines").string();
  std::string fixture;
  std::string fixtures_dir = (default_data_dir() / "fixtures").string();
  std::string policy = "oracle";
  std::uint64_t seed = 0;
  int max_steps = 24;
  int max_retries = 2;
  std::string config_path;
  std::string out;
  std::string registry_overrides;
  // perturbed
  std::optional<double> p_wrong_tool, p_drop_required, p_extra_key, p_numeric_noise, noise_rel;
  // remote
  std::optional<std::string> url;
  std::optional<double> timeout_s;
  std::optional<int> max_tokens;
  std::optional<int> remote_retries;
  std::optional<double> backoff_s;
};

inline int cmd_run(const RunOptions& o, std::ostream& out, std::ostream& err) {
  if (o.query.empty() == o.guideline.empty()) {
    err << "run: exactly one of --query or --guideline is required\n";
    return kUsage;
  }
  const bool perturbation_given = o.p_wrong_tool || o.p_drop_required || o.p_extra_key || o.p_numeric_noise || o.noise_rel;
  const bool remote_given = o.url || o.timeout_s || o.max_tokens || o.remote_retries || o.backoff_s;
  if (perturbation_given && o.policy != "perturbed") {
    err << "run: perturbation flags require --policy perturbed\n";
    return kUsage;
  }
  if (remote_given && o.policy != "remote") {
    err << "run: endpoint flags require --policy remote\n";
    return kUsage;
  }

  ToolRegistry registry;
  GuidelineStore store;
  const Guideline* guideline = nullptr;
  EpisodeConfig episode;
  episode.seed = o.seed;
  episode.max_steps = o.max_steps;
  episode.max_retries = o.max_retries;
  SceneFixture fixture;
  try {
    registry = load_registry(o.registry_overrides);
    if (!o.config_path.empty()) {
      const Json c = json_argument(o.config_path);
      episode.max_steps = c.value("max_steps", episode.max_steps);
      episode.max_retries = c.value("max_retries", episode.max_retries);
      episode.seed = c.value("seed", episode.seed);
    }
    if (!o.guideline.empty() && std::filesystem::is_regular_file(o.guideline)) {
      store = GuidelineStore({parse_guideline(read_file(o.guideline), &registry)});
    } else {
      store = GuidelineStore::load_directory(o.guidelines_dir, &registry);
    }
    if (!o.query.empty()) {
      const auto hits = retrieve(o.query, store, 1);
      guideline = hits.front().guideline;
      err << "retrieved " << guideline->id << " (score " << hits.front().score << ")\n";
    } else {
      guideline = std::filesystem::is_regular_file(o.guideline) ? &store.all().front() : &store.at(o.guideline);
    }
    fixture = load_scene_fixture(o.fixture.empty() ? guideline->target_organ : o.fixture, o.fixtures_dir);
  } catch (const Error& e) {
    err << "run: " << e.what() << "\n";
    return kUsage;
  } catch (const Json::exception& e) {
    err << "run: bad episode config: " << e.what() << "\n";
    return kUsage;
  }

  std::unique_ptr<Policy> policy;
  try {
    if (o.policy == "oracle") {
      policy = std::make_unique<OraclePolicy>(store, registry);
    } else if (o.policy == "perturbed") {
      PerturbationConfig p;
      p.p_wrong_tool = o.p_wrong_tool.value_or(0.0);
      p.p_drop_required = o.p_drop_required.value_or(0.0);
      p.p_extra_key = o.p_extra_key.value_or(0.0);
      p.p_numeric_noise = o.p_numeric_noise.value_or(0.0);
      p.numeric_noise_rel = o.noise_rel.value_or(0.5);
      p.seed = episode.seed;
      policy = std::make_unique<PerturbedPolicy>(store, registry, p);
    } else {
      auto cfg = RemoteEndpointConfig::from_environment();
      if (o.url) cfg.base_url = *o.url;
      if (o.timeout_s) cfg.timeout_s = *o.timeout_s;
      if (o.max_tokens) cfg.max_tokens = *o.max_tokens;
      if (o.remote_retries) cfg.max_retries = *o.remote_retries;
      if (o.backoff_s) cfg.backoff_base_s = *o.backoff_s;
      policy = std::make_unique<RemotePolicy>(cfg);
    }
  } catch (const Error& e) {
    err << "run: " << e.what() << "\n";
    return kUsage;
  }

  WorldState world = init_world(episode.seed, fixture);
  const Trace trace = run_episode(*guideline, world, *policy, registry, episode);
  const std::string out_path =
      o.out.empty() ? guideline->id + "_seed" + std::to_string(episode.seed) + ".trace.jsonl" : o.out;
  try {
    write_file(out_path, serialize_trace(trace));
  } catch (const Error& e) {
    err << "run: " << e.what() << "\n";
    return kUsage;
  }
  err << "termination=" << to_string(trace.outcome.termination) << " success=" << (trace.outcome.success ? "true" : "false")
      << " turns=" << trace.turns.size() << "\n";
  out << Json{{"guideline_id", guideline->id},
              {"fixture_id", fixture.id},
              {"seed", episode.seed},
              {"termination", to_string(trace.outcome.termination)},
              {"success", trace.outcome.success},
              {"turns", trace.turns.size()},
              {"trace", out_path}}
             .dump()
      << "\n";
  return trace.outcome.success ? kOk : kDomainFailure;
}

inline int cmd_eval(const std::vector<std::string>& patterns, const std::string& guidelines_dir,
                    const std::string& overrides, int jobs, std::ostream& out, std::ostream& err) {
  const auto files = expand_patterns(patterns);
  if (files.empty()) {
    err << "eval: no trace files matched\n";
    return kUsage;
  }
  std::vector<EpisodeMetrics> metrics(files.size());
  try {
    const ToolRegistry registry = load_registry(overrides);
    const GuidelineStore store = GuidelineStore::load_directory(guidelines_dir, &registry);
    std::vector<Trace> traces;
    for (const auto& f : files) traces.push_back(parse_trace(read_file(f)));
    const std::size_t workers = static_cast<std::size_t>(std::max(1, jobs));
    std::vector<std::future<void>> tasks;
    for (std::size_t w = 0; w < workers; ++w)
      tasks.push_back(std::async(std::launch::async, [&, w] {
        for (std::size_t i = w; i < traces.size(); i += workers)
          metrics[i] = score_trace(traces[i], store.at(traces[i].guideline_id), registry).metrics;
      }));
    for (auto& t : tasks) t.get();
  } catch (const Error& e) {
    err << "eval: " << e.what() << "\n";
    return kUsage;
  }
  Json report = metrics_report(metrics);
  Json episodes = Json::array();
  for (std::size_t i = 0; i < files.size(); ++i) {
    const auto acc = metrics[i].step_wise_accuracy();
    episodes.push_back(Json{{"file", files[i]},
                            {"guideline_id", metrics[i].guideline_id},
                            {"seed", metrics[i].seed},
                            {"scored_turns", metrics[i].scored_turns},
                            {"correct_turns", metrics[i].correct_turns},
                            {"step_wise_accuracy", acc ? Json(*acc) : Json(nullptr)},
                            {"success", metrics[i].success}});
  }
  report["episodes"] = episodes;
  out << report.dump(2) << "\n";
  const auto agg = aggregate(metrics);
  err << "episodes=" << agg.episodes << " overall_success_rate=" << agg.overall_success_rate << "\n";
  return kOk;
}

inline int cmd_score(const std::string& pred_arg, const std::string& ref_arg, const std::string& overrides,
                     std::ostream& out, std::ostream& err) {
  ToolCall pred, ref;
  ToolRegistry registry;
  try {
    registry = load_registry(overrides);
    pred = tool_call_from_json(json_argument(pred_arg));
    ref = tool_call_from_json(json_argument(ref_arg));
  } catch (const Error& e) {
    err << "score: " << e.what() << "\n";
    return kUsage;
  }
  try {
    out << to_json(score_tool_call(pred, ref, registry)).dump() << "\n";
  } catch (const ReferenceInvalid& e) {
    err << "score: " << e.what() << "\n";
    return kReferenceError;
  }
  return kOk;
}

inline int cmd_dataset(const std::vector<std::string>& patterns, const std::string& out_path,
                       const std::string& guidelines_dir, std::ostream& out, std::ostream& err) {
  try {
    const ToolRegistry registry = default_registry();
    const auto files = expand_patterns(patterns);
    std::vector<Trace> traces;
    for (const auto& f : files) traces.push_back(parse_trace(read_file(f)));
    std::vector<Json> records;
    if (!traces.empty()) {
      const GuidelineStore store = GuidelineStore::load_directory(guidelines_dir, &registry);
      records = export_sft_dataset(std::move(traces), store, registry);
    }
    write_file(out_path, to_jsonl(records));
    out << Json{{"records", records.size()}, {"traces", files.size()}, {"out", out_path}}.dump() << "\n";
  } catch (const Error& e) {
    err << "dataset: " << e.what() << "\n";
    return kUsage;
  }
  return kOk;
}

inline int cmd_retrieve(const std::string& query, std::size_t k, const std::string& guidelines_dir,
                        std::ostream& out, std::ostream& err) {
  try {
    const GuidelineStore store = GuidelineStore::load_directory(guidelines_dir);
    Json hits = Json::array();
    for (const auto& h : retrieve(query, store, k)) hits.push_back(Json{{"id", h.guideline->id}, {"score", h.score}});
    out << hits.dump() << "\n";
  } catch (const Error& e) {
    err << "retrieve: " << e.what() << "\n";
    return kUsage;
  }
  return kOk;
}

inline int cmd_stub(const std::string& script_path, int port, double duration_s, std::ostream& out,
                    std::ostream& err) {
  std::optional<StubServer> server;
  try {
    server.emplace(parse_stub_script(read_file(script_path)), port);
  } catch (const Error& e) {
    err << "stub: " << e.what() << "\n";
    return kUsage;
  }
  out << Json{{"url", server->url()}, {"port", server->port()}}.dump() << std::endl;
  stop_requested() = false;
  std::signal(SIGINT, handle_stop_signal);
  std::signal(SIGTERM, handle_stop_signal);
  const auto started = std::chrono::steady_clock::now();
  while (!stop_requested()) {
    if (duration_s > 0 &&
        std::chrono::steady_clock::now() - started >= std::chrono::duration<double>(duration_s))
      break;
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
  server->close();
  err << "stub: served " << server->served() << " requests\n";
  return kOk;
}

/// Entry point shared by the executable and the tests.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Guideline-driven robotic ultrasound agent runtime"};
  app.require_subcommand(1);

  RunOptions run_opts;
  auto* run_cmd = app.add_subcommand("run", "Run one episode and write its trace");
  run_cmd->add_option("--query", run_opts.query, "Retrieve the guideline by free-text query");
  run_cmd->add_option("--guideline", run_opts.guideline, "Guideline id or path to a .guideline.json");
  run_cmd->add_option("--guidelines-dir", run_opts.guidelines_dir, "Directory of *.guideline.json");
  run_cmd->add_option("--fixture", run_opts.fixture, "Scene fixture id (default: the guideline's organ)");
  run_cmd->add_option("--fixtures-dir", run_opts.fixtures_dir, "Directory of *.scene.json");
  run_cmd->add_option("--policy", run_opts.policy, "oracle | perturbed | remote")
      ->check(CLI::IsMember({"oracle", "perturbed", "remote"}));
  run_cmd->add_option("--seed", run_opts.seed, "World and policy seed");
  run_cmd->add_option("--max-steps", run_opts.max_steps, "Turn budget")->check(CLI::PositiveNumber);
  run_cmd->add_option("--max-retries", run_opts.max_retries, "Re-prompts per step")->check(CLI::NonNegativeNumber);
  run_cmd->add_option("--config", run_opts.config_path, "Episode config JSON {max_steps, max_retries, seed}");
  run_cmd->add_option("--out", run_opts.out, "Trace output path");
  run_cmd->add_option("--registry-overrides", run_opts.registry_overrides, "Weight/tolerance overrides JSON");
  run_cmd->add_option("--p-wrong-tool", run_opts.p_wrong_tool)->check(CLI::Range(0.0, 1.0));
  run_cmd->add_option("--p-drop-required", run_opts.p_drop_required)->check(CLI::Range(0.0, 1.0));
  run_cmd->add_option("--p-extra-key", run_opts.p_extra_key)->check(CLI::Range(0.0, 1.0));
  run_cmd->add_option("--p-numeric-noise", run_opts.p_numeric_noise)->check(CLI::Range(0.0, 1.0));
  run_cmd->add_option("--numeric-noise-rel", run_opts.noise_rel)->check(CLI::NonNegativeNumber);
  run_cmd->add_option("--url", run_opts.url, "Endpoint base URL (default $RUSS_LLM_URL)");
  run_cmd->add_option("--timeout", run_opts.timeout_s, "Request timeout in seconds")->check(CLI::PositiveNumber);
  run_cmd->add_option("--max-tokens", run_opts.max_tokens)->check(CLI::PositiveNumber);
  run_cmd->add_option("--retries", run_opts.remote_retries, "Request retries on network errors and 5xx")
      ->check(CLI::NonNegativeNumber);
  run_cmd->add_option("--backoff", run_opts.backoff_s, "Base backoff between retries in seconds")
      ->check(CLI::NonNegativeNumber);

  std::vector<std::string> eval_patterns;
  std::string eval_dir = (default_data_dir() / "guidelines").string();
  std::string eval_overrides;
  int jobs = 1;
  auto* eval_cmd = app.add_subcommand("eval", "Score traces and print metrics JSON");
  eval_cmd->add_option("traces", eval_patterns, "Trace files or glob patterns")->required();
  eval_cmd->add_option("--guidelines-dir", eval_dir);
  eval_cmd->add_option("--registry-overrides", eval_overrides);
  eval_cmd->add_option("--jobs", jobs, "Parallel scoring workers")->check(CLI::PositiveNumber);

  std::string pred_arg, ref_arg, score_overrides;
  auto* score_cmd = app.add_subcommand("score", "Score one predicted call against a reference call");
  score_cmd->add_option("pred", pred_arg, "Predicted call JSON (inline or file)")->required();
  score_cmd->add_option("ref", ref_arg, "Reference call JSON (inline or file)")->required();
  score_cmd->add_option("--registry-overrides", score_overrides);

  std::vector<std::string> dataset_patterns;
  std::string dataset_out;
  std::string dataset_dir = (default_data_dir() / "guidelines").string();
  auto* dataset_cmd = app.add_subcommand("dataset", "Export scored turns as a JSONL training set");
  dataset_cmd->add_option("traces", dataset_patterns, "Trace files or glob patterns");
  dataset_cmd->add_option("--out", dataset_out, "Output JSONL path")->required();
  dataset_cmd->add_option("--guidelines-dir", dataset_dir);

  std::string query;
  std::size_t k = 3;
  std::string retrieve_dir = (default_data_dir() / "guidelines").string();
  auto* retrieve_cmd = app.add_subcommand("retrieve", "Rank guidelines for a query");
  retrieve_cmd->add_option("query", query, "Free-text query")->required();
  retrieve_cmd->add_option("-k,--k", k, "Number of results")->check(CLI::PositiveNumber);
  retrieve_cmd->add_option("--guidelines-dir", retrieve_dir);

  std::string script_path;
  int port = 0;
  double duration_s = 0.0;
  auto* stub_cmd = app.add_subcommand("stub", "Serve the generation protocol from a script");
  stub_cmd->add_option("--script", script_path, "Script JSON {responses: [...]}")->required();
  stub_cmd->add_option("--port", port, "Port (0 picks a free one)");
  stub_cmd->add_option("--duration", duration_s, "Stop after this many seconds (0 = until interrupted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kUsage;
  }

  if (*run_cmd) return cmd_run(run_opts, out, err);
  if (*eval_cmd) return cmd_eval(eval_patterns, eval_dir, eval_overrides, jobs, out, err);
  if (*score_cmd) return cmd_score(pred_arg, ref_arg, score_overrides, out, err);
  if (*dataset_cmd) return cmd_dataset(dataset_patterns, dataset_out, dataset_dir, out, err);
  if (*retrieve_cmd) return cmd_retrieve(query, k, retrieve_dir, out, err);
  if (*stub_cmd) return cmd_stub(script_path, port, duration_s, out, err);
  return kUsage;
}

}  // namespace russ::cli
