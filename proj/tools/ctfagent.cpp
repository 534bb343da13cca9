#include <glob.h>

#include <cstdio>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "ctfagent/agent.hpp"
#include "ctfagent/analyzer.hpp"
#include "ctfagent/text.hpp"

namespace fs = std::filesystem;
using namespace ctfagent;

namespace {

struct RunOptions {
  std::string model;
  std::string config;
  std::string templates;
  std::string summarizer;
  bool no_iat = false;
  bool truncate = false;
  std::optional<std::size_t> max_turns;
  std::optional<double> budget;
  std::optional<double> no_output_timeout;
  std::optional<double> overall_timeout;
  std::string workspace_root;
  std::string tools_dir;
  std::string runtime;
};

void add_run_options(CLI::App* cmd, RunOptions& o) {
  cmd->add_option("--model", o.model, "Model config (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--config", o.config, "Run config (JSON)")->check(CLI::ExistingFile);
  cmd->add_option("--templates", o.templates, "Templates directory")->check(CLI::ExistingDirectory);
  cmd->add_option("--summarizer", o.summarizer, "none, simple or lm")
      ->check(CLI::IsMember({"none", "simple", "lm"}));
  cmd->add_flag("--no-iat", o.no_iat, "Disable the interactive debug and connect tools");
  cmd->add_flag("--truncate-soliloquies", o.truncate, "Cut every response after its first action");
  cmd->add_option("--max-turns", o.max_turns, "Turn cap")->check(CLI::PositiveNumber);
  cmd->add_option("--budget", o.budget, "Cost budget in dollars")->check(CLI::PositiveNumber);
  cmd->add_option("--no-output-timeout", o.no_output_timeout, "Seconds without output before an action is stopped")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--overall-timeout", o.overall_timeout, "Seconds before any action is stopped")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--runtime", o.runtime, "local or docker")->check(CLI::IsMember({"local", "docker"}));
  cmd->add_option("--workspace-root", o.workspace_root, "Root for local workspaces");
  cmd->add_option("--tools-dir", o.tools_dir, "Toolset directory put on the sandbox PATH");
}

fs::path default_templates() {
  if (const char* env = std::getenv("CTFAGENT_TEMPLATES"); env && *env) return env;
  return CTFAGENT_DEFAULT_TEMPLATES_DIR;
}

RunConfig build_run_config(const RunOptions& o) {
  RunConfig c;
  c.templates_dir = default_templates();
  if (!o.config.empty()) {
    std::ifstream in(o.config);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw std::invalid_argument("malformed run config " + o.config + ": " + e.what());
    }
    c = run_config_from_json(j, c, fs::path(o.config).parent_path());
  }
  if (!o.templates.empty()) c.templates_dir = o.templates;
  if (!o.summarizer.empty()) c.summarizer.mode = *parse_summarizer_mode(o.summarizer);
  if (o.no_iat) c.interactive_tools = false;
  if (o.truncate) c.truncate_soliloquies = true;
  if (o.max_turns) c.max_turns = *o.max_turns;
  if (o.budget) c.budget = *o.budget;
  if (o.no_output_timeout) c.limits.no_output_timeout = *o.no_output_timeout;
  if (o.overall_timeout) c.limits.overall_timeout = *o.overall_timeout;
  if (o.runtime == "docker") c.env.runtime.kind = RuntimeKind::docker;
  if (o.runtime == "local") c.env.runtime.kind = RuntimeKind::local;
  if (!o.workspace_root.empty()) c.env.runtime.workspace_root = o.workspace_root;
  if (!o.tools_dir.empty()) c.env.runtime.tools_dir = o.tools_dir;
  c.validate();
  return c;
}

std::vector<fs::path> expand(const std::vector<std::string>& patterns) {
  std::vector<fs::path> out;
  for (const auto& p : patterns) {
    glob_t g{};
    if (::glob(p.c_str(), 0, nullptr, &g) == 0)
      for (std::size_t i = 0; i < g.gl_pathc; ++i) out.emplace_back(g.gl_pathv[i]);
    ::globfree(&g);
  }
  return out;
}

std::string money(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

int cmd_run(const std::string& challenge_dir, const std::string& out, const RunOptions& o) {
  const Challenge ch = load_challenge(challenge_dir);
  const ModelConfig model = load_model_config(o.model);
  const RunConfig cfg = build_run_config(o);
  auto result = run_episode(ch, model, cfg, out);
  const auto& f = *result.trajectory.footer;
  std::cout << "exit_status: " << to_string(result.exit_status) << "\n"
            << "turns: " << f.turns << "\n"
            << "cost: $" << money(f.ledger.dollars) << "\n";
  if (!f.detail.empty()) std::cout << "detail: " << f.detail << "\n";
  return result.exit_status == ExitStatus::submitted ? 0 : 1;
}

int cmd_batch(const std::vector<std::string>& patterns, const std::string& out_dir, std::size_t jobs,
              const RunOptions& o) {
  auto dirs = expand(patterns);
  if (dirs.empty()) {
    std::cerr << "no challenge directories match\n";
    return 2;
  }
  const ModelConfig model = load_model_config(o.model);
  const RunConfig cfg = build_run_config(o);
  auto items = run_batch(dirs, model, cfg, out_dir, jobs);
  int failures = 0;
  std::size_t solved = 0;
  for (const auto& it : items) {
    if (it.exit_status) {
      std::cout << it.challenge_dir.string() << "\t" << to_string(*it.exit_status) << "\t" << it.trajectory.string()
                << "\n";
      if (*it.exit_status == ExitStatus::submitted) ++solved;
    } else {
      std::cout << it.challenge_dir.string() << "\terror\t" << it.error << "\n";
      ++failures;
    }
  }
  std::cout << "solved " << solved << "/" << items.size() << "\n";
  return failures ? 1 : 0;
}

int cmd_analyze(const std::vector<std::string>& patterns, bool leakage, const std::string& transitions,
                const std::string& report_path, const std::vector<std::string>& exempt) {
  auto files = expand(patterns);
  if (files.empty()) {
    std::cerr << "no trajectory files match\n";
    return 2;
  }
  std::vector<Trajectory> trajs;
  for (const auto& f : files) trajs.push_back(read_trajectory(f));
  analyzer::LeakageOptions lopts;
  lopts.exempt.insert(exempt.begin(), exempt.end());

  if (leakage) {
    for (std::size_t i = 0; i < trajs.size(); ++i) {
      auto v = analyzer::detect_leakage(trajs[i], lopts);
      std::cout << files[i].string() << "\t";
      if (!v.applicable)
        std::cout << "n/a (not solved)";
      else if (v.leaked)
        std::cout << "leaked (" << analyzer::to_string(*v.rule) << ", step " << v.evidence.front() << ")";
      else
        std::cout << "clean";
      std::cout << "\n";
    }
  }
  if (!transitions.empty()) {
    auto cat = parse_action_category(transitions);
    if (!cat) {
      std::cerr << "unknown action category: " << transitions << "\n";
      return 2;
    }
    std::cout << analyzer::to_text(analyzer::transition_stats(trajs, *cat));
  }
  if (!leakage && transitions.empty()) std::cout << analyzer::to_text(analyzer::summary_report(trajs, lopts));
  if (!report_path.empty()) {
    auto report = analyzer::summary_report(trajs, lopts);
    nlohmann::json j = analyzer::to_json(report);
    if (!transitions.empty()) j["transitions"] = analyzer::to_json(analyzer::transition_stats(trajs, *parse_action_category(transitions)));
    std::ofstream(report_path) << j.dump(2) << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Offline-testable CTF agent runtime"};
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Debug logging");

  RunOptions run_opts;
  std::string challenge, out;
  auto* run = app.add_subcommand("run", "Run one challenge");
  run->add_option("--challenge", challenge, "Challenge directory")->required()->check(CLI::ExistingDirectory);
  run->add_option("--out", out, "Trajectory file (JSONL)")->required();
  add_run_options(run, run_opts);

  RunOptions batch_opts;
  std::vector<std::string> challenge_globs;
  std::string out_dir = "trajectories";
  std::size_t jobs = 1;
  auto* batch = app.add_subcommand("batch", "Run many challenges");
  batch->add_option("--challenges", challenge_globs, "Glob of challenge directories")->required();
  batch->add_option("--out-dir", out_dir, "Directory for trajectory files");
  batch->add_option("-j,--jobs", jobs, "Parallel episodes")->check(CLI::PositiveNumber);
  add_run_options(batch, batch_opts);

  std::vector<std::string> traj_globs, exempt;
  bool leakage = false;
  std::string transitions, report;
  auto* analyze = app.add_subcommand("analyze", "Analyze trajectories");
  analyze->add_option("--trajs", traj_globs, "Glob of trajectory files")->required();
  analyze->add_flag("--leakage", leakage, "Classify solution leakage per trajectory");
  analyze->add_option("--transitions", transitions, "Transition statistics within an action category");
  analyze->add_option("--report", report, "Write the JSON report here");
  analyze->add_option("--exempt", exempt, "Challenge names exempt from the single-step leakage rule");

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::warn);
  spdlog::set_pattern("[%l] %v");

  try {
    if (*run) return cmd_run(challenge, out, run_opts);
    if (*batch) return cmd_batch(challenge_globs, out_dir, jobs, batch_opts);
    return cmd_analyze(traj_globs, leakage, transitions, report, exempt);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
