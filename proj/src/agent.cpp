#include "ctfagent/agent.hpp"

#include <atomic>
#include <mutex>
#include <stdexcept>
#include <thread>

#include <spdlog/spdlog.h>

#include "ctfagent/parser.hpp"
#include "ctfagent/templates.hpp"
#include "ctfagent/text.hpp"

namespace ctfagent {

namespace fs = std::filesystem;
using nlohmann::json;

void RunConfig::validate() const {
  limits.validate();
  summarizer.validate();
  if (max_turns == 0) throw std::invalid_argument("max_turns must be positive");
  if (!(budget > 0.0)) throw std::invalid_argument("budget must be positive");
  if (max_consecutive_format_errors == 0) throw std::invalid_argument("max_consecutive_format_errors must be positive");
  if (history.full_observation_window == 0) throw std::invalid_argument("history window must be positive");
}

json config_record(const RunConfig& run, const ModelConfig& model) {
  json j = {{"model",
             {{"model_name", model.model_name},
              {"temperature", model.temperature},
              {"top_p", model.top_p},
              {"price_in", model.price_in},
              {"price_out", model.price_out},
              {"context_limit", model.context_limit}}},
            {"limits", {{"overall_timeout", run.limits.overall_timeout}, {"no_output_timeout", run.limits.no_output_timeout}}},
            {"summarizer",
             {{"mode", std::string(to_string(run.summarizer.mode))},
              {"window_length", run.summarizer.window_length},
              {"viewer_window", run.summarizer.viewer_window}}},
            {"history_window", run.history.full_observation_window},
            {"interactive_tools", run.interactive_tools},
            {"demonstrations", run.demonstrations},
            {"truncate_soliloquies", run.truncate_soliloquies},
            {"max_turns", run.max_turns},
            {"budget", run.budget},
            {"max_consecutive_format_errors", run.max_consecutive_format_errors},
            {"runtime", std::string(run.env.runtime.kind == RuntimeKind::local ? "local" : "docker")}};
  if (run.summarizer.mode == SummarizerMode::lm && run.summarizer_model)
    j["summarizer"]["model_name"] = run.summarizer_model->model_name;
  return j;
}

RunConfig run_config_from_json(const json& j, RunConfig c, const fs::path& base_dir) {
  auto resolve = [&](const std::string& p) -> fs::path {
    fs::path path(p);
    return path.is_relative() && !base_dir.empty() ? base_dir / path : path;
  };
  if (j.contains("templates_dir")) c.templates_dir = resolve(j.at("templates_dir").get<std::string>());
  if (j.contains("runtime")) {
    const auto& r = j.at("runtime");
    if (r.contains("kind")) {
      const std::string kind = r.at("kind").get<std::string>();
      if (kind == "local") c.env.runtime.kind = RuntimeKind::local;
      else if (kind == "docker") c.env.runtime.kind = RuntimeKind::docker;
      else throw std::invalid_argument("unknown runtime kind: " + kind);
    }
    c.env.runtime.runtime_binary = r.value("binary", c.env.runtime.runtime_binary);
    c.env.runtime.default_image = r.value("image", c.env.runtime.default_image);
    c.env.runtime.network = r.value("network", c.env.runtime.network);
    if (r.contains("workspace_root")) c.env.runtime.workspace_root = resolve(r.at("workspace_root").get<std::string>());
    if (r.contains("tools_dir")) c.env.runtime.tools_dir = resolve(r.at("tools_dir").get<std::string>());
  }
  c.env.probe_server = j.value("probe_server", c.env.probe_server);
  if (j.contains("timeouts")) {
    c.limits.overall_timeout = j.at("timeouts").value("overall", c.limits.overall_timeout);
    c.limits.no_output_timeout = j.at("timeouts").value("no_output", c.limits.no_output_timeout);
  }
  if (j.contains("summarizer")) {
    const auto& s = j.at("summarizer");
    if (s.contains("mode")) {
      auto m = parse_summarizer_mode(s.at("mode").get<std::string>());
      if (!m) throw std::invalid_argument("unknown summarizer mode");
      c.summarizer.mode = *m;
    }
    c.summarizer.window_length = s.value("window_length", c.summarizer.window_length);
    c.summarizer.output_dir = s.value("output_dir", c.summarizer.output_dir);
    c.summarizer.viewer_window = s.value("viewer_window", c.summarizer.viewer_window);
    if (s.contains("model")) c.summarizer_model = model_config_from_json(s.at("model"), base_dir);
  }
  c.history.full_observation_window = j.value("history_window", c.history.full_observation_window);
  c.interactive_tools = j.value("interactive_tools", c.interactive_tools);
  c.demonstrations = j.value("demonstrations", c.demonstrations);
  c.truncate_soliloquies = j.value("truncate_soliloquies", c.truncate_soliloquies);
  c.max_turns = j.value("max_turns", c.max_turns);
  c.budget = j.value("budget", c.budget);
  c.max_consecutive_format_errors = j.value("max_consecutive_format_errors", c.max_consecutive_format_errors);
  if (j.contains("iat_settle_ms")) c.iat.settle = std::chrono::milliseconds(j.at("iat_settle_ms").get<int>());
  return c;
}

std::vector<SentinelEvent> extract_sentinels(std::string& output, std::string_view token) {
  const std::string prefix = sentinel_prefix(token) + " ";
  std::vector<SentinelEvent> events;
  std::vector<std::string> kept;
  bool changed = false;
  for (auto& line : text::split_lines(output)) {
    if (!text::starts_with(line, prefix)) {
      kept.push_back(std::move(line));
      continue;
    }
    changed = true;
    std::string_view rest = std::string_view(line).substr(prefix.size());
    auto sp = rest.find(' ');
    SentinelEvent e;
    e.kind = std::string(rest.substr(0, sp));
    if (sp != std::string_view::npos) e.payload = std::string(rest.substr(sp + 1));
    events.push_back(std::move(e));
  }
  if (changed) output = text::join(kept, "\n");
  return events;
}

namespace {

Dispatch shell_dispatch(const std::string& command, Environment& env, const Challenge& challenge,
                        const ExecLimits& limits) {
  ExecResult r = env.exec(edit_to_heredoc(command), limits);
  Dispatch d;
  d.observation = std::move(r.output);
  auto events = extract_sentinels(d.observation, env.sentinel_token());
  for (const auto& e : events) {
    if (e.kind == "forfeit") {
      d.control = Control::forfeit;
      break;
    }
    if (e.kind == "submit") {
      if (verify_flag(challenge, e.payload).correct) {
        d.control = Control::submitted;
        break;
      }
      if (!d.observation.empty()) d.observation += "\n";
      d.observation += kWrongFlag;
    }
  }
  return d;
}

}  // namespace

Dispatch dispatch_action(const std::string& action, Environment& env, iat::InteractiveTools* tools,
                         const Challenge& challenge, const ExecLimits& limits) {
  if (!tools || !iat::is_iat_action(action)) return shell_dispatch(action, env, challenge, limits);

  // an interactive command on the first line: run the action line by line
  Dispatch out;
  std::vector<std::string> parts;
  for (const auto& raw_line : text::split_lines(action)) {
    const std::string line{text::trim(raw_line)};
    if (line.empty()) continue;
    if (iat::is_iat_action(line)) {
      auto directive = iat::translate_command(line);
      parts.push_back(tools->run(env, *directive, limits).output);
    } else {
      Dispatch d = shell_dispatch(line, env, challenge, limits);
      parts.push_back(d.observation);
      if (d.control != Control::none) {
        out.control = d.control;
        break;
      }
    }
  }
  out.observation = text::join(parts, "\n");
  return out;
}

namespace {

class RunState {
 public:
  RunState(const Challenge& ch, const ModelConfig& model, const RunConfig& cfg, const fs::path& out,
           std::shared_ptr<RateLimiter> limiter)
      : challenge_(ch), model_(model), cfg_(cfg), writer_(out), limiter_(std::move(limiter)) {
    ledger_.budget = cfg.budget;
  }

  EpisodeResult run() {
    const json record = config_record(cfg_, model_);
    TrajectoryHeader h;
    h.challenge = challenge_.info();
    h.gold_flag = challenge_.secret_flag();
    h.config = record;
    h.config_fingerprint = text::fnv1a_hex(record.dump());
    writer_.header(h);
    traj_.header = h;

    ExitStatus status = ExitStatus::exit_agent_error;
    std::string detail;
    try {
      status = loop(detail);
    } catch (const std::exception& e) {
      status = ExitStatus::exit_agent_error;
      detail = e.what();
    }
    if (env_) {
      try {
        env_->stop();
      } catch (const std::exception& e) {
        spdlog::warn("sandbox teardown failed: {}", e.what());
      }
    }
    TrajectoryFooter f{status, ledger_, traj_.steps.size(), detail};
    writer_.footer(f);
    traj_.footer = f;
    return {traj_, status};
  }

 private:
  ExitStatus loop(std::string& detail) {
    cfg_.validate();
    const Templates templates = load_templates(cfg_.templates_dir);
    try {
      env_ = Environment::start(challenge_, cfg_.env);
    } catch (const EnvironmentError& e) {
      detail = e.what();
      return ExitStatus::exit_agent_error;
    }

    PromptOptions popts{cfg_.interactive_tools, cfg_.demonstrations};
    const RenderedPrompts prompts = render_prompts(templates, challenge_.info(), env_->state(), popts);
    if (cfg_.demonstrations && !prompts.demonstration)
      spdlog::warn("no demonstration for category {}; running without one", to_string(challenge_.info().category));

    ModelClient client(model_, make_backend(model_, Purpose::agent, limiter_));
    std::unique_ptr<ModelClient> summary_client;
    SummaryFn summary_fn;
    std::optional<SummarizerReply> pending_summary;
    if (cfg_.summarizer.mode == SummarizerMode::lm) {
      const ModelConfig scfg = cfg_.summarizer_model.value_or(model_);
      try {
        summary_client = std::make_unique<ModelClient>(scfg, make_backend(scfg, Purpose::summarizer, limiter_));
      } catch (const std::exception& e) {
        spdlog::warn("lm summarizer unavailable, the simple summarizer will be used: {}", e.what());
      }
      if (summary_client) {
        summary_fn = [&, scfg](const std::string& system, const std::string& instance) {
          ModelReply r = summary_client->query({{"system", system}, {"user", instance}});
          pending_summary = SummarizerReply{r.text, r.usage};
          try {
            ledger_.charge(r.usage, scfg.price_in, scfg.price_out);
          } catch (const BudgetExceeded&) {
            // the next pre-query check ends the run
          }
          return r.text;
        };
      }
    }
    Summarizer summarizer(cfg_.summarizer, &templates, summary_fn);
    EnvironmentSink sink(*env_);
    std::optional<iat::InteractiveTools> tools;
    if (cfg_.interactive_tools) tools.emplace(iat::SessionRegistry::defaults(), cfg_.iat);

    HistoryPolicy policy = cfg_.history;
    policy.truncate_responses = policy.truncate_responses || cfg_.truncate_soliloquies;
    std::vector<HistoryTurn> history;
    std::size_t format_errors = 0;

    for (;;) {
      if (traj_.steps.size() >= cfg_.max_turns) return ExitStatus::early_exit;
      if (ledger_.exhausted()) return ExitStatus::exit_cost;

      ModelReply reply;
      try {
        reply = client.query(assemble_context(prompts, templates, history, policy));
      } catch (const ContextOverflow& e) {
        detail = e.what();
        return ExitStatus::exit_context;
      } catch (const ModelError& e) {
        detail = e.what();
        return ExitStatus::exit_agent_error;
      }
      try {
        ledger_.charge(reply.usage, model_.price_in, model_.price_out);
      } catch (const BudgetExceeded& e) {
        detail = e.what();
        return ExitStatus::exit_cost;
      }

      Step step;
      step.index = traj_.steps.size();
      step.raw_response = reply.text;
      step.usage = reply.usage;
      step.soliloquy = soliloquy_report(reply.text);
      step.model_exchange = reply.exchange;
      const std::string effective =
          cfg_.truncate_soliloquies ? truncate_after_first_action(reply.text) : reply.text;

      ParsedResponse parsed;
      try {
        parsed = parse_response(effective);
      } catch (const FormatError&) {
        step.format_error = true;
        step.observation = kFormatErrorObservation;
        step.state = env_->state();
        record(step, history);
        if (++format_errors >= cfg_.max_consecutive_format_errors) {
          detail = "too many consecutive malformed responses";
          return ExitStatus::exit_format;
        }
        continue;
      }
      format_errors = 0;
      step.thought = parsed.thought;
      step.action = parsed.action;

      Dispatch d;
      try {
        d = dispatch_action(parsed.action, *env_, tools ? &*tools : nullptr, challenge_, cfg_.limits);
      } catch (const EnvironmentError& e) {
        step.observation = e.what();
        record(step, history);
        detail = e.what();
        return ExitStatus::exit_agent_error;
      }

      pending_summary.reset();
      if (d.control == Control::none) {
        step.observation =
            summarizer.summarize(d.observation, parsed.action, challenge_.info(), sink).text;
        step.summarizer_reply = pending_summary;
      } else {
        step.observation = d.observation;
      }
      try {
        step.state = env_->state();
      } catch (const EnvironmentError& e) {
        record(step, history);
        detail = e.what();
        return ExitStatus::exit_agent_error;
      }
      record(step, history);
      if (d.control == Control::submitted) return ExitStatus::submitted;
      if (d.control == Control::forfeit) return ExitStatus::exit_forfeit;
    }
  }

  void record(const Step& step, std::vector<HistoryTurn>& history) {
    writer_.step(step);
    traj_.steps.push_back(step);
    history.push_back({step.raw_response, step.observation, step.state});
  }

  const Challenge& challenge_;
  const ModelConfig& model_;
  const RunConfig& cfg_;
  TrajectoryWriter writer_;
  std::shared_ptr<RateLimiter> limiter_;
  CostLedger ledger_;
  Trajectory traj_;
  std::unique_ptr<Environment> env_;
};

}  // namespace

EpisodeResult run_episode(const Challenge& challenge, const ModelConfig& model, const RunConfig& cfg,
                          const fs::path& out, std::shared_ptr<RateLimiter> limiter) {
  RunState state(challenge, model, cfg, out, std::move(limiter));
  return state.run();
}

std::vector<BatchItem> run_batch(const std::vector<fs::path>& challenge_dirs, const ModelConfig& model,
                                 const RunConfig& cfg, const fs::path& out_dir, std::size_t parallelism) {
  std::vector<BatchItem> items(challenge_dirs.size());
  std::shared_ptr<RateLimiter> limiter;
  if (model.requests_per_second > 0) limiter = std::make_shared<RateLimiter>(model.requests_per_second, model.burst);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < items.size(); i = next++) {
      BatchItem& item = items[i];
      item.challenge_dir = challenge_dirs[i];
      try {
        Challenge ch = load_challenge(challenge_dirs[i]);
        item.trajectory = out_dir / (text::sanitize_name(ch.info().name) + ".jsonl");
        item.exit_status = run_episode(ch, model, cfg, item.trajectory, limiter).exit_status;
      } catch (const std::exception& e) {
        item.error = e.what();
        spdlog::error("{}: {}", challenge_dirs[i].string(), e.what());
      }
    }
  };
  const std::size_t n = std::max<std::size_t>(1, std::min(parallelism, items.size()));
  {
    std::vector<std::jthread> pool;
    for (std::size_t i = 0; i < n; ++i) pool.emplace_back(worker);
  }
  return items;
}

}  // namespace ctfagent
