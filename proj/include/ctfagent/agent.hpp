#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctfagent/iat.hpp"
#include "ctfagent/model.hpp"
#include "ctfagent/sandbox.hpp"
#include "ctfagent/summarizer.hpp"
#include "ctfagent/task.hpp"
#include "ctfagent/trajectory.hpp"

namespace ctfagent {

struct RunConfig {
  std::filesystem::path templates_dir = "templates";
  EnvConfig env;
  ExecLimits limits;
  SummarizerConfig summarizer;
  /// Model for lm summaries; the agent's model config is used when unset.
  std::optional<ModelConfig> summarizer_model;
  HistoryPolicy history;
  bool interactive_tools = true;
  bool demonstrations = true;
  bool truncate_soliloquies = false;
  std::size_t max_turns = 40;
  double budget = 3.0;
  std::size_t max_consecutive_format_errors = 2;
  iat::IatConfig iat;

  /// Throws std::invalid_argument on inconsistent values.
  void validate() const;
};

/// Behavior-relevant configuration recorded in the trajectory header. Backend plumbing
/// (script and replay paths, endpoints) is left out so a replay reproduces the header.
nlohmann::json config_record(const RunConfig& run, const ModelConfig& model);

/// Applies keys from a run config file over `base`. Relative paths resolve against `base_dir`.
RunConfig run_config_from_json(const nlohmann::json& j, RunConfig base = {},
                               const std::filesystem::path& base_dir = {});

inline constexpr std::string_view kFormatErrorObservation =
    "Your output could not be parsed. Reply with one discussion followed by exactly one command inside a "
    "fenced code block (a line with ``` before the command and a line with ``` after it).";
inline constexpr std::string_view kWrongFlag = "Wrong flag!";

enum class Control { none, submitted, forfeit };

struct Dispatch {
  std::string observation;  // before summarization
  Control control = Control::none;
};

/// A sentinel line printed by submit or exit_forfeit.
struct SentinelEvent {
  std::string kind;  // "submit" or "forfeit"
  std::string payload;
};

/// Removes every sentinel line carrying `token` from `output` and returns the events in order.
std::vector<SentinelEvent> extract_sentinels(std::string& output, std::string_view token);

/// Routes one action: interactive-session verbs to `tools` (when non-null), everything else
/// to the shell. Submit and forfeit are recognized from sentinel lines. Throws
/// EnvironmentError only when the shell itself has died.
Dispatch dispatch_action(const std::string& action, Environment& env, iat::InteractiveTools* tools,
                         const Challenge& challenge, const ExecLimits& limits);

struct EpisodeResult {
  Trajectory trajectory;
  ExitStatus exit_status = ExitStatus::exit_agent_error;
};

/// Runs one challenge to a terminal status, writing the trajectory to `out` as it goes.
EpisodeResult run_episode(const Challenge& challenge, const ModelConfig& model, const RunConfig& cfg,
                          const std::filesystem::path& out, std::shared_ptr<RateLimiter> limiter = nullptr);

struct BatchItem {
  std::filesystem::path challenge_dir;
  std::filesystem::path trajectory;
  std::optional<ExitStatus> exit_status;  // empty when the challenge failed to load
  std::string error;
};

/// Runs every challenge with up to `parallelism` episodes at once. Each episode gets its
/// own sandbox, client and trajectory file `{out_dir}/{challenge name}.jsonl`.
std::vector<BatchItem> run_batch(const std::vector<std::filesystem::path>& challenge_dirs, const ModelConfig& model,
                                 const RunConfig& cfg, const std::filesystem::path& out_dir,
                                 std::size_t parallelism);

}  // namespace ctfagent
