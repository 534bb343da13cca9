#pragma once

#include <sys/types.h>

#include <memory>
#include <optional>
#include <string>
#include <string_view>

#include "ctfagent/process.hpp"
#include "ctfagent/runtime.hpp"
#include "ctfagent/task.hpp"

namespace ctfagent {

/// Time limits for one action. Both are in seconds.
struct ExecLimits {
  double overall_timeout = 600.0;
  double no_output_timeout = 300.0;

  /// Throws std::invalid_argument unless 0 < no_output_timeout <= overall_timeout.
  void validate() const;
};

struct ExecResult {
  std::string output;
  bool timed_out = false;
  bool no_output_timeout_fired = false;
  double duration = 0.0;
  int exit_code = 0;
  bool shell_restarted = false;  // the command could not be stopped and the shell was replaced
};

struct ShellState {
  std::string cwd;
  std::string open_file = "n/a";
  std::string interactive_session = "n/a";

  friend bool operator==(const ShellState&, const ShellState&) = default;
};

inline constexpr std::string_view kNoOutputObservation = "Your command ran successfully and did not produce any output.";
inline constexpr std::string_view kShellRestarted =
    "The shell had to be restarted. Exported variables and the working directory were kept; other shell "
    "variables and functions were lost.";

std::string no_output_timeout_message(double seconds);
std::string overall_timeout_message(double seconds);

/// The interactive session currently attached to an environment (at most one).
struct ActiveSession {
  std::string tool;          // agent-facing verb prefix: "debug", "connect"
  std::string session_name;  // "gdb", "connect"
  std::string descriptor;    // rendered into ShellState::interactive_session
  std::string target;
  std::unique_ptr<process::PtyProcess> proc;
};

struct EnvConfig {
  RuntimeConfig runtime;
  /// Probe the challenge server from inside the sandbox at start and warn if unreachable.
  bool probe_server = true;
};

/// A running sandbox with one persistent shell. Single owner; calls are serialized.
class Environment {
 public:
  /// Throws EnvironmentError when the sandbox or shell cannot be started.
  static std::unique_ptr<Environment> start(const Challenge& challenge, const EnvConfig& cfg);

  Environment(const Environment&) = delete;
  Environment& operator=(const Environment&) = delete;
  ~Environment();

  /// Runs one action in the persistent shell. Throws EnvironmentError(shell_died) if the
  /// shell is gone; timeouts are reported in the result, never thrown.
  ExecResult exec(std::string_view command, const ExecLimits& limits);

  ShellState state();

  /// Reaps any interactive session and tears the sandbox down. Idempotent.
  void stop();

  bool alive() const { return shell_ != nullptr; }

  ContainerRuntime& runtime() { return *runtime_; }
  std::string workdir() const { return runtime_->workdir(); }
  std::string output_dir() const { return runtime_->output_dir(); }

  /// Per-run secret that prefixes sentinel lines printed by submit/exit_forfeit.
  const std::string& sentinel_token() const { return sentinel_; }

  /// Records the viewer's open file in the shell (CURRENT_FILE / CURRENT_LINE).
  void set_open_file(const std::string& path, int line);

  ActiveSession* session();
  void attach_session(ActiveSession session);
  /// Terminates and forgets the attached session, if any.
  void reap_session();

 private:
  Environment() = default;
  // raw round trip through the shell, no observation shaping
  ExecResult run(std::string_view command, const ExecLimits& limits);
  // starts bash and runs the bootstrap; `restore` replays the last state snapshot
  void spawn_shell(bool restore);

  std::unique_ptr<ContainerRuntime> runtime_;
  std::unique_ptr<process::Subprocess> shell_;
  pid_t shell_pid_ = -1;  // as seen inside the sandbox
  std::string sentinel_;
  std::string boot_;
  std::string state_file_;
  std::string marker_prefix_;
  unsigned long long counter_ = 0;
  std::optional<ActiveSession> session_;
};

/// Sentinel line format: `<<CTFAGENT-SENTINEL:{token}>> {kind} {payload}`.
std::string sentinel_prefix(std::string_view token);

}  // namespace ctfagent
