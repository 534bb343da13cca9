#pragma once

#include <chrono>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "ctfagent/sandbox.hpp"

namespace ctfagent::iat {

/// How to drive one interactive tool. Placeholders: `{target}` is the first start
/// argument, `{args}` the rest joined by spaces; connect also gets `{host}` and `{port}`.
struct SessionSpec {
  std::string tool;          // verb prefix the agent types: "debug", "connect"
  std::string session_name;  // shown in refusal and stop messages
  std::vector<std::string> launch_argv;
  std::vector<std::string> init_lines;  // sent after launch; their output joins the start observation
  std::string descriptor;    // rendered into the interactive-session field
  std::string stop_line;     // sent before terminating
  std::optional<std::string> prompt;  // when set, a response is complete once the output ends with it
  std::string interrupt;     // sent when a response stalls; empty for none
  std::size_t min_start_args = 1;
  std::size_t max_start_args = SIZE_MAX;
  bool wrap_response = false;  // ensure SERVER RESPONSE / END OF RESPONSE markers
};

class SessionRegistry {
 public:
  /// Throws std::invalid_argument when the tool is already registered.
  void add(SessionSpec spec);
  const SessionSpec* find(std::string_view tool) const;
  std::vector<std::string> tools() const;

  /// gdb for "debug" and the connect REPL for "connect".
  static SessionRegistry defaults();

 private:
  std::map<std::string, SessionSpec, std::less<>> specs_;
};

/// Directive produced from an agent action.
struct Start {
  std::string tool;
  std::vector<std::string> args;
};
struct Send {
  std::string tool;
  std::string line;  // exact line handed to the session, without the trailing newline
};
struct Stop {
  std::string tool;
};
struct Usage {
  std::string message;
};
using Directive = std::variant<Start, Send, Stop, Usage>;

/// Returns nullopt when the action is not an interactive-session command.
std::optional<Directive> translate_command(std::string_view action);

/// True when the first line of `action` names an interactive-session command.
bool is_iat_action(std::string_view action);

/// `\xHH` escape codec used on the connect control channel. decode also accepts
/// `\\`, `\n`, `\r`, `\t`, `\0`; anything else after a backslash is kept literally.
std::string decode_escapes(std::string_view s);
/// Printable ASCII except backslash passes through; every other byte becomes `\xHH`.
std::string encode_escapes(std::string_view bytes);

inline constexpr std::string_view kSessionFailed = "COMMAND FAILED TO EXECUTE. TERMINATING INTERACTIVE SESSION.";
inline constexpr std::string_view kResponseBegin = "-------SERVER RESPONSE-------";
inline constexpr std::string_view kResponseEnd = "-------END OF RESPONSE-------";

std::string refusal_message(const ActiveSession& s);
std::string stopped_message(std::string_view session_name);

struct IatConfig {
  /// A connect response is complete after this much silence.
  std::chrono::milliseconds settle{500};
  /// Upper bound on waiting for a session to exit after its stop line.
  std::chrono::milliseconds stop_grace{1000};
};

struct Outcome {
  std::string output;
  bool refused = false;
  bool session_ended = false;  // the session died and was reaped
  bool timed_out = false;
};

/// Starts, drives and stops interactive sessions inside an Environment.
class InteractiveTools {
 public:
  explicit InteractiveTools(SessionRegistry registry = SessionRegistry::defaults(), IatConfig cfg = {});

  Outcome start(Environment& env, std::string_view tool, const std::vector<std::string>& args,
                const ExecLimits& limits);
  Outcome send(Environment& env, std::string_view tool, std::string_view line, const ExecLimits& limits);
  Outcome stop(Environment& env, std::string_view tool);

  /// Executes a translated directive.
  Outcome run(Environment& env, const Directive& d, const ExecLimits& limits);

  const SessionRegistry& registry() const { return registry_; }

 private:
  Outcome collect(Environment& env, const SessionSpec& spec, const ExecLimits& limits, bool wrap);

  SessionRegistry registry_;
  IatConfig cfg_;
};

}  // namespace ctfagent::iat
