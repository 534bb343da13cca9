#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>

namespace ctfagent {

enum class ActionCategory { shell, file_view_edit, static_analysis, debug, i_network, task };

std::string_view to_string(ActionCategory c);
std::optional<ActionCategory> parse_action_category(std::string_view s);

struct CommandDoc {
  std::string_view name;
  std::string_view signature;
  std::string_view docstring;
  ActionCategory category;
  bool interactive = false;  // routed to an interactive session rather than the shell
};

/// Every special command the agent may use, in documentation order.
std::span<const CommandDoc> command_registry();

const CommandDoc* find_command(std::string_view name);

/// The COMMANDS section of the system prompt. Interactive-session commands are left out
/// when `include_interactive` is false.
std::string command_documentation(bool include_interactive);

/// First whitespace-delimited token of the first line.
std::string command_name(std::string_view action);

/// Registry lookup; anything unknown is an ordinary shell command.
ActionCategory categorize(std::string_view action);

}  // namespace ctfagent
