#include "ctfagent/commands.hpp"

#include <array>

#include "ctfagent/text.hpp"

namespace ctfagent {

namespace {

using C = ActionCategory;

constexpr std::array kCommands = {
    CommandDoc{"open", "<path> [<line_number>]",
               "opens the file at the given path in the editor. If line_number is provided, the window will be "
               "move to include that line",
               C::file_view_edit},
    CommandDoc{"goto", "<line_number>", "moves the window to show <line_number>", C::file_view_edit},
    CommandDoc{"scroll_down", "", "moves the window down 100 lines", C::file_view_edit},
    CommandDoc{"scroll_up", "", "moves the window up 100 lines", C::file_view_edit},
    CommandDoc{"create", "<filename>", "creates and opens a new file with the given name", C::file_view_edit},
    CommandDoc{"search_dir", "<search_term> [<dir>]",
               "searches for search_term in all files in dir. If dir is not provided, searches in the current "
               "directory",
               C::file_view_edit},
    CommandDoc{"search_file", "<search_term> [<file>]",
               "searches for search_term in file. If file is not provided, searches in the current open file",
               C::file_view_edit},
    CommandDoc{"find_file", "<file_name> [<dir>]",
               "finds all files with the given name in dir. If dir is not provided, searches in the current "
               "directory",
               C::file_view_edit},
    CommandDoc{"edit", "<start_line>:<end_line>\n<replacement_text>\nend_of_edit",
               "replaces lines <start_line> through <end_line> (inclusive) with the given text in the open file. "
               "The replacement text is terminated by a line with only end_of_edit on it. All of the "
               "<replacement text> will be entered, so make sure your indentation is formatted properly.",
               C::file_view_edit},
    CommandDoc{"decompile", "<binary_path> [--function_name <function_name>]",
               "Decompile a binary and prints the decompilation of a given function name, or main by default.",
               C::static_analysis},
    CommandDoc{"disassemble", "<binary_path> [--function_name <function_name>]",
               "Disassembles a binary and prints the disassembly of a given function name, or main by default.",
               C::static_analysis},
    CommandDoc{"debug_start", "<binary> [<args>]",
               "Starts a debug session with the given binary and optional command-line arguments for the binary.",
               C::debug, true},
    CommandDoc{"debug_add_breakpoint", "<breakpoint>", "Adds a breakpoint in the debug session.", C::debug, true},
    CommandDoc{"debug_continue", "", "Continues the program execution in the debug session.", C::debug, true},
    CommandDoc{"debug_step", "[<number>]", "Steps number of instructions (default is 1) in the debug session.",
               C::debug, true},
    CommandDoc{"debug_exec", "<command>", "Executes arbitrary gdb command in debug session.", C::debug, true},
    CommandDoc{"debug_stop", "", "Stops the current debug session.", C::debug, true},
    CommandDoc{"connect_start", "<server_address> <port>",
               "Starts a new interactive connection to the server address and port.", C::i_network, true},
    CommandDoc{"connect_sendline", "[<line>]",
               "Sends a line with Unicode/hexadecimal values to the connection. Sending hexadecimal bytes should be "
               "done using \\x<hh> where hh stands for the specific byte you want to send.",
               C::i_network, true},
    CommandDoc{"connect_exec", "<command>", "Executes arbitrary connect command in connect session.", C::i_network,
               true},
    CommandDoc{"connect_stop", "", "Stops the current connect session.", C::i_network, true},
    CommandDoc{"submit", "'<flag>'",
               "Submits your current flag and terminates the session upon correct response, you should be aware to "
               "properly escape the flag as this is a bash command and to put your flag in single quotes.",
               C::task},
    CommandDoc{"exit_forfeit", "", "Give up on the current challenge and terminate the session.", C::task},
};

}  // namespace

std::string_view to_string(ActionCategory c) {
  switch (c) {
    case C::shell: return "shell";
    case C::file_view_edit: return "file_view_edit";
    case C::static_analysis: return "static_analysis";
    case C::debug: return "debug";
    case C::i_network: return "i_network";
    case C::task: return "task";
  }
  return "shell";
}

std::optional<ActionCategory> parse_action_category(std::string_view s) {
  for (auto c : {C::shell, C::file_view_edit, C::static_analysis, C::debug, C::i_network, C::task})
    if (to_string(c) == s) return c;
  if (s == "i-network") return C::i_network;
  return std::nullopt;
}

std::span<const CommandDoc> command_registry() { return kCommands; }

const CommandDoc* find_command(std::string_view name) {
  for (const auto& c : kCommands)
    if (c.name == name) return &c;
  return nullptr;
}

std::string command_documentation(bool include_interactive) {
  std::string out;
  for (const auto& c : kCommands) {
    if (c.interactive && !include_interactive) continue;
    out += c.name;
    out += ":\n  docstring: ";
    out += c.docstring;
    out += "\n  signature: ";
    out += c.name;
    if (!c.signature.empty()) {
      out += ' ';
      out += c.signature;
    }
    out += "\n\n";
  }
  return std::string(text::trim_right(out));
}

std::string command_name(std::string_view action) {
  std::string_view s = text::trim(action);
  auto nl = s.find('\n');
  if (nl != std::string_view::npos) s = s.substr(0, nl);
  auto sp = s.find_first_of(" \t");
  return std::string(sp == std::string_view::npos ? s : s.substr(0, sp));
}

ActionCategory categorize(std::string_view action) {
  if (const auto* c = find_command(command_name(action))) return c->category;
  return C::shell;
}

}  // namespace ctfagent
