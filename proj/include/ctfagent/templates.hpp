#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ctfagent/sandbox.hpp"
#include "ctfagent/task.hpp"

namespace ctfagent {

class TemplateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raw template text as loaded from a templates directory.
struct Templates {
  std::string system;
  std::string demonstration;  // wrapper with a {demonstration} slot
  std::string instance;
  std::string debug_tips;
  std::string next_step;
  std::string summarizer_system;
  std::string summarizer_instance;
  std::map<Category, std::string> demonstrations;
};

/// Reads `system.md`, `demonstration.md`, `instance.md`, `debug_tips.md`, `next_step.md`,
/// `summarizer_system.md`, `summarizer_instance.md` and the optional
/// `demonstrations/{category}.md`. One trailing newline is dropped from each file.
/// Throws TemplateError when a required file is missing.
Templates load_templates(const std::filesystem::path& dir);

struct PromptOptions {
  bool interactive_tools = true;
  bool demonstrations = true;
};

struct RenderedPrompts {
  std::string system;
  std::optional<std::string> demonstration;  // already wrapped
  std::string instance;
};

RenderedPrompts render_prompts(const Templates& t, const ChallengeInfo& info, const ShellState& state,
                               const PromptOptions& opts = {});

std::string render_next_step(const Templates& t, const std::string& observation, const ShellState& state);

std::string render_summarizer_system(const Templates& t, std::size_t window_length);
std::string render_summarizer_instance(const Templates& t, const ChallengeInfo& info, const std::string& command,
                                       const std::string& observation, std::size_t window_length);

/// Python repr of a list of strings, e.g. ['a.txt', "it's"].
std::string python_list_repr(const std::vector<std::string>& items);

std::string server_description(const std::optional<ServerAddress>& server);

}  // namespace ctfagent
