#include "ctfagent/templates.hpp"

#include <fstream>
#include <sstream>

#include "ctfagent/commands.hpp"
#include "ctfagent/text.hpp"

namespace ctfagent {

namespace fs = std::filesystem;

namespace {

std::optional<std::string> read_template(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) return std::nullopt;
  std::stringstream ss;
  ss << in.rdbuf();
  std::string s = ss.str();
  if (!s.empty() && s.back() == '\n') s.pop_back();
  return s;
}

std::string required(const fs::path& dir, const char* name) {
  auto s = read_template(dir / name);
  if (!s) throw TemplateError("missing template " + (dir / name).string());
  return *s;
}

std::string python_str_repr(const std::string& s) {
  const char quote = (s.find('\'') != std::string::npos && s.find('"') == std::string::npos) ? '"' : '\'';
  std::string out(1, quote);
  for (unsigned char c : s) {
    if (c == '\\') {
      out += "\\\\";
    } else if (c == static_cast<unsigned char>(quote)) {
      out += '\\';
      out += static_cast<char>(c);
    } else if (c == '\n') {
      out += "\\n";
    } else if (c == '\r') {
      out += "\\r";
    } else if (c == '\t') {
      out += "\\t";
    } else if (c < 0x20 || c == 0x7f) {
      static constexpr char digits[] = "0123456789abcdef";
      out += "\\x";
      out += digits[c >> 4];
      out += digits[c & 0xf];
    } else {
      out += static_cast<char>(c);
    }
  }
  out += quote;
  return out;
}

}  // namespace

Templates load_templates(const fs::path& dir) {
  Templates t;
  t.system = required(dir, "system.md");
  t.demonstration = required(dir, "demonstration.md");
  t.instance = required(dir, "instance.md");
  t.debug_tips = required(dir, "debug_tips.md");
  t.next_step = required(dir, "next_step.md");
  t.summarizer_system = required(dir, "summarizer_system.md");
  t.summarizer_instance = required(dir, "summarizer_instance.md");
  for (auto c : {Category::crypto, Category::forensics, Category::pwn, Category::rev, Category::web, Category::misc})
    if (auto d = read_template(dir / "demonstrations" / (std::string(to_string(c)) + ".md"))) t.demonstrations[c] = *d;
  return t;
}

std::string python_list_repr(const std::vector<std::string>& items) {
  std::string out = "[";
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += ", ";
    out += python_str_repr(items[i]);
  }
  return out + "]";
}

std::string server_description(const std::optional<ServerAddress>& server) {
  if (!server) return "";
  const std::string port = std::to_string(server->port);
  return "The challenge web server is running on `" + server->host + "` port `" + port +
         "` and you can access it from within the container environment using `connect_start " + server->host + " " +
         port + "`.";
}

RenderedPrompts render_prompts(const Templates& t, const ChallengeInfo& info, const ShellState& state,
                               const PromptOptions& opts) {
  RenderedPrompts p;
  p.system = text::render(t.system, {{"flag_format", info.flag_format},
                                     {"documentation", command_documentation(opts.interactive_tools)}});
  if (opts.demonstrations) {
    if (auto it = t.demonstrations.find(info.category); it != t.demonstrations.end())
      p.demonstration = text::render(t.demonstration, {{"demonstration", it->second}});
  }
  const bool tips = opts.interactive_tools && (info.category == Category::rev || info.category == Category::pwn);
  p.instance = text::render(t.instance, {{"category_friendly", std::string(friendly_name(info.category))},
                                         {"name", info.name},
                                         {"points", std::to_string(info.points)},
                                         {"description", info.description},
                                         {"files", python_list_repr(info.files)},
                                         {"server_description", server_description(info.server)},
                                         {"debug_tips", tips ? t.debug_tips : ""},
                                         {"open_file", state.open_file},
                                         {"working_dir", state.cwd},
                                         {"interactive_session", state.interactive_session}});
  return p;
}

std::string render_next_step(const Templates& t, const std::string& observation, const ShellState& state) {
  return text::render(t.next_step, {{"observation", observation},
                                    {"open_file", state.open_file},
                                    {"working_dir", state.cwd},
                                    {"interactive_session", state.interactive_session}});
}

std::string render_summarizer_system(const Templates& t, std::size_t window_length) {
  return text::render(t.summarizer_system, {{"summarizer_window_length", std::to_string(window_length)}});
}

std::string render_summarizer_instance(const Templates& t, const ChallengeInfo& info, const std::string& command,
                                       const std::string& observation, std::size_t window_length) {
  return text::render(t.summarizer_instance, {{"category_friendly", std::string(friendly_name(info.category))},
                                              {"name", info.name},
                                              {"points", std::to_string(info.points)},
                                              {"description", info.description},
                                              {"command", command},
                                              {"observation", observation},
                                              {"summarizer_window_length", std::to_string(window_length)}});
}

}  // namespace ctfagent
