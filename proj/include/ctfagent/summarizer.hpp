#pragma once

#include <functional>
#include <optional>
#include <set>
#include <string>
#include <string_view>

#include "ctfagent/task.hpp"
#include "ctfagent/templates.hpp"

namespace ctfagent {

enum class SummarizerMode { none, simple, lm };

std::string_view to_string(SummarizerMode m);
std::optional<SummarizerMode> parse_summarizer_mode(std::string_view s);

struct SummarizerConfig {
  SummarizerMode mode = SummarizerMode::simple;
  std::size_t window_length = 105;
  /// Spill directory inside the sandbox; empty means the environment's output directory.
  std::string output_dir;
  /// Lines shown by the file viewer when a spill is opened.
  std::size_t viewer_window = 100;
  std::size_t max_name_length = 64;

  /// Throws std::invalid_argument when window_length or viewer_window is zero.
  void validate() const;
};

/// Where spilled outputs go. Environment-backed in a run, in-memory in tests.
class SpillSink {
 public:
  virtual ~SpillSink() = default;
  virtual std::string output_dir() const = 0;
  virtual void write_file(const std::string& path, std::string_view bytes) = 0;
  virtual void open_file(const std::string& path, int line) = 0;
};

class EnvironmentSink final : public SpillSink {
 public:
  explicit EnvironmentSink(Environment& env) : env_(env) {}
  std::string output_dir() const override { return env_.output_dir(); }
  void write_file(const std::string& path, std::string_view bytes) override {
    env_.runtime().write_file(path, bytes);
  }
  void open_file(const std::string& path, int line) override { env_.set_open_file(path, line); }

 private:
  Environment& env_;
};

/// Asks a model for a summary; throws on failure.
using SummaryFn = std::function<std::string(const std::string& system, const std::string& instance)>;

/// The file-viewer rendering of the first window of `content`.
std::string render_file_window(const std::string& path, std::string_view content, std::size_t window);

struct SummaryResult {
  std::string text;
  std::optional<std::string> spill_path;
  bool used_lm = false;
  bool fell_back = false;  // lm mode failed and simple mode was used
};

/// Per-run summarizer. Remembers spill paths so a run never overwrites its own spills.
class Summarizer {
 public:
  Summarizer(SummarizerConfig cfg, const Templates* templates = nullptr, SummaryFn lm = {});

  SummaryResult summarize(const std::string& observation, std::string_view last_action, const ChallengeInfo& info,
                          SpillSink& sink);

  const SummarizerConfig& config() const { return cfg_; }

 private:
  std::string spill(const std::string& observation, std::string_view last_action, SpillSink& sink);
  std::string simple_text(const std::string& path, const std::string& observation, SpillSink& sink);

  SummarizerConfig cfg_;
  const Templates* templates_;
  SummaryFn lm_;
  std::set<std::string> used_paths_;
};

}  // namespace ctfagent
