#include "ctfagent/summarizer.hpp"

#include <stdexcept>

#include <spdlog/spdlog.h>

#include "ctfagent/text.hpp"

namespace ctfagent {

std::string_view to_string(SummarizerMode m) {
  switch (m) {
    case SummarizerMode::none: return "none";
    case SummarizerMode::simple: return "simple";
    case SummarizerMode::lm: return "lm";
  }
  return "none";
}

std::optional<SummarizerMode> parse_summarizer_mode(std::string_view s) {
  for (auto m : {SummarizerMode::none, SummarizerMode::simple, SummarizerMode::lm})
    if (to_string(m) == s) return m;
  return std::nullopt;
}

void SummarizerConfig::validate() const {
  if (window_length == 0) throw std::invalid_argument("summarizer window_length must be positive");
  if (viewer_window == 0) throw std::invalid_argument("summarizer viewer_window must be positive");
}

std::string render_file_window(const std::string& path, std::string_view content, std::size_t window) {
  const auto lines = text::split_lines(content);
  std::string out = "[File: " + path + " (" + std::to_string(lines.size()) + " lines total)]\n";
  const std::size_t shown = std::min(window, lines.size());
  for (std::size_t i = 0; i < shown; ++i) out += std::to_string(i + 1) + ":" + lines[i] + "\n";
  if (lines.size() > shown) out += "(" + std::to_string(lines.size() - shown) + " more lines below)";
  else if (!out.empty()) out.pop_back();
  return out;
}

Summarizer::Summarizer(SummarizerConfig cfg, const Templates* templates, SummaryFn lm)
    : cfg_(std::move(cfg)), templates_(templates), lm_(std::move(lm)) {
  cfg_.validate();
}

std::string Summarizer::spill(const std::string& observation, std::string_view last_action, SpillSink& sink) {
  std::string dir = cfg_.output_dir.empty() ? sink.output_dir() : cfg_.output_dir;
  while (dir.size() > 1 && dir.back() == '/') dir.pop_back();
  // the action is named as typed, newline included
  std::string stem = text::sanitize_name(std::string(last_action) + "\n", cfg_.max_name_length);
  if (stem.empty()) stem = "output";
  std::string path = dir + "/" + stem;
  for (int i = 1; used_paths_.contains(path); ++i) path = dir + "/" + stem + "_" + std::to_string(i);
  used_paths_.insert(path);
  sink.write_file(path, observation);
  return path;
}

std::string Summarizer::simple_text(const std::string& path, const std::string& observation, SpillSink& sink) {
  sink.open_file(path, 1);
  return "Warning: Command output exceeded window, saved command to a file " + path +
         " and opened the file at line 1.\n\n\n" +
         render_file_window(path, observation, std::min(cfg_.viewer_window, cfg_.window_length));
}

SummaryResult Summarizer::summarize(const std::string& observation, std::string_view last_action,
                                    const ChallengeInfo& info, SpillSink& sink) {
  SummaryResult r;
  if (cfg_.mode == SummarizerMode::none || text::count_lines(observation) <= cfg_.window_length) {
    r.text = observation;
    return r;
  }
  const std::string path = spill(observation, last_action, sink);
  r.spill_path = path;

  if (cfg_.mode == SummarizerMode::lm) {
    if (lm_ && templates_) {
      try {
        std::string summary =
            lm_(render_summarizer_system(*templates_, cfg_.window_length),
                render_summarizer_instance(*templates_, info, std::string(last_action), observation, cfg_.window_length));
        auto lines = text::split_lines(text::trim_right(summary));
        if (lines.size() > cfg_.window_length) lines.resize(cfg_.window_length);
        r.text = "Warning: Command output exceeded window size, saved command to a file " + path +
                 " and summarized the command output for you.\nIf you still want to view the output of the command, "
                 "use the following command `open " +
                 path + "`.\n\n\nSUMMARY:\n" + text::join(lines, "\n");
        r.used_lm = true;
        return r;
      } catch (const std::exception& e) {
        spdlog::warn("summarizer model failed, falling back to the simple summarizer: {}", e.what());
      }
    } else {
      spdlog::warn("lm summarizer has no model configured, falling back to the simple summarizer");
    }
    r.fell_back = true;
  }
  r.text = simple_text(path, observation, sink);
  return r;
}

}  // namespace ctfagent
