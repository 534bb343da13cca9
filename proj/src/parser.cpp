#include "ctfagent/parser.hpp"

#include <regex>
#include <vector>

#include "ctfagent/text.hpp"

namespace ctfagent {

namespace {

struct Line {
  std::size_t begin;
  std::size_t end;  // excludes the newline
};

std::vector<Line> lines_of(std::string_view s) {
  std::vector<Line> out;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    auto nl = s.find('\n', pos);
    if (nl == std::string_view::npos) {
      if (pos < s.size()) out.push_back({pos, s.size()});
      break;
    }
    out.push_back({pos, nl});
    pos = nl + 1;
  }
  return out;
}

struct Block {
  std::size_t open_line;
  std::size_t close_line;
};

std::vector<Block> scan_blocks(std::string_view s, const std::vector<Line>& lines) {
  std::vector<Block> out;
  constexpr std::size_t none = static_cast<std::size_t>(-1);
  std::size_t open = none;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    std::string_view l = s.substr(lines[i].begin, lines[i].end - lines[i].begin);
    if (!l.empty() && l.back() == '\r') l.remove_suffix(1);
    if (open == none) {
      if (text::starts_with(l, "```")) open = i;
    } else if (text::trim_right(l) == "```") {
      out.push_back({open, i});
      open = none;
    }
  }
  return out;
}

}  // namespace

ParsedResponse parse_response(std::string_view raw) {
  const auto lines = lines_of(raw);
  const auto blocks = scan_blocks(raw, lines);
  if (blocks.empty()) throw FormatError("no complete fenced code block in the response");
  const Block& b = blocks.front();
  ParsedResponse r;
  r.block_count = blocks.size();
  r.thought = std::string(text::trim(raw.substr(0, lines[b.open_line].begin)));
  const std::size_t body_begin = lines[b.open_line].end + 1;
  const std::size_t body_end = lines[b.close_line].begin;
  r.action = body_end > body_begin ? std::string(text::trim(raw.substr(body_begin, body_end - body_begin))) : "";
  return r;
}

std::size_t count_blocks(std::string_view raw) { return scan_blocks(raw, lines_of(raw)).size(); }

std::size_t marker_count(std::string_view raw) {
  std::size_t n = 0;
  for (auto m : kSoliloquyMarkers) n += text::count_occurrences(raw, m);
  return n;
}

std::size_t distinct_marker_count(std::string_view raw) {
  std::size_t n = 0;
  for (auto m : kSoliloquyMarkers)
    if (raw.find(m) != std::string_view::npos) ++n;
  return n;
}

bool is_soliloquy(std::string_view raw, const SoliloquyRule& rule) {
  const std::size_t markers = rule.distinct ? distinct_marker_count(raw) : marker_count(raw);
  return count_blocks(raw) > 1 && markers >= rule.min_markers;
}

std::string truncate_after_first_action(std::string_view raw) {
  const auto lines = lines_of(raw);
  const auto blocks = scan_blocks(raw, lines);
  if (blocks.empty()) return std::string(raw);
  return std::string(raw.substr(0, lines[blocks.front().close_line].end));
}

std::string edit_to_heredoc(std::string_view action) {
  static const std::regex head(R"(^edit[ \t]+(\d+):(\d+)[ \t]*$)");
  auto lines = text::split_lines(action);
  if (lines.size() < 2 || text::trim_right(lines.back()) != "end_of_edit") return std::string(action);
  std::smatch m;
  std::string first = std::string(text::trim_right(lines.front()));
  if (!std::regex_match(first, m, head)) return std::string(action);
  lines.front() = "edit " + m[1].str() + ":" + m[2].str() + " << 'end_of_edit'";
  lines.back() = "end_of_edit";
  return text::join(lines, "\n");
}

}  // namespace ctfagent
