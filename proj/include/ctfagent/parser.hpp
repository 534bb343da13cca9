#pragma once

#include <array>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>

namespace ctfagent {

/// The response has no complete fenced code block.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ParsedResponse {
  std::string thought;  // text before the first block, trimmed
  std::string action;   // content of the first block, trimmed
  std::size_t block_count = 0;
};

/// A block opens on a line starting with ``` (an info string may follow) and closes on a
/// line that is exactly ```. Throws FormatError when no block closes.
ParsedResponse parse_response(std::string_view raw);

/// Number of complete fenced blocks.
std::size_t count_blocks(std::string_view raw);

/// Fragments that only appear when the model writes environment output itself.
inline constexpr std::array<std::string_view, 5> kSoliloquyMarkers = {
    "(Open file:", "(Current directory:", "(Interactive session:", "[File:", "bash-$"};

/// Total occurrences of all markers.
std::size_t marker_count(std::string_view raw);
/// Number of different markers present.
std::size_t distinct_marker_count(std::string_view raw);

struct SoliloquyRule {
  std::size_t min_markers = 4;
  bool distinct = false;  // count distinct markers instead of occurrences
};

/// More than one block and at least `min_markers` markers.
bool is_soliloquy(std::string_view raw, const SoliloquyRule& rule = {});

/// Everything up to and including the closing fence of the first block. Unchanged when
/// there is no complete block.
std::string truncate_after_first_action(std::string_view raw);

/// Rewrites `edit S:E` followed by replacement lines and `end_of_edit` into a heredoc
/// the shell can run. Other actions are returned unchanged.
std::string edit_to_heredoc(std::string_view action);

}  // namespace ctfagent
