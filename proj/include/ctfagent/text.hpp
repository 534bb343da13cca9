#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace ctfagent::text {

/// Number of lines in `s`; a final line without a trailing newline still counts.
std::size_t count_lines(std::string_view s);

/// Splits on '\n'. A trailing newline does not produce an empty last element.
std::vector<std::string> split_lines(std::string_view s);

std::string join(const std::vector<std::string>& parts, std::string_view sep);

std::string_view trim(std::string_view s);
std::string_view trim_right(std::string_view s);

bool starts_with(std::string_view s, std::string_view prefix);

/// Counts non-overlapping occurrences of `needle`.
std::size_t count_occurrences(std::string_view haystack, std::string_view needle);

/// Replaces every byte outside [A-Za-z0-9] with '_' and truncates to `max_len`.
std::string sanitize_name(std::string_view s, std::size_t max_len = std::string::npos);

/// Replaces invalid UTF-8 sequences with U+FFFD so the result is always valid UTF-8.
std::string to_valid_utf8(std::string_view bytes);

bool is_valid_utf8(std::string_view bytes);

/// Formats seconds the way the timeout sentences show them: 3 -> "3.0", 2.5 -> "2.5".
std::string format_seconds(double seconds);

/// Quotes `s` for safe use as one POSIX shell word.
std::string shell_quote(std::string_view s);

/// Substitutes `{key}` placeholders in one left-to-right pass. Unknown keys are kept
/// verbatim, and substituted values are never rescanned.
std::string render(std::string_view tmpl,
                   const std::vector<std::pair<std::string, std::string>>& values);

/// Stable 64-bit FNV-1a hash rendered as 16 hex digits.
std::string fnv1a_hex(std::string_view data);

}  // namespace ctfagent::text
