#include <gtest/gtest.h>

#include <random>

#include "ctfagent/text.hpp"

using namespace ctfagent::text;

TEST(Text, CountLines) {
  EXPECT_EQ(count_lines(""), 0u);
  EXPECT_EQ(count_lines("a"), 1u);
  EXPECT_EQ(count_lines("a\n"), 1u);
  EXPECT_EQ(count_lines("a\nb"), 2u);
  EXPECT_EQ(count_lines("\n\n"), 2u);
}

TEST(Text, CountLinesAgreesWithSplit) {
  std::mt19937 rng(7);
  const std::string alphabet = "ab\n";
  for (int i = 0; i < 500; ++i) {
    std::string s;
    for (int k = rng() % 20; k > 0; --k) s += alphabet[rng() % alphabet.size()];
    EXPECT_EQ(count_lines(s), split_lines(s).size()) << s;
  }
}

TEST(Text, SplitJoinRoundTrip) {
  EXPECT_EQ(split_lines("a\nb\n"), (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(split_lines("a\n\nb"), (std::vector<std::string>{"a", "", "b"}));
  EXPECT_EQ(join({"a", "", "b"}, "\n"), "a\n\nb");
}

TEST(Text, Trim) {
  EXPECT_EQ(trim("  x y \n\t"), "x y");
  EXPECT_EQ(trim_right("  x \r\n"), "  x");
  EXPECT_EQ(trim(""), "");
}

TEST(Text, CountOccurrencesNonOverlapping) {
  EXPECT_EQ(count_occurrences("aaaa", "aa"), 2u);
  EXPECT_EQ(count_occurrences("abc", ""), 0u);
  EXPECT_EQ(count_occurrences("xabxab", "ab"), 2u);
}

TEST(Text, SanitizeName) {
  EXPECT_EQ(sanitize_name("xxd rebuilding\n", 64), "xxd_rebuilding_");
  EXPECT_EQ(sanitize_name("debug_exec 'disassemble main'\n", 64), "debug_exec__disassemble_main__");
  EXPECT_EQ(sanitize_name("abcdef", 3), "abc");
}

TEST(Text, Utf8Repair) {
  EXPECT_TRUE(is_valid_utf8("h\xC3\xA9llo"));
  EXPECT_FALSE(is_valid_utf8("\xFF"));
  EXPECT_EQ(to_valid_utf8("a\xFF" "b"), "a\xEF\xBF\xBD" "b");
  EXPECT_FALSE(is_valid_utf8("\xC0\x80"));       // overlong
  EXPECT_FALSE(is_valid_utf8("\xED\xA0\x80"));   // surrogate
}

TEST(Text, Utf8RepairAlwaysValid) {
  std::mt19937 rng(11);
  for (int i = 0; i < 2000; ++i) {
    std::string s;
    for (int k = rng() % 16; k > 0; --k) s.push_back(static_cast<char>(rng() & 0xFF));
    const auto fixed = to_valid_utf8(s);
    EXPECT_TRUE(is_valid_utf8(fixed));
    if (is_valid_utf8(s)) EXPECT_EQ(fixed, s);
  }
}

TEST(Text, FormatSeconds) {
  EXPECT_EQ(format_seconds(3), "3.0");
  EXPECT_EQ(format_seconds(300), "300.0");
  EXPECT_EQ(format_seconds(2.5), "2.5");
  EXPECT_EQ(format_seconds(0.1), "0.1");
}

TEST(Text, ShellQuote) {
  EXPECT_EQ(shell_quote("a b"), "'a b'");
  EXPECT_EQ(shell_quote("it's"), "'it'\\''s'");
}

TEST(Text, RenderSinglePass) {
  EXPECT_EQ(render("{a}-{b}-{c}", {{"a", "{b}"}, {"b", "2"}}), "{b}-2-{c}");
  EXPECT_EQ(render("{", {}), "{");
}

TEST(Text, Fnv1aKnownVectors) {
  EXPECT_EQ(fnv1a_hex(""), "cbf29ce484222325");
  EXPECT_EQ(fnv1a_hex("a"), "af63dc4c8601ec8c");
  EXPECT_EQ(fnv1a_hex("foobar"), "85944171f73967e8");
}
