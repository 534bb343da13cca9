#include <gtest/gtest.h>

#include "ctfagent/task.hpp"
#include "ctfagent/text.hpp"
#include "test_support.hpp"

using namespace ctfagent;
using testsupport::TempDir;
using testsupport::make_challenge;

TEST(Task, CategoryParsing) {
  EXPECT_EQ(parse_category("crypto"), Category::crypto);
  EXPECT_EQ(parse_category("Reverse Engineering"), Category::rev);
  EXPECT_EQ(parse_category("General Skills"), Category::misc);
  EXPECT_EQ(parse_category("PWN"), Category::pwn);
  EXPECT_FALSE(parse_category("astrology"));
  for (auto c : {Category::crypto, Category::forensics, Category::pwn, Category::rev, Category::web, Category::misc}) {
    EXPECT_EQ(parse_category(to_string(c)), c);
    EXPECT_EQ(parse_category(friendly_name(c)), c);
  }
}

TEST(Task, LoadsBundledToyXor) {
  auto ch = load_challenge(testsupport::source_dir() / "challenges" / "toy_xor");
  EXPECT_EQ(ch.info().name, "toy_xor");
  EXPECT_EQ(ch.info().category, Category::crypto);
  EXPECT_EQ(ch.info().files, (std::vector<std::string>{"cipher.txt", "notes.txt"}));
  EXPECT_FALSE(ch.info().server);
  EXPECT_EQ(ch.secret_flag(), "flag{x0r_w1th_4_s1ngl3_byt3}");
}

TEST(Task, ToyXorCipherDecodesToFlag) {
  auto ch = load_challenge(testsupport::source_dir() / "challenges" / "toy_xor");
  auto hex = std::string(ctfagent::text::trim(testsupport::read_file(ch.dir() / "cipher.txt")));
  std::string plain;
  for (std::size_t i = 0; i + 1 < hex.size(); i += 2)
    plain.push_back(static_cast<char>(std::stoi(hex.substr(i, 2), nullptr, 16) ^ 0x2a));
  EXPECT_EQ(plain, ch.secret_flag());
}

TEST(Task, LoadErrors) {
  TempDir tmp;
  auto kind_of = [](const std::filesystem::path& d) {
    try {
      load_challenge(d);
    } catch (const LoadError& e) {
      return e.kind();
    }
    ADD_FAILURE() << "no error for " << d;
    return LoadError::Kind::malformed_manifest;
  };
  EXPECT_EQ(kind_of(tmp / "absent"), LoadError::Kind::missing_manifest);
  testsupport::write_file(tmp / "bad" / "challenge.json", "{not json");
  EXPECT_EQ(kind_of(tmp / "bad"), LoadError::Kind::malformed_manifest);
  make_challenge(tmp / "cat", {{"name", "x"}, {"category", "astrology"}, {"flag", "f"}});
  EXPECT_EQ(kind_of(tmp / "cat"), LoadError::Kind::unknown_category);
  make_challenge(tmp / "file", {{"name", "x"}, {"category", "web"}, {"flag", "f"}, {"files", {"gone.bin"}}});
  EXPECT_EQ(kind_of(tmp / "file"), LoadError::Kind::missing_file);
  make_challenge(tmp / "flag", {{"name", "x"}, {"category", "web"}, {"flag", ""}});
  EXPECT_EQ(kind_of(tmp / "flag"), LoadError::Kind::empty_flag);
  make_challenge(tmp / "port", {{"name", "x"}, {"category", "web"}, {"flag", "f"},
                                {"server", {{"host", "h"}, {"port", 70000}}}});
  EXPECT_EQ(kind_of(tmp / "port"), LoadError::Kind::malformed_manifest);
}

TEST(Task, GeneralSkillsBecomesMisc) {
  TempDir tmp;
  make_challenge(tmp / "gs", {{"name", "gs"}, {"category", "General Skills"}, {"flag", "picoCTF{x}"},
                              {"server", {{"host", "web"}, {"port", 8000}}}});
  auto ch = load_challenge(tmp / "gs");
  EXPECT_EQ(ch.info().category, Category::misc);
  ASSERT_TRUE(ch.info().server);
  EXPECT_EQ(ch.info().server->host, "web");
  EXPECT_EQ(ch.info().server->port, 8000);
}

TEST(Task, FlagVerification) {
  TempDir tmp;
  auto ch = testsupport::simple_challenge(tmp.path());
  EXPECT_TRUE(verify_flag(ch, "flag{test}").correct);
  EXPECT_TRUE(verify_flag(ch, "'flag{test}'").correct);
  EXPECT_TRUE(verify_flag(ch, "flag{test}\n").correct);
  EXPECT_FALSE(verify_flag(ch, "flag{Test}").correct);
  EXPECT_FALSE(verify_flag(ch, " flag{test}").correct);
  EXPECT_EQ(normalize_flag("'x'\n"), "x");
  EXPECT_EQ(normalize_flag("'x"), "'x");
}

TEST(Task, NormalizeIsIdempotentOnPlainFlags) {
  for (std::string f : {"flag{a}", "picoCTF{b_c}", "x"}) {
    EXPECT_EQ(normalize_flag(normalize_flag(f)), normalize_flag(f));
    EXPECT_EQ(normalize_flag("'" + f + "'"), f);
  }
}
