#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace ctfagent {

enum class Category { crypto, forensics, pwn, rev, web, misc };

std::string_view to_string(Category c);
/// Long form used in prompts ("cryptography", "reverse engineering", ...).
std::string_view friendly_name(Category c);
/// Accepts short and long names and the "General Skills" label; case-insensitive.
std::optional<Category> parse_category(std::string_view s);

struct ServerAddress {
  std::string host;
  std::uint16_t port = 0;
};

/// Everything about a challenge that may be shown to the model. Prompt rendering only
/// ever receives this type, so the secret flag cannot leak through a template.
struct ChallengeInfo {
  std::string name;
  Category category = Category::misc;
  std::string description;
  std::uint32_t points = 0;
  std::vector<std::string> files;
  std::string flag_format = "flag{...}";
  std::optional<ServerAddress> server;
  std::string image;
};

struct FlagVerdict {
  bool correct = false;
  std::string normalized_candidate;
};

class Challenge;
FlagVerdict verify_flag(const Challenge& challenge, std::string_view candidate);

class Challenge {
 public:
  Challenge(ChallengeInfo info, std::filesystem::path dir, std::string flag);

  const ChallengeInfo& info() const { return info_; }
  const std::filesystem::path& dir() const { return dir_; }

  /// Only for trajectory metadata and offline analysis; never for prompts.
  const std::string& secret_flag() const { return flag_; }

 private:
  ChallengeInfo info_;
  std::filesystem::path dir_;
  std::string flag_;
};

class LoadError : public std::runtime_error {
 public:
  enum class Kind { missing_manifest, malformed_manifest, missing_file, unknown_category, empty_flag };
  LoadError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

inline constexpr std::string_view kManifestName = "challenge.json";

/// Reads `dir/challenge.json` and checks every listed file exists. Throws LoadError.
Challenge load_challenge(const std::filesystem::path& dir);

/// Strips one trailing newline and then one matched pair of surrounding single quotes.
std::string normalize_flag(std::string_view candidate);

}  // namespace ctfagent
