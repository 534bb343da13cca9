#include "ctfagent/task.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace ctfagent {

using nlohmann::json;

std::string_view to_string(Category c) {
  switch (c) {
    case Category::crypto: return "crypto";
    case Category::forensics: return "forensics";
    case Category::pwn: return "pwn";
    case Category::rev: return "rev";
    case Category::web: return "web";
    case Category::misc: return "misc";
  }
  return "misc";
}

std::string_view friendly_name(Category c) {
  switch (c) {
    case Category::crypto: return "cryptography";
    case Category::forensics: return "forensics";
    case Category::pwn: return "binary exploitation";
    case Category::rev: return "reverse engineering";
    case Category::web: return "web security";
    case Category::misc: return "miscellaneous";
  }
  return "miscellaneous";
}

std::optional<Category> parse_category(std::string_view s) {
  std::string lower;
  for (char c : s) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  static const std::pair<std::string_view, Category> table[] = {
      {"crypto", Category::crypto},
      {"cryptography", Category::crypto},
      {"forensics", Category::forensics},
      {"pwn", Category::pwn},
      {"binary exploitation", Category::pwn},
      {"rev", Category::rev},
      {"reverse engineering", Category::rev},
      {"reversing", Category::rev},
      {"web", Category::web},
      {"web security", Category::web},
      {"misc", Category::misc},
      {"miscellaneous", Category::misc},
      {"general skills", Category::misc},
  };
  for (const auto& [name, cat] : table)
    if (lower == name) return cat;
  return std::nullopt;
}

Challenge::Challenge(ChallengeInfo info, std::filesystem::path dir, std::string flag)
    : info_(std::move(info)), dir_(std::move(dir)), flag_(std::move(flag)) {}

Challenge load_challenge(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  const fs::path manifest = dir / kManifestName;
  std::ifstream in(manifest, std::ios::binary);
  if (!in) throw LoadError(LoadError::Kind::missing_manifest, "missing manifest: " + manifest.string());

  std::stringstream buf;
  buf << in.rdbuf();
  json doc;
  try {
    doc = json::parse(buf.str());
  } catch (const json::parse_error& e) {
    throw LoadError(LoadError::Kind::malformed_manifest, std::string("malformed manifest: ") + e.what());
  }
  if (!doc.is_object()) throw LoadError(LoadError::Kind::malformed_manifest, "malformed manifest: not an object");

  auto str = [&](const char* key, std::string fallback = {}) -> std::string {
    auto it = doc.find(key);
    if (it == doc.end() || it->is_null()) return fallback;
    if (!it->is_string())
      throw LoadError(LoadError::Kind::malformed_manifest, std::string("malformed manifest: ") + key + " must be a string");
    return it->get<std::string>();
  };

  ChallengeInfo info;
  info.name = str("name");
  if (info.name.empty()) info.name = fs::absolute(dir).lexically_normal().filename().string();
  info.description = str("description");
  info.flag_format = str("flag_format", "flag{...}");
  info.image = str("image");

  const std::string category = str("category");
  auto parsed = parse_category(category);
  if (!parsed) throw LoadError(LoadError::Kind::unknown_category, "unknown category: \"" + category + "\"");
  info.category = *parsed;

  if (auto it = doc.find("points"); it != doc.end() && !it->is_null()) {
    if (!it->is_number_unsigned())
      throw LoadError(LoadError::Kind::malformed_manifest, "malformed manifest: points must be a non-negative integer");
    info.points = it->get<std::uint32_t>();
  }

  if (auto it = doc.find("files"); it != doc.end() && !it->is_null()) {
    if (!it->is_array()) throw LoadError(LoadError::Kind::malformed_manifest, "malformed manifest: files must be a list");
    for (const auto& f : *it) {
      if (!f.is_string()) throw LoadError(LoadError::Kind::malformed_manifest, "malformed manifest: file entries must be strings");
      const auto rel = f.get<std::string>();
      fs::path p(rel);
      if (p.is_absolute() || rel.empty())
        throw LoadError(LoadError::Kind::malformed_manifest, "malformed manifest: file paths must be relative: " + rel);
      if (!fs::exists(dir / p)) throw LoadError(LoadError::Kind::missing_file, "missing file: " + rel);
      info.files.push_back(rel);
    }
  }

  if (auto it = doc.find("server"); it != doc.end() && !it->is_null()) {
    if (!it->is_object() || !it->contains("host") || !it->contains("port"))
      throw LoadError(LoadError::Kind::malformed_manifest, "malformed manifest: server needs host and port");
    ServerAddress addr;
    addr.host = (*it)["host"].get<std::string>();
    const auto& port = (*it)["port"];
    if (!port.is_number_unsigned() || port.get<std::uint64_t>() == 0 || port.get<std::uint64_t>() > 65535)
      throw LoadError(LoadError::Kind::malformed_manifest, "malformed manifest: server port out of range");
    addr.port = port.get<std::uint16_t>();
    info.server = addr;
  }

  std::string flag = str("flag");
  if (flag.empty()) throw LoadError(LoadError::Kind::empty_flag, "empty flag");

  return Challenge(std::move(info), dir, std::move(flag));
}

std::string normalize_flag(std::string_view candidate) {
  std::string_view s = candidate;
  if (!s.empty() && s.back() == '\n') s.remove_suffix(1);
  if (s.size() >= 2 && s.front() == '\'' && s.back() == '\'') s = s.substr(1, s.size() - 2);
  return std::string(s);
}

FlagVerdict verify_flag(const Challenge& challenge, std::string_view candidate) {
  FlagVerdict v;
  v.normalized_candidate = normalize_flag(candidate);
  v.correct = v.normalized_candidate == normalize_flag(challenge.secret_flag());
  return v;
}

}  // namespace ctfagent
