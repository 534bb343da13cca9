#include "ctfagent/trajectory.hpp"

#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <fstream>

#include "ctfagent/parser.hpp"

namespace ctfagent {

using nlohmann::json;

std::string_view to_string(ExitStatus s) {
  switch (s) {
    case ExitStatus::submitted: return "submitted";
    case ExitStatus::exit_cost: return "exit_cost";
    case ExitStatus::exit_context: return "exit_context";
    case ExitStatus::exit_forfeit: return "exit_forfeit";
    case ExitStatus::exit_format: return "exit_format";
    case ExitStatus::exit_agent_error: return "exit_agent_error";
    case ExitStatus::early_exit: return "early_exit";
  }
  return "exit_agent_error";
}

std::optional<ExitStatus> parse_exit_status(std::string_view s) {
  for (auto e : kAllExitStatuses)
    if (to_string(e) == s) return e;
  return std::nullopt;
}

SoliloquyReport soliloquy_report(std::string_view raw) {
  SoliloquyReport r;
  r.blocks = count_blocks(raw);
  r.markers = marker_count(raw);
  r.distinct_markers = distinct_marker_count(raw);
  r.soliloquy = is_soliloquy(raw);
  return r;
}

json to_json(const ChallengeInfo& c) {
  json j = {{"name", c.name},
            {"category", std::string(to_string(c.category))},
            {"description", c.description},
            {"points", c.points},
            {"files", c.files},
            {"flag_format", c.flag_format},
            {"image", c.image}};
  if (c.server) j["server"] = {{"host", c.server->host}, {"port", c.server->port}};
  return j;
}

ChallengeInfo challenge_info_from_json(const json& j) {
  ChallengeInfo c;
  c.name = j.value("name", "");
  if (auto cat = parse_category(j.value("category", "misc"))) c.category = *cat;
  c.description = j.value("description", "");
  c.points = j.value("points", 0u);
  c.files = j.value("files", std::vector<std::string>{});
  c.flag_format = j.value("flag_format", c.flag_format);
  c.image = j.value("image", "");
  if (j.contains("server") && j["server"].is_object())
    c.server = ServerAddress{j["server"].value("host", ""), j["server"].value("port", std::uint16_t{0})};
  return c;
}

namespace {

json usage_json(const Usage& u) { return {{"tokens_in", u.tokens_in}, {"tokens_out", u.tokens_out}}; }

Usage usage_from(const json& j) {
  Usage u;
  u.tokens_in = j.value("tokens_in", std::uint64_t{0});
  u.tokens_out = j.value("tokens_out", std::uint64_t{0});
  return u;
}

json ledger_json(const CostLedger& l) {
  return {{"tokens_in", l.tokens_in}, {"tokens_out", l.tokens_out}, {"dollars", l.dollars}, {"budget", l.budget}};
}

}  // namespace

json to_json(const Step& s) {
  json j = {{"type", "step"},
            {"index", s.index},
            {"thought", s.thought},
            {"action", s.action},
            {"raw_response", s.raw_response},
            {"observation", s.observation},
            {"state",
             {{"working_dir", s.state.cwd},
              {"open_file", s.state.open_file},
              {"interactive_session", s.state.interactive_session}}},
            {"usage", usage_json(s.usage)},
            {"soliloquy",
             {{"soliloquy", s.soliloquy.soliloquy},
              {"blocks", s.soliloquy.blocks},
              {"markers", s.soliloquy.markers},
              {"distinct_markers", s.soliloquy.distinct_markers}}},
            {"format_error", s.format_error}};
  if (s.summarizer_reply)
    j["summarizer_reply"] = {{"text", s.summarizer_reply->text}, {"usage", usage_json(s.summarizer_reply->usage)}};
  if (!s.model_exchange.is_null()) j["model_exchange"] = s.model_exchange;
  return j;
}

Step step_from_json(const json& j) {
  Step s;
  s.index = j.at("index").get<std::size_t>();
  s.thought = j.value("thought", "");
  s.action = j.value("action", "");
  s.raw_response = j.value("raw_response", "");
  s.observation = j.value("observation", "");
  if (j.contains("state")) {
    const auto& st = j.at("state");
    s.state.cwd = st.value("working_dir", "");
    s.state.open_file = st.value("open_file", "n/a");
    s.state.interactive_session = st.value("interactive_session", "n/a");
  }
  if (j.contains("usage")) s.usage = usage_from(j.at("usage"));
  if (j.contains("soliloquy")) {
    const auto& so = j.at("soliloquy");
    s.soliloquy.soliloquy = so.value("soliloquy", false);
    s.soliloquy.blocks = so.value("blocks", std::size_t{0});
    s.soliloquy.markers = so.value("markers", std::size_t{0});
    s.soliloquy.distinct_markers = so.value("distinct_markers", std::size_t{0});
  }
  s.format_error = j.value("format_error", false);
  if (j.contains("summarizer_reply")) {
    const auto& r = j.at("summarizer_reply");
    s.summarizer_reply = SummarizerReply{r.value("text", ""), usage_from(r.value("usage", json::object()))};
  }
  if (j.contains("model_exchange")) s.model_exchange = j.at("model_exchange");
  return s;
}

TrajectoryWriter::TrajectoryWriter(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  file_ = std::fopen(path.c_str(), "wb");
  if (!file_) throw TrajectoryError("cannot open " + path.string() + ": " + std::strerror(errno));
}

TrajectoryWriter::~TrajectoryWriter() {
  if (file_) std::fclose(file_);
}

void TrajectoryWriter::write_line(const json& j) {
  const std::string line = j.dump(-1, ' ', false, json::error_handler_t::replace) + "\n";
  if (std::fwrite(line.data(), 1, line.size(), file_) != line.size() || std::fflush(file_) != 0)
    throw TrajectoryError("trajectory write failed");
  ::fsync(fileno(file_));
}

void TrajectoryWriter::header(const TrajectoryHeader& h) {
  write_line({{"type", "header"},
              {"challenge", to_json(h.challenge)},
              {"gold_flag", h.gold_flag},
              {"config_fingerprint", h.config_fingerprint},
              {"config", h.config}});
}

void TrajectoryWriter::step(const Step& s) { write_line(to_json(s)); }

void TrajectoryWriter::footer(const TrajectoryFooter& f) {
  write_line({{"type", "footer"},
              {"exit_status", std::string(to_string(f.exit_status))},
              {"ledger", ledger_json(f.ledger)},
              {"turns", f.turns},
              {"detail", f.detail}});
}

Trajectory read_trajectory(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TrajectoryError("cannot read " + path.string());
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) lines.push_back(std::move(line));

  Trajectory t;
  bool have_header = false;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    json j;
    try {
      j = json::parse(lines[i]);
    } catch (const json::exception& e) {
      if (i + 1 == lines.size()) break;
      throw TrajectoryError(path.string() + ": malformed record " + std::to_string(i + 1) + ": " + e.what());
    }
    try {
      const std::string type = j.value("type", "");
      if (type == "header") {
        t.header.challenge = challenge_info_from_json(j.at("challenge"));
        t.header.gold_flag = j.value("gold_flag", "");
        t.header.config_fingerprint = j.value("config_fingerprint", "");
        t.header.config = j.value("config", json::object());
        have_header = true;
      } else if (type == "step") {
        t.steps.push_back(step_from_json(j));
      } else if (type == "footer") {
        TrajectoryFooter f;
        auto st = parse_exit_status(j.value("exit_status", ""));
        if (!st) throw TrajectoryError("unknown exit status");
        f.exit_status = *st;
        const auto& l = j.at("ledger");
        f.ledger.tokens_in = l.value("tokens_in", std::uint64_t{0});
        f.ledger.tokens_out = l.value("tokens_out", std::uint64_t{0});
        f.ledger.dollars = l.value("dollars", 0.0);
        f.ledger.budget = l.value("budget", 3.0);
        f.turns = j.value("turns", std::size_t{0});
        f.detail = j.value("detail", "");
        t.footer = f;
      } else {
        throw TrajectoryError("unknown record type '" + type + "'");
      }
    } catch (const json::exception& e) {
      throw TrajectoryError(path.string() + ": bad record " + std::to_string(i + 1) + ": " + e.what());
    }
  }
  if (!have_header) throw TrajectoryError(path.string() + ": missing header");
  return t;
}

}  // namespace ctfagent
