#pragma once

#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "ctfagent/model.hpp"
#include "ctfagent/sandbox.hpp"
#include "ctfagent/task.hpp"

namespace ctfagent {

enum class ExitStatus { submitted, exit_cost, exit_context, exit_forfeit, exit_format, exit_agent_error, early_exit };

inline constexpr ExitStatus kAllExitStatuses[] = {
    ExitStatus::submitted,   ExitStatus::exit_cost,        ExitStatus::exit_context, ExitStatus::exit_forfeit,
    ExitStatus::exit_format, ExitStatus::exit_agent_error, ExitStatus::early_exit};

std::string_view to_string(ExitStatus s);
std::optional<ExitStatus> parse_exit_status(std::string_view s);

struct SoliloquyReport {
  bool soliloquy = false;
  std::size_t blocks = 0;
  std::size_t markers = 0;
  std::size_t distinct_markers = 0;
};

SoliloquyReport soliloquy_report(std::string_view raw_response);

struct SummarizerReply {
  std::string text;
  Usage usage;
};

struct Step {
  std::size_t index = 0;
  std::string thought;
  std::string action;
  std::string raw_response;
  std::string observation;
  ShellState state;
  Usage usage;
  SoliloquyReport soliloquy;
  bool format_error = false;
  std::optional<SummarizerReply> summarizer_reply;
  nlohmann::json model_exchange;  // null unless the backend logged one
};

struct TrajectoryHeader {
  ChallengeInfo challenge;
  std::string gold_flag;
  std::string config_fingerprint;
  nlohmann::json config;
};

struct TrajectoryFooter {
  ExitStatus exit_status = ExitStatus::exit_agent_error;
  CostLedger ledger;
  std::size_t turns = 0;
  std::string detail;
};

struct Trajectory {
  TrajectoryHeader header;
  std::vector<Step> steps;
  std::optional<TrajectoryFooter> footer;  // absent when the run was interrupted

  /// "submitted" only when the footer says so.
  bool solved() const { return footer && footer->exit_status == ExitStatus::submitted; }
};

nlohmann::json to_json(const ChallengeInfo& c);
ChallengeInfo challenge_info_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Step& s);
Step step_from_json(const nlohmann::json& j);

/// Append-only JSONL writer: one header line, one line per step, one footer line.
/// Every record is flushed to the file as soon as it is written.
class TrajectoryWriter {
 public:
  explicit TrajectoryWriter(const std::filesystem::path& path);
  TrajectoryWriter(const TrajectoryWriter&) = delete;
  TrajectoryWriter& operator=(const TrajectoryWriter&) = delete;
  ~TrajectoryWriter();

  void header(const TrajectoryHeader& h);
  void step(const Step& s);
  void footer(const TrajectoryFooter& f);

 private:
  void write_line(const nlohmann::json& j);
  std::FILE* file_ = nullptr;
};

class TrajectoryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Parses a trajectory file. A torn final line (interrupted write) is ignored; any other
/// malformed record throws TrajectoryError.
Trajectory read_trajectory(const std::filesystem::path& path);

}  // namespace ctfagent
