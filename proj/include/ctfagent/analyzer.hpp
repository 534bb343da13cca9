#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctfagent/commands.hpp"
#include "ctfagent/trajectory.hpp"

namespace ctfagent::analyzer {

enum class LeakageRule { single_step, flag_never_observed };

std::string_view to_string(LeakageRule r);

struct LeakageVerdict {
  bool applicable = false;  // only submitted trajectories are judged
  bool leaked = false;
  std::optional<LeakageRule> rule;
  std::vector<std::size_t> evidence;  // step indices
};

struct LeakageOptions {
  /// Challenge names whose statement contains the flag; exempt from the single-step rule.
  std::set<std::string> exempt;
};

LeakageVerdict detect_leakage(const Trajectory& t, const LeakageOptions& opts = {});

std::map<ActionCategory, std::size_t> categorize_actions(const Trajectory& t);

struct TransitionStats {
  std::map<std::pair<std::string, std::string>, std::size_t> counts;
  std::map<std::pair<std::string, std::string>, double> probabilities;  // normalized per source action

  double probability(const std::string& from, const std::string& to) const;
};

/// First-order transitions between consecutive steps that both fall in `filter`,
/// keyed by command name.
TransitionStats transition_stats(const std::vector<Trajectory>& trajs, ActionCategory filter);

struct Report {
  std::size_t trajectories = 0;
  std::size_t solved = 0;
  std::size_t steps = 0;
  std::map<std::string, std::size_t> exit_status;  // includes "incomplete" for runs without a footer
  std::map<ActionCategory, std::size_t> action_categories;
  std::size_t connect_sessions = 0;
  std::size_t sendlines = 0;
  double mean_sendlines_per_session = 0.0;
  std::map<std::size_t, std::size_t> turns_success;
  std::map<std::size_t, std::size_t> turns_failure;
  std::size_t soliloquy_steps = 0;
  double soliloquy_fraction = 0.0;
  std::map<std::string, double> cost_per_solved;  // by challenge category
  std::map<std::string, std::size_t> solved_by_category;
  std::vector<std::string> unknown_commands;  // classified as shell
  std::size_t leaked = 0;
};

Report summary_report(const std::vector<Trajectory>& trajs, const LeakageOptions& opts = {});

nlohmann::json to_json(const Report& r);
std::string to_text(const Report& r);
nlohmann::json to_json(const TransitionStats& s);
std::string to_text(const TransitionStats& s);

}  // namespace ctfagent::analyzer
