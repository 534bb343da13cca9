#include "ctfagent/analyzer.hpp"

#include <cstdio>

#include "ctfagent/parser.hpp"
#include "ctfagent/text.hpp"

namespace ctfagent::analyzer {

using nlohmann::json;

std::string_view to_string(LeakageRule r) {
  return r == LeakageRule::single_step ? "single_step" : "flag_never_observed";
}

LeakageVerdict detect_leakage(const Trajectory& t, const LeakageOptions& opts) {
  LeakageVerdict v;
  if (!t.solved()) return v;
  v.applicable = true;
  const std::size_t n = t.steps.size();
  if (n == 1 && !opts.exempt.contains(t.header.challenge.name)) {
    v.leaked = true;
    v.rule = LeakageRule::single_step;
    v.evidence = {0};
    return v;
  }
  const std::string& flag = t.header.gold_flag;
  if (flag.empty() || n < 2) return v;
  for (const auto& s : t.steps)
    if (s.observation.find(flag) != std::string::npos) return v;
  const Step& penultimate = t.steps[n - 2];
  if (penultimate.raw_response.find(flag) != std::string::npos && is_soliloquy(penultimate.raw_response)) {
    v.leaked = true;
    v.rule = LeakageRule::flag_never_observed;
    v.evidence = {penultimate.index};
  }
  return v;
}

std::map<ActionCategory, std::size_t> categorize_actions(const Trajectory& t) {
  std::map<ActionCategory, std::size_t> out;
  for (const auto& s : t.steps) ++out[categorize(s.action)];
  return out;
}

double TransitionStats::probability(const std::string& from, const std::string& to) const {
  auto it = probabilities.find({from, to});
  return it == probabilities.end() ? 0.0 : it->second;
}

TransitionStats transition_stats(const std::vector<Trajectory>& trajs, ActionCategory filter) {
  TransitionStats st;
  for (const auto& t : trajs) {
    for (std::size_t i = 1; i < t.steps.size(); ++i) {
      const auto& a = t.steps[i - 1].action;
      const auto& b = t.steps[i].action;
      if (categorize(a) == filter && categorize(b) == filter) ++st.counts[{command_name(a), command_name(b)}];
    }
  }
  std::map<std::string, std::size_t> row;
  for (const auto& [k, c] : st.counts) row[k.first] += c;
  for (const auto& [k, c] : st.counts)
    st.probabilities[k] = static_cast<double>(c) / static_cast<double>(row[k.first]);
  return st;
}

Report summary_report(const std::vector<Trajectory>& trajs, const LeakageOptions& opts) {
  Report r;
  std::set<std::string> unknown;
  std::map<std::string, double> solved_cost;
  for (const auto& t : trajs) {
    ++r.trajectories;
    r.steps += t.steps.size();
    const bool solved = t.solved();
    ++r.exit_status[t.footer ? std::string(to_string(t.footer->exit_status)) : "incomplete"];
    (solved ? r.turns_success : r.turns_failure)[t.steps.size()]++;
    if (solved) {
      ++r.solved;
      const std::string cat(to_string(t.header.challenge.category));
      ++r.solved_by_category[cat];
      solved_cost[cat] += t.footer->ledger.dollars;
    }
    if (detect_leakage(t, opts).leaked) ++r.leaked;

    bool in_session = false;
    for (const auto& s : t.steps) {
      ++r.action_categories[categorize(s.action)];
      if (s.soliloquy.soliloquy || is_soliloquy(s.raw_response)) ++r.soliloquy_steps;
      const std::string name = command_name(s.action);
      if (!name.empty() && !find_command(name)) unknown.insert(name);
      for (const auto& line : text::split_lines(s.action)) {
        const std::string cmd = command_name(line);
        if (cmd == "connect_start") {
          ++r.connect_sessions;
          in_session = true;
        } else if (cmd == "connect_stop") {
          in_session = false;
        } else if (cmd == "connect_sendline" && in_session) {
          ++r.sendlines;
        }
      }
    }
  }
  if (r.connect_sessions)
    r.mean_sendlines_per_session = static_cast<double>(r.sendlines) / static_cast<double>(r.connect_sessions);
  if (r.steps) r.soliloquy_fraction = static_cast<double>(r.soliloquy_steps) / static_cast<double>(r.steps);
  for (const auto& [cat, dollars] : solved_cost)
    r.cost_per_solved[cat] = dollars / static_cast<double>(r.solved_by_category[cat]);
  r.unknown_commands.assign(unknown.begin(), unknown.end());
  return r;
}

namespace {

template <typename K>
json histogram(const std::map<K, std::size_t>& m) {
  json j = json::object();
  for (const auto& [k, v] : m) {
    if constexpr (std::is_same_v<K, ActionCategory>)
      j[std::string(ctfagent::to_string(k))] = v;
    else if constexpr (std::is_arithmetic_v<K>)
      j[std::to_string(k)] = v;
    else
      j[k] = v;
  }
  return j;
}

std::string fmt(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

json to_json(const Report& r) {
  return {{"trajectories", r.trajectories},
          {"solved", r.solved},
          {"steps", r.steps},
          {"exit_status", histogram(r.exit_status)},
          {"action_categories", histogram(r.action_categories)},
          {"connect_sessions", r.connect_sessions},
          {"sendlines", r.sendlines},
          {"mean_sendlines_per_session", r.mean_sendlines_per_session},
          {"turns_success", histogram(r.turns_success)},
          {"turns_failure", histogram(r.turns_failure)},
          {"soliloquy_steps", r.soliloquy_steps},
          {"soliloquy_fraction", r.soliloquy_fraction},
          {"cost_per_solved", r.cost_per_solved},
          {"solved_by_category", histogram(r.solved_by_category)},
          {"unregistered_commands", r.unknown_commands},
          {"leaked", r.leaked}};
}

std::string to_text(const Report& r) {
  std::string out;
  out += "trajectories: " + std::to_string(r.trajectories) + "\n";
  out += "solved: " + std::to_string(r.solved) + "\n";
  out += "steps: " + std::to_string(r.steps) + "\n";
  out += "\nexit status:\n";
  for (const auto& [k, v] : r.exit_status) out += "  " + k + ": " + std::to_string(v) + "\n";
  out += "\naction categories:\n";
  for (const auto& [k, v] : r.action_categories)
    out += "  " + std::string(ctfagent::to_string(k)) + ": " + std::to_string(v) + "\n";
  out += "\nconnect sessions: " + std::to_string(r.connect_sessions) + "\n";
  out += "sendlines per session: " + fmt(r.mean_sendlines_per_session, 2) + "\n";
  out += "\nturns (solved):\n";
  for (const auto& [k, v] : r.turns_success) out += "  " + std::to_string(k) + ": " + std::to_string(v) + "\n";
  out += "turns (unsolved):\n";
  for (const auto& [k, v] : r.turns_failure) out += "  " + std::to_string(k) + ": " + std::to_string(v) + "\n";
  out += "\nsoliloquy steps: " + std::to_string(r.soliloquy_steps) + " (" + fmt(100.0 * r.soliloquy_fraction, 1) +
         "%)\n";
  out += "leaked solves: " + std::to_string(r.leaked) + "\n";
  out += "\naverage cost per solved challenge:\n";
  for (const auto& [k, v] : r.cost_per_solved) out += "  " + k + ": $" + fmt(v, 4) + "\n";
  if (!r.unknown_commands.empty()) out += "\nunregistered commands (counted as shell): " + text::join(r.unknown_commands, ", ") + "\n";
  return out;
}

json to_json(const TransitionStats& s) {
  json arr = json::array();
  for (const auto& [k, c] : s.counts)
    arr.push_back({{"from", k.first}, {"to", k.second}, {"count", c}, {"probability", s.probabilities.at(k)}});
  return arr;
}

std::string to_text(const TransitionStats& s) {
  std::string out;
  for (const auto& [k, c] : s.counts)
    out += k.first + " -> " + k.second + ": " + std::to_string(c) + " (" + fmt(s.probabilities.at(k), 3) + ")\n";
  if (out.empty()) out = "no transitions\n";
  return out;
}

}  // namespace ctfagent::analyzer
