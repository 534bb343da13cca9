// Acceptance checks: one PASS/FAIL line per criterion. Exit status is nonzero if any fails.
#include <httplib.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <mutex>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "ctfagent/agent.hpp"
#include "ctfagent/analyzer.hpp"
#include "ctfagent/iat.hpp"
#include "ctfagent/parser.hpp"
#include "ctfagent/summarizer.hpp"
#include "ctfagent/text.hpp"
#include "test_support.hpp"

using namespace ctfagent;
using namespace testsupport;
using nlohmann::json;

namespace {

// Tolerances.
constexpr double kToyMaxSeconds = 30.0;
constexpr std::size_t kToyTurns = 6;
constexpr double kNoOutputLimit = 3.0;
constexpr double kNoOutputSlack = 1.0;
constexpr double kBudget = 3.00;
constexpr double kLedgerTolerance = 1e-9;
constexpr std::size_t kWindowLength = 105;
constexpr std::size_t kMaxSummarizedLines = 113;
constexpr std::size_t kSoliloquyCases = 200;
constexpr std::size_t kHistoryStep = 8;
constexpr std::size_t kHistoryWindow = 5;
constexpr std::size_t kCorpusSteps = 1000;
constexpr double kProbabilityTolerance = 1e-12;

const std::string kRefusal =
    "Interactive session already open. Please close the current interactive session: connect with the command: "
    "`connect_stop`";
const std::string kNoOutputSentence300 =
    "EXECUTION TIMED OUT BECAUSE NO OUTPUT WAS PRODUCED FOR MORE THAN 300.0 SECONDS.";

struct Check {
  bool ok = true;
  std::ostringstream why;

  void expect(bool cond, const std::string& what) {
    if (!cond) {
      if (!ok) why << "; ";
      why << what;
      ok = false;
    }
  }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fixture_model(const std::string& f) { return (source_dir() / "fixtures" / "models" / f).string(); }
fs::path toy_dir() { return source_dir() / "challenges" / "toy_xor"; }

std::optional<std::string> echo_reply(const std::string& line) { return "echo:" + line + "\n"; }

struct Live {
  TempDir tmp;
  Challenge ch = simple_challenge(tmp.path());
  std::unique_ptr<Environment> env = Environment::start(ch, env_config(tmp / "ws"));
  iat::InteractiveTools tools;
  ExecLimits limits{30, 10};

  iat::Outcome action(const std::string& line) { return tools.run(*env, *iat::translate_command(line), limits); }
};

// 1
void toy_xor_end_to_end(Check& c) {
  TempDir tmp;
  std::string first;
  for (const char* name : {"a.jsonl", "b.jsonl"}) {
    const auto t0 = std::chrono::steady_clock::now();
    auto r = run_cli({"run", "--challenge", toy_dir().string(), "--model", fixture_model("toy_xor.json"), "--out",
                      (tmp / name).string(), "--workspace-root", (tmp / "ws").string()});
    const double secs = seconds_since(t0);
    c.expect(r.exit_code == 0, "cli exit code " + std::to_string(r.exit_code));
    c.expect(r.output.find("exit_status: submitted") != std::string::npos, "not submitted");
    c.expect(secs < kToyMaxSeconds, "took " + std::to_string(secs) + " s");
    auto t = read_trajectory(tmp / name);
    c.expect(t.solved() && t.steps.size() == kToyTurns && t.footer->turns == kToyTurns,
             "turns " + std::to_string(t.steps.size()));
    const std::string bytes = read_file(tmp / name);
    if (first.empty()) first = bytes;
    else c.expect(bytes == first, "trajectories differ between runs");
  }
}

// 2
void non_blocking_iat(Check& c) {
  StubServer stub("Welcome to the stub\n", echo_reply);
  Live l;
  auto o = l.action("connect_start 127.0.0.1 " + std::to_string(stub.port()));
  c.expect(!o.refused && !o.session_ended, "session did not start: " + o.output);
  c.expect(l.env->state().interactive_session.starts_with("connect"), "state lacks session after start");
  auto r = l.env->exec("echo hi", l.limits);
  c.expect(r.output == "hi", "echo hi returned '" + r.output + "'");
  c.expect(!r.timed_out, "echo hi timed out");
  c.expect(l.env->state().interactive_session.starts_with("connect"), "state lacks session after shell command");
  o = l.action("connect_sendline ping");
  c.expect(o.output.find("echo:ping") != std::string::npos, "no stub reply after shell command: " + o.output);
  c.expect(l.env->state().interactive_session.starts_with("connect"), "state lacks session after send");
}

std::string hex(const std::string& s) {
  std::string out;
  char buf[4];
  for (unsigned char ch : s) {
    std::snprintf(buf, sizeof buf, "%02x ", ch);
    out += buf;
  }
  return out;
}

// 3
void byte_fidelity(Check& c) {
  StubServer stub("Welcome to the stub\n");
  Live l;
  l.action("connect_start 127.0.0.1 " + std::to_string(stub.port()));
  l.action("connect_sendline \\x00\\x41\\xff");
  stub.wait_for_bytes(4, std::chrono::seconds(5));
  const std::string expected("\x00\x41\xff\x0a", 4);
  const std::string got = stub.received();
  c.expect(got == expected, "stub captured " + hex(got));
}

// 4
void timeouts(Check& c) {
  Live l;
  c.expect(no_output_timeout_message(300.0).starts_with(kNoOutputSentence300 + "\n"), "sentence wording");
  const std::string sentence = "EXECUTION TIMED OUT BECAUSE NO OUTPUT WAS PRODUCED FOR MORE THAN 3.0 SECONDS.";

  auto t0 = std::chrono::steady_clock::now();
  auto r = l.env->exec("sleep 10", {60, kNoOutputLimit});
  double secs = seconds_since(t0);
  c.expect(r.no_output_timeout_fired, "sleep 10 did not fire");
  c.expect(std::abs(secs - kNoOutputLimit) <= kNoOutputSlack, "fired after " + std::to_string(secs) + " s");
  c.expect(r.output == no_output_timeout_message(kNoOutputLimit) && r.output.starts_with(sentence + "\n"),
           "observation '" + r.output + "'");

  r = l.env->exec("for i in 1 2 3 4 5 6; do echo tick $i; sleep 1; done", {60, kNoOutputLimit});
  c.expect(!r.timed_out && !r.no_output_timeout_fired, "1 Hz printer was stopped");
  c.expect(r.output == "tick 1\ntick 2\ntick 3\ntick 4\ntick 5\ntick 6", "printer output '" + r.output + "'");

  r = l.env->exec("printf 'part\\x01ial  \\n  output'; sleep 10", {60, kNoOutputLimit});
  c.expect(r.no_output_timeout_fired, "partial-output case did not fire");
  c.expect(r.output == "part\x01ial  \n  output\n" + no_output_timeout_message(kNoOutputLimit),
           "partial output altered: '" + r.output + "'");
  c.expect(l.env->exec("echo alive", l.limits).output == "alive", "shell unusable after timeouts");
}

// 5
void single_session(Check& c) {
  StubServer stub("Welcome to the stub\n", echo_reply);
  Live l;
  const std::string start = "connect_start 127.0.0.1 " + std::to_string(stub.port());
  l.action(start);
  auto o = l.action(start);
  c.expect(o.refused, "second start not refused");
  c.expect(o.output == kRefusal, "refusal text '" + o.output + "'");
  c.expect(stub.connections() == 1, "second connection opened");
  o = l.action("connect_sendline still");
  c.expect(o.output.find("echo:still") != std::string::npos, "first session not alive: " + o.output);
}

class MemorySink final : public SpillSink {
 public:
  std::string output_dir() const override { return "/output"; }
  void write_file(const std::string& path, std::string_view bytes) override { files[path] = std::string(bytes); }
  void open_file(const std::string&, int) override {}
  std::map<std::string, std::string> files;
};

// 6
void summarizer_boundary(Check& c) {
  auto lines = [](std::size_t n) {
    std::string s;
    for (std::size_t i = 1; i <= n; ++i) s += "0000" + std::to_string(i) + ": 7f45 4c46 \x01\t \n";
    return s;
  };
  ChallengeInfo info;
  info.name = "rebuilding";
  MemorySink sink;
  SummarizerConfig cfg;
  cfg.window_length = kWindowLength;
  Summarizer s(cfg);
  const std::string at = lines(kWindowLength);
  auto r = s.summarize(at, "xxd rebuilding", info, sink);
  c.expect(r.text == at && !r.spill_path && sink.files.empty(), "105 lines were altered");

  const std::string over = lines(kWindowLength + 1);
  r = s.summarize(over, "xxd rebuilding", info, sink);
  c.expect(r.spill_path.has_value(), "106 lines did not spill");
  if (!r.spill_path) return;
  c.expect(sink.files[*r.spill_path] == over, "spilled bytes differ from input");
  c.expect(r.text.starts_with("Warning: Command output exceeded window, saved command to a file " + *r.spill_path +
                              " and opened the file at line 1."),
           "warning missing");
  c.expect(text::count_lines(r.text) <= kMaxSummarizedLines,
           "returned " + std::to_string(text::count_lines(r.text)) + " lines");
}

// 7
void soliloquy_truth_table(Check& c) {
  const std::vector<std::string> markers = {"(Open file: /a.py)", "(Current directory: /chal)",
                                            "(Interactive session: n/a)", "[File: /a.py (3 lines total)]", "bash-$"};
  std::mt19937 rng(2024);
  std::size_t failures = 0;
  for (std::size_t i = 0; i < kSoliloquyCases; ++i) {
    const std::size_t blocks = 1 + i % 3;
    const std::size_t nmarkers = (i / 3) % 7;
    std::vector<std::string> pieces;
    for (std::size_t b = 0; b < blocks; ++b) pieces.push_back("```\necho step" + std::to_string(b) + "\n```");
    for (std::size_t m = 0; m < nmarkers; ++m) pieces.push_back(markers[rng() % markers.size()]);
    std::shuffle(pieces.begin() + 1, pieces.end(), rng);
    std::string raw = "DISCUSSION\ncase " + std::to_string(i);
    for (const auto& p : pieces) raw += "\n" + p + (rng() % 2 ? "\nfiller text" : "");
    const bool expected = blocks > 1 && nmarkers >= 4;
    const auto rep = soliloquy_report(raw);
    const bool ok = is_soliloquy(raw) == expected && rep.soliloquy == expected && rep.blocks == blocks &&
                    rep.markers == nmarkers && !is_soliloquy(truncate_after_first_action(raw));
    if (!ok) ++failures;
  }
  c.expect(failures == 0, std::to_string(failures) + " of 200 cases wrong");
}

Trajectory leak_traj(const std::vector<std::string>& actions) {
  Trajectory t;
  t.header.challenge.name = "chal";
  t.header.gold_flag = "flag{gold}";
  for (std::size_t i = 0; i < actions.size(); ++i) {
    Step s;
    s.index = i;
    s.action = actions[i];
    s.raw_response = "DISCUSSION\n```\n" + actions[i] + "\n```";
    s.observation = "ok";
    t.steps.push_back(s);
  }
  t.footer = TrajectoryFooter{ExitStatus::submitted, {}, actions.size(), ""};
  return t;
}

// 8
void leakage(Check& c) {
  using analyzer::LeakageRule;
  auto single = analyzer::detect_leakage(leak_traj({"submit 'flag{gold}'"}));
  c.expect(single.leaked && single.rule == LeakageRule::single_step, "single-step solve not flagged");

  auto observed = leak_traj({"ls", "python3 solve.py", "submit 'flag{gold}'"});
  observed.steps[1].observation = "flag{gold}";
  c.expect(!analyzer::detect_leakage(observed).leaked, "observed flag flagged");

  auto soliloquy = leak_traj({"ls", "python3 solve.py", "submit 'flag{gold}'"});
  soliloquy.steps[1].raw_response =
      "DISCUSSION\n```\npython3 solve.py\n```\n(Open file: n/a)\n(Current directory: /chal)\n"
      "(Interactive session: n/a)\nbash-$ flag{gold}\n```\nsubmit 'flag{gold}'\n```";
  auto v = analyzer::detect_leakage(soliloquy);
  c.expect(v.leaked && v.rule == LeakageRule::flag_never_observed, "soliloquized flag not flagged by rule 2");
}

// 9
void budget(Check& c) {
  TempDir tmp;
  const ModelConfig m = load_model_config(fixture_model("looping.json"));
  RunConfig cfg = run_config(tmp / "ws");
  cfg.budget = kBudget;
  cfg.max_turns = 10000;
  auto r = run_episode(load_challenge(toy_dir()), m, cfg, tmp / "t.jsonl");
  c.expect(r.exit_status == ExitStatus::exit_cost, "exit " + std::string(to_string(r.exit_status)));
  const auto& ledger = r.trajectory.footer->ledger;
  // every looping response reports 100000 input and 10000 output tokens
  const double one = 100000 * m.price_in + 10000 * m.price_out;
  c.expect(ledger.dollars >= kBudget && ledger.dollars <= kBudget + one + kLedgerTolerance,
           "dollars " + std::to_string(ledger.dollars));
  double hand = 0;
  for (const auto& s : r.trajectory.steps)
    hand += static_cast<double>(s.usage.tokens_in) * m.price_in + static_cast<double>(s.usage.tokens_out) * m.price_out;
  hand += one;  // the response that crossed the budget is charged but not executed
  c.expect(std::abs(ledger.dollars - hand) <= kLedgerTolerance, "ledger differs from hand computation");
  CostLedger l;
  l.charge({1000, 500}, 2.0 / 1e6, 6.0 / 1e6);
  c.expect(std::abs(l.dollars - 0.005) <= kLedgerTolerance, "1000/500 tokens at $2/$6 per M != 0.005");
}

// Chat-completions endpoint that replays fixed responses and records request bodies.
struct ScriptedApi {
  httplib::Server server;
  std::thread thread;
  int port = 0;
  std::vector<std::string> responses;
  std::vector<json> bodies;
  std::mutex mu;

  explicit ScriptedApi(std::vector<std::string> r) : responses(std::move(r)) {
    server.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      std::lock_guard lk(mu);
      const std::size_t i = bodies.size();
      bodies.push_back(json::parse(req.body));
      json reply = {{"choices", {{{"message", {{"role", "assistant"}, {"content", responses.at(i)}}}}}},
                    {"usage", {{"prompt_tokens", 10}, {"completion_tokens", 5}}}};
      res.set_content(reply.dump(), "application/json");
    });
    port = server.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  ~ScriptedApi() {
    server.stop();
    thread.join();
  }
};

// 10
void history(Check& c) {
  TempDir tmp;
  std::vector<std::string> responses;
  for (std::size_t k = 1; k <= kHistoryStep; ++k)
    responses.push_back(block("DISCUSSION", "printf 'OBSV_%d\\n' " + std::to_string(k)));
  responses.push_back(block("DISCUSSION", "exit_forfeit"));
  ScriptedApi api(responses);
  ModelConfig m;
  m.backend = Backend::http_api;
  m.model_name = "scripted";
  m.endpoint = "http://127.0.0.1:" + std::to_string(api.port);
  m.api_key_env = "CTFAGENT_ACCEPTANCE_KEY";
  m.max_retries = 1;
  ::setenv("CTFAGENT_ACCEPTANCE_KEY", "k", 1);
  RunConfig cfg = run_config(tmp / "ws");
  cfg.history.full_observation_window = kHistoryWindow;
  auto r = run_episode(simple_challenge(tmp.path()), m, cfg, tmp / "t.jsonl");
  c.expect(r.exit_status == ExitStatus::exit_forfeit, "run did not finish");
  if (api.bodies.size() <= kHistoryStep) {
    c.expect(false, "too few queries");
    return;
  }
  std::size_t verbatim = 0, stubs = 0;
  std::set<std::size_t> kept;
  for (const auto& msg : api.bodies[kHistoryStep].at("messages")) {
    if (msg.at("role") != "user") continue;
    const std::string content = msg.at("content");
    for (std::size_t k = 1; k <= kHistoryStep; ++k)
      if (content.find("OBSV_" + std::to_string(k) + "\n") != std::string::npos) {
        ++verbatim;
        kept.insert(k);
      }
    if (content.find(elision_stub("OBSV_1")) != std::string::npos) ++stubs;
  }
  c.expect(verbatim == kHistoryWindow, std::to_string(verbatim) + " verbatim observations");
  c.expect(stubs == kHistoryStep - kHistoryWindow, std::to_string(stubs) + " stubs");
  c.expect(kept == std::set<std::size_t>{4, 5, 6, 7, 8}, "wrong observations kept");
}

// 11
void transitions(Check& c) {
  const std::vector<std::string> pool = {"debug_start ./a", "debug_add_breakpoint main", "debug_continue",
                                         "debug_step",      "debug_exec 'info regs'",   "debug_stop",
                                         "ls",              "open a.c",                 "decompile a"};
  const std::set<std::string> debug_verbs = {"debug_start", "debug_add_breakpoint", "debug_continue",
                                             "debug_step",  "debug_exec",           "debug_stop"};
  std::mt19937 rng(77);
  std::vector<Trajectory> corpus;
  std::size_t total = 0;
  while (total < kCorpusSteps) {
    const std::size_t n = std::min<std::size_t>(1 + rng() % 50, kCorpusSteps - total);
    std::vector<std::string> a;
    for (std::size_t i = 0; i < n; ++i) a.push_back(pool[rng() % pool.size()]);
    corpus.push_back(leak_traj(a));
    total += n;
  }
  auto verb = [](const std::string& s) { return s.substr(0, s.find(' ')); };
  std::map<std::pair<std::string, std::string>, std::size_t> brute;
  std::map<std::string, std::size_t> rows;
  for (const auto& t : corpus)
    for (std::size_t i = 0; i + 1 < t.steps.size(); ++i) {
      const auto a = verb(t.steps[i].action), b = verb(t.steps[i + 1].action);
      if (debug_verbs.contains(a) && debug_verbs.contains(b)) {
        ++brute[{a, b}];
        ++rows[a];
      }
    }
  auto st = analyzer::transition_stats(corpus, ActionCategory::debug);
  c.expect(st.counts == brute, "counts differ from brute force");
  bool probs = st.probabilities.size() == brute.size();
  for (const auto& [k, n] : brute)
    probs = probs && std::abs(st.probability(k.first, k.second) -
                              static_cast<double>(n) / static_cast<double>(rows[k.first])) <= kProbabilityTolerance;
  c.expect(probs, "probabilities differ from brute force");

  auto fixture = leak_traj({"debug_start ./a", "debug_add_breakpoint main", "debug_continue", "debug_add_breakpoint f",
                            "debug_continue", "debug_add_breakpoint g", "debug_continue", "debug_add_breakpoint h",
                            "debug_step"});
  const double p =
      analyzer::transition_stats({fixture}, ActionCategory::debug).probability("debug_add_breakpoint", "debug_continue");
  c.expect(p == 0.75, "breakpoint -> continue = " + std::to_string(p));
}

// 12
void exit_totality(Check& c) {
  struct Fault {
    std::string name;
    ExitStatus expected;
    std::function<void(ModelConfig&, RunConfig&, const fs::path&)> setup;
  };
  const std::string ls = block("DISCUSSION", "ls");
  const std::vector<Fault> faults = {
      {"shell kill", ExitStatus::exit_agent_error,
       [](ModelConfig& m, RunConfig&, const fs::path& d) { m = mock_model(d, {block("DISCUSSION", "kill -9 $$")}); }},
      {"malformed x2", ExitStatus::exit_format,
       [](ModelConfig& m, RunConfig&, const fs::path& d) { m = mock_model(d, {"no block", "no block"}); }},
      {"forfeit", ExitStatus::exit_forfeit,
       [](ModelConfig& m, RunConfig&, const fs::path& d) { m = mock_model(d, {block("DISCUSSION", "exit_forfeit")}); }},
      {"context overflow", ExitStatus::exit_context,
       [&](ModelConfig& m, RunConfig&, const fs::path& d) {
         m = mock_model(d, {ls}, true);
         m.context_limit = 200;
       }},
      {"budget burn", ExitStatus::exit_cost,
       [&](ModelConfig& m, RunConfig& r, const fs::path& d) {
         m = mock_model(d, {ls}, true, 1e-3, 1e-3);
         r.max_turns = 100000;
       }},
      {"turn cap", ExitStatus::early_exit,
       [&](ModelConfig& m, RunConfig& r, const fs::path& d) {
         m = mock_model(d, {ls}, true);
         r.max_turns = 4;
       }},
  };
  std::set<ExitStatus> seen;
  for (const auto& f : faults) {
    TempDir tmp;
    ModelConfig m;
    RunConfig r = run_config(tmp / "ws");
    f.setup(m, r, tmp / "m");
    auto res = run_episode(simple_challenge(tmp.path()), m, r, tmp / "t.jsonl");
    const auto t = read_trajectory(tmp / "t.jsonl");
    c.expect(res.exit_status == f.expected && t.footer && t.footer->exit_status == f.expected,
             f.name + " -> " + std::string(to_string(res.exit_status)));
    seen.insert(res.exit_status);
  }
  c.expect(seen.size() == faults.size(), "faults share a status");
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<void(Check&)>>> criteria = {
      {"toy_xor end to end: submitted in 6 turns, identical trajectories, under 30 s", toy_xor_end_to_end},
      {"non-blocking interactive session alongside the shell", non_blocking_iat},
      {"byte fidelity of connect_sendline escapes", byte_fidelity},
      {"no-output timeout fires at 3+-1 s, 1 Hz printer survives, partial output kept", timeouts},
      {"single interactive session: refusal text, first session alive", single_session},
      {"summarizer boundary at 105/106 lines", summarizer_boundary},
      {"soliloquy truth table over 200 cases", soliloquy_truth_table},
      {"leakage rules", leakage},
      {"budget exit within one response of $3.00, ledger exact", budget},
      {"history at step 8 with window 5: 5 verbatim, 3 stubs", history},
      {"transition statistics equal brute force, fixture 0.75", transitions},
      {"every fault maps to exactly one exit status", exit_totality},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Check c;
    try {
      criteria[i].second(c);
    } catch (const std::exception& e) {
      c.expect(false, std::string("exception: ") + e.what());
    }
    std::printf("%s  %2zu  %s%s%s\n", c.ok ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(),
                c.ok ? "" : "  -- ", c.ok ? "" : c.why.str().c_str());
    std::fflush(stdout);
    failed += !c.ok;
  }
  std::printf("%zu/%zu criteria passed\n", criteria.size() - failed, criteria.size());
  return failed ? 1 : 0;
}
