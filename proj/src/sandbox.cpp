#include "ctfagent/sandbox.hpp"

#include <algorithm>
#include <chrono>
#include <csignal>
#include <random>
#include <stdexcept>

#include <spdlog/spdlog.h>

#include "ctfagent/text.hpp"

namespace ctfagent {

using Clock = std::chrono::steady_clock;
using std::chrono::milliseconds;

void ExecLimits::validate() const {
  if (!(no_output_timeout > 0.0) || !(no_output_timeout <= overall_timeout))
    throw std::invalid_argument("exec limits require 0 < no_output_timeout <= overall_timeout");
}

std::string no_output_timeout_message(double seconds) {
  return "EXECUTION TIMED OUT BECAUSE NO OUTPUT WAS PRODUCED FOR MORE THAN " + text::format_seconds(seconds) +
         " SECONDS.\nPLEASE REFINE YOUR RUNNING COMMAND SO IT WILL PRODUCE OUTPUT IN THE SPECIFIED TIME FRAME.";
}

std::string overall_timeout_message(double seconds) {
  return "EXECUTION TIMED OUT BECAUSE THE COMMAND RAN FOR MORE THAN " + text::format_seconds(seconds) +
         " SECONDS.\nPLEASE REFINE YOUR RUNNING COMMAND SO IT WILL FINISH IN THE SPECIFIED TIME FRAME.";
}

std::string sentinel_prefix(std::string_view token) { return "<<CTFAGENT-SENTINEL:" + std::string(token) + ">>"; }

namespace {

std::string random_token() {
  std::random_device rd;
  std::mt19937_64 rng{(static_cast<std::uint64_t>(rd()) << 32) ^ rd()};
  static constexpr char digits[] = "0123456789abcdef";
  std::string out;
  for (int i = 0; i < 32; ++i) out.push_back(digits[rng() % 16]);
  return out;
}

milliseconds to_ms(double seconds) { return milliseconds(static_cast<long long>(seconds * 1000.0)); }

std::string strip_trailing_newlines(std::string s) {
  while (!s.empty() && (s.back() == '\n' || s.back() == '\r')) s.pop_back();
  return s;
}

}  // namespace

std::unique_ptr<Environment> Environment::start(const Challenge& challenge, const EnvConfig& cfg) {
  std::unique_ptr<Environment> env(new Environment());
  env->runtime_ = start_runtime(challenge, cfg.runtime);
  env->sentinel_ = random_token();
  env->marker_prefix_ = "__CTFAGENT_DONE_" + random_token() + "_";

  env->state_file_ = "/tmp/.ctfagent-shell-" + random_token();

  std::string boot = "export PS1= PS2= TERM=dumb PAGER=cat MANPAGER=cat GIT_PAGER=cat\n";
  if (auto tools = env->runtime_->tools_path()) boot += "export PATH=" + text::shell_quote(*tools) + ":\"$PATH\"\n";
  boot += "export CTFAGENT_SENTINEL=" + text::shell_quote(sentinel_prefix(env->sentinel_)) + "\n";
  boot += "export CURRENT_FILE= CURRENT_LINE=0 WINDOW=100\n";
  // fallbacks when the toolset does not ship its own emitters
  boot +=
      "command -v submit >/dev/null 2>&1 || submit() { if [ $# -lt 1 ]; then echo \"Usage: submit '<flag>'\"; "
      "return 1; fi; printf '%s submit %s\\n' \"$CTFAGENT_SENTINEL\" \"$1\"; }\n";
  boot +=
      "command -v exit_forfeit >/dev/null 2>&1 || exit_forfeit() { printf '%s forfeit \\n' "
      "\"$CTFAGENT_SENTINEL\"; }\n";
  boot += "cd " + text::shell_quote(env->runtime_->workdir()) + "\n";
  env->boot_ = std::move(boot);

  try {
    env->spawn_shell(false);
  } catch (...) {
    env->stop();
    throw;
  }
  const ExecLimits boot_limits{30.0, 30.0};

  if (cfg.probe_server && challenge.info().server) {
    const auto& s = *challenge.info().server;
    auto probe = env->run("timeout 3 bash -c " +
                              text::shell_quote("</dev/tcp/" + s.host + "/" + std::to_string(s.port)) +
                              " >/dev/null 2>&1; echo $?",
                          boot_limits);
    if (text::trim(probe.output) != "0")
      spdlog::warn("challenge server {}:{} is not reachable from the sandbox", s.host, s.port);
  }
  return env;
}

void Environment::spawn_shell(bool restore) {
  try {
    shell_ = std::make_unique<process::Subprocess>(runtime_->command({"bash", "--noprofile", "--norc"}, false));
  } catch (const std::exception& e) {
    throw EnvironmentError(EnvironmentError::Kind::start_failed, std::string("cannot start shell: ") + e.what());
  }
  std::string boot = boot_;
  if (restore) boot += "[ -f " + text::shell_quote(state_file_) + " ] && . " + text::shell_quote(state_file_) + "\n";
  boot += "echo $$";
  ExecResult r = run(boot, ExecLimits{30.0, 30.0});
  try {
    shell_pid_ = static_cast<pid_t>(std::stol(std::string(text::trim(r.output))));
  } catch (const std::exception&) {
    throw EnvironmentError(EnvironmentError::Kind::start_failed, "unexpected shell bootstrap output: " + r.output);
  }
}

Environment::~Environment() {
  try {
    stop();
  } catch (...) {
  }
}

ExecResult Environment::run(std::string_view command, const ExecLimits& limits) {
  if (!shell_) throw EnvironmentError(EnvironmentError::Kind::shell_died, "the shell is not running");
  const std::string marker = marker_prefix_ + std::to_string(++counter_);
  std::string payload = "{\n";
  payload += command;
  payload += "\n} < /dev/null\n__ctfagent_rc=$?\n";
  if (!state_file_.empty())
    payload += "{ export -p; printf 'cd -- %q\\n' \"$PWD\"; } > " + text::shell_quote(state_file_) + " 2>/dev/null\n";
  payload += "printf '\\n%s:%s\\n' '" + marker + "' \"$__ctfagent_rc\"\n";

  auto die = [this]() -> EnvironmentError {
    shell_.reset();
    return EnvironmentError(EnvironmentError::Kind::shell_died, "the shell exited");
  };
  if (!shell_->write_all(payload)) throw die();

  const std::string needle = "\n" + marker + ":";
  const auto start = Clock::now();
  auto last_byte = start;
  std::string buf;
  ExecResult result;

  auto find_marker = [&](const std::string& b, std::size_t& pos, int& code) {
    pos = b.find(needle);
    if (pos == std::string::npos) return false;
    auto eol = b.find('\n', pos + needle.size());
    if (eol == std::string::npos) return false;
    try {
      code = std::stoi(b.substr(pos + needle.size(), eol - pos - needle.size()));
    } catch (const std::exception&) {
      code = -1;
    }
    return true;
  };

  std::size_t pos = 0;
  int code = 0;
  for (;;) {
    if (find_marker(buf, pos, code)) {
      result.output = buf.substr(0, pos);
      result.exit_code = code;
      break;
    }
    const auto now = Clock::now();
    const auto idle_deadline = last_byte + to_ms(limits.no_output_timeout);
    const auto hard_deadline = start + to_ms(limits.overall_timeout);
    if (now >= idle_deadline || now >= hard_deadline) {
      result.timed_out = true;
      result.no_output_timeout_fired = now >= idle_deadline;
      std::string before = buf;
      runtime_->kill_descendants(shell_pid_ > 0 ? shell_pid_ : shell_->pid());
      // drain until the shell reports back; output after the timeout is discarded
      const auto drain_deadline = Clock::now() + std::chrono::seconds(3);
      bool recovered = false;
      while (Clock::now() < drain_deadline) {
        auto chunk = shell_->read_some(milliseconds(100));
        if (chunk.eof) throw die();
        buf += chunk.data;
        if (find_marker(buf, pos, code)) {
          recovered = true;
          break;
        }
        runtime_->kill_descendants(shell_pid_ > 0 ? shell_pid_ : shell_->pid());
      }
      if (!recovered) {
        // the command runs inside the shell itself (a builtin loop); replace the shell
        shell_->kill_group(SIGKILL);
        shell_->wait();
        shell_.reset();
        spawn_shell(true);
        result.shell_restarted = true;
        code = -1;
      }
      // the partial marker line may already be in `before`
      if (auto cut = before.find(needle); cut != std::string::npos) before.resize(cut);
      result.output = std::move(before);
      result.exit_code = code;
      break;
    }
    auto wait = std::min(idle_deadline, hard_deadline) - now;
    auto wait_ms = std::clamp(std::chrono::duration_cast<milliseconds>(wait), milliseconds(1), milliseconds(100));
    auto chunk = shell_->read_some(wait_ms);
    if (chunk.eof) throw die();
    if (!chunk.data.empty()) {
      buf += chunk.data;
      last_byte = Clock::now();
    }
  }
  result.duration = std::chrono::duration<double>(Clock::now() - start).count();
  return result;
}

ExecResult Environment::exec(std::string_view command, const ExecLimits& limits) {
  limits.validate();
  // a syntax error would leave the persistent shell waiting for more input
  auto syntax = process::run_capture({"bash", "-n", "-c", std::string(command)}, {}, std::chrono::seconds(10));
  if (syntax.exit_code != 0) {
    ExecResult r;
    r.output = text::to_valid_utf8(strip_trailing_newlines(syntax.output));
    r.exit_code = 2;
    return r;
  }

  ExecResult r = run(command, limits);
  std::string out = text::to_valid_utf8(strip_trailing_newlines(std::move(r.output)));
  if (r.timed_out) {
    if (!out.empty()) out += "\n";
    out += r.no_output_timeout_fired ? no_output_timeout_message(limits.no_output_timeout)
                                     : overall_timeout_message(limits.overall_timeout);
    if (r.shell_restarted) out += "\n" + std::string(kShellRestarted);
  } else if (out.empty()) {
    out = kNoOutputObservation;
  }
  r.output = std::move(out);
  return r;
}

ShellState Environment::state() {
  ShellState st;
  auto r = run("printf '%s\\n%s\\n' \"$PWD\" \"${CURRENT_FILE:-}\"", ExecLimits{30.0, 30.0});
  auto lines = text::split_lines(r.output);
  if (!lines.empty()) st.cwd = text::to_valid_utf8(lines[0]);
  if (lines.size() > 1 && !lines[1].empty()) st.open_file = text::to_valid_utf8(lines[1]);
  if (session_ && session_->proc && !session_->proc->exited()) st.interactive_session = session_->descriptor;
  return st;
}

void Environment::set_open_file(const std::string& path, int line) {
  run("export CURRENT_FILE=" + text::shell_quote(path) + " CURRENT_LINE=" + std::to_string(line),
      ExecLimits{30.0, 30.0});
}

ActiveSession* Environment::session() { return session_ ? &*session_ : nullptr; }

void Environment::attach_session(ActiveSession session) {
  reap_session();
  session_ = std::move(session);
}

void Environment::reap_session() {
  if (!session_) return;
  if (session_->proc) session_->proc->terminate(milliseconds(500));
  session_.reset();
}

void Environment::stop() {
  reap_session();
  if (shell_ && !state_file_.empty()) {
    try {
      run("rm -f " + text::shell_quote(state_file_), ExecLimits{5.0, 5.0});
    } catch (const std::exception&) {
    }
  }
  if (shell_) {
    shell_->close_stdin();
    if (runtime_) runtime_->kill_descendants(shell_pid_ > 0 ? shell_pid_ : shell_->pid());
    shell_->kill_group(SIGKILL);
    shell_->wait();
    shell_.reset();
  }
  if (runtime_) runtime_->stop();
}

}  // namespace ctfagent
