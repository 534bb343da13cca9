#include "ctfagent/iat.hpp"

#include <stdexcept>

#include "ctfagent/commands.hpp"
#include "ctfagent/text.hpp"

namespace ctfagent::iat {

using std::chrono::milliseconds;

void SessionRegistry::add(SessionSpec spec) {
  if (specs_.contains(spec.tool)) throw std::invalid_argument("interactive tool already registered: " + spec.tool);
  auto key = spec.tool;
  specs_.emplace(std::move(key), std::move(spec));
}

const SessionSpec* SessionRegistry::find(std::string_view tool) const {
  auto it = specs_.find(tool);
  return it == specs_.end() ? nullptr : &it->second;
}

std::vector<std::string> SessionRegistry::tools() const {
  std::vector<std::string> out;
  for (const auto& [k, _] : specs_) out.push_back(k);
  return out;
}

SessionRegistry SessionRegistry::defaults() {
  SessionRegistry r;
  SessionSpec gdb;
  gdb.tool = "debug";
  gdb.session_name = "gdb";
  gdb.launch_argv = {"gdb", "-q", "-nx", "-iex", "set editing off", "-iex", "set confirm off", "-iex",
                     "set pagination off", "-iex", "set width 0", "-iex", "set height 0", "{target}"};
  gdb.init_lines = {"starti {args}"};
  gdb.descriptor = "gdb {target}";
  gdb.stop_line = "quit";
  gdb.prompt = "(gdb) ";
  gdb.interrupt = "\x03";
  r.add(std::move(gdb));

  SessionSpec conn;
  conn.tool = "connect";
  conn.session_name = "connect";
  conn.launch_argv = {"connect_repl", "{host}", "{port}"};
  conn.descriptor = "connect {host} {port}";
  conn.stop_line = "stop";
  conn.min_start_args = 2;
  conn.max_start_args = 2;
  conn.wrap_response = true;
  r.add(std::move(conn));
  return r;
}

namespace {

// POSIX-style word splitting with quote removal; nullopt on an unterminated quote.
std::optional<std::vector<std::string>> split_words(std::string_view s, bool backslash_escapes) {
  std::vector<std::string> words;
  std::string cur;
  bool in_word = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    char c = s[i];
    if (c == ' ' || c == '\t' || c == '\n') {
      if (in_word) words.push_back(std::exchange(cur, {}));
      in_word = false;
      continue;
    }
    in_word = true;
    if (c == '\'') {
      auto end = s.find('\'', i + 1);
      if (end == std::string_view::npos) return std::nullopt;
      cur.append(s.substr(i + 1, end - i - 1));
      i = end;
    } else if (c == '"') {
      std::size_t j = i + 1;
      for (; j < s.size() && s[j] != '"'; ++j) {
        if (s[j] == '\\' && j + 1 < s.size() && std::string_view("$`\"\\").find(s[j + 1]) != std::string_view::npos) {
          cur.push_back(s[++j]);
        } else {
          cur.push_back(s[j]);
        }
      }
      if (j >= s.size()) return std::nullopt;
      i = j;
    } else if (c == '\\' && backslash_escapes && i + 1 < s.size()) {
      cur.push_back(s[++i]);
    } else {
      cur.push_back(c);
    }
  }
  if (in_word) words.push_back(std::move(cur));
  return words;
}

std::string usage(const CommandDoc& c) {
  std::string out = "Usage: " + std::string(c.name);
  if (!c.signature.empty()) out += " " + std::string(c.signature);
  out += "\n" + std::string(c.docstring);
  return out;
}

bool is_positive_int(std::string_view s) {
  if (s.empty() || s.size() > 9 || s[0] == '0') return false;
  for (char c : s)
    if (c < '0' || c > '9') return false;
  return true;
}

bool is_port(std::string_view s) { return is_positive_int(s) && std::stol(std::string(s)) <= 65535; }

// Argument text for commands that take one free-form argument.
std::optional<std::string> free_argument(std::string_view rest, bool backslash_escapes) {
  auto words = split_words(rest, backslash_escapes);
  if (!words) return std::nullopt;
  return text::join(*words, " ");
}

int hex_value(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

std::string clean(std::string raw, const SessionSpec& spec) {
  std::string out;
  out.reserve(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (raw[i] == '\r' && i + 1 < raw.size() && raw[i + 1] == '\n') continue;
    out.push_back(raw[i]);
  }
  if (spec.prompt) {
    std::string stripped;
    std::size_t pos = 0;
    for (;;) {
      auto hit = out.find(*spec.prompt, pos);
      stripped.append(out, pos, hit == std::string::npos ? std::string::npos : hit - pos);
      if (hit == std::string::npos) break;
      pos = hit + spec.prompt->size();
    }
    out = std::move(stripped);
  }
  while (!out.empty() && (out.back() == '\n' || out.back() == '\r' || out.back() == ' ')) out.pop_back();
  return text::to_valid_utf8(out);
}

std::vector<std::pair<std::string, std::string>> placeholders(const std::vector<std::string>& args) {
  std::vector<std::string> rest(args.size() > 1 ? args.begin() + 1 : args.end(), args.end());
  return {{"target", args.empty() ? "" : args[0]},
          {"args", text::join(rest, " ")},
          {"host", args.empty() ? "" : args[0]},
          {"port", args.size() > 1 ? args[1] : ""}};
}

}  // namespace

std::optional<Directive> translate_command(std::string_view action) {
  std::string_view line = text::trim(action);
  const std::string name = command_name(line);
  const CommandDoc* doc = find_command(name);
  if (!doc || !doc->interactive) return std::nullopt;
  std::string_view rest = text::trim(line.substr(name.size()));
  const std::string tool = name.substr(0, name.find('_'));
  const std::string verb = name.substr(name.find('_') + 1);
  const Usage bad{usage(*doc)};

  if (verb == "start") {
    auto words = split_words(rest, true);
    if (!words || words->empty()) return bad;
    if (tool == "connect" && (words->size() != 2 || !is_port((*words)[1]))) return bad;
    return Start{tool, std::move(*words)};
  }
  if (verb == "stop") return Stop{tool};

  if (tool == "debug") {
    if (verb == "continue") return Send{tool, "continue"};
    if (verb == "step") {
      if (rest.empty()) return Send{tool, "stepi 1"};
      auto n = free_argument(rest, true);
      if (!n || !is_positive_int(*n)) return bad;
      return Send{tool, "stepi " + *n};
    }
    auto arg = free_argument(rest, true);
    if (!arg || arg->empty()) return bad;
    if (verb == "add_breakpoint") return Send{tool, "break " + *arg};
    return Send{tool, *arg};  // debug_exec
  }

  // connect: payload escapes are decoded by the session, so backslashes stay literal here
  auto arg = free_argument(rest, false);
  if (!arg) return bad;
  if (arg->find('\n') != std::string::npos) return bad;
  if (verb == "sendline") return Send{tool, arg->empty() ? "sendline" : "sendline " + *arg};
  if (arg->empty()) return bad;
  return Send{tool, "exec " + *arg};
}

bool is_iat_action(std::string_view action) {
  const CommandDoc* doc = find_command(command_name(action));
  return doc && doc->interactive;
}

std::string decode_escapes(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '\\' || i + 1 >= s.size()) {
      out.push_back(s[i]);
      continue;
    }
    char n = s[i + 1];
    if (n == 'x' && i + 3 < s.size() && hex_value(s[i + 2]) >= 0 && hex_value(s[i + 3]) >= 0) {
      out.push_back(static_cast<char>(hex_value(s[i + 2]) * 16 + hex_value(s[i + 3])));
      i += 3;
      continue;
    }
    switch (n) {
      case '\\': out.push_back('\\'); break;
      case 'n': out.push_back('\n'); break;
      case 'r': out.push_back('\r'); break;
      case 't': out.push_back('\t'); break;
      case '0': out.push_back('\0'); break;
      default:
        out.push_back('\\');
        out.push_back(n);
    }
    ++i;
  }
  return out;
}

std::string encode_escapes(std::string_view bytes) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out;
  out.reserve(bytes.size());
  for (char ch : bytes) {
    auto b = static_cast<unsigned char>(ch);
    if (b >= 0x20 && b < 0x7f && b != '\\') {
      out.push_back(ch);
    } else {
      out += "\\x";
      out.push_back(digits[b >> 4]);
      out.push_back(digits[b & 0xf]);
    }
  }
  return out;
}

std::string refusal_message(const ActiveSession& s) {
  return "Interactive session already open. Please close the current interactive session: " + s.session_name +
         " with the command: `" + s.tool + "_stop`";
}

std::string stopped_message(std::string_view session_name) {
  return "Interactive session " + std::string(session_name) + " stopped successfully";
}

InteractiveTools::InteractiveTools(SessionRegistry registry, IatConfig cfg)
    : registry_(std::move(registry)), cfg_(cfg) {}

Outcome InteractiveTools::collect(Environment& env, const SessionSpec& spec, const ExecLimits& limits, bool wrap) {
  auto& proc = *env.session()->proc;
  const auto bound = milliseconds(static_cast<long long>(limits.no_output_timeout * 1000.0));
  std::function<bool(std::string_view)> done;
  if (spec.prompt) done = [&](std::string_view b) { return b.ends_with(*spec.prompt); };

  auto r = spec.prompt ? proc.wait(std::nullopt, bound, done) : proc.wait(cfg_.settle, bound);
  std::string raw = proc.take();
  Outcome o;
  if (r.timed_out) {
    o.timed_out = true;
    if (!spec.interrupt.empty() && proc.write_all(spec.interrupt)) {
      if (spec.prompt)
        proc.wait(std::nullopt, milliseconds(5000), done);
      else
        proc.wait(cfg_.settle, milliseconds(5000));
      raw += proc.take();
    }
  }
  std::string out = clean(std::move(raw), spec);
  if (wrap && spec.wrap_response && !out.empty() && out.find(kResponseBegin) == std::string::npos)
    out = std::string(kResponseBegin) + "\n" + out + "\n" + std::string(kResponseEnd);
  if (o.timed_out) {
    if (!out.empty()) out += "\n";
    out += no_output_timeout_message(limits.no_output_timeout);
  }
  if (r.exited || proc.exited()) {
    if (!out.empty()) out += "\n";
    out += kSessionFailed;
    env.reap_session();
    o.session_ended = true;
  } else if (out.empty()) {
    out = kNoOutputObservation;
  }
  o.output = std::move(out);
  return o;
}

Outcome InteractiveTools::start(Environment& env, std::string_view tool, const std::vector<std::string>& args,
                                const ExecLimits& limits) {
  limits.validate();
  const SessionSpec* spec = registry_.find(tool);
  if (!spec) return Outcome{"Unknown interactive tool: " + std::string(tool)};
  if (ActiveSession* s = env.session()) {
    if (s->proc && !s->proc->exited()) return Outcome{refusal_message(*s), true};
    env.reap_session();
  }
  if (args.size() < spec->min_start_args || args.size() > spec->max_start_args) {
    const CommandDoc* doc = find_command(spec->tool + "_start");
    return Outcome{doc ? usage(*doc) : "Wrong number of arguments for " + spec->tool + "_start"};
  }

  const auto values = placeholders(args);
  std::vector<std::string> argv;
  for (const auto& a : spec->launch_argv) argv.push_back(text::render(a, values));
  const std::string cwd = env.state().cwd;

  ActiveSession session;
  session.tool = spec->tool;
  session.session_name = spec->session_name;
  session.descriptor = text::render(spec->descriptor, values);
  session.target = args.front();
  try {
    session.proc = std::make_unique<process::PtyProcess>(env.runtime().command(argv, true, cwd));
  } catch (const std::exception& e) {
    return Outcome{std::string(kSessionFailed) + "\n" + e.what(), false, true};
  }
  env.attach_session(std::move(session));

  Outcome o = collect(env, *spec, limits, true);
  for (const auto& tmpl : spec->init_lines) {
    if (o.session_ended || o.timed_out) break;
    const std::string line{text::trim(text::render(tmpl, values))};
    if (line.empty()) continue;
    if (!env.session()->proc->write_all(line + "\n")) break;
    Outcome next = collect(env, *spec, limits, true);
    std::string merged;
    if (o.output != kNoOutputObservation) merged = o.output;
    if (next.output != kNoOutputObservation || merged.empty()) merged += (merged.empty() ? "" : "\n") + next.output;
    next.output = std::move(merged);
    o = std::move(next);
  }
  return o;
}

Outcome InteractiveTools::send(Environment& env, std::string_view tool, std::string_view line,
                               const ExecLimits& limits) {
  limits.validate();
  const SessionSpec* spec = registry_.find(tool);
  if (!spec) return Outcome{"Unknown interactive tool: " + std::string(tool)};
  ActiveSession* s = env.session();
  if (!s || s->tool != tool)
    return Outcome{"No " + spec->session_name + " session is open. Start one with `" + spec->tool + "_start`."};
  if (!s->proc || s->proc->exited()) {
    env.reap_session();
    return Outcome{std::string(kSessionFailed), false, true};
  }
  std::string payload(line);
  payload += "\n";
  if (!s->proc->write_all(payload)) {
    env.reap_session();
    return Outcome{std::string(kSessionFailed), false, true};
  }
  return collect(env, *spec, limits, true);
}

Outcome InteractiveTools::stop(Environment& env, std::string_view tool) {
  const SessionSpec* spec = registry_.find(tool);
  if (!spec) return Outcome{"Unknown interactive tool: " + std::string(tool)};
  ActiveSession* s = env.session();
  if (!s || s->tool != tool) return Outcome{stopped_message(spec->session_name)};
  const std::string name = s->session_name;
  if (s->proc && !s->proc->exited() && s->proc->write_all(spec->stop_line + "\n"))
    s->proc->wait(std::nullopt, cfg_.stop_grace, {});
  env.reap_session();
  return Outcome{stopped_message(name)};
}

Outcome InteractiveTools::run(Environment& env, const Directive& d, const ExecLimits& limits) {
  return std::visit(
      [&](const auto& v) -> Outcome {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, Start>)
          return start(env, v.tool, v.args, limits);
        else if constexpr (std::is_same_v<T, Send>)
          return send(env, v.tool, v.line, limits);
        else if constexpr (std::is_same_v<T, Stop>)
          return stop(env, v.tool);
        else
          return Outcome{v.message};
      },
      d);
}

}  // namespace ctfagent::iat
