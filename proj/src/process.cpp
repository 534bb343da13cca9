#include "ctfagent/process.hpp"

#include <dirent.h>
#include <fcntl.h>
#include <poll.h>
#include <pty.h>
#include <signal.h>
#include <sys/prctl.h>
#include <sys/ioctl.h>
#include <sys/wait.h>
#include <termios.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <stdexcept>
#include <system_error>

extern char** environ;

namespace ctfagent::process {

UniqueFd& UniqueFd::operator=(UniqueFd&& o) noexcept {
  if (this != &o) reset(std::exchange(o.fd_, -1));
  return *this;
}

void UniqueFd::reset(int fd) {
  if (fd_ >= 0) ::close(fd_);
  fd_ = fd;
}

namespace {

[[noreturn]] void throw_errno(const char* what) { throw std::system_error(errno, std::generic_category(), what); }

// argv/envp storage prepared before fork(); the child only touches raw pointers.
struct ExecImage {
  std::vector<std::string> args;
  std::vector<std::string> envs;
  std::vector<char*> argv;
  std::vector<char*> envp;
  std::string cwd;

  explicit ExecImage(const SpawnOptions& opts) : args(opts.argv), cwd(opts.cwd) {
    if (args.empty()) throw std::invalid_argument("spawn: empty argv");
    std::set<std::string> overridden;
    for (const auto& [k, v] : opts.env) overridden.insert(k);
    for (char** e = environ; e && *e; ++e) {
      std::string_view kv(*e);
      auto eq = kv.find('=');
      if (eq != std::string_view::npos && overridden.count(std::string(kv.substr(0, eq)))) continue;
      envs.emplace_back(kv);
    }
    for (const auto& [k, v] : opts.env) envs.push_back(k + "=" + v);
    resolve_program();
    for (auto& a : args) argv.push_back(a.data());
    argv.push_back(nullptr);
    for (auto& e : envs) envp.push_back(e.data());
    envp.push_back(nullptr);
  }

  // execvpe searches the parent's PATH, so look the program up in the child's PATH here
  void resolve_program() {
    if (args[0].find('/') != std::string::npos) return;
    std::string path = "/usr/local/bin:/usr/bin:/bin";
    for (const auto& e : envs)
      if (e.starts_with("PATH=")) path = e.substr(5);
    std::stringstream dirs(path);
    for (std::string dir; std::getline(dirs, dir, ':');) {
      const std::string candidate = (dir.empty() ? "." : dir) + "/" + args[0];
      if (::access(candidate.c_str(), X_OK) == 0) {
        args[0] = candidate;
        return;
      }
    }
  }

  [[noreturn]] void exec_in_child() {
    if (!cwd.empty() && ::chdir(cwd.c_str()) != 0) _exit(126);
    ::execvpe(argv[0], argv.data(), envp.data());
    const char msg[] = "exec failed\n";
    (void)!::write(STDERR_FILENO, msg, sizeof msg - 1);
    _exit(127);
  }
};

void reset_signals_in_child() {
  struct sigaction sa{};
  sa.sa_handler = SIG_DFL;
  for (int sig = 1; sig < NSIG; ++sig) ::sigaction(sig, &sa, nullptr);
  sigset_t none;
  sigemptyset(&none);
  ::sigprocmask(SIG_SETMASK, &none, nullptr);
}

bool write_fd_all(int fd, std::string_view data) {
  while (!data.empty()) {
    ssize_t n = ::write(fd, data.data(), data.size());
    if (n < 0) {
      if (errno == EINTR) continue;
      if (errno == EAGAIN) {
        pollfd p{fd, POLLOUT, 0};
        ::poll(&p, 1, 100);
        continue;
      }
      return false;
    }
    data.remove_prefix(static_cast<std::size_t>(n));
  }
  return true;
}

}  // namespace

void ignore_sigpipe() {
  static std::once_flag once;
  std::call_once(once, [] { ::signal(SIGPIPE, SIG_IGN); });
}

Subprocess::Subprocess(const SpawnOptions& opts) {
  ignore_sigpipe();
  ExecImage image(opts);
  int in_pipe[2], out_pipe[2];
  if (::pipe2(in_pipe, O_CLOEXEC) != 0) throw_errno("pipe");
  if (::pipe2(out_pipe, O_CLOEXEC) != 0) {
    ::close(in_pipe[0]);
    ::close(in_pipe[1]);
    throw_errno("pipe");
  }
  pid_ = ::fork();
  if (pid_ < 0) throw_errno("fork");
  if (pid_ == 0) {
    reset_signals_in_child();
    ::setsid();
    ::prctl(PR_SET_PDEATHSIG, SIGKILL);
    ::dup2(in_pipe[0], STDIN_FILENO);
    ::dup2(out_pipe[1], STDOUT_FILENO);
    ::dup2(out_pipe[1], STDERR_FILENO);
    image.exec_in_child();
  }
  ::close(in_pipe[0]);
  ::close(out_pipe[1]);
  in_.reset(in_pipe[1]);
  out_.reset(out_pipe[0]);
}

Subprocess::~Subprocess() {
  in_.reset();
  out_.reset();
  if (!status_) {
    kill_group(SIGKILL);
    wait();
  }
}

bool Subprocess::write_all(std::string_view data) {
  if (!in_) return false;
  return write_fd_all(in_.get(), data);
}

Subprocess::Chunk Subprocess::read_some(std::chrono::milliseconds timeout) {
  Chunk chunk;
  if (!out_) {
    chunk.eof = true;
    return chunk;
  }
  pollfd p{out_.get(), POLLIN, 0};
  int rc;
  do {
    rc = ::poll(&p, 1, static_cast<int>(timeout.count()));
  } while (rc < 0 && errno == EINTR);
  if (rc <= 0) return chunk;
  char buf[8192];
  ssize_t n;
  do {
    n = ::read(out_.get(), buf, sizeof buf);
  } while (n < 0 && errno == EINTR);
  if (n <= 0) {
    chunk.eof = true;
    out_.reset();
    return chunk;
  }
  chunk.data.assign(buf, static_cast<std::size_t>(n));
  return chunk;
}

void Subprocess::kill_group(int sig) {
  if (pid_ > 0 && !status_) {
    ::kill(-pid_, sig);
    ::kill(pid_, sig);
  }
}

std::optional<int> Subprocess::try_wait() {
  if (status_) return status_;
  int st = 0;
  pid_t r = ::waitpid(pid_, &st, WNOHANG);
  if (r == pid_) status_ = st;
  return status_;
}

int Subprocess::wait() {
  if (status_) return *status_;
  int st = 0;
  while (::waitpid(pid_, &st, 0) < 0 && errno == EINTR) {
  }
  status_ = st;
  return st;
}

PtyProcess::PtyProcess(const SpawnOptions& opts) {
  ignore_sigpipe();
  ExecImage image(opts);
  int master = -1, slave = -1;
  winsize ws{};
  ws.ws_row = 1000;
  ws.ws_col = 500;
  if (::openpty(&master, &slave, nullptr, nullptr, &ws) != 0) throw_errno("openpty");
  // no echo of our input and no "\n" -> "\r\n" translation
  termios tio{};
  if (::tcgetattr(slave, &tio) == 0) {
    tio.c_lflag &= ~static_cast<tcflag_t>(ECHO | ECHOE | ECHOK | ECHONL);
    tio.c_oflag &= ~static_cast<tcflag_t>(OPOST);
    ::tcsetattr(slave, TCSANOW, &tio);
  }
  ::fcntl(master, F_SETFD, FD_CLOEXEC);
  pid_ = ::fork();
  if (pid_ < 0) {
    ::close(master);
    ::close(slave);
    throw_errno("fork");
  }
  if (pid_ == 0) {
    reset_signals_in_child();
    ::setsid();
    ::prctl(PR_SET_PDEATHSIG, SIGKILL);
    ::ioctl(slave, TIOCSCTTY, 0);
    ::dup2(slave, STDIN_FILENO);
    ::dup2(slave, STDOUT_FILENO);
    ::dup2(slave, STDERR_FILENO);
    if (slave > STDERR_FILENO) ::close(slave);
    image.exec_in_child();
  }
  ::close(slave);
  master_.reset(master);
  last_byte_ = Clock::now();
  reader_ = std::jthread([this](std::stop_token st) { reader_loop(st); });
}

PtyProcess::~PtyProcess() {
  terminate(std::chrono::milliseconds(200));
  reader_.request_stop();
  if (reader_.joinable()) reader_.join();
  if (pid_ > 0 && !status_) {
    ::kill(-pid_, SIGKILL);
    ::kill(pid_, SIGKILL);
    int st = 0;
    while (::waitpid(pid_, &st, 0) < 0 && errno == EINTR) {
    }
  }
}

void PtyProcess::reader_loop(std::stop_token st) {
  char buf[8192];
  while (!st.stop_requested()) {
    pollfd p{master_.get(), POLLIN, 0};
    int rc = ::poll(&p, 1, 50);
    if (rc < 0 && errno == EINTR) continue;
    if (rc <= 0) continue;
    ssize_t n = ::read(master_.get(), buf, sizeof buf);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) {
      // EIO on Linux once every slave fd is closed
      int status = 0;
      pid_t r = 0;
      for (int i = 0; i < 200 && r == 0; ++i) {
        r = ::waitpid(pid_, &status, WNOHANG);
        if (r == 0) std::this_thread::sleep_for(std::chrono::milliseconds(10));
      }
      std::lock_guard lk(mu_);
      eof_ = true;
      if (r == pid_) status_ = status;
      cv_.notify_all();
      return;
    }
    std::lock_guard lk(mu_);
    buffer_.append(buf, static_cast<std::size_t>(n));
    last_byte_ = Clock::now();
    cv_.notify_all();
  }
}

bool PtyProcess::write_all(std::string_view data) {
  {
    std::lock_guard lk(mu_);
    if (eof_) return false;
  }
  return write_fd_all(master_.get(), data);
}

std::string PtyProcess::take() {
  std::lock_guard lk(mu_);
  return std::exchange(buffer_, {});
}

bool PtyProcess::exited() const {
  std::lock_guard lk(mu_);
  return eof_;
}

std::optional<int> PtyProcess::exit_status() const {
  std::lock_guard lk(mu_);
  return status_;
}

PtyProcess::WaitResult PtyProcess::wait(std::optional<std::chrono::milliseconds> settle,
                                        std::chrono::milliseconds bound,
                                        const std::function<bool(std::string_view)>& done) {
  WaitResult result;
  std::unique_lock lk(mu_);
  const auto start = Clock::now();
  std::size_t seen = buffer_.size();
  auto last_activity = start;
  for (;;) {
    if (done && done(buffer_)) {
      result.matched = true;
      return result;
    }
    if (eof_) {
      result.exited = true;
      return result;
    }
    auto now = Clock::now();
    if (buffer_.size() != seen) {
      seen = buffer_.size();
      last_activity = now;
    }
    if (settle && now - last_activity >= *settle) {
      result.quiet = true;
      return result;
    }
    if (now - last_activity >= bound) {
      result.timed_out = true;
      return result;
    }
    auto next = last_activity + bound;
    if (settle) next = std::min(next, last_activity + *settle);
    cv_.wait_until(lk, std::min(next, now + std::chrono::milliseconds(50)));
  }
}

void PtyProcess::terminate(std::chrono::milliseconds grace) {
  if (pid_ <= 0) return;
  if (exited()) return;
  ::kill(-pid_, SIGHUP);
  ::kill(pid_, SIGTERM);
  std::unique_lock lk(mu_);
  if (cv_.wait_for(lk, grace, [this] { return eof_; })) return;
  lk.unlock();
  ::kill(-pid_, SIGKILL);
  ::kill(pid_, SIGKILL);
  lk.lock();
  cv_.wait_for(lk, std::chrono::seconds(2), [this] { return eof_; });
}

CaptureResult run_capture(const std::vector<std::string>& argv, std::string_view stdin_data,
                          std::chrono::milliseconds timeout) {
  CaptureResult result;
  SpawnOptions opts;
  opts.argv = argv;
  Subprocess proc(opts);
  proc.write_all(stdin_data);
  proc.close_stdin();
  const auto deadline = Clock::now() + timeout;
  for (;;) {
    auto now = Clock::now();
    if (now >= deadline) {
      result.timed_out = true;
      proc.kill_group(SIGKILL);
      break;
    }
    auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - now);
    auto chunk = proc.read_some(std::min(left, std::chrono::milliseconds(200)));
    result.output += chunk.data;
    if (chunk.eof) break;
  }
  int st = proc.wait();
  result.exit_code = WIFEXITED(st) ? WEXITSTATUS(st) : 128 + (WIFSIGNALED(st) ? WTERMSIG(st) : 0);
  return result;
}

std::vector<pid_t> descendants(pid_t root) {
  std::multimap<pid_t, pid_t> children;
  if (DIR* d = ::opendir("/proc")) {
    while (dirent* e = ::readdir(d)) {
      char* end = nullptr;
      long pid = std::strtol(e->d_name, &end, 10);
      if (*end != '\0' || pid <= 0) continue;
      std::ifstream stat("/proc/" + std::string(e->d_name) + "/stat");
      std::string line;
      if (!std::getline(stat, line)) continue;
      // the command name may contain spaces; fields resume after the last ')'
      auto rp = line.rfind(')');
      if (rp == std::string::npos) continue;
      std::istringstream rest(line.substr(rp + 2));
      char state;
      long ppid;
      if (rest >> state >> ppid) children.emplace(static_cast<pid_t>(ppid), static_cast<pid_t>(pid));
    }
    ::closedir(d);
  }
  std::vector<pid_t> out;
  std::function<void(pid_t)> walk = [&](pid_t p) {
    auto [lo, hi] = children.equal_range(p);
    for (auto it = lo; it != hi; ++it) {
      walk(it->second);
      out.push_back(it->second);
    }
  };
  walk(root);
  return out;
}

void kill_descendants(pid_t root) {
  // repeat: a dying parent may fork once more before the signal lands
  for (int round = 0; round < 3; ++round) {
    auto pids = descendants(root);
    if (pids.empty()) return;
    for (auto it = pids.rbegin(); it != pids.rend(); ++it) ::kill(*it, SIGSTOP);
    for (pid_t p : pids) ::kill(p, SIGKILL);
  }
}

}  // namespace ctfagent::process
