#pragma once

#include <sys/types.h>

#include <chrono>
#include <condition_variable>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace ctfagent::process {

using Clock = std::chrono::steady_clock;

/// File descriptor owner.
class UniqueFd {
 public:
  UniqueFd() = default;
  explicit UniqueFd(int fd) : fd_(fd) {}
  UniqueFd(UniqueFd&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  UniqueFd& operator=(UniqueFd&& o) noexcept;
  UniqueFd(const UniqueFd&) = delete;
  UniqueFd& operator=(const UniqueFd&) = delete;
  ~UniqueFd() { reset(); }

  int get() const { return fd_; }
  explicit operator bool() const { return fd_ >= 0; }
  void reset(int fd = -1);

 private:
  int fd_ = -1;
};

struct SpawnOptions {
  std::vector<std::string> argv;
  std::map<std::string, std::string> env;  // added to the inherited environment
  std::string cwd;
};

/// A child with a stdin pipe and a single pipe carrying merged stdout+stderr.
/// The child leads its own session so the whole tree can be signalled.
class Subprocess {
 public:
  explicit Subprocess(const SpawnOptions& opts);
  Subprocess(Subprocess&&) = delete;
  ~Subprocess();

  pid_t pid() const { return pid_; }

  /// False when the child closed its end.
  bool write_all(std::string_view data);

  struct Chunk {
    std::string data;
    bool eof = false;
  };
  /// Waits up to `timeout` for output. Empty data with eof=false means the wait expired.
  Chunk read_some(std::chrono::milliseconds timeout);

  void close_stdin() { in_.reset(); }
  void kill_group(int sig);
  /// Reaps the child if it has exited; returns its wait status.
  std::optional<int> try_wait();
  int wait();

 private:
  pid_t pid_ = -1;
  UniqueFd in_;
  UniqueFd out_;
  std::optional<int> status_;
};

/// A child attached to a pseudo-terminal. A background thread drains the master side
/// continuously, so the child never blocks on a full terminal buffer between reads.
class PtyProcess {
 public:
  explicit PtyProcess(const SpawnOptions& opts);
  PtyProcess(PtyProcess&&) = delete;
  ~PtyProcess();

  pid_t pid() const { return pid_; }
  bool write_all(std::string_view data);

  /// Output received since the last take().
  std::string take();
  bool exited() const;
  std::optional<int> exit_status() const;

  struct WaitResult {
    bool matched = false;   // `done` returned true
    bool quiet = false;     // no bytes for the settle window
    bool exited = false;    // child exited (EOF on the terminal)
    bool timed_out = false; // no bytes for the whole bound
  };
  /// Waits until `done(buffer)` holds, the child exits, output pauses for `settle`
  /// (if set), or no byte arrives for `bound`. Each byte resets the bound.
  WaitResult wait(std::optional<std::chrono::milliseconds> settle, std::chrono::milliseconds bound,
                  const std::function<bool(std::string_view)>& done = {});

  void terminate(std::chrono::milliseconds grace);

 private:
  void reader_loop(std::stop_token st);

  pid_t pid_ = -1;
  UniqueFd master_;
  mutable std::mutex mu_;
  std::condition_variable_any cv_;
  std::string buffer_;
  bool eof_ = false;
  std::optional<int> status_;
  Clock::time_point last_byte_;
  std::jthread reader_;
};

struct CaptureResult {
  int exit_code = -1;
  std::string output;
  bool timed_out = false;
};
/// Runs argv to completion with optional stdin data, capturing merged output.
CaptureResult run_capture(const std::vector<std::string>& argv, std::string_view stdin_data = {},
                          std::chrono::milliseconds timeout = std::chrono::seconds(60));

/// Descendants of `root` (not including it), deepest first, found by walking /proc.
std::vector<pid_t> descendants(pid_t root);

/// SIGKILLs every descendant of `root`; `root` itself survives.
void kill_descendants(pid_t root);

void ignore_sigpipe();

}  // namespace ctfagent::process
