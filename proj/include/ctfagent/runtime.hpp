#pragma once

#include <sys/types.h>

#include <filesystem>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "ctfagent/process.hpp"
#include "ctfagent/task.hpp"

namespace ctfagent {

class EnvironmentError : public std::runtime_error {
 public:
  enum class Kind { start_failed, shell_died, io };
  EnvironmentError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

enum class RuntimeKind { local, docker };

struct RuntimeConfig {
  RuntimeKind kind = RuntimeKind::local;
  /// Container CLI; overridden by $CTFAGENT_CONTAINER_RUNTIME. DOCKER_HOST passes through.
  std::string runtime_binary = "docker";
  /// Used when the challenge does not name an image.
  std::string default_image = "ctfagent/sandbox:latest";
  std::string network;
  /// Local runtime only: parent of the per-run workspace.
  std::filesystem::path workspace_root = "/tmp/ctfagent";
  /// Host directory holding the in-container toolset; put on PATH inside the sandbox.
  std::filesystem::path tools_dir;
};

/// Where commands run. Paths in this interface are paths as seen from inside the sandbox.
class ContainerRuntime {
 public:
  virtual ~ContainerRuntime() = default;

  virtual std::string workdir() const = 0;
  virtual std::string output_dir() const = 0;
  virtual std::optional<std::string> tools_path() const = 0;

  /// Spawn options that run `argv` inside the sandbox (allocating a terminal if `tty`)
  /// from `cwd`, or the working directory when empty. The toolset directory is on PATH.
  virtual process::SpawnOptions command(const std::vector<std::string>& argv, bool tty,
                                        const std::string& cwd = {}) const = 0;
  /// Kills every descendant of the in-sandbox process `pid`.
  virtual void kill_descendants(pid_t pid) = 0;
  virtual void write_file(const std::string& path, std::string_view bytes) = 0;
  virtual std::string read_file(const std::string& path) = 0;
  /// Idempotent.
  virtual void stop() = 0;
};

/// Creates the sandbox and copies the challenge's listed files (never the manifest)
/// into a working directory named after the challenge. Throws EnvironmentError.
std::unique_ptr<ContainerRuntime> start_runtime(const Challenge& challenge, const RuntimeConfig& cfg);

}  // namespace ctfagent
