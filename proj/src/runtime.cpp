#include "ctfagent/runtime.hpp"

#include <cstdlib>
#include <fstream>
#include <random>
#include <sstream>

#include <spdlog/spdlog.h>

#include "ctfagent/text.hpp"

namespace ctfagent {

namespace fs = std::filesystem;

namespace {

constexpr std::string_view kWorkspaceMarker = ".ctfagent-workspace";

std::string random_hex(std::size_t n) {
  static thread_local std::mt19937_64 rng{std::random_device{}()};
  static constexpr char digits[] = "0123456789abcdef";
  std::string out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(digits[rng() % 16]);
  return out;
}

class LocalRuntime final : public ContainerRuntime {
 public:
  LocalRuntime(const Challenge& challenge, const RuntimeConfig& cfg) {
    const std::string name = text::sanitize_name(challenge.info().name);
    workspace_ = cfg.workspace_root / name;
    std::error_code ec;
    if (fs::exists(workspace_)) {
      if (!fs::exists(workspace_ / kWorkspaceMarker))
        throw EnvironmentError(EnvironmentError::Kind::start_failed,
                               "refusing to reuse non-workspace directory " + workspace_.string());
      fs::remove_all(workspace_, ec);
      if (ec) throw EnvironmentError(EnvironmentError::Kind::start_failed, "cannot clear workspace: " + ec.message());
    }
    fs::create_directories(workspace_ / name, ec);
    fs::create_directories(workspace_ / "output", ec);
    if (ec) throw EnvironmentError(EnvironmentError::Kind::start_failed, "cannot create workspace: " + ec.message());
    std::ofstream(workspace_ / kWorkspaceMarker) << "ctfagent\n";

    workdir_ = (workspace_ / name).string();
    for (const auto& rel : challenge.info().files) {
      fs::path dst = workspace_ / name / rel;
      fs::create_directories(dst.parent_path(), ec);
      fs::copy(challenge.dir() / rel, dst, fs::copy_options::recursive | fs::copy_options::overwrite_existing, ec);
      if (ec)
        throw EnvironmentError(EnvironmentError::Kind::start_failed, "cannot copy " + rel + ": " + ec.message());
    }
    if (!cfg.tools_dir.empty()) tools_ = fs::absolute(cfg.tools_dir).string();
  }

  ~LocalRuntime() override { stop(); }

  std::string workdir() const override { return workdir_; }
  std::string output_dir() const override { return (workspace_ / "output").string(); }
  std::optional<std::string> tools_path() const override { return tools_; }

  process::SpawnOptions command(const std::vector<std::string>& argv, bool tty,
                                const std::string& cwd) const override {
    process::SpawnOptions opts;
    opts.argv = argv;
    opts.cwd = cwd.empty() ? workdir_ : cwd;
    if (tools_) {
      const char* path = std::getenv("PATH");
      opts.env["PATH"] = *tools_ + ":" + (path ? path : "/usr/bin:/bin");
    }
    if (tty) opts.env["TERM"] = "dumb";
    return opts;
  }

  void kill_descendants(pid_t pid) override { process::kill_descendants(pid); }

  void write_file(const std::string& path, std::string_view bytes) override {
    std::error_code ec;
    fs::create_directories(fs::path(path).parent_path(), ec);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw EnvironmentError(EnvironmentError::Kind::io, "cannot write " + path);
  }

  std::string read_file(const std::string& path) override {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw EnvironmentError(EnvironmentError::Kind::io, "cannot read " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  // The workspace is left on disk for inspection; the next run of the same challenge clears it.
  void stop() override {}

 private:
  fs::path workspace_;
  std::string workdir_;
  std::optional<std::string> tools_;
};

class DockerRuntime final : public ContainerRuntime {
 public:
  DockerRuntime(const Challenge& challenge, const RuntimeConfig& cfg) : bin_(cfg.runtime_binary) {
    if (const char* env = std::getenv("CTFAGENT_CONTAINER_RUNTIME"); env && *env) bin_ = env;
    const auto& info = challenge.info();
    const std::string image = info.image.empty() ? cfg.default_image : info.image;
    name_ = "ctfagent-" + random_hex(12);
    workdir_ = "/" + text::sanitize_name(info.name);

    std::vector<std::string> run = {bin_, "run", "-d", "--rm", "--name", name_};
    if (!cfg.network.empty()) {
      run.push_back("--network");
      run.push_back(cfg.network);
    }
    run.insert(run.end(), {image, "sleep", "infinity"});
    checked(run, "start container from image " + image);
    started_ = true;

    checked({bin_, "exec", name_, "mkdir", "-p", workdir_, "/output"}, "create working directory");
    for (const auto& rel : info.files) {
      const fs::path dst = fs::path(workdir_) / rel;
      checked({bin_, "exec", name_, "mkdir", "-p", dst.parent_path().string()}, "create " + dst.parent_path().string());
      checked({bin_, "cp", (challenge.dir() / rel).string(), name_ + ":" + dst.string()}, "copy " + rel);
    }
    if (!cfg.tools_dir.empty()) {
      checked({bin_, "cp", fs::absolute(cfg.tools_dir).string() + "/.", name_ + ":/ctfagent-tools"}, "install toolset");
      tools_ = "/ctfagent-tools";
    }
  }

  ~DockerRuntime() override { stop(); }

  std::string workdir() const override { return workdir_; }
  std::string output_dir() const override { return "/output"; }
  std::optional<std::string> tools_path() const override { return tools_; }

  process::SpawnOptions command(const std::vector<std::string>& argv, bool tty,
                                const std::string& cwd) const override {
    process::SpawnOptions opts;
    opts.argv = {bin_, "exec", "-i"};
    if (tty) opts.argv.insert(opts.argv.end(), {"-t", "-e", "TERM=dumb"});
    opts.argv.insert(opts.argv.end(), {"-w", cwd.empty() ? workdir_ : cwd, name_});
    if (tools_) opts.argv.insert(opts.argv.end(), {"sh", "-c", "PATH=" + *tools_ + ":$PATH exec \"$@\"", "sh"});
    opts.argv.insert(opts.argv.end(), argv.begin(), argv.end());
    return opts;
  }

  void kill_descendants(pid_t pid) override {
    const std::string script =
        "kd() { for c in $(awk -v p=\"$1\" '$4==p{print $1}' /proc/[0-9]*/stat 2>/dev/null); do "
        "kd \"$c\"; kill -9 \"$c\" 2>/dev/null; done; }; kd " +
        std::to_string(pid);
    process::run_capture({bin_, "exec", name_, "sh", "-c", script}, {}, std::chrono::seconds(10));
  }

  void write_file(const std::string& path, std::string_view bytes) override {
    auto r = process::run_capture(
        {bin_, "exec", "-i", name_, "sh", "-c", "mkdir -p \"$(dirname \"$1\")\" && cat > \"$1\"", "sh", path}, bytes);
    if (r.exit_code != 0) throw EnvironmentError(EnvironmentError::Kind::io, "cannot write " + path + ": " + r.output);
  }

  std::string read_file(const std::string& path) override {
    auto r = process::run_capture({bin_, "exec", name_, "cat", path});
    if (r.exit_code != 0) throw EnvironmentError(EnvironmentError::Kind::io, "cannot read " + path + ": " + r.output);
    return r.output;
  }

  void stop() override {
    if (!started_) return;
    started_ = false;
    process::run_capture({bin_, "rm", "-f", name_}, {}, std::chrono::seconds(30));
  }

 private:
  process::CaptureResult checked(const std::vector<std::string>& argv, const std::string& what) {
    process::CaptureResult r;
    try {
      r = process::run_capture(argv, {}, std::chrono::minutes(10));
    } catch (const std::exception& e) {
      stop();
      throw EnvironmentError(EnvironmentError::Kind::start_failed, "failed to " + what + ": " + e.what());
    }
    if (r.exit_code != 0) {
      stop();
      throw EnvironmentError(EnvironmentError::Kind::start_failed,
                             "failed to " + what + ": " + std::string(text::trim(r.output)));
    }
    return r;
  }

  std::string bin_;
  std::string name_;
  std::string workdir_;
  std::optional<std::string> tools_;
  bool started_ = false;
};

}  // namespace

std::unique_ptr<ContainerRuntime> start_runtime(const Challenge& challenge, const RuntimeConfig& cfg) {
  switch (cfg.kind) {
    case RuntimeKind::local: return std::make_unique<LocalRuntime>(challenge, cfg);
    case RuntimeKind::docker: return std::make_unique<DockerRuntime>(challenge, cfg);
  }
  throw EnvironmentError(EnvironmentError::Kind::start_failed, "unknown runtime");
}

}  // namespace ctfagent
