#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctfagent/sandbox.hpp"
#include "ctfagent/templates.hpp"

namespace ctfagent {

enum class Backend { http_api, mock_script, replay_file };

std::string_view to_string(Backend b);
std::optional<Backend> parse_backend(std::string_view s);

struct ModelConfig {
  Backend backend = Backend::mock_script;
  std::string model_name = "mock";
  double temperature = 0.0;
  double top_p = 0.95;
  double price_in = 0.0;   // dollars per input token
  double price_out = 0.0;  // dollars per output token
  std::size_t context_limit = 128000;
  std::size_t max_output_tokens = 4096;

  std::filesystem::path script;  // mock_script
  std::filesystem::path replay;  // replay_file

  std::string endpoint;  // http_api: base URL, e.g. https://api.example.com
  std::string path = "/v1/chat/completions";
  std::string api_key_env = "CTFAGENT_API_KEY";
  int max_retries = 3;
  double request_timeout = 120.0;  // seconds
  double requests_per_second = 0.0;  // 0 disables rate limiting
  double burst = 1.0;

  /// Throws std::invalid_argument on a bad temperature, top_p or price.
  void validate() const;
};

/// Parses a model config object. Relative file paths resolve against `base_dir`.
ModelConfig model_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
ModelConfig load_model_config(const std::filesystem::path& file);

struct Usage {
  std::uint64_t tokens_in = 0;
  std::uint64_t tokens_out = 0;
};

class BudgetExceeded : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CostLedger {
  std::uint64_t tokens_in = 0;
  std::uint64_t tokens_out = 0;
  double dollars = 0.0;
  double budget = 3.0;

  bool exhausted() const { return dollars >= budget; }
  /// Adds the usage; throws BudgetExceeded (after updating) once dollars >= budget.
  void charge(const Usage& u, double price_in, double price_out);
};

class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
/// The assembled context does not fit the model.
class ContextOverflow : public ModelError {
 public:
  using ModelError::ModelError;
};
/// The backend could not produce a response.
class TransportError : public ModelError {
 public:
  using ModelError::ModelError;
};

struct Message {
  std::string role;  // system, user, assistant
  std::string content;

  friend bool operator==(const Message&, const Message&) = default;
};

/// ceil(chars / 4) per message.
std::size_t estimate_tokens(const std::vector<Message>& messages);
std::size_t estimate_tokens(std::string_view s);

struct HistoryPolicy {
  std::size_t full_observation_window = 5;
  /// Cut each past response after its first action before it re-enters the context.
  bool truncate_responses = false;
};

/// What assemble_context needs from one past step.
struct HistoryTurn {
  std::string raw_response;
  std::string observation;
  ShellState state;
};

std::string elision_stub(const std::string& observation);

std::vector<Message> assemble_context(const RenderedPrompts& prompts, const Templates& templates,
                                      const std::vector<HistoryTurn>& turns, const HistoryPolicy& policy);

struct ModelReply {
  std::string text;
  Usage usage;
  nlohmann::json exchange;  // request/response log for http_api, null otherwise
};

class ModelBackend {
 public:
  virtual ~ModelBackend() = default;
  /// Throws TransportError or ContextOverflow.
  virtual ModelReply query(const std::vector<Message>& messages) = 0;
};

/// Token bucket shared by every client in a process.
class RateLimiter {
 public:
  RateLimiter(double per_second, double burst);
  void acquire();

 private:
  std::mutex mu_;
  double rate_;
  double burst_;
  double tokens_;
  std::chrono::steady_clock::time_point last_;
};

/// Scripted responses. JSON: {"responses": [...], "loop": false, "summary_responses": [...]}.
/// An entry is a string or {"text": ..., "tokens_in": n, "tokens_out": m}; missing counts
/// are estimated.
class MockBackend final : public ModelBackend {
 public:
  enum class Stream { agent, summarizer };
  MockBackend(const std::filesystem::path& script, Stream stream = Stream::agent);
  ModelReply query(const std::vector<Message>& messages) override;

 private:
  struct Entry {
    std::string text;
    std::optional<std::uint64_t> tokens_in, tokens_out;
  };
  std::vector<Entry> entries_;
  bool loop_ = false;
  std::size_t next_ = 0;
};

/// Replays the responses recorded in a trajectory file, in turn order.
class ReplayBackend final : public ModelBackend {
 public:
  enum class Stream { agent, summarizer };
  ReplayBackend(const std::filesystem::path& trajectory, Stream stream = Stream::agent);
  ModelReply query(const std::vector<Message>& messages) override;

 private:
  std::vector<ModelReply> replies_;
  std::size_t next_ = 0;
};

/// OpenAI-style chat completions over HTTP(S).
class HttpBackend final : public ModelBackend {
 public:
  HttpBackend(ModelConfig cfg, std::shared_ptr<RateLimiter> limiter = nullptr);
  ModelReply query(const std::vector<Message>& messages) override;

 private:
  ModelConfig cfg_;
  std::shared_ptr<RateLimiter> limiter_;
};

/// The JSON body sent to the chat-completions endpoint.
nlohmann::json build_request_body(const ModelConfig& cfg, const std::vector<Message>& messages);

/// `Bearer abc...` becomes `Bearer ***`; other values pass through.
std::string redact_authorization(std::string_view header_value);

enum class Purpose { agent, summarizer };

std::unique_ptr<ModelBackend> make_backend(const ModelConfig& cfg, Purpose purpose = Purpose::agent,
                                           std::shared_ptr<RateLimiter> limiter = nullptr);

/// Backend plus the pre-query context check.
class ModelClient {
 public:
  ModelClient(ModelConfig cfg, std::unique_ptr<ModelBackend> backend);
  /// Throws ContextOverflow when the estimate exceeds context_limit, before querying.
  ModelReply query(const std::vector<Message>& messages);
  const ModelConfig& config() const { return cfg_; }

 private:
  ModelConfig cfg_;
  std::unique_ptr<ModelBackend> backend_;
};

}  // namespace ctfagent
