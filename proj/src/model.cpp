#include "ctfagent/model.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <thread>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "ctfagent/parser.hpp"
#include "ctfagent/text.hpp"

namespace ctfagent {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(Backend b) {
  switch (b) {
    case Backend::http_api: return "http_api";
    case Backend::mock_script: return "mock_script";
    case Backend::replay_file: return "replay_file";
  }
  return "mock_script";
}

std::optional<Backend> parse_backend(std::string_view s) {
  for (auto b : {Backend::http_api, Backend::mock_script, Backend::replay_file})
    if (to_string(b) == s) return b;
  return std::nullopt;
}

void ModelConfig::validate() const {
  if (!(temperature >= 0.0)) throw std::invalid_argument("temperature must be >= 0");
  if (!(top_p > 0.0 && top_p <= 1.0)) throw std::invalid_argument("top_p must be in (0, 1]");
  if (!(price_in >= 0.0) || !(price_out >= 0.0)) throw std::invalid_argument("prices must be >= 0");
  if (context_limit == 0) throw std::invalid_argument("context_limit must be positive");
}

ModelConfig model_config_from_json(const json& j, const fs::path& base_dir) {
  ModelConfig c;
  auto resolve = [&](const std::string& p) -> fs::path {
    fs::path path(p);
    return path.is_relative() && !base_dir.empty() ? base_dir / path : path;
  };
  if (j.contains("backend")) {
    auto b = parse_backend(j.at("backend").get<std::string>());
    if (!b) throw std::invalid_argument("unknown model backend: " + j.at("backend").get<std::string>());
    c.backend = *b;
  }
  c.model_name = j.value("model_name", c.model_name);
  c.temperature = j.value("temperature", c.temperature);
  c.top_p = j.value("top_p", c.top_p);
  c.price_in = j.value("price_in", c.price_in);
  c.price_out = j.value("price_out", c.price_out);
  if (j.contains("price_in_per_million")) c.price_in = j.at("price_in_per_million").get<double>() / 1e6;
  if (j.contains("price_out_per_million")) c.price_out = j.at("price_out_per_million").get<double>() / 1e6;
  c.context_limit = j.value("context_limit", c.context_limit);
  c.max_output_tokens = j.value("max_output_tokens", c.max_output_tokens);
  if (j.contains("script")) c.script = resolve(j.at("script").get<std::string>());
  if (j.contains("replay")) c.replay = resolve(j.at("replay").get<std::string>());
  c.endpoint = j.value("endpoint", c.endpoint);
  c.path = j.value("path", c.path);
  c.api_key_env = j.value("api_key_env", c.api_key_env);
  c.max_retries = j.value("max_retries", c.max_retries);
  c.request_timeout = j.value("request_timeout", c.request_timeout);
  c.requests_per_second = j.value("requests_per_second", c.requests_per_second);
  c.burst = j.value("burst", c.burst);
  c.validate();
  return c;
}

ModelConfig load_model_config(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw std::invalid_argument("cannot read model config " + file.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw std::invalid_argument("malformed model config " + file.string() + ": " + e.what());
  }
  return model_config_from_json(j, file.parent_path());
}

void CostLedger::charge(const Usage& u, double price_in, double price_out) {
  tokens_in += u.tokens_in;
  tokens_out += u.tokens_out;
  dollars += static_cast<double>(u.tokens_in) * price_in + static_cast<double>(u.tokens_out) * price_out;
  if (exhausted()) throw BudgetExceeded("cost budget exhausted");
}

std::size_t estimate_tokens(std::string_view s) { return (s.size() + 3) / 4; }

std::size_t estimate_tokens(const std::vector<Message>& messages) {
  std::size_t n = 0;
  for (const auto& m : messages) n += estimate_tokens(m.content);
  return n;
}

std::string elision_stub(const std::string& observation) {
  return "Old environment output omitted (" + std::to_string(text::count_lines(observation)) + " lines)";
}

std::vector<Message> assemble_context(const RenderedPrompts& prompts, const Templates& templates,
                                      const std::vector<HistoryTurn>& turns, const HistoryPolicy& policy) {
  std::vector<Message> out;
  out.push_back({"system", prompts.system});
  if (prompts.demonstration) out.push_back({"user", *prompts.demonstration});
  out.push_back({"user", prompts.instance});
  const std::size_t keep_from =
      turns.size() > policy.full_observation_window ? turns.size() - policy.full_observation_window : 0;
  for (std::size_t i = 0; i < turns.size(); ++i) {
    const auto& t = turns[i];
    out.push_back({"assistant", policy.truncate_responses ? truncate_after_first_action(t.raw_response)
                                                          : t.raw_response});
    const std::string obs = i >= keep_from ? t.observation : elision_stub(t.observation);
    out.push_back({"user", render_next_step(templates, obs, t.state)});
  }
  return out;
}

RateLimiter::RateLimiter(double per_second, double burst)
    : rate_(per_second), burst_(std::max(burst, 1.0)), tokens_(burst_), last_(std::chrono::steady_clock::now()) {}

void RateLimiter::acquire() {
  if (rate_ <= 0.0) return;
  std::unique_lock lk(mu_);
  for (;;) {
    auto now = std::chrono::steady_clock::now();
    tokens_ = std::min(burst_, tokens_ + std::chrono::duration<double>(now - last_).count() * rate_);
    last_ = now;
    if (tokens_ >= 1.0) {
      tokens_ -= 1.0;
      return;
    }
    auto wait = std::chrono::duration<double>((1.0 - tokens_) / rate_);
    lk.unlock();
    std::this_thread::sleep_for(wait);
    lk.lock();
  }
}

namespace {

Usage estimated_usage(const std::vector<Message>& messages, const std::string& reply) {
  return {estimate_tokens(messages), estimate_tokens(reply)};
}

json read_json_file(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw std::invalid_argument("cannot read " + p.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw std::invalid_argument("malformed JSON in " + p.string() + ": " + e.what());
  }
}

}  // namespace

MockBackend::MockBackend(const fs::path& script, Stream stream) {
  const json j = read_json_file(script);
  const char* key = stream == Stream::agent ? "responses" : "summary_responses";
  if (j.contains(key)) {
    for (const auto& e : j.at(key)) {
      Entry entry;
      if (e.is_string()) {
        entry.text = e.get<std::string>();
      } else {
        entry.text = e.at("text").get<std::string>();
        if (e.contains("tokens_in")) entry.tokens_in = e.at("tokens_in").get<std::uint64_t>();
        if (e.contains("tokens_out")) entry.tokens_out = e.at("tokens_out").get<std::uint64_t>();
      }
      entries_.push_back(std::move(entry));
    }
  }
  loop_ = j.value(stream == Stream::agent ? "loop" : "summary_loop", false);
}

ModelReply MockBackend::query(const std::vector<Message>& messages) {
  if (entries_.empty() || (!loop_ && next_ >= entries_.size())) throw TransportError("mock script exhausted");
  const Entry& e = entries_[next_ % entries_.size()];
  ++next_;
  ModelReply r;
  r.text = e.text;
  r.usage = estimated_usage(messages, e.text);
  if (e.tokens_in) r.usage.tokens_in = *e.tokens_in;
  if (e.tokens_out) r.usage.tokens_out = *e.tokens_out;
  return r;
}

ReplayBackend::ReplayBackend(const fs::path& trajectory, Stream stream) {
  std::ifstream in(trajectory);
  if (!in) throw std::invalid_argument("cannot read trajectory " + trajectory.string());
  std::string line;
  while (std::getline(in, line)) {
    if (text::trim(line).empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception&) {
      break;  // a torn final line from an interrupted run
    }
    if (j.value("type", "") != "step") continue;
    const json* src = &j;
    if (stream == Stream::summarizer) {
      if (!j.contains("summarizer_reply")) continue;
      src = &j.at("summarizer_reply");
    }
    ModelReply r;
    r.text = src->value("raw_response", src->value("text", ""));
    if (src->contains("usage")) {
      r.usage.tokens_in = src->at("usage").value("tokens_in", std::uint64_t{0});
      r.usage.tokens_out = src->at("usage").value("tokens_out", std::uint64_t{0});
    }
    replies_.push_back(std::move(r));
  }
}

ModelReply ReplayBackend::query(const std::vector<Message>&) {
  if (next_ >= replies_.size()) throw TransportError("replay exhausted");
  return replies_[next_++];
}

json build_request_body(const ModelConfig& cfg, const std::vector<Message>& messages) {
  json msgs = json::array();
  for (const auto& m : messages) msgs.push_back({{"role", m.role}, {"content", m.content}});
  return {{"model", cfg.model_name},
          {"messages", msgs},
          {"temperature", cfg.temperature},
          {"top_p", cfg.top_p},
          {"max_tokens", cfg.max_output_tokens}};
}

std::string redact_authorization(std::string_view v) {
  auto sp = v.find(' ');
  if (sp == std::string_view::npos) return v.empty() ? "" : "***";
  return std::string(v.substr(0, sp)) + " ***";
}

HttpBackend::HttpBackend(ModelConfig cfg, std::shared_ptr<RateLimiter> limiter)
    : cfg_(std::move(cfg)), limiter_(std::move(limiter)) {
  if (cfg_.endpoint.empty()) throw std::invalid_argument("http_api backend needs an endpoint");
}

ModelReply HttpBackend::query(const std::vector<Message>& messages) {
  const char* key = std::getenv(cfg_.api_key_env.c_str());
  const std::string auth = key && *key ? std::string("Bearer ") + key : "";
  const json body = build_request_body(cfg_, messages);
  const std::string payload = body.dump();

  httplib::Client cli(cfg_.endpoint);
  const auto t = std::chrono::duration<double>(cfg_.request_timeout);
  cli.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(t));
  cli.set_write_timeout(std::chrono::duration_cast<std::chrono::microseconds>(t));
  cli.set_connection_timeout(std::chrono::seconds(10));
  httplib::Headers headers;
  if (!auth.empty()) headers.emplace("Authorization", auth);

  std::string last_error;
  for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
    if (attempt > 0) std::this_thread::sleep_for(std::chrono::milliseconds(250 << std::min(attempt, 6)));
    if (limiter_) limiter_->acquire();
    auto res = cli.Post(cfg_.path, headers, payload, "application/json");
    if (!res) {
      last_error = "request failed: " + httplib::to_string(res.error());
      spdlog::warn("model request to {} failed (attempt {}): {}", cfg_.endpoint, attempt + 1, last_error);
      continue;
    }
    if (res->status == 429 || res->status >= 500) {
      last_error = "HTTP " + std::to_string(res->status);
      spdlog::warn("model request to {} returned {} (attempt {})", cfg_.endpoint, res->status, attempt + 1);
      continue;
    }
    if (res->status != 200) {
      if (res->body.find("context_length") != std::string::npos ||
          res->body.find("maximum context") != std::string::npos)
        throw ContextOverflow("model rejected the context: " + res->body);
      throw TransportError("HTTP " + std::to_string(res->status) + ": " + res->body);
    }
    json reply;
    try {
      reply = json::parse(res->body);
      ModelReply r;
      r.text = reply.at("choices").at(0).at("message").at("content").get<std::string>();
      if (reply.contains("usage")) {
        r.usage.tokens_in = reply["usage"].value("prompt_tokens", std::uint64_t{0});
        r.usage.tokens_out = reply["usage"].value("completion_tokens", std::uint64_t{0});
      } else {
        r.usage = estimated_usage(messages, r.text);
      }
      r.exchange = {{"endpoint", cfg_.endpoint + cfg_.path},
                    {"request_headers", {{"Authorization", redact_authorization(auth)}}},
                    {"request", body},
                    {"response", reply}};
      return r;
    } catch (const json::exception& e) {
      throw TransportError(std::string("malformed model response: ") + e.what());
    }
  }
  throw TransportError("model request failed after retries: " + last_error);
}

std::unique_ptr<ModelBackend> make_backend(const ModelConfig& cfg, Purpose purpose,
                                           std::shared_ptr<RateLimiter> limiter) {
  switch (cfg.backend) {
    case Backend::mock_script:
      return std::make_unique<MockBackend>(cfg.script, purpose == Purpose::agent ? MockBackend::Stream::agent
                                                                                 : MockBackend::Stream::summarizer);
    case Backend::replay_file:
      return std::make_unique<ReplayBackend>(cfg.replay, purpose == Purpose::agent
                                                             ? ReplayBackend::Stream::agent
                                                             : ReplayBackend::Stream::summarizer);
    case Backend::http_api:
      if (!limiter && cfg.requests_per_second > 0) limiter = std::make_shared<RateLimiter>(cfg.requests_per_second, cfg.burst);
      return std::make_unique<HttpBackend>(cfg, std::move(limiter));
  }
  throw std::invalid_argument("unknown backend");
}

ModelClient::ModelClient(ModelConfig cfg, std::unique_ptr<ModelBackend> backend)
    : cfg_(std::move(cfg)), backend_(std::move(backend)) {}

ModelReply ModelClient::query(const std::vector<Message>& messages) {
  const std::size_t est = estimate_tokens(messages);
  if (est > cfg_.context_limit)
    throw ContextOverflow("estimated context of " + std::to_string(est) + " tokens exceeds the limit of " +
                          std::to_string(cfg_.context_limit));
  return backend_->query(messages);
}

}  // namespace ctfagent
