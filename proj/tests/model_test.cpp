#include <gtest/gtest.h>

#include <cmath>
#include <thread>

#include <httplib.h>

#include "ctfagent/model.hpp"
#include "ctfagent/text.hpp"
#include "test_support.hpp"

using namespace ctfagent;
using nlohmann::json;
using testsupport::TempDir;

namespace {

RenderedPrompts prompts() { return {"SYS", std::string("DEMO"), "INSTANCE"}; }

Templates templates() { return load_templates(testsupport::templates_dir()); }

std::vector<HistoryTurn> turns(std::size_t n) {
  std::vector<HistoryTurn> out;
  for (std::size_t i = 1; i <= n; ++i)
    out.push_back({"thought " + std::to_string(i) + "\n```\ncmd" + std::to_string(i) + "\n```",
                   "observation-" + std::to_string(i) + "\nsecond line", {"/chal", "n/a", "n/a"}});
  return out;
}

// Local chat-completions endpoint that records requests.
struct FakeApi {
  httplib::Server server;
  std::thread thread;
  int port = 0;
  std::vector<json> bodies;
  std::vector<std::string> auth;
  std::vector<int> script;  // status codes to return, in order; 200 afterwards
  std::string error_body = "{}";
  std::mutex mu;

  FakeApi() {
    server.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      std::lock_guard lk(mu);
      bodies.push_back(json::parse(req.body));
      auth.push_back(req.get_header_value("Authorization"));
      const std::size_t i = bodies.size() - 1;
      const int status = i < script.size() ? script[i] : 200;
      res.status = status;
      if (status != 200) {
        res.set_content(error_body, "application/json");
        return;
      }
      json reply = {{"choices", {{{"message", {{"role", "assistant"}, {"content", "reply " + std::to_string(i)}}}}}},
                    {"usage", {{"prompt_tokens", 1000}, {"completion_tokens", 500}}}};
      res.set_content(reply.dump(), "application/json");
    });
    port = server.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  ~FakeApi() {
    server.stop();
    thread.join();
  }
  ModelConfig config() const {
    ModelConfig c;
    c.backend = Backend::http_api;
    c.model_name = "test-model";
    c.endpoint = "http://127.0.0.1:" + std::to_string(port);
    c.api_key_env = "CTFAGENT_TEST_KEY";
    c.max_retries = 1;
    c.request_timeout = 10;
    return c;
  }
};

}  // namespace

TEST(Ledger, HandComputedArithmetic) {
  CostLedger l;
  l.charge({1000, 500}, 2.0 / 1e6, 6.0 / 1e6);
  EXPECT_NEAR(l.dollars, 0.005, 1e-9);
  EXPECT_EQ(l.tokens_in, 1000u);
  EXPECT_EQ(l.tokens_out, 500u);
  l.charge({250000, 0}, 2.0 / 1e6, 6.0 / 1e6);
  EXPECT_NEAR(l.dollars, 0.505, 1e-9);
}

TEST(Ledger, ThrowsAfterUpdatingOnceBudgetReached) {
  CostLedger l;
  l.dollars = 2.999;
  EXPECT_THROW(l.charge({10000, 0}, 1e-6, 0), BudgetExceeded);
  EXPECT_NEAR(l.dollars, 3.009, 1e-9);
  EXPECT_TRUE(l.exhausted());
}

TEST(Ledger, ExactlyAtBudgetIsExhausted) {
  CostLedger l;
  l.budget = 1.0;
  EXPECT_THROW(l.charge({0, 1}, 0, 1.0), BudgetExceeded);
}

TEST(Ledger, AccumulationMatchesClosedForm) {
  CostLedger l;
  l.budget = 1e9;
  double expected = 0;
  for (std::uint64_t i = 1; i <= 500; ++i) {
    l.charge({i * 37, i * 11}, 3e-6, 15e-6);
    expected += static_cast<double>(i * 37) * 3e-6 + static_cast<double>(i * 11) * 15e-6;
  }
  // sum_{i=1}^{500} i = 125250
  EXPECT_EQ(l.tokens_in, 125250u * 37u);
  EXPECT_EQ(l.tokens_out, 125250u * 11u);
  EXPECT_NEAR(l.dollars, 125250.0 * (37 * 3e-6 + 11 * 15e-6), 1e-9);
  EXPECT_NEAR(l.dollars, expected, 1e-9);
}

TEST(History, WindowOfFiveAtStepEight) {
  auto t = templates();
  auto msgs = assemble_context(prompts(), t, turns(8), {});
  ASSERT_EQ(msgs.size(), 3u + 16u);
  EXPECT_EQ(msgs[0], (Message{"system", "SYS"}));
  EXPECT_EQ(msgs[1], (Message{"user", "DEMO"}));
  EXPECT_EQ(msgs[2], (Message{"user", "INSTANCE"}));
  std::size_t verbatim = 0, stubs = 0;
  for (std::size_t i = 1; i <= 8; ++i) {
    const auto& user = msgs[2 + 2 * i].content;
    EXPECT_EQ(msgs[1 + 2 * i].role, "assistant");
    if (user.find("observation-" + std::to_string(i)) != std::string::npos) ++verbatim;
    if (user.starts_with("Old environment output omitted (2 lines)")) ++stubs;
    EXPECT_EQ(user.find("observation-") != std::string::npos, i > 3) << i;
  }
  EXPECT_EQ(verbatim, 5u);
  EXPECT_EQ(stubs, 3u);
}

TEST(History, ShortHistoryKeepsEverything) {
  auto t = templates();
  for (std::size_t n = 0; n <= 5; ++n) {
    auto msgs = assemble_context(prompts(), t, turns(n), {});
    for (const auto& m : msgs) EXPECT_EQ(m.content.find("omitted"), std::string::npos);
  }
}

TEST(History, StubCountProperty) {
  auto t = templates();
  for (std::size_t window = 1; window <= 6; ++window) {
    for (std::size_t n = 0; n <= 12; ++n) {
      HistoryPolicy p;
      p.full_observation_window = window;
      auto msgs = assemble_context(prompts(), t, turns(n), p);
      std::size_t stubs = 0;
      for (const auto& m : msgs) stubs += m.content.starts_with("Old environment output omitted");
      EXPECT_EQ(stubs, n > window ? n - window : 0) << window << " " << n;
    }
  }
}

TEST(History, TruncatesResponsesWhenAsked) {
  auto t = templates();
  auto ts = turns(1);
  ts[0].raw_response += "\n(Open file: n/a)\n```\nfake\n```";
  HistoryPolicy p;
  p.truncate_responses = true;
  auto msgs = assemble_context(prompts(), t, ts, p);
  EXPECT_EQ(msgs[3].content, "thought 1\n```\ncmd1\n```");
}

TEST(History, NoDemonstration) {
  auto t = templates();
  RenderedPrompts p{"S", std::nullopt, "I"};
  auto msgs = assemble_context(p, t, {}, {});
  ASSERT_EQ(msgs.size(), 2u);
  EXPECT_EQ(msgs[1], (Message{"user", "I"}));
}

TEST(Tokens, Estimate) {
  EXPECT_EQ(estimate_tokens(""), 0u);
  EXPECT_EQ(estimate_tokens("abcd"), 1u);
  EXPECT_EQ(estimate_tokens("abcde"), 2u);
  EXPECT_EQ(estimate_tokens(std::vector<Message>{{"user", "abcde"}, {"user", "abc"}}), 3u);
}

TEST(MockBackend, ScriptedResponsesAndUsage) {
  TempDir tmp;
  testsupport::write_file(tmp / "s.json", json{{"responses", {"one", {{"text", "two"}, {"tokens_in", 7}, {"tokens_out", 3}}}},
                                               {"summary_responses", {"sum"}}}
                                              .dump());
  MockBackend m(tmp / "s.json");
  auto a = m.query({{"user", "12345678"}});
  EXPECT_EQ(a.text, "one");
  EXPECT_EQ(a.usage.tokens_in, 2u);
  EXPECT_EQ(a.usage.tokens_out, 1u);
  auto b = m.query({});
  EXPECT_EQ(b.text, "two");
  EXPECT_EQ(b.usage.tokens_in, 7u);
  EXPECT_EQ(b.usage.tokens_out, 3u);
  EXPECT_THROW(m.query({}), TransportError);
  MockBackend s(tmp / "s.json", MockBackend::Stream::summarizer);
  EXPECT_EQ(s.query({}).text, "sum");
}

TEST(MockBackend, Loop) {
  TempDir tmp;
  testsupport::write_file(tmp / "s.json", json{{"responses", {"a", "b"}}, {"loop", true}}.dump());
  MockBackend m(tmp / "s.json");
  std::string seq;
  for (int i = 0; i < 5; ++i) seq += m.query({}).text;
  EXPECT_EQ(seq, "ababa");
}

TEST(ModelClient, ContextOverflowBeforeQuery) {
  TempDir tmp;
  testsupport::write_file(tmp / "s.json", json{{"responses", {"a"}}}.dump());
  ModelConfig cfg;
  cfg.context_limit = 10;
  ModelClient c(cfg, std::make_unique<MockBackend>(tmp / "s.json"));
  EXPECT_THROW(c.query({{"user", std::string(41, 'x')}}), ContextOverflow);
  EXPECT_EQ(c.query({{"user", std::string(40, 'x')}}).text, "a");
}

TEST(ModelConfig, JsonAndValidation) {
  TempDir tmp;
  testsupport::write_file(tmp / "m.json", R"({"backend": "mock_script", "script": "s.json",
      "price_in_per_million": 2, "price_out_per_million": 6, "temperature": 0})");
  auto c = load_model_config(tmp / "m.json");
  EXPECT_EQ(c.backend, Backend::mock_script);
  EXPECT_EQ(c.script, tmp / "s.json");
  EXPECT_NEAR(c.price_in, 2e-6, 1e-18);
  EXPECT_NEAR(c.price_out, 6e-6, 1e-18);
  EXPECT_EQ(c.temperature, 0.0);
  EXPECT_THROW(model_config_from_json(json{{"backend", "carrier_pigeon"}}), std::invalid_argument);
  EXPECT_THROW(model_config_from_json(json{{"temperature", -1}}), std::invalid_argument);
  EXPECT_THROW(model_config_from_json(json{{"price_in", -1}}), std::invalid_argument);
}

TEST(HttpBackend, RequestBodyCarriesSamplingSettings) {
  ModelConfig c;
  c.model_name = "m";
  auto body = build_request_body(c, {{"system", "s"}, {"user", "u"}});
  EXPECT_EQ(body["temperature"], 0.0);
  EXPECT_EQ(body["top_p"], 0.95);
  EXPECT_EQ(body["model"], "m");
  EXPECT_EQ(body["messages"][1]["role"], "user");
}

TEST(HttpBackend, Redaction) {
  EXPECT_EQ(redact_authorization("Bearer sk-secret"), "Bearer ***");
  EXPECT_EQ(redact_authorization(""), "");
  EXPECT_EQ(redact_authorization("token"), "***");
}

TEST(HttpBackend, QueryAgainstLocalServer) {
  FakeApi api;
  ::setenv("CTFAGENT_TEST_KEY", "sk-live-secret", 1);
  auto cfg = api.config();
  HttpBackend b(cfg);
  auto r = b.query({{"system", "s"}, {"user", "u"}});
  EXPECT_EQ(r.text, "reply 0");
  EXPECT_EQ(r.usage.tokens_in, 1000u);
  EXPECT_EQ(r.usage.tokens_out, 500u);
  ASSERT_EQ(api.bodies.size(), 1u);
  EXPECT_EQ(api.bodies[0]["temperature"], 0.0);
  EXPECT_EQ(api.auth[0], "Bearer sk-live-secret");
  EXPECT_EQ(r.exchange["request_headers"]["Authorization"], "Bearer ***");
  EXPECT_EQ(r.exchange.dump().find("sk-live-secret"), std::string::npos);
  ::unsetenv("CTFAGENT_TEST_KEY");
}

TEST(HttpBackend, RetriesTransientErrors) {
  FakeApi api;
  api.script = {503};
  HttpBackend b(api.config());
  EXPECT_EQ(b.query({{"user", "u"}}).text, "reply 1");
  EXPECT_EQ(api.bodies.size(), 2u);
}

TEST(HttpBackend, GivesUpAfterRetries) {
  FakeApi api;
  api.script = {429, 429, 429};
  HttpBackend b(api.config());
  EXPECT_THROW(b.query({{"user", "u"}}), TransportError);
  EXPECT_EQ(api.bodies.size(), 2u);
}

TEST(HttpBackend, ContextLengthRejection) {
  FakeApi api;
  api.script = {400};
  api.error_body = R"({"error": {"code": "context_length_exceeded"}})";
  HttpBackend b(api.config());
  EXPECT_THROW(b.query({{"user", "u"}}), ContextOverflow);
}

TEST(HttpBackend, UnreachableEndpoint) {
  int port;
  {
    FakeApi api;
    port = api.port;
  }
  ModelConfig c;
  c.backend = Backend::http_api;
  c.endpoint = "http://127.0.0.1:" + std::to_string(port);
  c.max_retries = 0;
  HttpBackend b(c);
  EXPECT_THROW(b.query({{"user", "u"}}), TransportError);
}

TEST(RateLimiter, SpacesRequests) {
  RateLimiter rl(20.0, 1.0);
  auto start = std::chrono::steady_clock::now();
  for (int i = 0; i < 5; ++i) rl.acquire();
  auto elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  EXPECT_GE(elapsed, 4 / 20.0 - 0.02);
}
