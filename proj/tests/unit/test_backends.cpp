#include <httplib.h>

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <set>
#include <cstdlib>
#include <fstream>
#include <thread>

#include "compressbench/backends.hpp"
#include "compressbench/prompt.hpp"
#include "test_support.hpp"

namespace cb = compressbench;
using namespace std::chrono_literals;

namespace {

cb::VerboseCompensationParams verbose_params() {
  cb::VerboseCompensationParams p;
  p.t0 = 25;
  p.alpha = 60;
  p.tau = 0.35;
  p.tmax = 1024;
  p.beta = 0.74;
  p.dispersion_linear = 0.25;
  p.dispersion_ceiling = 0.10;
  return p;
}

cb::CompletionRequest request_for(std::string prompt, double psi = 1.0) {
  cb::CompletionRequest r;
  r.model_name = "m";
  r.prompt_text = std::move(prompt);
  r.psi = psi;
  return r;
}

// Transport double that counts calls and replays a scripted status sequence.
class ScriptedTransport final : public cb::HttpTransport {
 public:
  explicit ScriptedTransport(std::vector<cb::HttpResult> script) : script_(std::move(script)) {}

  cb::HttpResult post(const std::string&, const std::vector<std::pair<std::string, std::string>>& headers,
                      const std::string& body, std::chrono::milliseconds) override {
    last_headers = headers;
    last_body = body;
    const std::size_t i = calls++;
    return script_.at(std::min(i, script_.size() - 1));
  }

  std::atomic<std::size_t> calls{0};
  std::vector<std::pair<std::string, std::string>> last_headers;
  std::string last_body;

 private:
  std::vector<cb::HttpResult> script_;
};

const std::string kChatOk =
    R"({"choices":[{"message":{"role":"assistant","content":"def f(): return 1"},)"
    R"("finish_reason":"stop"}],"usage":{"prompt_tokens":9,"completion_tokens":42}})";

cb::HttpBackendConfig fast_http(std::string endpoint) {
  cb::HttpBackendConfig config;
  config.endpoint = std::move(endpoint);
  config.retry.max_attempts = 3;
  config.retry.initial_backoff = 1ms;
  config.retry.max_backoff = 2ms;
  return config;
}

}  // namespace

TEST(Synthesize, FullSurvivalZeroDispersionGivesBaseline) {
  auto p = verbose_params();
  p.t0 = 18.1;
  p.dispersion_linear = p.dispersion_ceiling = 0;
  cb::Rng rng(1);
  EXPECT_EQ(cb::synthesize_length(p, 1.0, rng), 18u);
  p.t0 = 25;
  EXPECT_EQ(cb::synthesize_length(p, 1.0, rng), 25u);
}

TEST(Synthesize, LinearBranchMatchesHumanEvalMean) {
  auto p = verbose_params();
  p.alpha = 379;
  p.dispersion_linear = 0;
  cb::Rng rng(3);
  // 25 + 379 * 0.28 = 131.12
  EXPECT_EQ(cb::synthesize_length(p, 0.72, rng), 131u);
}

TEST(Synthesize, CeilingFractionTracksBeta) {
  const auto p = verbose_params();
  cb::Rng rng(2024);
  int hits = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) hits += cb::synthesize_length(p, 0.15, rng) == 1024u;
  EXPECT_NEAR(hits / double(n), 0.74, 0.02);
}

TEST(Synthesize, DrawsStayInRange) {
  auto p = verbose_params();
  p.dispersion_linear = 3.0;
  p.dispersion_ceiling = 3.0;
  cb::Rng rng(5);
  for (double psi : {0.0, 0.2, 0.34, 0.35, 0.6, 1.0}) {
    for (int i = 0; i < 500; ++i) {
      EXPECT_LE(cb::synthesize_length(p, psi, rng), 1024u);
    }
  }
}

TEST(Synthesize, SameSeedSameSequence) {
  const auto p = verbose_params();
  cb::Rng a(77), b(77);
  for (int i = 0; i < 200; ++i) {
    const double psi = (i % 21) / 20.0;
    EXPECT_EQ(cb::synthesize_length(p, psi, a), cb::synthesize_length(p, psi, b));
  }
}

TEST(Synthesize, RejectsBadInputs) {
  cb::Rng rng(1);
  auto p = verbose_params();
  EXPECT_CB_ERROR(cb::synthesize_length(p, 1.1, rng), kInvalidArgument);
  EXPECT_CB_ERROR(cb::synthesize_length(p, -0.1, rng), kInvalidArgument);
  p.tau = 1.0;
  EXPECT_CB_ERROR(cb::synthesize_length(p, 0.5, rng), kInvalidParams);
  p = verbose_params();
  p.beta = 1.5;
  EXPECT_CB_ERROR(p.validate(), kInvalidParams);
  p = verbose_params();
  p.tmax = 20;
  EXPECT_CB_ERROR(p.validate(), kInvalidParams);
  p = verbose_params();
  p.t0 = -1;
  EXPECT_CB_ERROR(p.validate(), kInvalidParams);
  p = verbose_params();
  p.dispersion_linear = -0.1;
  EXPECT_CB_ERROR(p.validate(), kInvalidParams);
}

TEST(Params, ParsesScalarAndSplitDispersion) {
  auto p = cb::parse_params(R"({"t0":10,"alpha":5,"tau":0.4,"beta":0.2,"dispersion":0.3})");
  EXPECT_DOUBLE_EQ(p.dispersion_linear, 0.3);
  EXPECT_DOUBLE_EQ(p.dispersion_ceiling, 0.3);
  EXPECT_DOUBLE_EQ(p.tmax, 1024);
  p = cb::parse_params(
      R"({"t0":10,"alpha":5,"tau":0.4,"beta":0.2,"tmax":512,"dispersion":{"linear":0.1,"ceiling":0.2}})");
  EXPECT_DOUBLE_EQ(p.dispersion_linear, 0.1);
  EXPECT_DOUBLE_EQ(p.dispersion_ceiling, 0.2);
  EXPECT_DOUBLE_EQ(p.tmax, 512);
  EXPECT_CB_ERROR(cb::parse_params(R"({"t0":10,"alpha":5,"tau":1.4,"beta":0.2})"),
                  kInvalidParams);
}

TEST(CountOutputTokens, MatchesTokenizer) {
  EXPECT_EQ(cb::count_output_tokens("a b c"), 3u);
  EXPECT_EQ(cb::count_output_tokens(""), 0u);
  EXPECT_EQ(cb::count_output_tokens("\n\n"), 0u);
  for (const char* s : {"  x\ty\n z ", "one", "def f(x):\n    return x"}) {
    EXPECT_EQ(cb::count_output_tokens(s), cb::tokenize(s).size()) << s;
  }
}

TEST(Digest, StableAndSensitiveToEveryKeyField) {
  const auto base = request_for("write a function");
  const std::string d = cb::request_digest(base);
  EXPECT_EQ(d.size(), 64u);
  EXPECT_EQ(d, cb::request_digest(base));

  auto other = base;
  other.psi = 0.2;
  other.replicate_index = 2;
  EXPECT_EQ(cb::request_digest(other), d) << "trial context must not change the key";

  auto m = base;
  m.model_name = "n";
  auto t = base;
  t.prompt_text += "!";
  auto s = base;
  s.system_prompt = "be brief";
  auto temp = base;
  temp.temperature = 0.5;
  auto mt = base;
  mt.max_tokens = 512;
  for (const auto& r : {m, t, s, temp, mt}) EXPECT_NE(cb::request_digest(r), d);
}

TEST(Request, Validation) {
  auto r = request_for("x");
  r.max_tokens = 0;
  EXPECT_CB_ERROR(r.validate(), kInvalidArgument);
  r = request_for("x");
  r.temperature = -0.1;
  EXPECT_CB_ERROR(r.validate(), kInvalidArgument);
  r = request_for("x", 1.5);
  EXPECT_CB_ERROR(r.validate(), kInvalidArgument);
}

TEST(SyntheticBackend, DeterministicAcrossInstances) {
  cb::SyntheticBackendConfig config{verbose_params(), 11, false};
  cb::SyntheticBackend a(config), b(config);
  for (int i = 0; i < 20; ++i) {
    auto req = request_for("prompt " + std::to_string(i), 0.05 * i);
    const auto ra = a.complete(req);
    const auto rb = b.complete(req);
    EXPECT_EQ(ra.output_tokens, rb.output_tokens);
    EXPECT_EQ(ra.output_text, rb.output_text);
    EXPECT_EQ(cb::count_output_tokens(ra.output_text), ra.output_tokens);
    EXPECT_EQ(ra.hit_ceiling, ra.output_tokens == req.max_tokens);
  }
}

TEST(SyntheticBackend, ReplicatesIdenticalUnlessPerReplicateSeeds) {
  auto req = request_for("same prompt", 0.9);
  cb::SyntheticBackend fixed({verbose_params(), 3, false});
  cb::SyntheticBackend varied({verbose_params(), 3, true});
  std::set<std::uint32_t> fixed_lengths, varied_lengths;
  for (std::uint32_t rep = 0; rep < 5; ++rep) {
    req.replicate_index = rep;
    fixed_lengths.insert(fixed.complete(req).output_tokens);
    varied_lengths.insert(varied.complete(req).output_tokens);
  }
  EXPECT_EQ(fixed_lengths.size(), 1u);
  EXPECT_GT(varied_lengths.size(), 1u);
}

TEST(SyntheticBackend, RespectsRequestCeilingAndNeedsPsi) {
  cb::SyntheticBackend backend({verbose_params(), 1, false});
  auto req = request_for("p", 0.0);
  req.max_tokens = 64;
  for (int i = 0; i < 30; ++i) {
    req.prompt_text = "p" + std::to_string(i);
    const auto r = backend.complete(req);
    EXPECT_LE(r.output_tokens, 64u);
    EXPECT_EQ(r.hit_ceiling, r.output_tokens == 64u);
  }
  auto no_psi = request_for("p");
  no_psi.psi.reset();
  EXPECT_CB_ERROR(backend.complete(no_psi), kInvalidArgument);
}

TEST(ChatProtocol, RequestBodyShape) {
  auto req = request_for("hello there");
  req.system_prompt = "sys";
  const auto body = nlohmann::json::parse(cb::chat_request_body(req));
  EXPECT_EQ(body["model"], "m");
  ASSERT_EQ(body["messages"].size(), 2u);
  EXPECT_EQ(body["messages"][0]["role"], "system");
  EXPECT_EQ(body["messages"][1]["content"], "hello there");
  EXPECT_EQ(body["temperature"], 0.0);
  EXPECT_EQ(body["max_tokens"], 1024);
  req.system_prompt.clear();
  EXPECT_EQ(nlohmann::json::parse(cb::chat_request_body(req))["messages"].size(), 1u);
}

TEST(ChatProtocol, ParsesUsageAndFallsBackToWordCount) {
  const auto req = request_for("x");
  auto r = cb::parse_chat_response(kChatOk, req);
  EXPECT_EQ(r.output_tokens, 42u);
  EXPECT_EQ(r.token_source, cb::TokenSource::kProvider);
  EXPECT_FALSE(r.hit_ceiling);

  r = cb::parse_chat_response(R"({"choices":[{"message":{"content":"a b c d"}}]})", req);
  EXPECT_EQ(r.output_tokens, 4u);
  EXPECT_EQ(r.token_source, cb::TokenSource::kWordCount);

  r = cb::parse_chat_response(
      R"({"choices":[{"message":{"content":"a"},"finish_reason":"length"}],"usage":{"completion_tokens":1024}})",
      req);
  EXPECT_TRUE(r.hit_ceiling);
  EXPECT_EQ(r.output_tokens, 1024u);

  EXPECT_CB_ERROR(cb::parse_chat_response("not json", req), kPermanentBackend);
  EXPECT_CB_ERROR(cb::parse_chat_response(R"({"choices":[]})", req), kPermanentBackend);
}

TEST(HttpBackend, RetriesTransientThenSucceeds) {
  auto transport = std::make_shared<ScriptedTransport>(std::vector<cb::HttpResult>{
      {429, "slow down", ""}, {503, "busy", ""}, {200, kChatOk, ""}});
  cb::HttpBackend backend(fast_http("http://stub/v1/chat/completions"), transport, 1, 1000ms);
  const auto r = backend.complete(request_for("x"));
  EXPECT_EQ(r.output_tokens, 42u);
  EXPECT_EQ(transport->calls.load(), 3u);
  EXPECT_TRUE(r.latency_ms.has_value());
}

TEST(HttpBackend, GivesUpAfterBoundedAttempts) {
  auto transport = std::make_shared<ScriptedTransport>(
      std::vector<cb::HttpResult>{{0, "", "connection refused"}});
  cb::HttpBackend backend(fast_http("http://stub/"), transport, 1, 1000ms);
  EXPECT_CB_ERROR(backend.complete(request_for("x")), kTransientBackend);
  EXPECT_EQ(transport->calls.load(), 3u);
}

TEST(HttpBackend, ClientErrorIsPermanentWithoutRetry) {
  auto transport = std::make_shared<ScriptedTransport>(
      std::vector<cb::HttpResult>{{400, "bad request", ""}, {200, kChatOk, ""}});
  cb::HttpBackend backend(fast_http("http://stub/"), transport, 1, 1000ms);
  EXPECT_CB_ERROR(backend.complete(request_for("x")), kPermanentBackend);
  EXPECT_EQ(transport->calls.load(), 1u);
}

TEST(HttpBackend, AuthHeaderFromEnvironment) {
  auto transport =
      std::make_shared<ScriptedTransport>(std::vector<cb::HttpResult>{{200, kChatOk, ""}});
  auto config = fast_http("http://stub/");
  config.auth_env_var = "CB_TEST_TOKEN_VAR";
  config.headers["X-Org"] = "lab";
  cb::HttpBackend backend(config, transport, 1, 1000ms);

  ::unsetenv("CB_TEST_TOKEN_VAR");
  EXPECT_CB_ERROR(backend.complete(request_for("x")), kPermanentBackend);
  EXPECT_EQ(transport->calls.load(), 0u);

  ::setenv("CB_TEST_TOKEN_VAR", "sekret", 1);
  backend.complete(request_for("x"));
  const auto& h = transport->last_headers;
  EXPECT_NE(std::find(h.begin(), h.end(), std::pair<std::string, std::string>{
                                              "Authorization", "Bearer sekret"}),
            h.end());
  EXPECT_NE(std::find(h.begin(), h.end(), std::pair<std::string, std::string>{"X-Org", "lab"}),
            h.end());
  ::unsetenv("CB_TEST_TOKEN_VAR");
}

TEST(HttpBackend, LocalStubServerRoundTrip) {
  httplib::Server server;
  std::atomic<int> hits{0};
  server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    // First call fails transiently to exercise the retry path over real sockets.
    if (hits++ == 0) {
      res.status = 500;
      res.set_content("oops", "text/plain");
      return;
    }
    const auto body = nlohmann::json::parse(req.body);
    nlohmann::json reply = {
        {"choices", {{{"message", {{"role", "assistant"}, {"content", "ok"}}},
                      {"finish_reason", "stop"}}}},
        {"usage", {{"completion_tokens", 37}}},
        {"echo_model", body["model"]}};
    res.set_content(reply.dump(), "application/json");
  });
  server.Post("/bad", [](const httplib::Request&, httplib::Response& res) {
    res.status = 401;
    res.set_content("unauthorized", "text/plain");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  ASSERT_GT(port, 0);
  std::thread serving([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  const std::string origin = "http://127.0.0.1:" + std::to_string(port);
  cb::HttpBackend backend(fast_http(origin + "/v1/chat/completions"), nullptr, 2, 5000ms);
  const auto r = backend.complete(request_for("hi"));
  EXPECT_EQ(r.output_tokens, 37u);
  EXPECT_EQ(r.output_text, "ok");
  EXPECT_EQ(hits.load(), 2);

  cb::HttpBackend bad(fast_http(origin + "/bad"), nullptr, 1, 5000ms);
  EXPECT_CB_ERROR(bad.complete(request_for("hi")), kPermanentBackend);

  server.stop();
  serving.join();
}

TEST(Replay, HitIsStableAndMissNamesDigest) {
  cb::ReplayArchive archive;
  auto req = request_for("archived prompt");
  cb::CompletionResponse resp;
  resp.output_text = "a b c";
  resp.output_tokens = 3;
  archive.add({cb::request_digest(req), req, resp});
  cb::ReplayBackend backend(archive);
  for (int i = 0; i < 3; ++i) {
    const auto r = backend.complete(req);
    EXPECT_EQ(r.output_tokens, 3u);
    EXPECT_EQ(r.output_text, "a b c");
  }
  auto miss = req;
  miss.temperature = 0.7;
  try {
    backend.complete(miss);
    FAIL() << "expected a replay miss";
  } catch (const cb::Error& e) {
    EXPECT_EQ(e.code(), cb::ErrorCode::kReplayMiss);
    EXPECT_NE(std::string(e.what()).find(cb::request_digest(miss)), std::string::npos);
  }
}

TEST(Replay, RecordThenReplayWithoutNetwork) {
  const auto dir = cbtest::scratch_dir();
  const auto archive_path = dir / "archive.jsonl";
  auto transport =
      std::make_shared<ScriptedTransport>(std::vector<cb::HttpResult>{{200, kChatOk, ""}});

  cb::BackendConfig recording;
  recording.settings = fast_http("http://stub/");
  recording.record_archive = archive_path;
  auto live = cb::make_backend(recording, transport);
  std::vector<cb::CompletionRequest> requests;
  for (int i = 0; i < 4; ++i) requests.push_back(request_for("q" + std::to_string(i)));
  for (const auto& r : requests) live->complete(r);
  EXPECT_EQ(transport->calls.load(), 4u);

  cb::BackendConfig replay;
  replay.settings = cb::ReplayBackendConfig{archive_path};
  auto offline = cb::make_backend(replay, transport);
  for (const auto& r : requests) EXPECT_EQ(offline->complete(r).output_tokens, 42u);
  EXPECT_EQ(transport->calls.load(), 4u) << "replay must not touch the transport";
}

TEST(Replay, ArchiveWithoutDigestOrTokenCount) {
  const auto dir = cbtest::scratch_dir();
  cbtest::write_file(dir / "a.jsonl",
                     R"({"request":{"model_name":"m","prompt_text":"p"},"response":{"output_text":"x y"}})"
                     "\n\n");
  const auto archive = cb::ReplayArchive::load(dir / "a.jsonl");
  ASSERT_EQ(archive.size(), 1u);
  cb::CompletionRequest req;
  req.model_name = "m";
  req.prompt_text = "p";
  const auto* entry = archive.find(cb::request_digest(req));
  ASSERT_NE(entry, nullptr);
  EXPECT_EQ(entry->response.output_tokens, 2u);
  EXPECT_EQ(entry->response.token_source, cb::TokenSource::kWordCount);

  EXPECT_CB_ERROR(cb::ReplayArchive::load(dir / "missing.jsonl"), kIo);
  cbtest::write_file(dir / "bad.jsonl", "{not json\n");
  EXPECT_CB_ERROR(cb::ReplayArchive::load(dir / "bad.jsonl"), kParse);
}

TEST(BackendConfig, ParsesEachKind) {
  auto c = cb::parse_backend_config(
      R"({"kind":"synthetic","seed":9,"params":{"t0":1,"alpha":2,"tau":0.5,"beta":0.1}})");
  EXPECT_EQ(c.kind(), "synthetic");
  EXPECT_EQ(std::get<cb::SyntheticBackendConfig>(c.settings).seed, 9u);

  c = cb::parse_backend_config(
      R"({"kind":"http","endpoint":"https://x/v1","auth_env":"K","max_parallel":2,"retry":{"max_attempts":2}})");
  EXPECT_EQ(c.kind(), "http");
  EXPECT_EQ(c.max_parallel, 2u);
  EXPECT_EQ(std::get<cb::HttpBackendConfig>(c.settings).retry.max_attempts, 2);

  c = cb::parse_backend_config(R"({"kind":"replay","archive":"/tmp/a.jsonl"})");
  EXPECT_EQ(c.kind(), "replay");

  EXPECT_CB_ERROR(cb::parse_backend_config(R"({"kind":"carrier-pigeon"})"), kConfig);
  EXPECT_CB_ERROR(cb::parse_backend_config(R"({"kind":"replay","archive":"a","max_parallel":0})"),
                  kConfig);
}

TEST(Backend, ConcurrencyNeverExceedsLimit) {
  class Probe final : public cb::HttpTransport {
   public:
    cb::HttpResult post(const std::string&, const std::vector<std::pair<std::string, std::string>>&,
                        const std::string&, std::chrono::milliseconds) override {
      const int now = ++active;
      int seen = peak.load();
      while (now > seen && !peak.compare_exchange_weak(seen, now)) {
      }
      std::this_thread::sleep_for(5ms);
      --active;
      return {200, kChatOk, ""};
    }
    std::atomic<int> active{0}, peak{0};
  };
  auto probe = std::make_shared<Probe>();
  cb::HttpBackend backend(fast_http("http://stub/"), probe, 2, 1000ms);
  std::vector<std::thread> threads;
  for (int i = 0; i < 8; ++i) {
    threads.emplace_back([&] { backend.complete(request_for("x")); });
  }
  for (auto& t : threads) t.join();
  EXPECT_LE(probe->peak.load(), 2);
  EXPECT_GE(probe->peak.load(), 1);
}
