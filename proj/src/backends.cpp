#include "compressbench/backends.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <random>
#include <thread>

#include <openssl/evp.h>

#include "backend_json.hpp"
#include "compressbench/error.hpp"
#include "compressbench/prompt.hpp"
#include "io_util.hpp"

namespace compressbench {

using nlohmann::json;

void CompletionRequest::validate() const {
  if (max_tokens < 1) {
    throw Error(ErrorCode::kInvalidArgument, "max_tokens must be >= 1");
  }
  if (!(temperature >= 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "temperature must be >= 0");
  }
  if (psi && !(*psi >= 0.0 && *psi <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "psi must lie in [0, 1]");
  }
}

std::string_view token_source_name(TokenSource source) noexcept {
  return source == TokenSource::kProvider ? "provider" : "word_count";
}

void VerboseCompensationParams::validate() const {
  auto fail = [](const std::string& what) {
    throw Error(ErrorCode::kInvalidParams, "verbose-compensation params: " + what);
  };
  if (!(t0 >= 0.0)) fail("t0 must be >= 0");
  if (!std::isfinite(alpha)) fail("alpha must be finite");
  if (!(tau > 0.0 && tau < 1.0)) fail("tau must lie in (0, 1)");
  if (!(beta >= 0.0 && beta <= 1.0)) fail("beta must lie in [0, 1]");
  if (!(tmax > t0)) fail("tmax must exceed t0");
  if (!(dispersion_linear >= 0.0) || !(dispersion_ceiling >= 0.0)) {
    fail("dispersion must be >= 0");
  }
}

double VerboseCompensationParams::regime_center(double psi) const {
  return psi >= tau ? t0 + alpha * (1.0 - psi) : tmax * beta;
}

namespace {

// Normal draw restricted to [lo, hi); falls back to the nearest bound.
double truncated_normal(double center, double sd, double lo, double hi, Rng& rng) {
  if (sd <= 0.0) return std::clamp(center, lo, hi);
  std::normal_distribution<double> noise(center, sd);
  for (int attempt = 0; attempt < 256; ++attempt) {
    const double x = noise(rng);
    if (x >= lo && x < hi) return x;
  }
  return std::clamp(center, lo, hi);
}

}  // namespace

std::uint32_t synthesize_length(const VerboseCompensationParams& params, double psi,
                                Rng& rng) {
  params.validate();
  if (!(psi >= 0.0 && psi <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "psi must lie in [0, 1]");
  }
  const double ceiling = std::floor(params.tmax);
  if (psi >= params.tau) {
    const double center = params.regime_center(psi);
    double x = truncated_normal(center, params.dispersion_linear * center, 0.0,
                                INFINITY, rng);
    x = std::min(std::round(x), ceiling);
    return static_cast<std::uint32_t>(std::max(0.0, x));
  }
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  if (unit(rng) < params.beta) return static_cast<std::uint32_t>(ceiling);
  const double center = params.regime_center(psi);
  const double x = truncated_normal(center, params.dispersion_ceiling * center, 0.0,
                                    ceiling, rng);
  // The body never reaches the ceiling; ceiling hits come only from beta.
  return static_cast<std::uint32_t>(std::min(std::round(x), std::max(0.0, ceiling - 1)));
}

std::size_t count_output_tokens(std::string_view response_text) noexcept {
  return count_words(response_text);
}

std::string request_digest(const CompletionRequest& request) {
  const json key = {{"model_name", request.model_name},
                    {"prompt_text", request.prompt_text},
                    {"system_prompt", request.system_prompt},
                    {"temperature", request.temperature},
                    {"max_tokens", request.max_tokens}};
  const std::string canonical = key.dump();
  unsigned char hash[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  if (EVP_Digest(canonical.data(), canonical.size(), hash, &length, EVP_sha256(),
                 nullptr) != 1) {
    throw Error(ErrorCode::kInternal, "SHA-256 digest failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * length);
  for (unsigned int i = 0; i < length; ++i) {
    out.push_back(kHex[hash[i] >> 4]);
    out.push_back(kHex[hash[i] & 0xf]);
  }
  return out;
}

std::string_view BackendConfig::kind() const noexcept {
  switch (settings.index()) {
    case 0: return "http";
    case 1: return "replay";
    default: return "synthetic";
  }
}

// ---------------------------------------------------------------------------
// Backend base

Backend::Backend(std::size_t max_parallel)
    : max_parallel_(std::max<std::size_t>(1, max_parallel)),
      slots_(static_cast<std::ptrdiff_t>(max_parallel_)) {}

CompletionResponse Backend::complete(const CompletionRequest& request) {
  request.validate();
  slots_.acquire();
  struct Release {
    std::counting_semaphore<>& slots;
    ~Release() { slots.release(); }
  } release{slots_};
  return do_complete(request);
}

// ---------------------------------------------------------------------------
// Synthetic

SyntheticBackend::SyntheticBackend(SyntheticBackendConfig config, std::size_t max_parallel)
    : Backend(max_parallel), config_(std::move(config)) {
  config_.params.validate();
}

CompletionResponse SyntheticBackend::do_complete(const CompletionRequest& request) {
  if (!request.psi) {
    throw Error(ErrorCode::kInvalidArgument,
                "synthetic backend needs the prompt's instruction survival (psi)");
  }
  std::uint64_t seed = substream_seed(config_.seed, stable_hash(request_digest(request)));
  if (config_.per_replicate_seeds) {
    seed = substream_seed(seed, request.replicate_index + 1);
  }
  Rng rng(seed);
  const std::uint32_t drawn = synthesize_length(config_.params, *request.psi, rng);
  const std::uint32_t tokens = std::min(drawn, request.max_tokens);

  CompletionResponse response;
  response.output_tokens = tokens;
  response.hit_ceiling = tokens == request.max_tokens;
  response.token_source = TokenSource::kProvider;
  response.output_text.reserve(tokens * 4);
  for (std::uint32_t i = 0; i < tokens; ++i) {
    if (i != 0) response.output_text.push_back(' ');
    response.output_text += "tok";
  }
  return response;
}

// ---------------------------------------------------------------------------
// Replay

namespace detail {

json request_to_json(const CompletionRequest& request) {
  return {{"model_name", request.model_name},
          {"prompt_text", request.prompt_text},
          {"system_prompt", request.system_prompt},
          {"temperature", request.temperature},
          {"max_tokens", request.max_tokens}};
}

json response_to_json(const CompletionResponse& response) {
  json out = {{"output_text", response.output_text},
              {"output_tokens", response.output_tokens},
              {"hit_ceiling", response.hit_ceiling},
              {"token_source", token_source_name(response.token_source)}};
  if (response.latency_ms) out["latency_ms"] = *response.latency_ms;
  return out;
}

}  // namespace detail

namespace {

CompletionRequest request_from_json(const json& doc) {
  CompletionRequest request;
  request.model_name = detail::get_field<std::string>(doc, "model_name", "archive request");
  request.prompt_text = detail::get_field<std::string>(doc, "prompt_text", "archive request");
  request.system_prompt =
      detail::get_field_or<std::string>(doc, "system_prompt", "", "archive request");
  request.temperature =
      detail::get_field_or<double>(doc, "temperature", 0.0, "archive request");
  request.max_tokens =
      detail::get_field_or<std::uint32_t>(doc, "max_tokens", 1024, "archive request");
  return request;
}

CompletionResponse response_from_json(const json& doc, std::uint32_t max_tokens) {
  CompletionResponse response;
  response.output_text =
      detail::get_field_or<std::string>(doc, "output_text", "", "archive response");
  if (doc.contains("output_tokens") && !doc.at("output_tokens").is_null()) {
    response.output_tokens =
        detail::get_field<std::uint32_t>(doc, "output_tokens", "archive response");
    const auto source =
        detail::get_field_or<std::string>(doc, "token_source", "provider", "archive response");
    response.token_source =
        source == "word_count" ? TokenSource::kWordCount : TokenSource::kProvider;
  } else {
    response.output_tokens =
        static_cast<std::uint32_t>(count_output_tokens(response.output_text));
    response.token_source = TokenSource::kWordCount;
  }
  response.output_tokens = std::min(response.output_tokens, max_tokens);
  response.hit_ceiling =
      detail::get_field_or<bool>(doc, "hit_ceiling", false, "archive response") ||
      response.output_tokens == max_tokens;
  if (response.hit_ceiling) response.output_tokens = max_tokens;
  if (doc.contains("latency_ms") && doc.at("latency_ms").is_number()) {
    response.latency_ms = doc.at("latency_ms").get<double>();
  }
  return response;
}

}  // namespace

ReplayArchive ReplayArchive::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open replay archive " + path.string());
  ReplayArchive archive;
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string context = path.string() + ":" + std::to_string(line_number);
    const json doc = detail::parse_json(line, context);
    ArchiveEntry entry;
    entry.request = request_from_json(detail::get_field<json>(doc, "request", context));
    entry.response = response_from_json(detail::get_field<json>(doc, "response", context),
                                        entry.request.max_tokens);
    entry.digest = detail::get_field_or<std::string>(doc, "digest", "", context);
    if (entry.digest.empty()) entry.digest = request_digest(entry.request);
    archive.add(std::move(entry));
  }
  return archive;
}

void ReplayArchive::add(ArchiveEntry entry) {
  auto digest = entry.digest;
  entries_.insert_or_assign(std::move(digest), std::move(entry));
}

const ArchiveEntry* ReplayArchive::find(std::string_view digest) const {
  auto it = entries_.find(std::string(digest));
  return it == entries_.end() ? nullptr : &it->second;
}

std::string archive_line(const ArchiveEntry& entry) {
  const json doc = {{"digest", entry.digest},
                    {"request", detail::request_to_json(entry.request)},
                    {"response", detail::response_to_json(entry.response)}};
  return doc.dump();
}

ReplayBackend::ReplayBackend(ReplayArchive archive, std::size_t max_parallel)
    : Backend(max_parallel), archive_(std::move(archive)) {}

CompletionResponse ReplayBackend::do_complete(const CompletionRequest& request) {
  const std::string digest = request_digest(request);
  const ArchiveEntry* entry = archive_.find(digest);
  if (entry == nullptr) {
    throw Error(ErrorCode::kReplayMiss, "no archived response for digest " + digest);
  }
  return entry->response;
}

// ---------------------------------------------------------------------------
// HTTP

std::string chat_request_body(const CompletionRequest& request) {
  json messages = json::array();
  if (!request.system_prompt.empty()) {
    messages.push_back({{"role", "system"}, {"content", request.system_prompt}});
  }
  messages.push_back({{"role", "user"}, {"content", request.prompt_text}});
  const json body = {{"model", request.model_name},
                     {"messages", std::move(messages)},
                     {"temperature", request.temperature},
                     {"max_tokens", request.max_tokens}};
  return body.dump();
}

CompletionResponse parse_chat_response(std::string_view body,
                                       const CompletionRequest& request) {
  json doc;
  try {
    doc = json::parse(body);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kPermanentBackend,
                std::string("malformed chat completion response: ") + e.what());
  }
  try {
    const auto& choice = doc.at("choices").at(0);
    CompletionResponse response;
    const auto& content = choice.at("message").at("content");
    response.output_text = content.is_string() ? content.get<std::string>() : "";
    const auto usage = doc.find("usage");
    if (usage != doc.end() && usage->contains("completion_tokens") &&
        usage->at("completion_tokens").is_number_integer()) {
      response.output_tokens = usage->at("completion_tokens").get<std::uint32_t>();
      response.token_source = TokenSource::kProvider;
    } else {
      response.output_tokens =
          static_cast<std::uint32_t>(count_output_tokens(response.output_text));
      response.token_source = TokenSource::kWordCount;
    }
    const bool truncated = choice.contains("finish_reason") &&
                           choice.at("finish_reason").is_string() &&
                           choice.at("finish_reason").get<std::string>() == "length";
    response.hit_ceiling = truncated || response.output_tokens >= request.max_tokens;
    if (response.hit_ceiling) response.output_tokens = request.max_tokens;
    return response;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kPermanentBackend,
                std::string("unexpected chat completion shape: ") + e.what());
  }
}

HttpBackend::HttpBackend(HttpBackendConfig config, std::shared_ptr<HttpTransport> transport,
                         std::size_t max_parallel, std::chrono::milliseconds timeout)
    : Backend(max_parallel),
      config_(std::move(config)),
      transport_(std::move(transport)),
      timeout_(timeout) {
  if (config_.endpoint.empty()) {
    throw Error(ErrorCode::kConfig, "http backend needs an endpoint");
  }
  if (!transport_) transport_ = make_default_transport();
  if (config_.retry.max_attempts < 1) config_.retry.max_attempts = 1;
}

CompletionResponse HttpBackend::do_complete(const CompletionRequest& request) {
  std::vector<std::pair<std::string, std::string>> headers{
      {"Content-Type", "application/json"}};
  if (!config_.auth_env_var.empty()) {
    const char* token = std::getenv(config_.auth_env_var.c_str());
    if (token == nullptr || *token == '\0') {
      throw Error(ErrorCode::kPermanentBackend,
                  "auth token variable " + config_.auth_env_var + " is not set");
    }
    headers.emplace_back("Authorization", std::string("Bearer ") + token);
  }
  for (const auto& [name, value] : config_.headers) headers.emplace_back(name, value);

  const std::string body = chat_request_body(request);
  auto backoff = config_.retry.initial_backoff;
  std::string last_error;
  for (int attempt = 1; attempt <= config_.retry.max_attempts; ++attempt) {
    const auto started = std::chrono::steady_clock::now();
    const HttpResult result = transport_->post(config_.endpoint, headers, body, timeout_);
    const auto elapsed = std::chrono::duration<double, std::milli>(
        std::chrono::steady_clock::now() - started);

    if (result.status >= 200 && result.status < 300) {
      CompletionResponse response = parse_chat_response(result.body, request);
      response.latency_ms = elapsed.count();
      return response;
    }
    const bool transient =
        result.status == 0 || result.status == 408 || result.status == 429 ||
        result.status >= 500;
    last_error = result.status == 0
                     ? "transport error: " + result.error
                     : "HTTP " + std::to_string(result.status) + ": " + result.body;
    if (!transient) throw Error(ErrorCode::kPermanentBackend, last_error);
    if (attempt < config_.retry.max_attempts) {
      std::this_thread::sleep_for(backoff);
      backoff = std::min(config_.retry.max_backoff,
                         std::chrono::milliseconds(static_cast<std::int64_t>(
                             static_cast<double>(backoff.count()) * config_.retry.multiplier)));
    }
  }
  throw Error(ErrorCode::kTransientBackend,
              "gave up after " + std::to_string(config_.retry.max_attempts) +
                  " attempts: " + last_error);
}

// ---------------------------------------------------------------------------
// Recording

RecordingBackend::RecordingBackend(std::unique_ptr<Backend> inner,
                                   std::filesystem::path archive)
    : Backend(inner->max_parallel()), inner_(std::move(inner)), archive_(std::move(archive)) {}

CompletionResponse RecordingBackend::do_complete(const CompletionRequest& request) {
  CompletionResponse response = inner_->complete(request);
  const ArchiveEntry entry{request_digest(request), request, response};
  const std::string line = archive_line(entry);
  std::lock_guard lock(write_mutex_);
  std::ofstream out(archive_, std::ios::app);
  if (!out) throw Error(ErrorCode::kIo, "cannot append to " + archive_.string());
  out << line << '\n';
  return response;
}

// ---------------------------------------------------------------------------
// Config

namespace detail {

VerboseCompensationParams params_from_json(const json& doc) {
  constexpr std::string_view ctx = "verbose-compensation params";
  VerboseCompensationParams params;
  params.t0 = get_field<double>(doc, "t0", ctx);
  params.alpha = get_field<double>(doc, "alpha", ctx);
  params.tau = get_field<double>(doc, "tau", ctx);
  params.tmax = get_field_or<double>(doc, "tmax", 1024.0, ctx);
  params.beta = get_field<double>(doc, "beta", ctx);
  if (auto it = doc.find("dispersion"); it != doc.end()) {
    if (it->is_number()) {
      params.dispersion_linear = params.dispersion_ceiling = it->get<double>();
    } else {
      params.dispersion_linear = get_field_or<double>(*it, "linear", 0.0, ctx);
      params.dispersion_ceiling = get_field_or<double>(*it, "ceiling", 0.0, ctx);
    }
  }
  params.validate();
  return params;
}

BackendConfig backend_config_from_json(const json& doc,
                                       const std::filesystem::path& base_dir) {
  constexpr std::string_view ctx = "backend config";
  if (!doc.is_object()) throw Error(ErrorCode::kConfig, "backend config must be an object");
  BackendConfig config;
  const auto kind = get_field<std::string>(doc, "kind", ctx);
  auto resolve = [&](const std::string& p) {
    std::filesystem::path path(p);
    return path.is_absolute() ? path : base_dir / path;
  };
  if (kind == "http") {
    HttpBackendConfig http;
    http.endpoint = get_field<std::string>(doc, "endpoint", ctx);
    http.auth_env_var = get_field_or<std::string>(doc, "auth_env", "", ctx);
    http.headers =
        get_field_or<std::map<std::string, std::string>>(doc, "headers", {}, ctx);
    if (auto it = doc.find("retry"); it != doc.end()) {
      http.retry.max_attempts = get_field_or<int>(*it, "max_attempts", 5, ctx);
      http.retry.initial_backoff =
          std::chrono::milliseconds(get_field_or<std::int64_t>(*it, "initial_backoff_ms", 500, ctx));
      http.retry.multiplier = get_field_or<double>(*it, "multiplier", 2.0, ctx);
      http.retry.max_backoff =
          std::chrono::milliseconds(get_field_or<std::int64_t>(*it, "max_backoff_ms", 8000, ctx));
    }
    config.settings = std::move(http);
  } else if (kind == "replay") {
    config.settings = ReplayBackendConfig{resolve(get_field<std::string>(doc, "archive", ctx))};
  } else if (kind == "synthetic") {
    SyntheticBackendConfig synthetic;
    synthetic.params = params_from_json(get_field<json>(doc, "params", ctx));
    synthetic.seed = get_field_or<std::uint64_t>(doc, "seed", 0, ctx);
    synthetic.per_replicate_seeds = get_field_or<bool>(doc, "per_replicate_seeds", false, ctx);
    config.settings = std::move(synthetic);
  } else {
    throw Error(ErrorCode::kConfig, "backend kind must be http, replay or synthetic");
  }
  config.max_parallel = get_field_or<std::size_t>(doc, "max_parallel", 4, ctx);
  if (config.max_parallel == 0) throw Error(ErrorCode::kConfig, "max_parallel must be >= 1");
  config.timeout = std::chrono::milliseconds(get_field_or<std::int64_t>(doc, "timeout_ms", 60000, ctx));
  if (auto it = doc.find("record_archive"); it != doc.end() && it->is_string()) {
    config.record_archive = resolve(it->get<std::string>());
  }
  return config;
}

}  // namespace detail

BackendConfig parse_backend_config(std::string_view json_text) {
  return detail::backend_config_from_json(detail::parse_json(json_text, "backend config"),
                                          std::filesystem::current_path());
}

VerboseCompensationParams parse_params(std::string_view json_text) {
  return detail::params_from_json(detail::parse_json(json_text, "params"));
}

std::unique_ptr<Backend> make_backend(const BackendConfig& config,
                                      std::shared_ptr<HttpTransport> transport) {
  std::unique_ptr<Backend> backend;
  if (const auto* http = std::get_if<HttpBackendConfig>(&config.settings)) {
    backend = std::make_unique<HttpBackend>(*http, std::move(transport), config.max_parallel,
                                            config.timeout);
  } else if (const auto* replay = std::get_if<ReplayBackendConfig>(&config.settings)) {
    backend = std::make_unique<ReplayBackend>(ReplayArchive::load(replay->archive),
                                              config.max_parallel);
  } else {
    backend = std::make_unique<SyntheticBackend>(
        std::get<SyntheticBackendConfig>(config.settings), config.max_parallel);
  }
  if (config.record_archive) {
    backend = std::make_unique<RecordingBackend>(std::move(backend), *config.record_archive);
  }
  return backend;
}

CompletionResponse complete(const BackendConfig& config, const CompletionRequest& request) {
  return make_backend(config)->complete(request);
}

}  // namespace compressbench
