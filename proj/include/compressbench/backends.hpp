#pragma once

// Interchangeable model backends: OpenAI-style HTTP chat completions,
// deterministic replay from an archive, and a synthetic generator that
// follows the verbose-compensation length model.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <variant>
#include <vector>

#include "compressbench/rng.hpp"

namespace compressbench {

struct CompletionRequest {
  std::string model_name;
  std::string prompt_text;
  std::string system_prompt;
  double temperature = 0.0;
  std::uint32_t max_tokens = 1024;

  // Trial context for the synthetic backend. Not part of the replay digest.
  std::optional<double> psi;
  std::uint32_t replicate_index = 0;

  void validate() const;
};

enum class TokenSource { kProvider, kWordCount };

std::string_view token_source_name(TokenSource source) noexcept;

struct CompletionResponse {
  std::string output_text;
  std::uint32_t output_tokens = 0;
  bool hit_ceiling = false;
  std::optional<double> latency_ms;
  TokenSource token_source = TokenSource::kProvider;
};

// Expected output length is piecewise in instruction survival Psi:
//   Psi >= tau : t0 + alpha * (1 - Psi)
//   Psi <  tau : ceiling tmax with probability beta, otherwise a body
//                centred at tmax * beta.
struct VerboseCompensationParams {
  double t0 = 0.0;
  double alpha = 0.0;
  double tau = 0.35;
  double tmax = 1024.0;
  double beta = 0.0;
  // Coefficient of variation of the linear regime and of the sub-threshold body.
  double dispersion_linear = 0.0;
  double dispersion_ceiling = 0.0;

  void validate() const;
  // Centre of the draw for the given survival (before noise and clamping).
  double regime_center(double psi) const;
};

// One synthetic output length. Deterministic for a given engine state.
std::uint32_t synthesize_length(const VerboseCompensationParams& params, double psi,
                                Rng& rng);

// Whitespace word count, same rule as tokenize().
std::size_t count_output_tokens(std::string_view response_text) noexcept;

// SHA-256 (hex) over model, prompt, system prompt, temperature and max_tokens.
std::string request_digest(const CompletionRequest& request);

struct HttpResult {
  int status = 0;  // 0 means the request never produced an HTTP status
  std::string body;
  std::string error;
};

class HttpTransport {
 public:
  virtual ~HttpTransport() = default;
  virtual HttpResult post(const std::string& url,
                          const std::vector<std::pair<std::string, std::string>>& headers,
                          const std::string& body, std::chrono::milliseconds timeout) = 0;
};

std::shared_ptr<HttpTransport> make_default_transport();

struct RetryPolicy {
  int max_attempts = 5;
  std::chrono::milliseconds initial_backoff{500};
  double multiplier = 2.0;
  std::chrono::milliseconds max_backoff{8000};
};

struct HttpBackendConfig {
  std::string endpoint;
  std::string auth_env_var;
  std::map<std::string, std::string> headers;
  RetryPolicy retry;
};

struct ReplayBackendConfig {
  std::filesystem::path archive;
};

struct SyntheticBackendConfig {
  VerboseCompensationParams params;
  std::uint64_t seed = 0;
  // When false, identical requests give identical lengths (temperature-0
  // behaviour); when true the replicate index perturbs the stream.
  bool per_replicate_seeds = false;
};

struct BackendConfig {
  std::variant<HttpBackendConfig, ReplayBackendConfig, SyntheticBackendConfig> settings;
  std::size_t max_parallel = 4;
  std::chrono::milliseconds timeout{60000};
  // Every completed exchange is appended here as a replay archive line.
  std::optional<std::filesystem::path> record_archive;

  std::string_view kind() const noexcept;
};

BackendConfig parse_backend_config(std::string_view json_text);
VerboseCompensationParams parse_params(std::string_view json_text);

class Backend {
 public:
  explicit Backend(std::size_t max_parallel);
  virtual ~Backend() = default;
  Backend(const Backend&) = delete;
  Backend& operator=(const Backend&) = delete;

  // Validates the request, waits for a free slot, then dispatches.
  CompletionResponse complete(const CompletionRequest& request);
  std::size_t max_parallel() const noexcept { return max_parallel_; }

 protected:
  virtual CompletionResponse do_complete(const CompletionRequest& request) = 0;

 private:
  std::size_t max_parallel_;
  std::counting_semaphore<> slots_;
};

class SyntheticBackend final : public Backend {
 public:
  SyntheticBackend(SyntheticBackendConfig config, std::size_t max_parallel = 16);

 protected:
  CompletionResponse do_complete(const CompletionRequest& request) override;

 private:
  SyntheticBackendConfig config_;
};

struct ArchiveEntry {
  std::string digest;
  CompletionRequest request;
  CompletionResponse response;
};

class ReplayArchive {
 public:
  static ReplayArchive load(const std::filesystem::path& path);
  void add(ArchiveEntry entry);
  const ArchiveEntry* find(std::string_view digest) const;
  std::size_t size() const noexcept { return entries_.size(); }

 private:
  std::unordered_map<std::string, ArchiveEntry> entries_;
};

std::string archive_line(const ArchiveEntry& entry);

class ReplayBackend final : public Backend {
 public:
  ReplayBackend(ReplayArchive archive, std::size_t max_parallel = 16);

 protected:
  CompletionResponse do_complete(const CompletionRequest& request) override;

 private:
  ReplayArchive archive_;
};

class HttpBackend final : public Backend {
 public:
  HttpBackend(HttpBackendConfig config, std::shared_ptr<HttpTransport> transport,
              std::size_t max_parallel, std::chrono::milliseconds timeout);

 protected:
  CompletionResponse do_complete(const CompletionRequest& request) override;

 private:
  HttpBackendConfig config_;
  std::shared_ptr<HttpTransport> transport_;
  std::chrono::milliseconds timeout_;
};

// Decorator that appends every successful exchange to a replay archive.
class RecordingBackend final : public Backend {
 public:
  RecordingBackend(std::unique_ptr<Backend> inner, std::filesystem::path archive);

 protected:
  CompletionResponse do_complete(const CompletionRequest& request) override;

 private:
  std::unique_ptr<Backend> inner_;
  std::filesystem::path archive_;
  std::mutex write_mutex_;
};

// Body of an OpenAI-style chat completion request.
std::string chat_request_body(const CompletionRequest& request);
// Parses a chat completion response; usage.completion_tokens is preferred
// over a word count of the content.
CompletionResponse parse_chat_response(std::string_view body,
                                       const CompletionRequest& request);

std::unique_ptr<Backend> make_backend(const BackendConfig& config,
                                      std::shared_ptr<HttpTransport> transport = nullptr);

// One-shot convenience over make_backend().
CompletionResponse complete(const BackendConfig& config, const CompletionRequest& request);

}  // namespace compressbench
