#pragma once

#include <chrono>
#include <condition_variable>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace groundcheck::llm {

using json = nlohmann::json;
using Clock = std::chrono::steady_clock;

struct Message {
  std::string role;
  std::string content;

  bool operator==(const Message&) const = default;
};

struct RetryPolicy {
  int max_attempts = 3;
  std::chrono::milliseconds base_backoff{500};
  double jitter = 0.25;  // fraction of the nominal delay, applied symmetrically
};

/// Configuration for one chat-completions endpoint. Credentials are never
/// stored here; they are read from the environment at request time.
struct BackendProfile {
  std::string name;
  std::string base_address;
  std::string model_id;
  double temperature = 0.0;
  int max_output_tokens = 1024;
  int max_in_flight = 4;
  RetryPolicy retry;
  std::chrono::milliseconds timeout{60'000};
  std::optional<std::string> api_key_env;

  /// `<NAME>_API_KEY` with the profile name upper-cased and every
  /// non-alphanumeric byte mapped to '_', unless overridden.
  std::string api_key_variable() const;
  std::vector<std::string> validate() const;
};

json to_json(const BackendProfile& p);
BackendProfile profile_from_json(std::string_view name, const json& j);

enum class FailureKind { Throttle, Timeout, ServerError, Auth, BadRequest, Malformed };

std::string_view to_string(FailureKind k);
FailureKind parse_failure_kind(std::string_view s);
bool is_transient(FailureKind k);

class BackendError : public std::runtime_error {
 public:
  BackendError(FailureKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  FailureKind kind() const noexcept { return kind_; }

 private:
  FailureKind kind_;
};

/// Worth retrying: throttling, timeouts, 5xx-class responses.
class TransientBackendError : public BackendError {
 public:
  using BackendError::BackendError;
};

/// Retrying cannot help: bad credentials, malformed requests.
class PermanentBackendError : public BackendError {
 public:
  using BackendError::BackendError;
};

class ExhaustedRetriesError : public std::runtime_error {
 public:
  ExhaustedRetriesError(int attempts, const std::string& last_error);
  int attempts() const noexcept { return attempts_; }
  const std::string& last_error() const noexcept { return last_error_; }

 private:
  int attempts_;
  std::string last_error_;
};

/// Raised by MockBackend when a test makes more calls than it scripted.
class ScriptExhaustedError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

struct Usage {
  int attempts = 0;
  int prompt_tokens = 0;
  int completion_tokens = 0;
};

struct Completion {
  std::string text;
  Usage usage;
};

/// One request/response exchange, no retries. Implementations throw
/// TransientBackendError or PermanentBackendError.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual Completion send(const BackendProfile& profile, std::span<const Message> messages) = 0;
};

/// POST `<base_address>/chat/completions`, reads `choices[0].message.content`.
class HttpTransport final : public Transport {
 public:
  Completion send(const BackendProfile& profile, std::span<const Message> messages) override;

  static json request_body(const BackendProfile& profile, std::span<const Message> messages);
  static Completion parse_response(std::string_view body);
  static FailureKind classify_status(int status);
};

struct MockStep {
  enum class Action { Respond, Fail, Delay };

  Action action = Action::Respond;
  std::string text;
  FailureKind failure = FailureKind::ServerError;
  std::chrono::milliseconds delay{0};

  static MockStep respond(std::string text, std::chrono::milliseconds delay = {});
  static MockStep fail(FailureKind kind, std::chrono::milliseconds delay = {});
  /// Waits, then the same call consumes the next step.
  static MockStep pause(std::chrono::milliseconds delay);
};

struct RequestRecord {
  std::vector<Message> messages;
  std::string model_id;
  double temperature = 0.0;
  Clock::time_point started;
  Clock::time_point finished;
};

/// Scriptable in-process backend. Either consumes `script` strictly in call
/// order, or answers every call through `handler`.
class MockBackend final : public Transport {
 public:
  using Handler = std::function<MockStep(std::span<const Message>)>;

  explicit MockBackend(std::vector<MockStep> script);
  explicit MockBackend(Handler handler);

  Completion send(const BackendProfile& profile, std::span<const Message> messages) override;

  std::vector<RequestRecord> requests() const;
  std::size_t call_count() const;
  std::size_t remaining_steps() const;

 private:
  MockStep next_step(std::span<const Message> messages);

  mutable std::mutex mu_;
  std::vector<MockStep> script_;
  std::size_t cursor_ = 0;
  Handler handler_;
  std::vector<RequestRecord> log_;
};

/// Largest number of requests simultaneously open according to the log.
std::size_t max_overlap(std::span<const RequestRecord> log);

std::chrono::milliseconds backoff_delay(const RetryPolicy& policy, int attempt, double unit_noise);

/// Thread-safe client bound to one profile. Enforces max_in_flight and the
/// retry budget.
class Client {
 public:
  using SleepFn = std::function<void(std::chrono::milliseconds)>;

  Client(BackendProfile profile, std::shared_ptr<Transport> transport, SleepFn sleep = {});
  Client(const Client&) = delete;
  Client& operator=(const Client&) = delete;

  Completion complete(std::span<const Message> messages);

  const BackendProfile& profile() const { return profile_; }

 private:
  double next_noise();

  BackendProfile profile_;
  std::shared_ptr<Transport> transport_;
  SleepFn sleep_;
  std::counting_semaphore<> slots_;
  std::mutex rng_mu_;
  std::uint64_t rng_state_;
};

/// Content digest over everything that can change a completion.
struct CacheKey {
  std::string digest;

  static CacheKey compute(std::string_view model_id, std::span<const Message> messages, double temperature,
                          int max_output_tokens, std::string_view template_version);

  bool operator==(const CacheKey&) const = default;
};

/// On-disk, content-addressed response store with single-flight coalescing.
/// Layout: `<dir>/<first-2-hex>/<digest>`.
class ResponseCache {
 public:
  explicit ResponseCache(std::filesystem::path dir);

  std::optional<std::string> load(const CacheKey& key) const;
  void store(const CacheKey& key, std::string_view text) const;

  /// Returns (text, hit). Concurrent callers with the same key share one
  /// invocation of `compute`.
  std::pair<std::string, bool> get_or_compute(const CacheKey& key, const std::function<std::string()>& compute);

  std::filesystem::path path_for(const CacheKey& key) const;
  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path dir_;
  std::mutex mu_;
  std::map<std::string, std::shared_future<std::string>> in_flight_;
};

struct CachedCompletion {
  std::string text;
  bool hit = false;
};

CachedCompletion cached_complete(Client& client, std::span<const Message> messages, ResponseCache& cache,
                                 std::string_view template_version);

/// A client plus an optional cache; what the pipeline stages talk to.
class Backend {
 public:
  Backend(std::shared_ptr<Client> client, std::shared_ptr<ResponseCache> cache = nullptr)
      : client_(std::move(client)), cache_(std::move(cache)) {}

  /// `tag` identifies the prompt template and attempt; it is part of the
  /// cache key so distinct attempts are cached separately.
  CachedCompletion complete(std::span<const Message> messages, std::string_view tag);

  const BackendProfile& profile() const { return client_->profile(); }
  Client& client() { return *client_; }

 private:
  std::shared_ptr<Client> client_;
  std::shared_ptr<ResponseCache> cache_;
};

}  // namespace groundcheck::llm
