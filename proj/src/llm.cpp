#include "groundcheck/llm.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <random>
#include <thread>

#include <fmt/format.h>
#include <httplib.h>
#include <spdlog/spdlog.h>

#include "groundcheck/util.hpp"

namespace groundcheck::llm {

namespace {

constexpr std::string_view kCacheMagic = "groundcheck-cache-v1";

struct ParsedAddress {
  std::string scheme_host_port;
  std::string path_prefix;
};

ParsedAddress parse_address(const std::string& base) {
  const auto scheme_end = base.find("://");
  if (scheme_end == std::string::npos) {
    throw PermanentBackendError(FailureKind::BadRequest, "base_address must start with http:// or https://");
  }
  const auto path_start = base.find('/', scheme_end + 3);
  ParsedAddress out;
  out.scheme_host_port = base.substr(0, path_start);
  out.path_prefix = path_start == std::string::npos ? "" : base.substr(path_start);
  while (!out.path_prefix.empty() && out.path_prefix.back() == '/') out.path_prefix.pop_back();
  return out;
}

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

json messages_json(std::span<const Message> messages) {
  json arr = json::array();
  for (const auto& m : messages) arr.push_back({{"role", m.role}, {"content", m.content}});
  return arr;
}

}  // namespace

// ---------------------------------------------------------------------------
// Profile

std::string BackendProfile::api_key_variable() const {
  if (api_key_env) return *api_key_env;
  std::string var;
  for (unsigned char c : name) {
    var.push_back(std::isalnum(c) ? static_cast<char>(std::toupper(c)) : '_');
  }
  return var + "_API_KEY";
}

std::vector<std::string> BackendProfile::validate() const {
  std::vector<std::string> v;
  if (name.empty()) v.emplace_back("backend name must be non-empty");
  if (model_id.empty()) v.emplace_back("model_id must be non-empty");
  if (!(temperature >= 0.0)) v.emplace_back("temperature must be >= 0");
  if (max_output_tokens < 1) v.emplace_back("max_output_tokens must be >= 1");
  if (max_in_flight < 1) v.emplace_back("max_in_flight must be >= 1");
  if (retry.max_attempts < 1) v.emplace_back("retry.max_attempts must be >= 1");
  if (retry.jitter < 0.0 || retry.jitter > 1.0) v.emplace_back("retry.jitter must be in [0, 1]");
  if (timeout.count() <= 0) v.emplace_back("timeout must be positive");
  return v;
}

json to_json(const BackendProfile& p) {
  json j = {
      {"base_address", p.base_address},
      {"model", p.model_id},
      {"temperature", p.temperature},
      {"max_output_tokens", p.max_output_tokens},
      {"max_in_flight", p.max_in_flight},
      {"retry",
       {{"max_attempts", p.retry.max_attempts},
        {"base_backoff_ms", p.retry.base_backoff.count()},
        {"jitter", p.retry.jitter}}},
      {"timeout_ms", p.timeout.count()},
  };
  if (p.api_key_env) j["api_key_env"] = *p.api_key_env;
  return j;
}

BackendProfile profile_from_json(std::string_view name, const json& j) {
  if (!j.is_object()) throw std::invalid_argument(fmt::format("backend '{}' must be an object", name));
  if (j.contains("api_key")) {
    throw std::invalid_argument(
        fmt::format("backend '{}': secrets are not accepted in config; use an environment variable", name));
  }
  BackendProfile p;
  p.name = std::string(name);
  p.base_address = j.value("base_address", std::string{});
  p.model_id = j.value("model", std::string{});
  p.temperature = j.value("temperature", 0.0);
  p.max_output_tokens = j.value("max_output_tokens", 1024);
  p.max_in_flight = j.value("max_in_flight", 4);
  if (auto it = j.find("retry"); it != j.end()) {
    p.retry.max_attempts = it->value("max_attempts", p.retry.max_attempts);
    p.retry.base_backoff = std::chrono::milliseconds(it->value("base_backoff_ms", p.retry.base_backoff.count()));
    p.retry.jitter = it->value("jitter", p.retry.jitter);
  }
  p.timeout = std::chrono::milliseconds(j.value("timeout_ms", p.timeout.count()));
  if (auto it = j.find("api_key_env"); it != j.end()) p.api_key_env = it->get<std::string>();

  if (auto v = p.validate(); !v.empty()) {
    throw std::invalid_argument(fmt::format("backend '{}': {}", name, v.front()));
  }
  return p;
}

// ---------------------------------------------------------------------------
// Errors

std::string_view to_string(FailureKind k) {
  switch (k) {
    case FailureKind::Throttle: return "throttle";
    case FailureKind::Timeout: return "timeout";
    case FailureKind::ServerError: return "server_error";
    case FailureKind::Auth: return "auth";
    case FailureKind::BadRequest: return "bad_request";
    case FailureKind::Malformed: return "malformed";
  }
  return "?";
}

FailureKind parse_failure_kind(std::string_view s) {
  for (auto k : {FailureKind::Throttle, FailureKind::Timeout, FailureKind::ServerError, FailureKind::Auth,
                 FailureKind::BadRequest, FailureKind::Malformed}) {
    if (to_string(k) == s) return k;
  }
  throw std::invalid_argument(fmt::format("unknown failure kind '{}'", s));
}

bool is_transient(FailureKind k) {
  return k == FailureKind::Throttle || k == FailureKind::Timeout || k == FailureKind::ServerError;
}

ExhaustedRetriesError::ExhaustedRetriesError(int attempts, const std::string& last_error)
    : std::runtime_error(fmt::format("gave up after {} attempts: {}", attempts, last_error)),
      attempts_(attempts),
      last_error_(last_error) {}

namespace {

[[noreturn]] void throw_failure(FailureKind kind, const std::string& what) {
  if (is_transient(kind)) throw TransientBackendError(kind, what);
  throw PermanentBackendError(kind, what);
}

}  // namespace

// ---------------------------------------------------------------------------
// HTTP transport

json HttpTransport::request_body(const BackendProfile& profile, std::span<const Message> messages) {
  return {
      {"model", profile.model_id},
      {"messages", messages_json(messages)},
      {"temperature", profile.temperature},
      {"max_tokens", profile.max_output_tokens},
  };
}

Completion HttpTransport::parse_response(std::string_view body) {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::exception& e) {
    throw PermanentBackendError(FailureKind::Malformed, fmt::format("response is not JSON: {}", e.what()));
  }
  const auto* choices = j.contains("choices") ? &j["choices"] : nullptr;
  if (!choices || !choices->is_array() || choices->empty()) {
    throw PermanentBackendError(FailureKind::Malformed, "response has no choices");
  }
  const json& message = (*choices)[0].value("message", json::object());
  if (!message.contains("content") || !message["content"].is_string()) {
    throw PermanentBackendError(FailureKind::Malformed, "choices[0].message.content missing");
  }
  Completion c;
  c.text = message["content"].get<std::string>();
  if (auto it = j.find("usage"); it != j.end() && it->is_object()) {
    c.usage.prompt_tokens = it->value("prompt_tokens", 0);
    c.usage.completion_tokens = it->value("completion_tokens", 0);
  }
  return c;
}

FailureKind HttpTransport::classify_status(int status) {
  if (status == 429) return FailureKind::Throttle;
  if (status == 408) return FailureKind::Timeout;
  if (status >= 500) return FailureKind::ServerError;
  if (status == 401 || status == 403) return FailureKind::Auth;
  return FailureKind::BadRequest;
}

Completion HttpTransport::send(const BackendProfile& profile, std::span<const Message> messages) {
  const auto address = parse_address(profile.base_address);
  httplib::Client http(address.scheme_host_port);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(profile.timeout);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(profile.timeout - secs);
  http.set_connection_timeout(secs.count(), usecs.count());
  http.set_read_timeout(secs.count(), usecs.count());
  http.set_write_timeout(secs.count(), usecs.count());

  httplib::Headers headers;
  if (const char* key = std::getenv(profile.api_key_variable().c_str()); key && *key) {
    headers.emplace("Authorization", std::string("Bearer ") + key);
  }

  const std::string body = request_body(profile, messages).dump();
  auto res = http.Post(address.path_prefix + "/chat/completions", headers, body, "application/json");
  if (!res) {
    const auto err = res.error();
    const auto kind = err == httplib::Error::Read || err == httplib::Error::ConnectionTimeout ||
                              err == httplib::Error::Connection || err == httplib::Error::Write
                          ? FailureKind::Timeout
                          : FailureKind::BadRequest;
    throw_failure(kind, fmt::format("request to {} failed: {}", profile.base_address, httplib::to_string(err)));
  }
  if (res->status < 200 || res->status >= 300) {
    throw_failure(classify_status(res->status),
                  fmt::format("HTTP {} from {}: {}", res->status, profile.base_address, res->body.substr(0, 200)));
  }
  return parse_response(res->body);
}

// ---------------------------------------------------------------------------
// Mock backend

MockStep MockStep::respond(std::string text, std::chrono::milliseconds delay) {
  MockStep s;
  s.action = Action::Respond;
  s.text = std::move(text);
  s.delay = delay;
  return s;
}

MockStep MockStep::fail(FailureKind kind, std::chrono::milliseconds delay) {
  MockStep s;
  s.action = Action::Fail;
  s.failure = kind;
  s.delay = delay;
  return s;
}

MockStep MockStep::pause(std::chrono::milliseconds delay) {
  MockStep s;
  s.action = Action::Delay;
  s.delay = delay;
  return s;
}

MockBackend::MockBackend(std::vector<MockStep> script) : script_(std::move(script)) {
  if (script_.empty()) throw std::invalid_argument("mock script must be non-empty");
}

MockBackend::MockBackend(Handler handler) : handler_(std::move(handler)) {
  if (!handler_) throw std::invalid_argument("mock handler must be callable");
}

MockStep MockBackend::next_step(std::span<const Message> messages) {
  if (handler_) return handler_(messages);
  std::lock_guard lock(mu_);
  if (cursor_ >= script_.size()) {
    throw ScriptExhaustedError(fmt::format("mock script exhausted after {} steps", script_.size()));
  }
  return script_[cursor_++];
}

Completion MockBackend::send(const BackendProfile& profile, std::span<const Message> messages) {
  RequestRecord record;
  record.messages.assign(messages.begin(), messages.end());
  record.model_id = profile.model_id;
  record.temperature = profile.temperature;
  record.started = Clock::now();

  MockStep step = next_step(messages);
  while (step.action == MockStep::Action::Delay) {
    std::this_thread::sleep_for(step.delay);
    step = next_step(messages);
  }
  if (step.delay.count() > 0) std::this_thread::sleep_for(step.delay);

  record.finished = Clock::now();
  {
    std::lock_guard lock(mu_);
    log_.push_back(std::move(record));
  }

  if (step.action == MockStep::Action::Fail) {
    throw_failure(step.failure, fmt::format("mock failure: {}", to_string(step.failure)));
  }
  return Completion{step.text, {}};
}

std::vector<RequestRecord> MockBackend::requests() const {
  std::lock_guard lock(mu_);
  return log_;
}

std::size_t MockBackend::call_count() const {
  std::lock_guard lock(mu_);
  return log_.size();
}

std::size_t MockBackend::remaining_steps() const {
  std::lock_guard lock(mu_);
  return script_.size() - cursor_;
}

std::size_t max_overlap(std::span<const RequestRecord> log) {
  // Sweep over interval endpoints; a request ending at t does not overlap one
  // starting at t.
  std::vector<std::pair<Clock::time_point, int>> events;
  events.reserve(log.size() * 2);
  for (const auto& r : log) {
    events.emplace_back(r.started, +1);
    events.emplace_back(r.finished, -1);
  }
  std::sort(events.begin(), events.end());
  std::size_t open = 0, peak = 0;
  for (const auto& [t, delta] : events) {
    open = static_cast<std::size_t>(static_cast<long>(open) + delta);
    peak = std::max(peak, open);
  }
  return peak;
}

// ---------------------------------------------------------------------------
// Client

std::chrono::milliseconds backoff_delay(const RetryPolicy& policy, int attempt, double unit_noise) {
  const double nominal = static_cast<double>(policy.base_backoff.count()) * std::ldexp(1.0, attempt - 1);
  const double factor = 1.0 + policy.jitter * std::clamp(unit_noise, -1.0, 1.0);
  return std::chrono::milliseconds(static_cast<long long>(std::llround(std::max(0.0, nominal * factor))));
}

Client::Client(BackendProfile profile, std::shared_ptr<Transport> transport, SleepFn sleep)
    : profile_(std::move(profile)),
      transport_(std::move(transport)),
      sleep_(std::move(sleep)),
      slots_(std::max(1, profile_.max_in_flight)),
      rng_state_(std::random_device{}()) {
  if (auto v = profile_.validate(); !v.empty()) {
    throw std::invalid_argument(fmt::format("backend '{}': {}", profile_.name, v.front()));
  }
  if (!transport_) throw std::invalid_argument("client requires a transport");
  if (!sleep_) sleep_ = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

double Client::next_noise() {
  std::lock_guard lock(rng_mu_);
  const auto bits = splitmix64(rng_state_) >> 11;
  return static_cast<double>(bits) / static_cast<double>(1ULL << 53) * 2.0 - 1.0;
}

Completion Client::complete(std::span<const Message> messages) {
  if (messages.empty()) throw std::invalid_argument("complete() needs at least one message");

  std::string last_error;
  const int budget = profile_.retry.max_attempts;
  for (int attempt = 1; attempt <= budget; ++attempt) {
    try {
      slots_.acquire();
      struct Release {
        std::counting_semaphore<>& s;
        ~Release() { s.release(); }
      } release{slots_};

      Completion c = transport_->send(profile_, messages);
      c.usage.attempts = attempt;
      return c;
    } catch (const TransientBackendError& e) {
      last_error = e.what();
      spdlog::debug("backend '{}' attempt {}/{} failed: {}", profile_.name, attempt, budget, last_error);
    }
    if (attempt < budget) sleep_(backoff_delay(profile_.retry, attempt, next_noise()));
  }
  throw ExhaustedRetriesError(budget, last_error);
}

// ---------------------------------------------------------------------------
// Cache

CacheKey CacheKey::compute(std::string_view model_id, std::span<const Message> messages, double temperature,
                           int max_output_tokens, std::string_view template_version) {
  const json canonical = {
      {"model", model_id},
      {"messages", messages_json(messages)},
      {"temperature", temperature},
      {"max_tokens", max_output_tokens},
      {"template_version", template_version},
  };
  return CacheKey{util::sha256_hex(canonical.dump())};
}

ResponseCache::ResponseCache(std::filesystem::path dir) : dir_(std::move(dir)) {
  std::filesystem::create_directories(dir_);
}

std::filesystem::path ResponseCache::path_for(const CacheKey& key) const {
  return dir_ / key.digest.substr(0, 2) / key.digest;
}

std::optional<std::string> ResponseCache::load(const CacheKey& key) const {
  const auto path = path_for(key);
  std::error_code ec;
  if (!std::filesystem::exists(path, ec)) return std::nullopt;

  std::string raw;
  try {
    raw = util::read_file(path);
  } catch (const std::exception& e) {
    spdlog::warn("cache entry {} unreadable, treating as miss: {}", key.digest, e.what());
    return std::nullopt;
  }
  // "<magic> <sha256 of body>\n<body>"
  const auto newline = raw.find('\n');
  const std::string expected_header = fmt::format("{} ", kCacheMagic);
  if (newline == std::string::npos || raw.compare(0, expected_header.size(), expected_header) != 0) {
    spdlog::warn("cache entry {} has a bad header, treating as miss", key.digest);
    return std::nullopt;
  }
  std::string body = raw.substr(newline + 1);
  if (raw.substr(expected_header.size(), newline - expected_header.size()) != util::sha256_hex(body)) {
    spdlog::warn("cache entry {} failed its checksum, treating as miss", key.digest);
    return std::nullopt;
  }
  return body;
}

void ResponseCache::store(const CacheKey& key, std::string_view text) const {
  std::string contents = fmt::format("{} {}\n", kCacheMagic, util::sha256_hex(text));
  contents.append(text);
  util::atomic_write_file(path_for(key), contents);
}

std::pair<std::string, bool> ResponseCache::get_or_compute(const CacheKey& key,
                                                          const std::function<std::string()>& compute) {
  std::promise<std::string> promise;
  std::shared_future<std::string> shared;
  bool leader = false;
  {
    std::lock_guard lock(mu_);
    if (auto it = in_flight_.find(key.digest); it != in_flight_.end()) {
      shared = it->second;
    } else {
      if (auto hit = load(key)) return {std::move(*hit), true};
      shared = promise.get_future().share();
      in_flight_.emplace(key.digest, shared);
      leader = true;
    }
  }
  if (!leader) return {shared.get(), true};

  try {
    std::string text = compute();
    store(key, text);
    promise.set_value(text);
    std::lock_guard lock(mu_);
    in_flight_.erase(key.digest);
    return {std::move(text), false};
  } catch (...) {
    promise.set_exception(std::current_exception());
    std::lock_guard lock(mu_);
    in_flight_.erase(key.digest);
    throw;
  }
}

CachedCompletion cached_complete(Client& client, std::span<const Message> messages, ResponseCache& cache,
                                 std::string_view template_version) {
  const auto& p = client.profile();
  const auto key = CacheKey::compute(p.model_id, messages, p.temperature, p.max_output_tokens, template_version);
  auto [text, hit] = cache.get_or_compute(key, [&] { return client.complete(messages).text; });
  return {std::move(text), hit};
}

CachedCompletion Backend::complete(std::span<const Message> messages, std::string_view tag) {
  if (cache_) return cached_complete(*client_, messages, *cache_, tag);
  return {client_->complete(messages).text, false};
}

}  // namespace groundcheck::llm
