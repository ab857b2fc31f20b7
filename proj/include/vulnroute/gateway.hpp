#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vulnroute/util/json_io.hpp"

namespace vulnroute {

enum class ModelRole { evolution, execution, embedding };

const char* to_string(ModelRole role) noexcept;
std::optional<ModelRole> parse_model_role(std::string_view name);

struct ChatRequest {
  ModelRole role = ModelRole::execution;
  std::string instruction;
  std::string payload;
  // Accounting tag ("router", "detector:<category>", "flat", "mutate",
  // "structure"). Not part of the cache key and never sent to a provider.
  std::string agent;
};

struct GenerationParams {
  std::string model;
  double temperature = 0.0;
  int max_tokens = 2048;
};

// Thrown by providers. Transient failures are retried by the gateway.
class TransportError : public std::runtime_error {
 public:
  TransportError(const std::string& what, bool transient) : std::runtime_error(what), transient_(transient) {}
  bool transient() const noexcept { return transient_; }

 private:
  bool transient_;
};

class ChatProvider {
 public:
  virtual ~ChatProvider() = default;
  // Stable identity, folded into cache keys.
  virtual std::string id() const = 0;
  virtual std::string complete(const ChatRequest& request, const GenerationParams& params) = 0;
};

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual std::string id() const = 0;
  virtual std::vector<std::vector<float>> embed(std::span<const std::string> texts) = 0;
};

// Token bucket with an in-flight cap. requests_per_minute == 0 disables the
// bucket; max_inflight == 0 disables the cap.
class RateLimiter {
 public:
  RateLimiter(double requests_per_minute, std::size_t max_inflight);

  class Permit {
   public:
    explicit Permit(RateLimiter* owner) : owner_(owner) {}
    Permit(Permit&& o) noexcept : owner_(std::exchange(o.owner_, nullptr)) {}
    Permit(const Permit&) = delete;
    Permit& operator=(const Permit&) = delete;
    Permit& operator=(Permit&&) = delete;
    ~Permit() {
      if (owner_) owner_->release();
    }

   private:
    RateLimiter* owner_;
  };

  Permit acquire();

 private:
  void release();

  double rate_per_sec_;
  double capacity_;
  double tokens_;
  std::size_t max_inflight_;
  std::size_t inflight_ = 0;
  std::chrono::steady_clock::time_point last_refill_;
  std::mutex mu_;
  std::condition_variable cv_;
};

struct RetryPolicy {
  int max_attempts = 3;
  std::chrono::milliseconds base_delay{200};
  std::chrono::milliseconds max_delay{5000};
};

struct RoleBinding {
  std::shared_ptr<ChatProvider> chat;            // evolution / execution
  std::shared_ptr<EmbeddingProvider> embedding;  // embedding
  std::shared_ptr<RateLimiter> limiter;          // may be shared across roles
  GenerationParams params;
};

struct GatewayOptions {
  bool cache_enabled = true;
  std::optional<std::filesystem::path> cache_dir;  // persistent cache, optional
  RetryPolicy retry;
  bool record_exchanges = false;
};

struct ChatExchange {
  ModelRole role;
  std::string agent;
  std::string instruction;
  std::string payload;
  std::optional<std::string> response;  // present iff no error
  std::string error;
  bool cache_hit = false;
  int attempts = 0;
  std::chrono::microseconds latency{0};
};

struct GatewayCounters {
  std::size_t chat_calls = 0;            // requests made to the gateway
  std::size_t provider_invocations = 0;  // attempts that reached a provider
  std::size_t cache_hits = 0;
  std::size_t failures = 0;
  std::map<std::string, std::size_t> calls_by_agent;  // gateway requests per agent kind
};

// Routes chat and embedding calls to the provider bound for each role, with
// a content-addressed response cache, bounded retries with exponential
// backoff, and per-provider rate limiting. Thread safe.
class Gateway {
 public:
  explicit Gateway(GatewayOptions options = {});

  void bind(ModelRole role, RoleBinding binding);
  bool has_role(ModelRole role) const;

  // Throws Error{ConfigMissing} for an unbound role and
  // Error{ProviderUnavailable} once retries are exhausted.
  std::string chat(const ChatRequest& request);

  // One vector per text, order preserved, uniform dimension. Throws
  // Error{DimensionDrift} if a provider changes dimension mid-run.
  std::vector<std::vector<float>> embed(std::span<const std::string> texts);

  // sha256 over provider id, role, model, temperature, max_tokens,
  // instruction and payload.
  std::string cache_key(const ChatRequest& request) const;

  GatewayCounters counters() const;
  void reset_counters();
  std::vector<ChatExchange> exchanges() const;
  std::optional<std::size_t> embedding_dim() const;
  std::string embedding_provider_id() const;

 private:
  const RoleBinding& binding(ModelRole role) const;
  std::optional<std::string> cache_lookup(const std::string& key);
  void cache_store(const std::string& key, const std::string& value);
  void record(ChatExchange ex);
  void count_agent(const std::string& agent);

  GatewayOptions options_;
  std::map<ModelRole, RoleBinding> bindings_;

  mutable std::mutex cache_mu_;
  std::map<std::string, std::string> cache_;

  mutable std::mutex stats_mu_;
  GatewayCounters counters_;
  std::vector<ChatExchange> exchanges_;

  mutable std::mutex dim_mu_;
  std::optional<std::size_t> embedding_dim_;
};

// Splits "detector:Memory" into its kind ("detector").
std::string agent_kind(std::string_view agent);

// Payload sections are delimited by "=== NAME BEGIN ===" / "=== NAME END ===".
std::string render_section(std::string_view name, std::string_view body);
std::optional<std::string> extract_section(std::string_view payload, std::string_view name);

}  // namespace vulnroute
