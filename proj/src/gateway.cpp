#include "vulnroute/gateway.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <thread>

#include "vulnroute/error.hpp"
#include "vulnroute/util/hash.hpp"

namespace vulnroute {

const char* to_string(ModelRole role) noexcept {
  switch (role) {
    case ModelRole::evolution: return "evolution";
    case ModelRole::execution: return "execution";
    case ModelRole::embedding: return "embedding";
  }
  return "unknown";
}

std::optional<ModelRole> parse_model_role(std::string_view name) {
  if (name == "evolution") return ModelRole::evolution;
  if (name == "execution") return ModelRole::execution;
  if (name == "embedding") return ModelRole::embedding;
  return std::nullopt;
}

std::string agent_kind(std::string_view agent) {
  const auto colon = agent.find(':');
  return std::string(colon == std::string_view::npos ? agent : agent.substr(0, colon));
}

std::string render_section(std::string_view name, std::string_view body) {
  std::string out;
  out.reserve(body.size() + 2 * name.size() + 32);
  out += "=== ";
  out += name;
  out += " BEGIN ===\n";
  out += body;
  if (!body.empty() && body.back() != '\n') out += '\n';
  out += "=== ";
  out += name;
  out += " END ===\n";
  return out;
}

std::optional<std::string> extract_section(std::string_view payload, std::string_view name) {
  const std::string begin = "=== " + std::string(name) + " BEGIN ===\n";
  const std::string end = "=== " + std::string(name) + " END ===";
  const auto b = payload.find(begin);
  if (b == std::string_view::npos) return std::nullopt;
  const auto start = b + begin.size();
  const auto e = payload.find(end, start);
  if (e == std::string_view::npos) return std::nullopt;
  std::string body(payload.substr(start, e - start));
  if (!body.empty() && body.back() == '\n') body.pop_back();
  return body;
}

// ---------------------------------------------------------------- limiter

RateLimiter::RateLimiter(double requests_per_minute, std::size_t max_inflight)
    : rate_per_sec_(requests_per_minute / 60.0),
      capacity_(std::max(1.0, requests_per_minute / 60.0)),
      tokens_(capacity_),
      max_inflight_(max_inflight),
      last_refill_(std::chrono::steady_clock::now()) {}

RateLimiter::Permit RateLimiter::acquire() {
  std::unique_lock lock(mu_);
  for (;;) {
    const bool slot_free = max_inflight_ == 0 || inflight_ < max_inflight_;
    if (rate_per_sec_ > 0.0) {
      const auto now = std::chrono::steady_clock::now();
      const double elapsed = std::chrono::duration<double>(now - last_refill_).count();
      tokens_ = std::min(capacity_, tokens_ + elapsed * rate_per_sec_);
      last_refill_ = now;
    }
    const bool token_free = rate_per_sec_ <= 0.0 || tokens_ >= 1.0;
    if (slot_free && token_free) {
      if (rate_per_sec_ > 0.0) tokens_ -= 1.0;
      ++inflight_;
      return Permit(this);
    }
    if (!token_free) {
      const double wait_s = (1.0 - tokens_) / rate_per_sec_;
      cv_.wait_for(lock, std::chrono::duration<double>(wait_s));
    } else {
      cv_.wait(lock);
    }
  }
}

void RateLimiter::release() {
  {
    std::lock_guard lock(mu_);
    --inflight_;
  }
  cv_.notify_one();
}

// ---------------------------------------------------------------- gateway

Gateway::Gateway(GatewayOptions options) : options_(std::move(options)) {
  if (options_.retry.max_attempts < 1) options_.retry.max_attempts = 1;
  if (options_.cache_dir) std::filesystem::create_directories(*options_.cache_dir);
}

void Gateway::bind(ModelRole role, RoleBinding b) {
  if (role == ModelRole::embedding ? !b.embedding : !b.chat) {
    throw Error(ErrorKind::ConfigMissing, std::string("no provider for role ") + to_string(role));
  }
  bindings_[role] = std::move(b);
}

bool Gateway::has_role(ModelRole role) const { return bindings_.count(role) > 0; }

const RoleBinding& Gateway::binding(ModelRole role) const {
  auto it = bindings_.find(role);
  if (it == bindings_.end()) throw Error(ErrorKind::ConfigMissing, std::string("role ") + to_string(role));
  return it->second;
}

std::string Gateway::cache_key(const ChatRequest& request) const {
  const RoleBinding& b = binding(request.role);
  char params[64];
  std::snprintf(params, sizeof params, "t=%.17g;m=%d", b.params.temperature, b.params.max_tokens);
  std::string material;
  material.reserve(request.instruction.size() + request.payload.size() + 192);
  for (std::string_view part : {std::string_view(b.chat->id()), std::string_view(to_string(request.role)),
                                std::string_view(b.params.model), std::string_view(params),
                                std::string_view(request.instruction), std::string_view(request.payload)}) {
    material += std::to_string(part.size());
    material += ':';
    material += part;
  }
  return sha256_hex(material);
}

std::optional<std::string> Gateway::cache_lookup(const std::string& key) {
  {
    std::lock_guard lock(cache_mu_);
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
  }
  if (options_.cache_dir) {
    const auto path = *options_.cache_dir / (key + ".txt");
    std::ifstream in(path, std::ios::binary);
    if (in) {
      std::string value((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
      std::lock_guard lock(cache_mu_);
      cache_.emplace(key, value);
      return value;
    }
  }
  return std::nullopt;
}

void Gateway::cache_store(const std::string& key, const std::string& value) {
  {
    std::lock_guard lock(cache_mu_);
    cache_[key] = value;
  }
  if (options_.cache_dir) write_text_file_atomic(*options_.cache_dir / (key + ".txt"), value);
}

void Gateway::record(ChatExchange ex) {
  if (!options_.record_exchanges) return;
  std::lock_guard lock(stats_mu_);
  exchanges_.push_back(std::move(ex));
}

void Gateway::count_agent(const std::string& agent) {
  std::lock_guard lock(stats_mu_);
  ++counters_.chat_calls;
  ++counters_.calls_by_agent[agent_kind(agent)];
}

std::string Gateway::chat(const ChatRequest& request) {
  const RoleBinding& b = binding(request.role);
  if (request.role == ModelRole::embedding) {
    throw Error(ErrorKind::InvalidArgument, "chat called with the embedding role");
  }
  count_agent(request.agent);
  const auto started = std::chrono::steady_clock::now();
  ChatExchange ex{request.role, request.agent, request.instruction, request.payload, std::nullopt, {}, false, 0, {}};

  std::string key;
  if (options_.cache_enabled) {
    key = cache_key(request);
    if (auto hit = cache_lookup(key)) {
      {
        std::lock_guard lock(stats_mu_);
        ++counters_.cache_hits;
      }
      ex.response = *hit;
      ex.cache_hit = true;
      record(std::move(ex));
      return *hit;
    }
  }

  std::string last_error;
  auto delay = options_.retry.base_delay;
  for (int attempt = 1; attempt <= options_.retry.max_attempts; ++attempt) {
    ex.attempts = attempt;
    {
      std::lock_guard lock(stats_mu_);
      ++counters_.provider_invocations;
    }
    try {
      std::string response;
      if (b.limiter) {
        auto permit = b.limiter->acquire();
        response = b.chat->complete(request, b.params);
      } else {
        response = b.chat->complete(request, b.params);
      }
      if (options_.cache_enabled) cache_store(key, response);
      ex.response = response;
      ex.latency = std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::steady_clock::now() - started);
      record(std::move(ex));
      return response;
    } catch (const TransportError& e) {
      last_error = e.what();
      if (!e.transient()) break;
    }
    if (attempt < options_.retry.max_attempts && delay.count() > 0) {
      std::this_thread::sleep_for(delay);
      delay = std::min(options_.retry.max_delay, delay * 2);
    }
  }
  {
    std::lock_guard lock(stats_mu_);
    ++counters_.failures;
  }
  ex.error = last_error;
  const int attempts = ex.attempts;
  record(std::move(ex));
  throw Error(ErrorKind::ProviderUnavailable,
              std::string(to_string(request.role)) + " provider failed after " + std::to_string(attempts) +
                  " attempt(s): " + last_error);
}

std::vector<std::vector<float>> Gateway::embed(std::span<const std::string> texts) {
  if (texts.empty()) throw Error(ErrorKind::EmptyInput, "embed requires at least one text");
  const RoleBinding& b = binding(ModelRole::embedding);
  std::vector<std::vector<float>> out;
  std::string last_error;
  auto delay = options_.retry.base_delay;
  bool ok = false;
  for (int attempt = 1; attempt <= options_.retry.max_attempts && !ok; ++attempt) {
    try {
      if (b.limiter) {
        auto permit = b.limiter->acquire();
        out = b.embedding->embed(texts);
      } else {
        out = b.embedding->embed(texts);
      }
      ok = true;
    } catch (const TransportError& e) {
      last_error = e.what();
      if (!e.transient()) break;
      if (attempt < options_.retry.max_attempts && delay.count() > 0) {
        std::this_thread::sleep_for(delay);
        delay = std::min(options_.retry.max_delay, delay * 2);
      }
    }
  }
  if (!ok) throw Error(ErrorKind::ProviderUnavailable, "embedding provider failed: " + last_error);
  if (out.size() != texts.size()) {
    throw Error(ErrorKind::ProviderUnavailable, "embedding provider returned " + std::to_string(out.size()) +
                                                    " vectors for " + std::to_string(texts.size()) + " texts");
  }
  std::lock_guard lock(dim_mu_);
  for (const auto& v : out) {
    if (v.empty()) throw Error(ErrorKind::DimensionDrift, "empty embedding vector");
    if (!embedding_dim_) embedding_dim_ = v.size();
    if (v.size() != *embedding_dim_) {
      throw Error(ErrorKind::DimensionDrift, "expected dim " + std::to_string(*embedding_dim_) + ", got " +
                                                 std::to_string(v.size()));
    }
  }
  return out;
}

GatewayCounters Gateway::counters() const {
  std::lock_guard lock(stats_mu_);
  return counters_;
}

void Gateway::reset_counters() {
  std::lock_guard lock(stats_mu_);
  counters_ = {};
  exchanges_.clear();
}

std::vector<ChatExchange> Gateway::exchanges() const {
  std::lock_guard lock(stats_mu_);
  return exchanges_;
}

std::optional<std::size_t> Gateway::embedding_dim() const {
  std::lock_guard lock(dim_mu_);
  return embedding_dim_;
}

std::string Gateway::embedding_provider_id() const { return binding(ModelRole::embedding).embedding->id(); }

}  // namespace vulnroute
