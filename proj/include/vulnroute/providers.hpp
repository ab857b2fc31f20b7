#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <regex>
#include <string>
#include <vector>

#include "vulnroute/gateway.hpp"

namespace vulnroute {

// Deterministic stand-in for a model. Either wraps a callback, or is loaded
// from a fixtures directory holding `<sha256(payload)>.txt` canned responses
// and an optional `rules.json` of pattern rules.
class ScriptedProvider final : public ChatProvider {
 public:
  using Script = std::function<std::string(const ChatRequest&)>;

  ScriptedProvider(std::string id, Script script);
  static std::shared_ptr<ScriptedProvider> from_directory(const std::filesystem::path& dir);

  std::string id() const override { return id_; }
  std::string complete(const ChatRequest& request, const GenerationParams& params) override;

  std::size_t invocations() const;

 private:
  struct Rule {
    std::optional<ModelRole> role;
    std::string agent;    // exact agent, or kind prefix when it has no ':'
    std::string section;  // empty: match against the whole payload
    std::string contains;
    std::optional<std::regex> pattern;
    std::string instruction_contains;
    std::string response;
    std::size_t fail_first = 0;
    std::size_t seen = 0;
  };

  ScriptedProvider() = default;
  std::string from_fixtures(const ChatRequest& request);
  static std::string expand(const std::string& tmpl, const ChatRequest& request);

  std::string id_;
  Script script_;
  std::filesystem::path dir_;
  std::vector<Rule> rules_;
  std::map<ModelRole, std::string> defaults_;
  mutable std::mutex mu_;
  std::size_t invocations_ = 0;
};

// Local hashed token n-gram embedder (unigrams and bigrams, signed feature
// hashing, L2 normalized). Pure function of the input text.
class HashEmbedder final : public EmbeddingProvider {
 public:
  explicit HashEmbedder(std::size_t dim = 256);
  std::string id() const override;
  std::vector<std::vector<float>> embed(std::span<const std::string> texts) override;
  std::vector<float> embed_one(std::string_view text) const;
  std::size_t dim() const { return dim_; }

 private:
  std::size_t dim_;
};

struct HttpEndpoint {
  std::string base;    // scheme://host[:port]
  std::string prefix;  // path prefix, e.g. "/v1"
};
HttpEndpoint parse_endpoint(const std::string& url);

// OpenAI-compatible /chat/completions.
class OpenAiChatProvider final : public ChatProvider {
 public:
  OpenAiChatProvider(std::string endpoint, std::string api_key, int timeout_seconds = 120);
  std::string id() const override { return "openai:" + endpoint_; }
  std::string complete(const ChatRequest& request, const GenerationParams& params) override;

 private:
  std::string endpoint_;
  std::string api_key_;
  int timeout_seconds_;
};

// Anthropic /messages.
class AnthropicChatProvider final : public ChatProvider {
 public:
  AnthropicChatProvider(std::string endpoint, std::string api_key, int timeout_seconds = 120);
  std::string id() const override { return "anthropic:" + endpoint_; }
  std::string complete(const ChatRequest& request, const GenerationParams& params) override;

 private:
  std::string endpoint_;
  std::string api_key_;
  int timeout_seconds_;
};

// OpenAI-compatible /embeddings.
class OpenAiEmbeddingProvider final : public EmbeddingProvider {
 public:
  OpenAiEmbeddingProvider(std::string endpoint, std::string api_key, std::string model, int timeout_seconds = 120);
  std::string id() const override { return "openai-embed:" + endpoint_ + ":" + model_; }
  std::vector<std::vector<float>> embed(std::span<const std::string> texts) override;

 private:
  std::string endpoint_;
  std::string api_key_;
  std::string model_;
  int timeout_seconds_;
};

// Builds a gateway from a provider config document:
//   { "execution": {provider, endpoint, model, key_env, max_inflight,
//                   requests_per_minute, temperature, fixtures},
//     "evolution": {...}, "embedding": {provider, dim | endpoint, model, key_env},
//     "cache": {enabled, dir}, "retry": {max_attempts, base_delay_ms, max_delay_ms} }
// Relative paths resolve against `base_dir`. API keys come only from the
// environment variable named by key_env.
std::unique_ptr<Gateway> make_gateway(const Json& config, const std::filesystem::path& base_dir,
                                      bool record_exchanges = false);
std::unique_ptr<Gateway> load_gateway(const std::filesystem::path& config_path, bool record_exchanges = false);

}  // namespace vulnroute
