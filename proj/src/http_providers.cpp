#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include "vulnroute/error.hpp"
#include "vulnroute/providers.hpp"

namespace vulnroute {

HttpEndpoint parse_endpoint(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw Error(ErrorKind::ConfigMissing, "endpoint needs a scheme: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  HttpEndpoint ep;
  ep.base = url.substr(0, path_start);
  ep.prefix = path_start == std::string::npos ? "" : url.substr(path_start);
  while (!ep.prefix.empty() && ep.prefix.back() == '/') ep.prefix.pop_back();
  return ep;
}

namespace {

Json post_json(const std::string& endpoint, const std::string& path, const Json& body,
               const httplib::Headers& headers, int timeout_seconds) {
  const HttpEndpoint ep = parse_endpoint(endpoint);
  httplib::Client client(ep.base);
  client.set_connection_timeout(timeout_seconds, 0);
  client.set_read_timeout(timeout_seconds, 0);
  client.set_write_timeout(timeout_seconds, 0);
  auto res = client.Post(ep.prefix + path, headers, body.dump(), "application/json");
  if (!res) throw TransportError("transport: " + httplib::to_string(res.error()), true);
  if (res->status == 429 || res->status >= 500) {
    throw TransportError("http " + std::to_string(res->status) + ": " + res->body, true);
  }
  if (res->status < 200 || res->status >= 300) {
    throw TransportError("http " + std::to_string(res->status) + ": " + res->body, false);
  }
  try {
    return Json::parse(res->body);
  } catch (const Json::parse_error& e) {
    throw TransportError(std::string("unparseable provider body: ") + e.what(), true);
  }
}

}  // namespace

OpenAiChatProvider::OpenAiChatProvider(std::string endpoint, std::string api_key, int timeout_seconds)
    : endpoint_(std::move(endpoint)), api_key_(std::move(api_key)), timeout_seconds_(timeout_seconds) {}

std::string OpenAiChatProvider::complete(const ChatRequest& request, const GenerationParams& params) {
  Json body{{"model", params.model},
            {"temperature", params.temperature},
            {"max_tokens", params.max_tokens},
            {"messages", Json::array({Json{{"role", "system"}, {"content", request.instruction}},
                                      Json{{"role", "user"}, {"content", request.payload}}})}};
  const Json res = post_json(endpoint_, "/chat/completions", body,
                             {{"Authorization", "Bearer " + api_key_}}, timeout_seconds_);
  try {
    return res.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const Json::exception& e) {
    throw TransportError(std::string("unexpected chat response shape: ") + e.what(), false);
  }
}

AnthropicChatProvider::AnthropicChatProvider(std::string endpoint, std::string api_key, int timeout_seconds)
    : endpoint_(std::move(endpoint)), api_key_(std::move(api_key)), timeout_seconds_(timeout_seconds) {}

std::string AnthropicChatProvider::complete(const ChatRequest& request, const GenerationParams& params) {
  Json body{{"model", params.model},
            {"temperature", params.temperature},
            {"max_tokens", params.max_tokens},
            {"system", request.instruction},
            {"messages", Json::array({Json{{"role", "user"}, {"content", request.payload}}})}};
  const Json res = post_json(endpoint_, "/messages", body,
                             {{"x-api-key", api_key_}, {"anthropic-version", "2023-06-01"}}, timeout_seconds_);
  try {
    std::string text;
    for (const auto& block : res.at("content")) {
      if (block.value("type", "") == "text") text += block.at("text").get<std::string>();
    }
    return text;
  } catch (const Json::exception& e) {
    throw TransportError(std::string("unexpected messages response shape: ") + e.what(), false);
  }
}

OpenAiEmbeddingProvider::OpenAiEmbeddingProvider(std::string endpoint, std::string api_key, std::string model,
                                                 int timeout_seconds)
    : endpoint_(std::move(endpoint)),
      api_key_(std::move(api_key)),
      model_(std::move(model)),
      timeout_seconds_(timeout_seconds) {}

std::vector<std::vector<float>> OpenAiEmbeddingProvider::embed(std::span<const std::string> texts) {
  Json input = Json::array();
  for (const auto& t : texts) input.push_back(t);
  const Json res = post_json(endpoint_, "/embeddings", Json{{"model", model_}, {"input", input}},
                             {{"Authorization", "Bearer " + api_key_}}, timeout_seconds_);
  std::vector<std::vector<float>> out(texts.size());
  try {
    for (const auto& item : res.at("data")) {
      const auto index = item.value("index", std::size_t{0});
      if (index >= out.size()) throw TransportError("embedding index out of range", false);
      out[index] = item.at("embedding").get<std::vector<float>>();
    }
  } catch (const Json::exception& e) {
    throw TransportError(std::string("unexpected embedding response shape: ") + e.what(), false);
  }
  return out;
}

}  // namespace vulnroute
