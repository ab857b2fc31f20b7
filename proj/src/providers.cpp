#include "vulnroute/providers.hpp"

#include <cctype>
#include <cmath>
#include <cstdlib>

#include "vulnroute/error.hpp"
#include "vulnroute/util/hash.hpp"

namespace vulnroute {

// ---------------------------------------------------------------- scripted

ScriptedProvider::ScriptedProvider(std::string id, Script script) : id_(std::move(id)), script_(std::move(script)) {}

std::shared_ptr<ScriptedProvider> ScriptedProvider::from_directory(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw Error(ErrorKind::ConfigMissing, "scripted fixtures directory not found: " + dir.string());
  }
  auto p = std::shared_ptr<ScriptedProvider>(new ScriptedProvider());
  p->id_ = "scripted:" + dir.filename().string();
  p->dir_ = dir;
  const auto rules_path = dir / "rules.json";
  if (std::filesystem::exists(rules_path)) {
    const Json doc = read_json_file(rules_path);
    try {
      for (const auto& r : doc.value("rules", Json::array())) {
        Rule rule;
        if (r.contains("role")) {
          rule.role = parse_model_role(r["role"].get<std::string>());
          if (!rule.role) throw Error(ErrorKind::MalformedRecord, "rules.json: bad role");
        }
        rule.agent = r.value("agent", "");
        rule.section = r.value("section", "");
        rule.contains = r.value("contains", "");
        if (r.contains("regex")) rule.pattern = std::regex(r["regex"].get<std::string>());
        rule.instruction_contains = r.value("instruction_contains", "");
        rule.response = r.value("response", "");
        rule.fail_first = r.value("fail_first", std::size_t{0});
        p->rules_.push_back(std::move(rule));
      }
      const Json defaults = doc.value("defaults", Json::object());
      for (const auto& [role_name, response] : defaults.items()) {
        auto role = parse_model_role(role_name);
        if (!role) throw Error(ErrorKind::MalformedRecord, "rules.json: bad default role " + role_name);
        p->defaults_[*role] = response.get<std::string>();
      }
    } catch (const Json::exception& e) {
      throw Error(ErrorKind::MalformedRecord, rules_path.string() + ": " + e.what());
    } catch (const std::regex_error& e) {
      throw Error(ErrorKind::MalformedRecord, rules_path.string() + ": bad regex: " + e.what());
    }
  }
  return p;
}

std::size_t ScriptedProvider::invocations() const {
  std::lock_guard lock(mu_);
  return invocations_;
}

std::string ScriptedProvider::expand(const std::string& tmpl, const ChatRequest& request) {
  std::string out;
  std::size_t pos = 0;
  while (pos < tmpl.size()) {
    const auto open = tmpl.find("{{", pos);
    if (open == std::string::npos) {
      out.append(tmpl, pos);
      break;
    }
    const auto close = tmpl.find("}}", open + 2);
    if (close == std::string::npos) {
      out.append(tmpl, pos);
      break;
    }
    out.append(tmpl, pos, open - pos);
    const std::string name = tmpl.substr(open + 2, close - open - 2);
    if (name == "payload") {
      out += request.payload;
    } else if (name == "instruction") {
      out += request.instruction;
    } else if (name.rfind("section:", 0) == 0) {
      out += extract_section(request.payload, name.substr(8)).value_or("");
    } else {
      out.append(tmpl, open, close + 2 - open);
    }
    pos = close + 2;
  }
  return out;
}

std::string ScriptedProvider::from_fixtures(const ChatRequest& request) {
  const auto exact = dir_ / (sha256_hex(request.payload) + ".txt");
  if (std::filesystem::exists(exact)) return read_text_file(exact);

  std::lock_guard lock(mu_);
  for (auto& rule : rules_) {
    if (rule.role && *rule.role != request.role) continue;
    if (!rule.agent.empty()) {
      const bool exact_agent = rule.agent.find(':') != std::string::npos;
      if (exact_agent ? rule.agent != request.agent : rule.agent != agent_kind(request.agent)) continue;
    }
    if (!rule.instruction_contains.empty() &&
        request.instruction.find(rule.instruction_contains) == std::string::npos) {
      continue;
    }
    std::string subject = request.payload;
    if (!rule.section.empty()) {
      auto sec = extract_section(request.payload, rule.section);
      if (!sec) continue;
      subject = *sec;
    }
    if (!rule.contains.empty() && subject.find(rule.contains) == std::string::npos) continue;
    if (rule.pattern && !std::regex_search(subject, *rule.pattern)) continue;
    if (rule.seen++ < rule.fail_first) throw TransportError("scripted transient failure", true);
    return expand(rule.response, request);
  }
  auto it = defaults_.find(request.role);
  if (it != defaults_.end()) return expand(it->second, request);
  throw TransportError("no scripted response for " + std::string(to_string(request.role)) + " request", false);
}

std::string ScriptedProvider::complete(const ChatRequest& request, const GenerationParams&) {
  {
    std::lock_guard lock(mu_);
    ++invocations_;
  }
  if (script_) return script_(request);
  return from_fixtures(request);
}

// ---------------------------------------------------------------- hash embedder

HashEmbedder::HashEmbedder(std::size_t dim) : dim_(dim) {
  if (dim_ == 0) throw Error(ErrorKind::InvalidArgument, "embedding dim must be positive");
}

std::string HashEmbedder::id() const { return "hash-ngram-v1:" + std::to_string(dim_); }

std::vector<float> HashEmbedder::embed_one(std::string_view text) const {
  std::vector<std::string> tokens;
  std::size_t i = 0;
  while (i < text.size()) {
    const unsigned char c = static_cast<unsigned char>(text[i]);
    if (std::isspace(c)) {
      ++i;
    } else if (std::isalnum(c) || c == '_') {
      std::size_t j = i;
      while (j < text.size() && (std::isalnum(static_cast<unsigned char>(text[j])) || text[j] == '_')) ++j;
      tokens.emplace_back(text.substr(i, j - i));
      i = j;
    } else {
      tokens.emplace_back(1, static_cast<char>(c));
      ++i;
    }
  }

  std::vector<double> acc(dim_, 0.0);
  auto add = [&](std::string_view feature) {
    const std::uint64_t h = fnv1a64(feature);
    acc[h % dim_] += (h >> 63) ? -1.0 : 1.0;
  };
  add("<bias>");
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    add("u:" + tokens[t]);
    if (t + 1 < tokens.size()) add("b:" + tokens[t] + ' ' + tokens[t + 1]);
  }
  double norm = 0.0;
  for (double v : acc) norm += v * v;
  norm = std::sqrt(norm);
  std::vector<float> out(dim_);
  if (norm == 0.0) {
    // Features cancelled exactly; fall back to a fixed unit vector.
    out[0] = 1.0f;
    return out;
  }
  for (std::size_t d = 0; d < dim_; ++d) out[d] = static_cast<float>(acc[d] / norm);
  return out;
}

std::vector<std::vector<float>> HashEmbedder::embed(std::span<const std::string> texts) {
  std::vector<std::vector<float>> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(embed_one(t));
  return out;
}

// ---------------------------------------------------------------- config

namespace {

std::string require_key(const Json& role_cfg, const std::string& role) {
  const std::string env = role_cfg.value("key_env", "");
  if (env.empty()) throw Error(ErrorKind::ConfigMissing, role + ": key_env is required");
  const char* value = std::getenv(env.c_str());
  if (!value || !*value) throw Error(ErrorKind::ConfigMissing, role + ": environment variable " + env + " is unset");
  return value;
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

}  // namespace

std::unique_ptr<Gateway> make_gateway(const Json& config, const std::filesystem::path& base_dir,
                                      bool record_exchanges) {
  GatewayOptions opts;
  opts.record_exchanges = record_exchanges;
  if (config.contains("cache")) {
    const Json& c = config["cache"];
    opts.cache_enabled = c.value("enabled", true);
    if (c.contains("dir") && c["dir"].is_string()) opts.cache_dir = resolve(base_dir, c["dir"].get<std::string>());
  }
  if (config.contains("retry")) {
    const Json& r = config["retry"];
    opts.retry.max_attempts = r.value("max_attempts", 3);
    opts.retry.base_delay = std::chrono::milliseconds(r.value("base_delay_ms", 200));
    opts.retry.max_delay = std::chrono::milliseconds(r.value("max_delay_ms", 5000));
  }
  auto gw = std::make_unique<Gateway>(opts);

  std::map<std::string, std::shared_ptr<RateLimiter>> limiters;
  auto limiter_for = [&](const Json& cfg, const std::string& provider_key) -> std::shared_ptr<RateLimiter> {
    const double rpm = cfg.value("requests_per_minute", 0.0);
    const std::size_t inflight = cfg.value("max_inflight", std::size_t{0});
    if (rpm <= 0.0 && inflight == 0) return nullptr;
    auto& slot = limiters[provider_key];
    if (!slot) slot = std::make_shared<RateLimiter>(rpm, inflight);
    return slot;
  };

  for (ModelRole role : {ModelRole::execution, ModelRole::evolution}) {
    const std::string name = to_string(role);
    if (!config.contains(name)) continue;
    const Json& cfg = config[name];
    const std::string provider = cfg.value("provider", "");
    RoleBinding b;
    b.params.model = cfg.value("model", "");
    b.params.temperature = cfg.value("temperature", role == ModelRole::execution ? 0.0 : 0.8);
    b.params.max_tokens = cfg.value("max_tokens", 2048);
    const int timeout = cfg.value("timeout_seconds", 120);
    if (provider == "scripted") {
      b.chat = ScriptedProvider::from_directory(resolve(base_dir, cfg.value("fixtures", "scripted")));
    } else if (provider == "openai") {
      b.chat = std::make_shared<OpenAiChatProvider>(cfg.value("endpoint", "https://api.openai.com/v1"),
                                                    require_key(cfg, name), timeout);
    } else if (provider == "anthropic") {
      b.chat = std::make_shared<AnthropicChatProvider>(cfg.value("endpoint", "https://api.anthropic.com/v1"),
                                                       require_key(cfg, name), timeout);
    } else {
      throw Error(ErrorKind::ConfigMissing, name + ": unknown provider '" + provider + "'");
    }
    b.limiter = limiter_for(cfg, provider + "|" + cfg.value("endpoint", ""));
    gw->bind(role, std::move(b));
  }

  if (config.contains("embedding")) {
    const Json& cfg = config["embedding"];
    const std::string provider = cfg.value("provider", "hash");
    RoleBinding b;
    if (provider == "hash") {
      b.embedding = std::make_shared<HashEmbedder>(cfg.value("dim", std::size_t{256}));
    } else if (provider == "openai") {
      b.embedding = std::make_shared<OpenAiEmbeddingProvider>(cfg.value("endpoint", "https://api.openai.com/v1"),
                                                              require_key(cfg, "embedding"),
                                                              cfg.value("model", "text-embedding-3-small"),
                                                              cfg.value("timeout_seconds", 120));
    } else {
      throw Error(ErrorKind::ConfigMissing, "embedding: unknown provider '" + provider + "'");
    }
    b.limiter = limiter_for(cfg, provider + "|" + cfg.value("endpoint", ""));
    gw->bind(ModelRole::embedding, std::move(b));
  }
  return gw;
}

std::unique_ptr<Gateway> load_gateway(const std::filesystem::path& config_path, bool record_exchanges) {
  if (!std::filesystem::exists(config_path)) {
    throw Error(ErrorKind::ConfigMissing, "provider config not found: " + config_path.string());
  }
  return make_gateway(read_json_file(config_path), config_path.parent_path(), record_exchanges);
}

}  // namespace vulnroute
