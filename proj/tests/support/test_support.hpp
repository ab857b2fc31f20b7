#pragma once

#include <atomic>
#include <filesystem>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "vulnroute/corpus.hpp"
#include "vulnroute/gateway.hpp"
#include "vulnroute/providers.hpp"
#include "vulnroute/taxonomy.hpp"

namespace vulnroute::testing {

inline std::filesystem::path fixtures_dir() { return VULNROUTE_FIXTURES_DIR; }
inline std::filesystem::path data_dir() { return VULNROUTE_DATA_DIR; }

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "vr") {
    static std::atomic<unsigned> counter{0};
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            (tag + "-" + std::to_string(rd()) + "-" + std::to_string(counter.fetch_add(1)));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

// Three categories with three types each:
//   Memory:    CWE-787 CWE-125 CWE-476
//   Injection: CWE-78  CWE-89  CWE-134
//   Numeric:   CWE-190 CWE-369 CWE-191
inline std::shared_ptr<const Taxonomy> small_taxonomy() {
  std::vector<Category> cats{
      {"Memory", "Memory", {"CWE-787", "CWE-125", "CWE-476"}, {"mem"}},
      {"Injection", "Injection", {"CWE-78", "CWE-89", "CWE-134"}, {}},
      {"Numeric", "Numeric", {"CWE-190", "CWE-369", "CWE-191"}, {}},
  };
  std::vector<CweType> types;
  for (const auto& c : cats) {
    for (const auto& t : c.types) types.push_back({t, t});
  }
  return std::make_shared<const Taxonomy>(std::move(cats), std::move(types));
}

// Deterministic C-ish snippet; `marker` is embedded as a call when nonempty.
inline std::string snippet(std::size_t seed, const std::string& marker = {}) {
  static const char* verbs[] = {"parse", "load", "handle", "scan", "emit", "fill"};
  static const char* nouns[] = {"packet", "header", "entry", "frame", "token", "row"};
  std::string name = std::string(verbs[seed % 6]) + "_" + nouns[(seed / 6) % 6] + "_" + std::to_string(seed);
  std::string code = "int " + name + "(const char *in, int len)\n{\n  int total = " + std::to_string(seed % 10) + ";\n";
  if (seed % 2) code += "  if (len <= 0)\n    return -1;\n";
  if (seed % 3) code += "  for (int i = 0; i < len; i++)\n    total += in[i];\n";
  if (!marker.empty()) code += "  total += " + marker + "(in, len);\n";
  code += "  return total;\n}\n";
  return code;
}

inline std::string marker_for(const std::string& type) {
  std::string m = "call_";
  for (char c : type) m += c == '-' ? '_' : static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return m;
}

// `per_type` samples for every type plus `benign` benign samples; ids "s<n>".
inline LabeledDataset synthetic_dataset(std::shared_ptr<const Taxonomy> tax, std::size_t per_type,
                                        std::size_t benign) {
  std::vector<CodeSample> samples;
  std::size_t n = 0;
  for (const auto& t : tax->types()) {
    for (std::size_t i = 0; i < per_type; ++i, ++n) {
      samples.push_back({"s" + std::to_string(n), snippet(n, marker_for(t.id)), t.id});
    }
  }
  for (std::size_t i = 0; i < benign; ++i, ++n) samples.push_back({"s" + std::to_string(n), snippet(n), "BENIGN"});
  return LabeledDataset(std::move(tax), std::move(samples));
}

inline std::unique_ptr<Gateway> scripted_gateway(ScriptedProvider::Script exec,
                                                 ScriptedProvider::Script evo = nullptr,
                                                 std::size_t embed_dim = 128, bool cache = false) {
  GatewayOptions opts;
  opts.cache_enabled = cache;
  opts.retry.max_attempts = 2;
  opts.retry.base_delay = std::chrono::milliseconds(0);
  opts.retry.max_delay = std::chrono::milliseconds(0);
  auto gw = std::make_unique<Gateway>(opts);
  RoleBinding e;
  e.chat = std::make_shared<ScriptedProvider>("exec", std::move(exec));
  e.params.model = "scripted";
  gw->bind(ModelRole::execution, e);
  if (evo) {
    RoleBinding v;
    v.chat = std::make_shared<ScriptedProvider>("evo", std::move(evo));
    v.params.model = "scripted";
    gw->bind(ModelRole::evolution, v);
  }
  RoleBinding m;
  m.embedding = std::make_shared<HashEmbedder>(embed_dim);
  gw->bind(ModelRole::embedding, m);
  return gw;
}

}  // namespace vulnroute::testing
