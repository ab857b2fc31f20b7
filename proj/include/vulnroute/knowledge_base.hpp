#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vulnroute/corpus.hpp"
#include "vulnroute/gateway.hpp"
#include "vulnroute/structuring.hpp"

namespace vulnroute {

// Adapts the gateway's embedding role to the provider interface.
class GatewayEmbedding final : public EmbeddingProvider {
 public:
  explicit GatewayEmbedding(Gateway& gateway) : gateway_(gateway) {}
  std::string id() const override { return gateway_.embedding_provider_id(); }
  std::vector<std::vector<float>> embed(std::span<const std::string> texts) override { return gateway_.embed(texts); }

 private:
  Gateway& gateway_;
};

struct KbEntry {
  std::string sample_id;
  std::string label;
  StructuredRepresentation representation;
};

enum class EvidencePool { global, positive, clean, hard_negative };
const char* to_string(EvidencePool pool) noexcept;

struct EvidenceItem {
  std::string sample_id;
  std::string label;
  std::string text;
  double similarity = 0.0;
  EvidencePool pool = EvidencePool::global;
};

struct ContrastiveBudget {
  std::size_t positive = 0;
  std::size_t clean = 0;
  std::size_t hard = 0;
  std::size_t total() const { return positive + clean + hard; }
};

// r_pos = r_neg = floor(r/3), r_hard = r - r_pos - r_neg.
ContrastiveBudget contrastive_budget(std::size_t r);

struct EvidenceBundle {
  enum class Kind { global, contrastive, none } kind = Kind::none;
  std::vector<EvidenceItem> items;  // descending similarity within each pool
  std::size_t requested = 0;        // r
  ContrastiveBudget budget;         // contrastive only
  ContrastiveBudget returned;       // per-pool counts actually returned
};

// Produced by leakage_guard; retrievals carrying it never return the id.
class ExclusionToken {
 public:
  ExclusionToken() = default;
  const std::optional<std::string>& excluded_id() const { return id_; }
  bool excludes(std::string_view id) const { return id_ && *id_ == id; }

 private:
  friend class KnowledgeBase;
  explicit ExclusionToken(std::string id) : id_(std::move(id)) {}
  std::optional<std::string> id_;
};

// Embedded evidence store partitioned into the clean pool (benign entries)
// and one pool per category. Out-of-category views are derived on demand.
// Immutable after construction; retrieval is safe from any number of threads
// provided the attached embedder is.
class KnowledgeBase {
 public:
  // Embeddings are L2-normalized on construction; `matrix` is row-major
  // entries.size() x dim.
  KnowledgeBase(std::shared_ptr<const Taxonomy> taxonomy, std::vector<KbEntry> entries, std::vector<float> matrix,
                std::size_t dim, std::string embedder_id);

  static KnowledgeBase build(const LabeledDataset& dataset, const Structurer& structurer,
                             std::shared_ptr<EmbeddingProvider> embedder, std::size_t batch_size = 64);

  const Taxonomy& taxonomy() const { return *taxonomy_; }
  const std::vector<KbEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t dim() const { return dim_; }
  const std::string& embedder_id() const { return embedder_id_; }
  std::span<const float> embedding(std::size_t index) const;

  const std::vector<std::size_t>& clean_pool() const { return clean_pool_; }
  const std::vector<std::size_t>& category_pool(std::string_view category_id) const;
  std::vector<std::size_t> out_of_category_pool(std::string_view category_id) const;

  // Sets the embedder used to embed retrieval queries. Its id must match the
  // one the store was built with.
  void attach_embedder(std::shared_ptr<EmbeddingProvider> embedder);

  ExclusionToken leakage_guard(std::string_view training_sample_id) const;

  std::vector<float> embed_query(const StructuredRepresentation& query) const;

  EvidenceBundle retrieve_global(const StructuredRepresentation& query, std::size_t r,
                                 const ExclusionToken& exclusion = {}) const;
  EvidenceBundle retrieve_global(std::span<const float> query_embedding, std::size_t r,
                                 const ExclusionToken& exclusion = {}) const;

  EvidenceBundle retrieve_contrastive(const StructuredRepresentation& query, std::string_view category_id,
                                      std::size_t r, const ExclusionToken& exclusion = {}) const;
  EvidenceBundle retrieve_contrastive(std::span<const float> query_embedding, std::string_view category_id,
                                      std::size_t r, const ExclusionToken& exclusion = {}) const;

  // Store layout: manifest.json, entries.jsonl, embeddings.bin
  // (u8 version, u32 dim, u32 count, row-major little-endian float32).
  void save(const std::filesystem::path& dir) const;
  static KnowledgeBase load(const std::filesystem::path& dir, std::shared_ptr<const Taxonomy> taxonomy);

  static constexpr std::uint8_t kStoreVersion = 1;

 private:
  double cosine(std::span<const float> query, std::size_t index) const;
  std::vector<EvidenceItem> top_r(std::span<const float> query, std::span<const std::size_t> candidates,
                                  std::size_t r, const ExclusionToken& exclusion, EvidencePool pool) const;
  void check_partition() const;

  std::shared_ptr<const Taxonomy> taxonomy_;
  std::vector<KbEntry> entries_;
  std::vector<float> matrix_;
  std::size_t dim_;
  std::string embedder_id_;
  std::shared_ptr<EmbeddingProvider> embedder_;
  std::vector<std::size_t> all_;
  std::vector<std::size_t> clean_pool_;
  std::map<std::string, std::vector<std::size_t>, std::less<>> category_pools_;
  std::map<std::string, std::size_t, std::less<>> id_index_;
};

// Renders evidence as fenced blocks for an agent payload.
std::string render_evidence(const EvidenceBundle& bundle);

}  // namespace vulnroute
