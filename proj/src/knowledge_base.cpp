#include "vulnroute/knowledge_base.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "vulnroute/error.hpp"

namespace vulnroute {

const char* to_string(EvidencePool pool) noexcept {
  switch (pool) {
    case EvidencePool::global: return "global";
    case EvidencePool::positive: return "positive";
    case EvidencePool::clean: return "clean";
    case EvidencePool::hard_negative: return "hard_negative";
  }
  return "unknown";
}

ContrastiveBudget contrastive_budget(std::size_t r) {
  ContrastiveBudget b;
  b.positive = r / 3;
  b.clean = r / 3;
  b.hard = r - b.positive - b.clean;
  return b;
}

KnowledgeBase::KnowledgeBase(std::shared_ptr<const Taxonomy> taxonomy, std::vector<KbEntry> entries,
                             std::vector<float> matrix, std::size_t dim, std::string embedder_id)
    : taxonomy_(std::move(taxonomy)),
      entries_(std::move(entries)),
      matrix_(std::move(matrix)),
      dim_(dim),
      embedder_id_(std::move(embedder_id)) {
  if (!taxonomy_) throw Error(ErrorKind::InvalidArgument, "knowledge base requires a taxonomy");
  if (dim_ == 0 && !entries_.empty()) throw Error(ErrorKind::EmbeddingDimensionMismatch, "dimension 0");
  if (matrix_.size() != entries_.size() * dim_) {
    throw Error(ErrorKind::EmbeddingDimensionMismatch, "matrix size does not match entries x dim");
  }
  for (const auto& c : taxonomy_->categories()) category_pools_[c.id];
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const KbEntry& e = entries_[i];
    if (!id_index_.emplace(e.sample_id, i).second) throw Error(ErrorKind::DuplicateId, e.sample_id);
    all_.push_back(i);
    if (taxonomy_->is_benign(e.label)) {
      clean_pool_.push_back(i);
    } else if (auto cat = taxonomy_->category_of(e.label)) {
      category_pools_[*cat].push_back(i);
    } else {
      throw Error(ErrorKind::UnknownLabel, e.sample_id + " has label " + e.label);
    }
    // Normalize the row.
    float* row = matrix_.data() + i * dim_;
    double norm = 0.0;
    for (std::size_t d = 0; d < dim_; ++d) norm += static_cast<double>(row[d]) * row[d];
    norm = std::sqrt(norm);
    if (norm == 0.0) throw Error(ErrorKind::EmbeddingDimensionMismatch, "zero embedding for " + e.sample_id);
    for (std::size_t d = 0; d < dim_; ++d) row[d] = static_cast<float>(row[d] / norm);
  }
  check_partition();
}

void KnowledgeBase::check_partition() const {
  std::vector<int> hits(entries_.size(), 0);
  for (auto i : clean_pool_) ++hits[i];
  for (const auto& [cat, pool] : category_pools_) {
    for (auto i : pool) ++hits[i];
  }
  for (std::size_t i = 0; i < hits.size(); ++i) {
    if (hits[i] != 1) throw Error(ErrorKind::InvalidArgument, "pool partition violated for " + entries_[i].sample_id);
  }
}

KnowledgeBase KnowledgeBase::build(const LabeledDataset& dataset, const Structurer& structurer,
                                   std::shared_ptr<EmbeddingProvider> embedder, std::size_t batch_size) {
  if (!embedder) throw Error(ErrorKind::ConfigMissing, "knowledge base build needs an embedder");
  if (batch_size == 0) batch_size = 1;
  std::vector<KbEntry> entries;
  entries.reserve(dataset.size());
  for (const auto& s : dataset.samples()) {
    entries.push_back(KbEntry{s.id, s.label, structurer.structure(s.id, s.code)});
  }
  std::vector<float> matrix;
  std::size_t dim = 0;
  for (std::size_t start = 0; start < entries.size(); start += batch_size) {
    const std::size_t end = std::min(entries.size(), start + batch_size);
    std::vector<std::string> texts;
    for (std::size_t i = start; i < end; ++i) texts.push_back(entries[i].representation.text);
    auto vecs = embedder->embed(texts);
    if (vecs.size() != texts.size()) {
      throw Error(ErrorKind::EmbeddingDimensionMismatch, "embedder returned wrong number of vectors");
    }
    for (const auto& v : vecs) {
      if (dim == 0) {
        dim = v.size();
        matrix.reserve(dim * entries.size());
      }
      if (v.size() != dim || dim == 0) {
        throw Error(ErrorKind::EmbeddingDimensionMismatch,
                    "expected dim " + std::to_string(dim) + ", got " + std::to_string(v.size()));
      }
      matrix.insert(matrix.end(), v.begin(), v.end());
    }
  }
  KnowledgeBase kb(dataset.taxonomy_ptr(), std::move(entries), std::move(matrix), dim, embedder->id());
  kb.embedder_ = std::move(embedder);
  return kb;
}

std::span<const float> KnowledgeBase::embedding(std::size_t index) const {
  return {matrix_.data() + index * dim_, dim_};
}

const std::vector<std::size_t>& KnowledgeBase::category_pool(std::string_view category_id) const {
  auto it = category_pools_.find(category_id);
  if (it == category_pools_.end()) throw Error(ErrorKind::UnknownCategory, std::string(category_id));
  return it->second;
}

std::vector<std::size_t> KnowledgeBase::out_of_category_pool(std::string_view category_id) const {
  if (!category_pools_.count(category_id)) throw Error(ErrorKind::UnknownCategory, std::string(category_id));
  std::vector<std::size_t> out;
  for (const auto& [cat, pool] : category_pools_) {
    if (cat != category_id) out.insert(out.end(), pool.begin(), pool.end());
  }
  std::sort(out.begin(), out.end());
  return out;
}

void KnowledgeBase::attach_embedder(std::shared_ptr<EmbeddingProvider> embedder) {
  if (embedder && !embedder_id_.empty() && embedder->id() != embedder_id_) {
    throw Error(ErrorKind::EmbeddingDimensionMismatch,
                "store built with embedder " + embedder_id_ + " but " + embedder->id() + " attached");
  }
  embedder_ = std::move(embedder);
}

ExclusionToken KnowledgeBase::leakage_guard(std::string_view training_sample_id) const {
  if (!id_index_.count(training_sample_id)) return ExclusionToken{};
  return ExclusionToken(std::string(training_sample_id));
}

std::vector<float> KnowledgeBase::embed_query(const StructuredRepresentation& query) const {
  if (!embedder_) throw Error(ErrorKind::ConfigMissing, "no embedder attached to the knowledge base");
  const std::string texts[] = {query.text};
  auto v = embedder_->embed(texts);
  if (v.size() != 1 || v[0].size() != dim_) {
    throw Error(ErrorKind::EmbeddingDimensionMismatch,
                "query embedding has dim " + std::to_string(v.empty() ? 0 : v[0].size()) + ", store has " +
                    std::to_string(dim_));
  }
  return std::move(v[0]);
}

double KnowledgeBase::cosine(std::span<const float> query, std::size_t index) const {
  const float* row = matrix_.data() + index * dim_;
  double dot = 0.0;
  for (std::size_t d = 0; d < dim_; ++d) dot += static_cast<double>(query[d]) * row[d];
  return std::clamp(dot, -1.0, 1.0);
}

std::vector<EvidenceItem> KnowledgeBase::top_r(std::span<const float> query, std::span<const std::size_t> candidates,
                                               std::size_t r, const ExclusionToken& exclusion,
                                               EvidencePool pool) const {
  std::vector<std::pair<double, std::size_t>> scored;
  scored.reserve(candidates.size());
  for (std::size_t i : candidates) {
    if (exclusion.excludes(entries_[i].sample_id)) continue;
    scored.emplace_back(cosine(query, i), i);
  }
  auto better = [&](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return entries_[a.second].sample_id < entries_[b.second].sample_id;
  };
  const std::size_t take = std::min(r, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(take), scored.end(), better);
  std::vector<EvidenceItem> out;
  out.reserve(take);
  for (std::size_t k = 0; k < take; ++k) {
    const KbEntry& e = entries_[scored[k].second];
    out.push_back(EvidenceItem{e.sample_id, e.label, e.representation.text, scored[k].first, pool});
  }
  return out;
}

namespace {

std::vector<float> normalized(std::span<const float> v) {
  double norm = 0.0;
  for (float x : v) norm += static_cast<double>(x) * x;
  norm = std::sqrt(norm);
  std::vector<float> out(v.begin(), v.end());
  if (norm > 0.0) {
    for (auto& x : out) x = static_cast<float>(x / norm);
  }
  return out;
}

}  // namespace

EvidenceBundle KnowledgeBase::retrieve_global(const StructuredRepresentation& query, std::size_t r,
                                              const ExclusionToken& exclusion) const {
  if (entries_.empty()) throw Error(ErrorKind::EmptyKnowledgeBase, "global retrieval over an empty store");
  return retrieve_global(embed_query(query), r, exclusion);
}

EvidenceBundle KnowledgeBase::retrieve_global(std::span<const float> query_embedding, std::size_t r,
                                              const ExclusionToken& exclusion) const {
  if (r < 1) throw Error(ErrorKind::InvalidArgument, "global retrieval needs r >= 1");
  if (entries_.empty()) throw Error(ErrorKind::EmptyKnowledgeBase, "global retrieval over an empty store");
  if (query_embedding.size() != dim_) throw Error(ErrorKind::EmbeddingDimensionMismatch, "query dimension");
  const auto q = normalized(query_embedding);
  EvidenceBundle b;
  b.kind = EvidenceBundle::Kind::global;
  b.requested = r;
  b.items = top_r(q, all_, r, exclusion, EvidencePool::global);
  return b;
}

EvidenceBundle KnowledgeBase::retrieve_contrastive(const StructuredRepresentation& query,
                                                   std::string_view category_id, std::size_t r,
                                                   const ExclusionToken& exclusion) const {
  if (!category_pools_.count(category_id)) throw Error(ErrorKind::UnknownCategory, std::string(category_id));
  if (r < 3) throw Error(ErrorKind::InvalidArgument, "contrastive retrieval needs r >= 3");
  return retrieve_contrastive(embed_query(query), category_id, r, exclusion);
}

EvidenceBundle KnowledgeBase::retrieve_contrastive(std::span<const float> query_embedding,
                                                   std::string_view category_id, std::size_t r,
                                                   const ExclusionToken& exclusion) const {
  const auto& positives = category_pool(category_id);
  if (r < 3) throw Error(ErrorKind::InvalidArgument, "contrastive retrieval needs r >= 3");
  if (query_embedding.size() != dim_) throw Error(ErrorKind::EmbeddingDimensionMismatch, "query dimension");
  const auto q = normalized(query_embedding);
  EvidenceBundle b;
  b.kind = EvidenceBundle::Kind::contrastive;
  b.requested = r;
  b.budget = contrastive_budget(r);
  auto pos = top_r(q, positives, b.budget.positive, exclusion, EvidencePool::positive);
  auto clean = top_r(q, clean_pool_, b.budget.clean, exclusion, EvidencePool::clean);
  const auto hard_pool = out_of_category_pool(category_id);
  auto hard = top_r(q, hard_pool, b.budget.hard, exclusion, EvidencePool::hard_negative);
  b.returned = ContrastiveBudget{pos.size(), clean.size(), hard.size()};
  b.items.reserve(b.returned.total());
  for (auto* part : {&pos, &clean, &hard}) {
    std::move(part->begin(), part->end(), std::back_inserter(b.items));
  }
  return b;
}

// ---------------------------------------------------------------- persistence

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(const std::string& in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}

}  // namespace

void KnowledgeBase::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  std::string entries;
  for (const auto& e : entries_) {
    entries += Json{{"sample_id", e.sample_id}, {"label", e.label}, {"representation", e.representation.text}}.dump();
    entries += '\n';
  }
  std::string bin;
  bin.reserve(9 + matrix_.size() * 4);
  bin.push_back(static_cast<char>(kStoreVersion));
  put_u32(bin, static_cast<std::uint32_t>(dim_));
  put_u32(bin, static_cast<std::uint32_t>(entries_.size()));
  for (float f : matrix_) put_u32(bin, std::bit_cast<std::uint32_t>(f));

  Json pools{{"clean", clean_pool_.size()}};
  Json cats = Json::object();
  for (const auto& [cat, pool] : category_pools_) cats[cat] = pool.size();
  pools["categories"] = cats;
  const Json manifest{{"format_version", kStoreVersion},
                      {"embedder", embedder_id_},
                      {"dim", dim_},
                      {"count", entries_.size()},
                      {"pools", pools}};
  write_text_file_atomic(dir / "entries.jsonl", entries);
  write_text_file_atomic(dir / "embeddings.bin", bin);
  write_json_file(dir / "manifest.json", manifest);
}

KnowledgeBase KnowledgeBase::load(const std::filesystem::path& dir, std::shared_ptr<const Taxonomy> taxonomy) {
  if (!std::filesystem::is_directory(dir)) throw Error(ErrorKind::Io, "knowledge base store not found: " + dir.string());
  const Json manifest = read_json_file(dir / "manifest.json");
  if (manifest.value("format_version", 0) != kStoreVersion) {
    throw Error(ErrorKind::StoreFormat, "unsupported store format version in " + dir.string());
  }
  const std::string bin = read_text_file(dir / "embeddings.bin");
  if (bin.size() < 9) throw Error(ErrorKind::StoreFormat, "embeddings.bin truncated");
  if (static_cast<std::uint8_t>(bin[0]) != kStoreVersion) {
    throw Error(ErrorKind::StoreFormat, "embeddings.bin version byte " + std::to_string(static_cast<unsigned char>(bin[0])));
  }
  const std::size_t dim = get_u32(bin, 1);
  const std::size_t count = get_u32(bin, 5);
  if (bin.size() != 9 + dim * count * 4) throw Error(ErrorKind::StoreFormat, "embeddings.bin size mismatch");
  std::vector<float> matrix(dim * count);
  for (std::size_t i = 0; i < matrix.size(); ++i) matrix[i] = std::bit_cast<float>(get_u32(bin, 9 + 4 * i));

  std::vector<KbEntry> entries;
  std::istringstream lines(read_text_file(dir / "entries.jsonl"));
  std::string line;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    const Json rec = Json::parse(line, nullptr, false);
    if (rec.is_discarded()) throw Error(ErrorKind::StoreFormat, "bad entries.jsonl record");
    const std::string id = rec.at("sample_id").get<std::string>();
    entries.push_back(KbEntry{id, rec.at("label").get<std::string>(),
                              StructuredRepresentation{id, rec.at("representation").get<std::string>()}});
  }
  if (entries.size() != count) throw Error(ErrorKind::StoreFormat, "entry count does not match embeddings.bin");
  return KnowledgeBase(std::move(taxonomy), std::move(entries), std::move(matrix), dim,
                       manifest.value("embedder", ""));
}

std::string render_evidence(const EvidenceBundle& bundle) {
  if (bundle.items.empty()) return "(no evidence)\n";
  std::string out;
  std::size_t n = 0;
  char sim[32];
  for (const auto& item : bundle.items) {
    std::snprintf(sim, sizeof sim, "%.4f", item.similarity);
    out += "[evidence " + std::to_string(++n) + "] label=" + item.label;
    if (bundle.kind == EvidenceBundle::Kind::contrastive) out += " pool=" + std::string(to_string(item.pool));
    out += " similarity=" + std::string(sim) + "\n```\n" + item.text;
    if (!item.text.empty() && item.text.back() != '\n') out += '\n';
    out += "```\n";
  }
  return out;
}

}  // namespace vulnroute
