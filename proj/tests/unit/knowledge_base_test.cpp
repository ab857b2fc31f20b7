#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "support/test_support.hpp"
#include "vulnroute/error.hpp"
#include "vulnroute/knowledge_base.hpp"

using namespace vulnroute;

namespace {

std::vector<float> unit(std::vector<float> v) {
  double n = 0;
  for (float x : v) n += double(x) * x;
  n = std::sqrt(n);
  for (auto& x : v) x = static_cast<float>(x / n);
  return v;
}

// Exhaustive scan: cosine in double over the stored rows, ties by ascending id.
std::vector<std::string> brute_force(const KnowledgeBase& kb, const std::vector<float>& query,
                                     const std::vector<std::size_t>& candidates, std::size_t r,
                                     const std::string& excluded = {}) {
  const auto q = unit(query);
  std::vector<std::pair<double, std::string>> scored;
  for (std::size_t i : candidates) {
    const auto& id = kb.entries()[i].sample_id;
    if (id == excluded) continue;
    const auto row = kb.embedding(i);
    double dot = 0;
    for (std::size_t d = 0; d < kb.dim(); ++d) dot += double(q[d]) * row[d];
    scored.emplace_back(dot, id);
  }
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  std::vector<std::string> out;
  for (std::size_t k = 0; k < std::min(r, scored.size()); ++k) out.push_back(scored[k].second);
  return out;
}

std::vector<std::string> ids(const EvidenceBundle& b) {
  std::vector<std::string> out;
  for (const auto& it : b.items) out.push_back(it.sample_id);
  return out;
}

std::vector<std::size_t> all_indices(const KnowledgeBase& kb) {
  std::vector<std::size_t> v(kb.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = i;
  return v;
}

// Random vectors with labels cycling through the taxonomy and benign.
KnowledgeBase random_kb(std::size_t n, std::size_t dim, std::uint32_t seed) {
  auto tax = testing::small_taxonomy();
  std::vector<std::string> labels{"BENIGN"};
  for (const auto& t : tax->types()) labels.push_back(t.id);
  std::mt19937 rng(seed);
  std::normal_distribution<float> g;
  std::vector<KbEntry> entries;
  std::vector<float> matrix;
  for (std::size_t i = 0; i < n; ++i) {
    char id[16];
    std::snprintf(id, sizeof id, "e%04zu", i);
    entries.push_back({id, labels[i % labels.size()], {id, "text " + std::string(id)}});
    for (std::size_t d = 0; d < dim; ++d) matrix.push_back(g(rng));
  }
  return KnowledgeBase(tax, std::move(entries), std::move(matrix), dim, "random");
}

class FixedDimEmbedder final : public EmbeddingProvider {
 public:
  std::string id() const override { return "fixed"; }
  std::vector<std::vector<float>> embed(std::span<const std::string> texts) override {
    const std::size_t dim = calls++ == 0 ? 8 : 16;
    return std::vector<std::vector<float>>(texts.size(), std::vector<float>(dim, 0.5f));
  }
  int calls = 0;
};

}  // namespace

TEST_SUITE("knowledge_base") {
  TEST_CASE("pools partition by label") {
    auto tax = testing::small_taxonomy();
    const LabeledDataset d(tax, {{"b1", "int a;", "BENIGN"},
                                 {"b2", "int b;", "BENIGN"},
                                 {"m1", "int c;", "CWE-787"},
                                 {"m2", "int d;", "CWE-125"},
                                 {"i1", "int e;", "CWE-89"},
                                 {"i2", "int f;", "CWE-78"}});
    const auto kb = KnowledgeBase::build(d, RuleStructurer(), std::make_shared<HashEmbedder>(32));
    CHECK(kb.clean_pool().size() == 2);
    CHECK(kb.category_pool("Memory").size() == 2);
    CHECK(kb.category_pool("Injection").size() == 2);
    CHECK(kb.category_pool("Numeric").empty());
    CHECK(kb.out_of_category_pool("Memory").size() == 2);
    CHECK(kb.dim() == 32);
  }

  TEST_CASE("benign-only dataset builds with empty category pools") {
    auto tax = testing::small_taxonomy();
    const LabeledDataset d(tax, {{"b1", "int a;", "BENIGN"}, {"b2", "int b;", "BENIGN"}});
    const auto kb = KnowledgeBase::build(d, RuleStructurer(), std::make_shared<HashEmbedder>(16));
    for (const auto& c : tax->categories()) CHECK(kb.category_pool(c.id).empty());
    CHECK(kb.clean_pool().size() == 2);
  }

  TEST_CASE("embedding dimension mismatch during build") {
    auto tax = testing::small_taxonomy();
    const LabeledDataset d(tax, {{"b1", "int a;", "BENIGN"}, {"b2", "int b;", "BENIGN"}});
    try {
      KnowledgeBase::build(d, RuleStructurer(), std::make_shared<FixedDimEmbedder>(), 1);
      FAIL("expected EmbeddingDimensionMismatch");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::EmbeddingDimensionMismatch);
    }
  }

  TEST_CASE("contrastive budget") {
    CHECK(contrastive_budget(9).positive == 3);
    CHECK(contrastive_budget(9).clean == 3);
    CHECK(contrastive_budget(9).hard == 3);
    CHECK(contrastive_budget(10).hard == 4);
    for (std::size_t r = 3; r <= 100; ++r) {
      const auto b = contrastive_budget(r);
      CHECK(b.total() == r);
      CHECK(b.positive == r / 3);
      CHECK(b.clean == r / 3);
    }
  }

  TEST_CASE("global retrieval matches exhaustive scan") {
    const auto kb = random_kb(50, 24, 11);
    std::mt19937 rng(99);
    std::normal_distribution<float> g;
    for (int q = 0; q < 10; ++q) {
      std::vector<float> query(24);
      for (auto& x : query) x = g(rng);
      CHECK(ids(kb.retrieve_global(query, 5)) == brute_force(kb, query, all_indices(kb), 5));
    }
  }

  TEST_CASE("ties resolve by ascending sample id") {
    auto tax = testing::small_taxonomy();
    std::vector<KbEntry> entries{{"z", "BENIGN", {"z", "t"}}, {"a", "BENIGN", {"a", "t"}}, {"m", "BENIGN", {"m", "t"}}};
    const std::vector<float> matrix{1, 0, 1, 0, 1, 0};
    const KnowledgeBase kb(tax, entries, matrix, 2, "x");
    CHECK(ids(kb.retrieve_global(std::vector<float>{1, 0}, 3)) == std::vector<std::string>{"a", "m", "z"});
  }

  TEST_CASE("exclusion semantics") {
    const auto kb = random_kb(30, 16, 3);
    const auto self = kb.embedding(7);
    const std::vector<float> query(self.begin(), self.end());
    const auto plain = kb.retrieve_global(query, 1);
    REQUIRE(plain.items.size() == 1);
    CHECK(plain.items[0].sample_id == kb.entries()[7].sample_id);

    const auto guard = kb.leakage_guard(kb.entries()[7].sample_id);
    const auto excluded = kb.retrieve_global(query, 1, guard);
    CHECK(ids(excluded) == brute_force(kb, query, all_indices(kb), 1, kb.entries()[7].sample_id));

    const auto absent = kb.leakage_guard("not-in-kb");
    CHECK(ids(kb.retrieve_global(query, 5, absent)) == ids(kb.retrieve_global(query, 5)));
  }

  TEST_CASE("r larger than the base is clamped") {
    auto tax = testing::small_taxonomy();
    const KnowledgeBase kb(tax, {{"a", "BENIGN", {"a", "x"}}, {"b", "CWE-787", {"b", "y"}}}, {1, 0, 0, 1}, 2, "x");
    CHECK(kb.retrieve_global(std::vector<float>{1, 1}, 3).items.size() == 2);
  }

  TEST_CASE("contrastive retrieval draws from the three pools without rebalancing") {
    const auto kb = random_kb(100, 16, 5);
    std::vector<float> query(16, 0.25f);
    const auto b = kb.retrieve_contrastive(query, "Memory", 9);
    CHECK(b.kind == EvidenceBundle::Kind::contrastive);
    CHECK(b.returned.positive == 3);
    CHECK(b.returned.clean == 3);
    CHECK(b.returned.hard == 3);
    const auto tax = testing::small_taxonomy();
    for (const auto& it : b.items) {
      const auto cat = tax->category_of(it.label);
      if (it.pool == EvidencePool::positive) CHECK(cat == std::optional<std::string>("Memory"));
      if (it.pool == EvidencePool::clean) CHECK(it.label == "BENIGN");
      if (it.pool == EvidencePool::hard_negative) {
        REQUIRE(cat.has_value());
        CHECK(*cat != "Memory");
      }
    }
    const auto got = ids(b);
    REQUIRE(got.size() == 9);
    // Each pool's slice equals the exhaustive scan over that pool.
    std::vector<std::string> pos(got.begin(), got.begin() + 3);
    CHECK(pos == brute_force(kb, query, kb.category_pool("Memory"), 3));
    std::vector<std::string> clean(got.begin() + 3, got.begin() + 6);
    CHECK(clean == brute_force(kb, query, kb.clean_pool(), 3));
    std::vector<std::string> hard(got.begin() + 6, got.end());
    CHECK(hard == brute_force(kb, query, kb.out_of_category_pool("Memory"), 3));
  }

  TEST_CASE("empty category pool yields a short bundle") {
    auto tax = testing::small_taxonomy();
    std::vector<KbEntry> entries;
    std::vector<float> matrix;
    for (int i = 0; i < 5; ++i) {
      entries.push_back({"b" + std::to_string(i), "BENIGN", {"", "x"}});
      entries.push_back({"n" + std::to_string(i), "CWE-190", {"", "y"}});
      matrix.insert(matrix.end(), {1.0f + i, 1.0f, 0.0f});
      matrix.insert(matrix.end(), {0.0f, 1.0f, 1.0f + i});
    }
    const KnowledgeBase kb(tax, entries, matrix, 3, "x");
    const auto b = kb.retrieve_contrastive(std::vector<float>{1, 1, 1}, "Memory", 9);
    CHECK(b.returned.positive == 0);
    CHECK(b.returned.clean == 3);
    CHECK(b.returned.hard == 3);
    CHECK(b.items.size() == 6);
  }

  TEST_CASE("retrieval argument errors") {
    const auto kb = random_kb(10, 4, 1);
    const std::vector<float> q{1, 0, 0, 0};
    CHECK_THROWS_AS(kb.retrieve_contrastive(q, "Memory", 2), Error);
    try {
      kb.retrieve_contrastive(q, "Nope", 9);
      FAIL("expected UnknownCategory");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::UnknownCategory);
    }
    const KnowledgeBase empty(testing::small_taxonomy(), {}, {}, 4, "x");
    try {
      empty.retrieve_global(q, 3);
      FAIL("expected EmptyKnowledgeBase");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::EmptyKnowledgeBase);
    }
  }

  TEST_CASE("leakage guard over a simulated training pass") {
    auto tax = testing::small_taxonomy();
    const auto d = testing::synthetic_dataset(tax, 10, 10);
    RuleStructurer s;
    auto kb = KnowledgeBase::build(d, s, std::make_shared<HashEmbedder>(64));
    kb.attach_embedder(std::make_shared<HashEmbedder>(64));
    std::size_t self_returns = 0;
    for (const auto& sample : d.samples()) {
      const auto guard = kb.leakage_guard(sample.id);
      const auto rep = s.structure(sample.id, sample.code);
      for (const auto& it : kb.retrieve_global(rep, 9, guard).items) self_returns += it.sample_id == sample.id;
      for (const auto& c : tax->categories()) {
        for (const auto& it : kb.retrieve_contrastive(rep, c.id, 9, guard).items) {
          self_returns += it.sample_id == sample.id;
        }
      }
    }
    CHECK(self_returns == 0);
  }

  TEST_CASE("save and load round trip") {
    testing::TempDir dir;
    auto tax = testing::small_taxonomy();
    const auto d = testing::synthetic_dataset(tax, 3, 4);
    const auto kb = KnowledgeBase::build(d, RuleStructurer(), std::make_shared<HashEmbedder>(32));
    kb.save(dir.path());
    const auto back = KnowledgeBase::load(dir.path(), tax);
    REQUIRE(back.size() == kb.size());
    CHECK(back.dim() == kb.dim());
    CHECK(back.embedder_id() == kb.embedder_id());
    for (std::size_t i = 0; i < kb.size(); ++i) {
      CHECK(back.entries()[i].sample_id == kb.entries()[i].sample_id);
      CHECK(back.entries()[i].representation.text == kb.entries()[i].representation.text);
      const auto a = kb.embedding(i);
      const auto b = back.embedding(i);
      CHECK(std::equal(a.begin(), a.end(), b.begin(), b.end()));
    }
    std::vector<float> q(32, 0.1f);
    CHECK(ids(back.retrieve_global(q, 5)) == ids(kb.retrieve_global(q, 5)));
  }

  TEST_CASE("corrupted store is rejected") {
    testing::TempDir dir;
    auto tax = testing::small_taxonomy();
    const auto kb = random_kb(5, 4, 2);
    kb.save(dir.path());
    write_text_file_atomic(dir.path() / "embeddings.bin", "short");
    try {
      KnowledgeBase::load(dir.path(), tax);
      FAIL("expected StoreFormat");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::StoreFormat);
    }
  }

  TEST_CASE("query embedder must match the store") {
    auto tax = testing::small_taxonomy();
    const auto d = testing::synthetic_dataset(tax, 1, 2);
    auto kb = KnowledgeBase::build(d, RuleStructurer(), std::make_shared<HashEmbedder>(32));
    CHECK_THROWS_AS(kb.attach_embedder(std::make_shared<HashEmbedder>(64)), Error);
    CHECK_NOTHROW(kb.attach_embedder(std::make_shared<HashEmbedder>(32)));
  }

  TEST_CASE("evidence rendering") {
    const auto kb = random_kb(12, 4, 8);
    const auto b = kb.retrieve_global(std::vector<float>{1, 2, 3, 4}, 2);
    const std::string text = render_evidence(b);
    CHECK(text.find("[evidence 1]") != std::string::npos);
    CHECK(text.find("[evidence 2]") != std::string::npos);
    CHECK(trim(render_evidence(EvidenceBundle{})) == "(no evidence)");
  }
}
