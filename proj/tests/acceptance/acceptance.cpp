// Acceptance checks. Each criterion prints one PASS/FAIL line; the process
// exits nonzero if any fails. Every check runs offline through the scripted
// provider and the hash embedder.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

#include "support/test_support.hpp"
#include "vulnroute/cli.hpp"
#include "vulnroute/error.hpp"
#include "vulnroute/evolution.hpp"
#include "vulnroute/metrics.hpp"
#include "vulnroute/pipeline.hpp"
#include "vulnroute/util/hash.hpp"

using namespace vulnroute;
namespace fs = std::filesystem;

namespace {

// Pinned limits.
constexpr double kE2eMinF1 = 1.0;
constexpr double kE2eMaxSeconds = 60.0;
constexpr double kKnnMaxSeconds = 5.0;
constexpr std::size_t kKnnEntries = 1000;
constexpr std::size_t kKnnQueries = 20;
constexpr std::size_t kKnnTop = 10;
constexpr std::size_t kLeakageSamples = 100;
constexpr std::size_t kEvolutionSeeds = 20;
constexpr std::size_t kEvolutionGenerations = 10;
constexpr std::size_t kImproveAtLeast = 19;
constexpr std::size_t kStrictlyImproveAtLeast = 15;
constexpr std::size_t kBatchSamples = 100;
constexpr std::size_t kBatchK = 3;
constexpr std::size_t kMonotonicSamples = 30;
constexpr std::size_t kMetricFixtures = 50;
constexpr double kMetricTolerance = 1e-9;

struct Result {
  bool pass;
  std::string detail;
};

using Clock = std::chrono::steady_clock;
double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---------------------------------------------------------------- fixtures

std::shared_ptr<const Taxonomy> default_taxonomy() {
  return std::make_shared<const Taxonomy>(load_taxonomy(testing::data_dir() / "cwe_taxonomy.json"));
}

// One sample per type of the taxonomy (cycling) plus benign ones, with
// randomized bodies so embeddings spread out.
std::string random_snippet(std::mt19937_64& gen, const std::string& marker) {
  static const char* stmts[] = {"total += in[i];",        "if (len > 64)\n    return -2;", "buf[i] = in[i] ^ 0x5a;",
                                "while (len-- > 0)\n    total++;", "switch (in[0]) {\n  case 1: total = 3; break;\n  }",
                                "total = total * 31 + len;", "for (int j = 0; j < 4; j++)\n    total -= j;",
                                "memset(buf, 0, sizeof buf);"};
  std::uniform_int_distribution<int> n(2, 6), pick(0, 7), id(0, 999999);
  std::string code = "int fn_" + std::to_string(id(gen)) + "(const char *in, int len)\n{\n  char buf[32];\n  int total = 0;\n";
  for (int i = n(gen); i > 0; --i) code += std::string("  ") + stmts[pick(gen)] + "\n";
  if (!marker.empty()) code += "  total += " + marker + "(in, len);\n";
  return code + "  return total;\n}\n";
}

LabeledDataset random_dataset(std::shared_ptr<const Taxonomy> tax, std::size_t n, double benign_share,
                              std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<CodeSample> samples;
  for (std::size_t i = 0; i < n; ++i) {
    char id[16];
    std::snprintf(id, sizeof id, "x%04zu", i);
    if (u(gen) < benign_share) {
      samples.push_back({id, random_snippet(gen, ""), tax->benign_label()});
    } else {
      const auto& t = tax->types()[gen() % tax->types().size()];
      samples.push_back({id, random_snippet(gen, testing::marker_for(t.id)), t.id});
    }
  }
  return LabeledDataset(std::move(tax), std::move(samples));
}

std::optional<std::string> marked_type(const Taxonomy& tax, const std::string& payload) {
  const std::string code = extract_section(payload, "TARGET CODE").value_or("");
  for (const auto& t : tax.types()) {
    if (code.find(testing::marker_for(t.id) + "(") != std::string::npos) return t.id;
  }
  return std::nullopt;
}

// Deterministic agents: the router puts the marked category first and orders
// the rest by a hash of the code; each detector reports the marked type when
// it is in its category and, for some code/category pairs, a spurious first
// type of its category.
std::string scripted_agents(const Taxonomy& tax, const ChatRequest& r) {
  const std::string code = extract_section(r.payload, "TARGET CODE").value_or("");
  const auto type = marked_type(tax, r.payload);
  if (r.agent == "router") {
    std::vector<std::string> rest;
    for (const auto& c : tax.categories()) rest.push_back(c.id);
    std::sort(rest.begin(), rest.end(), [&](const std::string& a, const std::string& b) {
      return std::make_pair(fnv1a64(code + a), a) < std::make_pair(fnv1a64(code + b), b);
    });
    std::vector<std::string> order;
    if (type) order.push_back(*tax.category_of(*type));
    for (const auto& c : rest) {
      if (std::find(order.begin(), order.end(), c) == order.end()) order.push_back(c);
    }
    return Json{{"categories", order}}.dump();
  }
  const std::string cat = r.agent.substr(r.agent.find(':') + 1);
  Json preds = Json::array();
  if (type && tax.category_of(*type) == cat) preds.push_back(*type);
  if (fnv1a64(code + "|" + cat) % 3 == 0) preds.push_back(tax.category(cat).types.front());
  return Json{{"predictions", preds}}.dump();
}

struct World {
  World(std::shared_ptr<const Taxonomy> tax, LabeledDataset kb_data, ScriptedProvider::Script exec,
        std::size_t dim = 128)
      : data(std::move(kb_data)) {
    gateway = testing::scripted_gateway(std::move(exec), nullptr, dim);
    kb.emplace(KnowledgeBase::build(data, structurer, std::make_shared<HashEmbedder>(dim)));
    kb->attach_embedder(std::make_shared<GatewayEmbedding>(*gateway));
    prompts = builtin_manual_prompts(*tax);
  }
  DetectionPipeline pipeline(PipelineOptions o = {}) const { return DetectionPipeline(*kb, *gateway, structurer, o); }

  LabeledDataset data;
  std::unique_ptr<Gateway> gateway;
  RuleStructurer structurer;
  std::optional<KnowledgeBase> kb;
  PromptSet prompts;
};

struct Workspace {
  Workspace() { fs::copy(testing::fixtures_dir() / "e2e", dir.path(), fs::copy_options::recursive); }
  int run(std::vector<std::string> args, std::string* out_text = nullptr) const {
    args.insert(args.begin(), {"--config", (dir / "config.json").string()});
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    if (out_text) *out_text = out.str();
    if (code != kExitOk) std::cerr << "  command failed (" << code << "): " << err.str();
    return code;
  }
  testing::TempDir dir{"vr-accept"};
};

std::vector<Json> read_jsonl(const fs::path& p) {
  std::vector<Json> rows;
  std::istringstream in(read_text_file(p));
  std::string line;
  while (std::getline(in, line)) {
    if (!trim(line).empty()) rows.push_back(Json::parse(line));
  }
  return rows;
}

std::vector<Json> traces_of(const fs::path& run_dir) {
  std::vector<Json> out;
  for (const auto& row : read_jsonl(run_dir / "reports.jsonl")) {
    out.push_back(read_json_file(run_dir / row["trace_ref"].get<std::string>()));
  }
  return out;
}

// ---------------------------------------------------------------- criteria

Result e2e_pipeline() {
  const auto t0 = Clock::now();
  Workspace w;
  for (const auto& cmd : std::vector<std::vector<std::string>>{{"build-kb"}, {"evolve"}, {"detect"}, {"evaluate"}}) {
    if (w.run(cmd) != kExitOk) return {false, cmd.front() + " failed"};
  }
  const double elapsed = seconds_since(t0);
  const Json m = read_json_file(w.dir / "work/run/metrics.json");
  const double f1 = m["type_level"]["macro_f1"].get<double>();
  return {f1 >= kE2eMinF1 && elapsed < kE2eMaxSeconds,
          "type macro-F1 " + fmt("%.2f%%", f1 * 100) + ", " + fmt("%.2f s", elapsed)};
}

Result knn_oracle() {
  auto tax = default_taxonomy();
  const auto data = random_dataset(tax, kKnnEntries, 0.3, 101);
  auto embedder = std::make_shared<HashEmbedder>(256);
  RuleStructurer structurer;
  const auto t0 = Clock::now();
  auto kb = KnowledgeBase::build(data, structurer, embedder);
  kb.attach_embedder(embedder);

  // Brute force over freshly embedded texts. Vectors are stored as float32
  // after L2 normalization, so the scan normalizes the same way and then
  // takes the dot product in double; descending, ties by ascending id.
  auto to_unit = [](std::vector<float> v) {
    double norm = 0;
    for (float x : v) norm += static_cast<double>(x) * x;
    norm = std::sqrt(norm);
    for (auto& x : v) x = static_cast<float>(x / norm);
    return v;
  };
  std::vector<std::vector<float>> rows;
  for (const auto& s : data.samples()) {
    rows.push_back(to_unit(embedder->embed_one(structurer.structure(s.id, s.code).text)));
  }
  auto cosine = [](const std::vector<float>& a, const std::vector<float>& b) {
    double dot = 0;
    for (std::size_t i = 0; i < a.size(); ++i) dot += static_cast<double>(a[i]) * b[i];
    return dot;
  };

  std::mt19937_64 gen(202);
  std::size_t mismatches = 0;
  for (std::size_t q = 0; q < kKnnQueries; ++q) {
    const auto query = structurer.structure("q", random_snippet(gen, q % 2 ? "call_cwe_787" : ""));
    const auto qv = to_unit(embedder->embed_one(query.text));
    std::vector<std::pair<double, std::string>> scored;
    for (std::size_t i = 0; i < rows.size(); ++i) scored.emplace_back(cosine(qv, rows[i]), data.samples()[i].id);
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
      return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    const auto got = kb.retrieve_global(query, kKnnTop);
    std::vector<std::string> got_ids, want_ids;
    for (const auto& it : got.items) got_ids.push_back(it.sample_id);
    for (std::size_t i = 0; i < kKnnTop; ++i) want_ids.push_back(scored[i].second);
    mismatches += got_ids == want_ids ? 0 : 1;
    if (got_ids != want_ids) {
      for (std::size_t i = 0; i < kKnnTop; ++i) {
        std::fprintf(stderr, "%s %.17g | %s %.17g\n", got_ids[i].c_str(), got.items[i].similarity, want_ids[i].c_str(),
                     scored[i].first);
      }
    }
  }
  const double elapsed = seconds_since(t0);
  return {mismatches == 0 && elapsed < kKnnMaxSeconds,
          std::to_string(kKnnQueries - mismatches) + "/" + std::to_string(kKnnQueries) + " queries exact, " +
              fmt("%.2f s", elapsed)};
}

Result budget_identity() {
  std::size_t bad = 0;
  for (std::size_t r = 3; r <= 100; ++r) {
    const auto b = contrastive_budget(r);
    bad += (b.positive + b.clean + b.hard == r && b.positive == r / 3 && b.clean == r / 3) ? 0 : 1;
  }
  return {bad == 0, std::to_string(98 - bad) + "/98 budgets"};
}

Result leakage() {
  auto tax = default_taxonomy();
  const auto data = random_dataset(tax, kLeakageSamples, 0.3, 303);
  World w(tax, data, [tax](const ChatRequest& r) { return scripted_agents(*tax, r); });
  std::size_t checks = 0, self_hits = 0;
  const std::size_t r_all = data.size() + 3;
  for (const auto& s : data.samples()) {
    const auto guard = w.kb->leakage_guard(s.id);
    const auto rep = w.structurer.structure(s.id, s.code);
    for (const auto& it : w.kb->retrieve_global(rep, r_all, guard).items) self_hits += it.sample_id == s.id;
    ++checks;
    for (const auto& c : tax->categories()) {
      for (const auto& it : w.kb->retrieve_contrastive(rep, c.id, r_all, guard).items) self_hits += it.sample_id == s.id;
      ++checks;
    }
  }
  // The same through the agents path, which applies the guard itself.
  PipelineOptions o;
  o.k = tax->categories().size();
  for (const auto& rep : w.pipeline(o).detect_batch(data.samples(), w.prompts)) {
    for (const auto& it : rep.routing->evidence.items) self_hits += it.sample_id == rep.sample_id;
    for (const auto& d : rep.detectors) {
      for (const auto& it : d.evidence.items) self_hits += it.sample_id == rep.sample_id;
      ++checks;
    }
    ++checks;
  }
  return {self_hits == 0, std::to_string(checks) + " retrievals, " + std::to_string(self_hits) + " self-retrievals"};
}

const std::vector<std::string> kKeywords = {"bounds", "lifetime", "taint", "overflow", "race", "sanitize"};

double keyword_fitness(const Prompt& p) {
  double f = 0;
  for (const auto& k : kKeywords) f += p.text.find(k) != std::string::npos ? 1.0 / kKeywords.size() : 0.0;
  return f;
}

class KeywordMutator final : public Mutator {
 public:
  std::string mutate(const MutationRequest& r) override {
    const auto h = fnv1a64(r.parent->text + "|" + std::to_string(r.generation) + "|" + std::to_string(r.slot) + "|" +
                           std::to_string(r.attempt));
    return r.parent->text + " check " + kKeywords[h % kKeywords.size()] + ".";
  }
};

EvolutionConfig landscape_config() {
  EvolutionConfig c;
  c.population = 8;
  c.iterations = kEvolutionGenerations;
  c.elite_ratio = 0.25;
  return c;
}

Result elitism() {
  std::size_t violations = 0;
  for (std::uint64_t seed = 1; seed <= kEvolutionSeeds; ++seed) {
    KeywordMutator m;
    EvolutionProblem p{"landscape", "", keyword_fitness, keyword_fitness};
    const auto r = run_evolution(landscape_config(), p, {"Analyze the function."}, m, seed);
    for (std::size_t g = 1; g < r.generations.size(); ++g) {
      violations += r.generations[g].best_fitness < r.generations[g - 1].best_fitness;
    }
  }
  return {violations == 0, std::to_string(violations) + " violations over " + std::to_string(kEvolutionSeeds) +
                               " seeds x " + std::to_string(kEvolutionGenerations) + " generations"};
}

Result improvement() {
  std::size_t at_least = 0, strictly = 0;
  for (std::uint64_t seed = 1; seed <= kEvolutionSeeds; ++seed) {
    KeywordMutator m;
    EvolutionProblem p{"landscape", "", keyword_fitness, keyword_fitness};
    const auto r = run_evolution(landscape_config(), p, {"Analyze the function.", "Look for defects."}, m, seed);
    const double initial = p.validate(r.tracked_best.front());
    at_least += r.selection_fitness >= initial;
    strictly += r.selection_fitness > initial;
  }
  return {at_least >= kImproveAtLeast && strictly >= kStrictlyImproveAtLeast,
          ">= in " + std::to_string(at_least) + "/20, > in " + std::to_string(strictly) + "/20"};
}

Result selective_activation() {
  auto tax = default_taxonomy();
  const auto kb_data = random_dataset(tax, 300, 0.3, 404);
  const auto batch = random_dataset(tax, kBatchSamples, 0.2, 405);
  World w(tax, kb_data, [tax](const ChatRequest& r) { return scripted_agents(*tax, r); });
  PipelineOptions o;
  o.k = kBatchK;
  o.parallelism = 4;
  w.gateway->reset_counters();
  w.pipeline(o).detect_batch(batch.samples(), w.prompts);
  const auto c = w.gateway->counters();
  const auto get = [&](const char* a) { return c.calls_by_agent.count(a) ? c.calls_by_agent.at(a) : 0; };
  const std::size_t router = get("router"), detector = get("detector");
  return {router == kBatchSamples && detector <= kBatchSamples * kBatchK,
          std::to_string(router) + " router calls, " + std::to_string(detector) + " detector calls"};
}

Result k_monotonicity() {
  auto tax = default_taxonomy();
  const auto kb_data = random_dataset(tax, 200, 0.3, 505);
  const auto fixture = random_dataset(tax, kMonotonicSamples, 0.2, 506);
  World w(tax, kb_data, [tax](const ChatRequest& r) { return scripted_agents(*tax, r); });
  std::vector<std::vector<DetectionReport>> by_k;
  for (std::size_t k = 1; k <= 5; ++k) {
    PipelineOptions o;
    o.k = k;
    by_k.push_back(w.pipeline(o).detect_batch(fixture.samples(), w.prompts));
  }
  std::size_t violations = 0, grew = 0;
  for (std::size_t k = 0; k < 4; ++k) {
    for (std::size_t i = 0; i < fixture.size(); ++i) {
      std::set<std::string> a(by_k[k][i].final_labels.begin(), by_k[k][i].final_labels.end());
      std::set<std::string> b(by_k[k + 1][i].final_labels.begin(), by_k[k + 1][i].final_labels.end());
      a.erase(tax->benign_label());
      b.erase(tax->benign_label());
      violations += std::includes(b.begin(), b.end(), a.begin(), a.end()) ? 0 : 1;
      grew += b.size() > a.size();
    }
  }
  return {violations == 0, std::to_string(violations) + " violations over " + std::to_string(4 * kMonotonicSamples) +
                               " pairs (" + std::to_string(grew) + " strictly larger)"};
}

// Brute-force metric recomputation.
struct OracleMacro {
  double p = 0, r = 0, f = 0;
  std::size_t labels = 0;
};

OracleMacro oracle_macro(const std::vector<std::string>& gold, const std::vector<std::set<std::string>>& pred,
                         const std::set<std::string>& universe) {
  OracleMacro m;
  for (const auto& label : universe) {
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < gold.size(); ++i) {
      const bool g = gold[i] == label, p = pred[i].count(label) > 0;
      tp += g && p;
      fp += !g && p;
      fn += g && !p;
    }
    m.p += tp + fp > 0 ? tp / (tp + fp) : 0.0;
    m.r += tp + fn > 0 ? tp / (tp + fn) : 0.0;
    m.f += tp > 0 ? 2 * tp / (2 * tp + fp + fn) : 0.0;
    ++m.labels;
  }
  if (m.labels) {
    m.p /= m.labels;
    m.r /= m.labels;
    m.f /= m.labels;
  }
  return m;
}

double lorenz_gini(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  double total = 0;
  for (double x : v) total += x;
  if (total == 0) return 0.0;
  double prev = 0, cum = 0, area = 0;
  for (double x : v) {
    cum += x / total;
    area += (prev + cum) / static_cast<double>(v.size());
    prev = cum;
  }
  return 1.0 - area;
}

Result metric_oracles() {
  auto tax = testing::small_taxonomy();
  std::vector<std::string> labels{tax->benign_label()};
  for (const auto& t : tax->types()) labels.push_back(t.id);
  std::vector<std::string> cats;
  for (const auto& c : tax->categories()) cats.push_back(c.id);
  std::size_t failures = 0, comparisons = 0;
  auto near = [&](double a, double b) {
    ++comparisons;
    const bool ok = std::fabs(a - b) <= kMetricTolerance;
    failures += !ok;
    return ok;
  };

  for (std::uint64_t seed = 0; seed < kMetricFixtures; ++seed) {
    std::mt19937_64 gen(seed + 9000);
    const std::size_t n = 5 + gen() % 60;
    std::vector<CodeSample> samples;
    std::vector<PredictionRecord> preds;
    for (std::size_t i = 0; i < n; ++i) {
      const std::string id = "m" + std::to_string(i);
      samples.push_back({id, "x", labels[gen() % labels.size()]});
      PredictionRecord p{id, {}, std::nullopt};
      for (auto k = gen() % 4; k > 0; --k) p.labels.push_back(labels[gen() % labels.size()]);
      if (gen() % 5) {
        std::vector<std::string> ranked = cats;
        std::shuffle(ranked.begin(), ranked.end(), gen);
        ranked.resize(1 + gen() % cats.size());
        p.ranked_categories = ranked;
      }
      preds.push_back(p);
    }
    const LabeledDataset golds(tax, samples);

    for (auto level : {MetricLevel::type, MetricLevel::category}) {
      for (auto universe : {LabelUniverse::gold, LabelUniverse::taxonomy}) {
        auto project = [&](const std::string& l) { return level == MetricLevel::type ? l : tax->project_to_category(l); };
        std::vector<std::string> gold;
        std::vector<std::set<std::string>> pred;
        std::set<std::string> u;
        for (std::size_t i = 0; i < n; ++i) {
          gold.push_back(project(samples[i].label));
          std::set<std::string> ps;
          for (const auto& l : preds[i].labels) ps.insert(project(l));
          pred.push_back(ps);
          if (universe == LabelUniverse::gold) u.insert(gold.back());
        }
        if (universe == LabelUniverse::taxonomy) {
          for (const auto& l : level == MetricLevel::type ? std::vector<std::string>(labels.begin() + 1, labels.end())
                                                            : cats) {
            u.insert(l);
          }
        }
        u.erase(tax->benign_label());
        const auto want = oracle_macro(gold, pred, u);
        const auto got = macro_metrics(preds, golds, level, universe);
        near(got.macro_precision, want.p);
        near(got.macro_recall, want.r);
        near(got.macro_f1, want.f);
        failures += got.per_label.size() != want.labels;

        if (level == MetricLevel::type && universe == LabelUniverse::gold) {
          // Few-shot: tail over counts from the golds, boundary set inside
          // the count range so both sides are populated.
          std::map<std::string, std::size_t> counts;
          for (const auto& s : samples) ++counts[s.label];
          FewShotOptions opts;
          opts.tail_boundary = 1 + gen() % 8;
          opts.coverage_threshold = 0.1;
          double tail = 0, covered = 0, tail_n = 0;
          std::optional<std::size_t> fail;
          std::vector<double> f1s;
          for (const auto& s : got.per_label) {
            const std::size_t c = counts[s.label];
            f1s.push_back(s.f1);
            if (s.f1 > 0 && (!fail || c < *fail)) fail = c;
            if (c < opts.tail_boundary) {
              tail += s.f1;
              covered += s.f1 > 0.1;
              ++tail_n;
            }
          }
          const auto fs = fewshot_report(got, counts, opts);
          near(fs.tail_f1, tail_n ? tail / tail_n : 0.0);
          near(fs.coverage, tail_n ? covered / tail_n : 0.0);
          near(fs.gini, f1s.empty() ? 0.0 : lorenz_gini(f1s));
          failures += fs.fail_threshold != fail;
        }
      }
    }

    for (std::size_t k = 1; k <= cats.size(); ++k) {
      double total = 0, hits = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (tax->is_benign(samples[i].label)) continue;
        ++total;
        if (!preds[i].ranked_categories) continue;
        const auto& r = *preds[i].ranked_categories;
        for (std::size_t j = 0; j < std::min(k, r.size()); ++j) hits += r[j] == tax->project_to_category(samples[i].label);
      }
      near(recall_at_k(preds, golds, k), total ? hits / total : 0.0);
    }

    std::vector<double> v(1 + gen() % 20);
    std::uniform_real_distribution<double> u01(0, 1);
    for (auto& x : v) x = u01(gen) < 0.25 ? 0.0 : u01(gen);
    near(gini(v), lorenz_gini(v));
  }

  const bool uniform = gini(std::vector<double>{0.4, 0.4, 0.4, 0.4}) == 0.0;
  const bool spike = gini(std::vector<double>{0.0, 0.0, 0.0, 1.0}) == 0.75;
  return {failures == 0 && uniform && spike,
          std::to_string(comparisons) + " comparisons, " + std::to_string(failures) + " off; uniform gini " +
              (uniform ? "0" : "!=0") + ", spike gini " + (spike ? "0.75" : "!=0.75")};
}

Result benign_default() {
  auto tax = default_taxonomy();
  const auto data = random_dataset(tax, 60, 0.3, 606);
  // Detectors abstain in several shapes; the router routes normally.
  const std::vector<std::string> abstains = {"I cannot determine this.", R"({"predictions": []})", "[]",
                                             R"({"abstain": true})", "```json\n{\"predictions\": []}\n```"};
  World w(tax, data, [tax, abstains](const ChatRequest& r) {
    if (r.agent == "router") return scripted_agents(*tax, r);
    return abstains[fnv1a64(r.payload) % abstains.size()];
  });
  std::size_t benign = 0;
  const auto reports = w.pipeline().detect_batch(data.samples(), w.prompts);
  for (const auto& rep : reports) benign += rep.final_labels == std::vector<std::string>{tax->benign_label()};
  return {benign == reports.size(), std::to_string(benign) + "/" + std::to_string(reports.size()) + " benign"};
}

// Concatenates every file under `root` (sorted by relative path) with names.
std::string tree_bytes(const fs::path& root) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) files.push_back(fs::relative(e.path(), root));
  }
  std::sort(files.begin(), files.end());
  std::string out;
  for (const auto& f : files) out += "== " + f.generic_string() + "\n" + read_text_file(root / f);
  return out;
}

Result determinism() {
  std::vector<std::string> kb, prompts, reports, metrics;
  for (int run = 0; run < 2; ++run) {
    Workspace w;
    for (const auto& cmd : std::vector<std::vector<std::string>>{{"build-kb"}, {"evolve"}, {"detect"}, {"evaluate"}}) {
      if (w.run(cmd) != kExitOk) return {false, cmd.front() + " failed"};
    }
    kb.push_back(tree_bytes(w.dir / "work/kb"));
    prompts.push_back(tree_bytes(w.dir / "work/prompts"));
    reports.push_back(read_text_file(w.dir / "work/run/reports.jsonl") + tree_bytes(w.dir / "work/run/traces"));
    metrics.push_back(read_text_file(w.dir / "work/run/metrics.json") + read_text_file(w.dir / "work/run/metrics.txt") +
                      read_text_file(w.dir / "work/run/per_label.jsonl"));
  }
  std::vector<std::string> differ;
  if (kb[0] != kb[1]) differ.push_back("kb");
  if (prompts[0] != prompts[1]) differ.push_back("prompts");
  if (reports[0] != reports[1]) differ.push_back("reports");
  if (metrics[0] != metrics[1]) differ.push_back("metrics");
  std::string detail = differ.empty() ? "kb, prompts, reports, metrics identical" : "differ:";
  for (const auto& d : differ) detail += " " + d;
  return {differ.empty(), detail};
}

Result ablations() {
  Workspace w;
  for (const auto& cmd : std::vector<std::vector<std::string>>{{"build-kb"}, {"evolve"}}) {
    if (w.run(cmd) != kExitOk) return {false, cmd.front() + " failed"};
  }
  auto run_variant = [&](const std::string& name, std::vector<std::string> flags) -> std::optional<fs::path> {
    const fs::path out = w.dir / ("work/ablation_" + name);
    flags.insert(flags.begin(), {"detect", "--output", out.string()});
    if (w.run(flags) != kExitOk) return std::nullopt;
    return out;
  };
  const auto full = run_variant("full", {});
  const auto no_retrieval = run_variant("no_retrieval", {"--no-retrieval"});
  const auto no_agents = run_variant("no_agents", {"--no-agents"});
  const auto manual = run_variant("manual", {"--manual-prompts", "builtin"});
  if (!full || !no_retrieval || !no_agents || !manual) return {false, "a detect variant failed"};

  auto evidence_sizes = [](const Json& t) {
    std::size_t n = t["routing"]["evidence"]["items"].size();
    for (const auto& d : t["detectors"]) n += d["evidence"]["items"].size();
    return n;
  };
  std::vector<std::string> problems;
  std::size_t full_evidence = 0, full_evolved = 0;
  for (const auto& t : traces_of(*full)) {
    full_evidence += evidence_sizes(t);
    full_evolved += t["routing"]["prompt_id"].get<std::string>().rfind("manual/", 0) != 0;
  }
  const auto full_count = traces_of(*full).size();
  if (full_evidence == 0) problems.push_back("full run has no evidence");
  if (full_evolved != full_count) problems.push_back("full run does not use evolved prompts");

  for (const auto& t : traces_of(*no_retrieval)) {
    if (evidence_sizes(t) != 0 || t["routing"]["evidence"]["kind"] != "none") {
      problems.push_back("no-retrieval trace has evidence");
      break;
    }
  }
  const Json flat_summary = read_json_file(*no_agents / "summary.json");
  const Json& agents = flat_summary["gateway"]["calls_by_agent"];
  if (agents.contains("router") || agents.contains("detector")) problems.push_back("no-agents made agent calls");
  for (const auto& t : traces_of(*no_agents)) {
    if (!t["routing"].is_null() || t["mode"] != "flat") {
      problems.push_back("no-agents trace has routing");
      break;
    }
  }
  for (const auto& t : traces_of(*manual)) {
    bool ok = t["routing"]["prompt_id"] == "manual/router";
    for (const auto& d : t["detectors"]) ok = ok && d["prompt_id"].get<std::string>().rfind("manual/", 0) == 0;
    if (!ok) {
      problems.push_back("manual trace carries evolved prompt ids");
      break;
    }
  }
  std::string detail = problems.empty() ? "no-retrieval: empty evidence; no-agents: 0 routing calls; manual: manual/* ids"
                                        : problems.front();
  return {problems.empty(), detail};
}

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::err);
  const std::vector<std::pair<std::string, std::function<Result()>>> criteria = {
      {"end_to_end_scripted_pipeline", e2e_pipeline},
      {"knn_oracle_equivalence", knn_oracle},
      {"contrastive_budget_identity", budget_identity},
      {"leakage_exclusion", leakage},
      {"elitism_monotonicity", elitism},
      {"evolution_improvement", improvement},
      {"selective_activation_cost_bound", selective_activation},
      {"k_monotonicity", k_monotonicity},
      {"metric_oracles", metric_oracles},
      {"benign_default_and_abstain", benign_default},
      {"determinism", determinism},
      {"ablation_plumbing", ablations},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Result r;
    try {
      r = criteria[i].second();
    } catch (const std::exception& e) {
      r = {false, std::string("exception: ") + e.what()};
    }
    failed += !r.pass;
    std::printf("%s %2zu %-32s %s\n", r.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(), r.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%zu/%zu criteria passed\n", criteria.size() - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
