#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vulnroute/corpus.hpp"
#include "vulnroute/gateway.hpp"
#include "vulnroute/pipeline.hpp"
#include "vulnroute/prompts.hpp"
#include "vulnroute/util/rng.hpp"

namespace vulnroute {

struct EvolutionConfig {
  std::size_t population = 8;       // n
  std::size_t iterations = 5;       // T
  double elite_ratio = 0.25;        // alpha
  std::size_t top_k = 3;            // k for the router fitness
  std::size_t eval_subsample = 64;  // 0 = use all training samples
  std::size_t parallelism = 1;

  std::size_t elite_count() const;
  // Throws InvalidArgument unless floor(alpha*n) >= 1, n >= 2, T >= 1.
  void validate() const;
};

struct MutationRequest {
  std::string target;
  std::string description;
  const Prompt* parent = nullptr;
  std::size_t generation = 0;
  std::size_t slot = 0;
  int attempt = 1;
};

// Produces a child instruction from a parent. Implementations are called
// concurrently when parallelism > 1.
class Mutator {
 public:
  virtual ~Mutator() = default;
  virtual std::string mutate(const MutationRequest& request) = 0;
};

// Mutation through the gateway's evolution role with a fixed, versioned
// instruction.
class LlmMutator final : public Mutator {
 public:
  explicit LlmMutator(Gateway& gateway) : gateway_(gateway) {}
  std::string mutate(const MutationRequest& request) override;

  static constexpr std::string_view kInstructionVersion = "mutation-v1";
  static const std::string& instruction();
  static std::string payload(const MutationRequest& request);

 private:
  Gateway& gateway_;
};

// Strips a surrounding code fence and whitespace from a mutation reply.
std::string clean_mutation_reply(std::string_view reply);

// rank = 1 + number of strictly better members; weight = n - rank + 1.
std::vector<double> rank_weights(const std::vector<double>& fitness);

// One generation step over a fully scored population (every fitness set).
// Elites keep their ids; children get "<target>/g<generation>/<slot>".
std::vector<Prompt> evolve_step(const std::vector<Prompt>& population, const EvolutionConfig& config,
                                Mutator& mutator, Rng& rng, std::size_t next_generation,
                                const std::string& target, const std::string& description = {});

using FitnessFn = std::function<double(const Prompt&)>;

struct EvolutionProblem {
  std::string target;
  std::string description;
  FitnessFn train;
  FitnessFn validate;  // empty: selection falls back to training fitness
};

struct GenerationRecord {
  std::size_t generation = 0;
  std::vector<Prompt> population;  // with training fitness
  std::string best_id;
  double best_fitness = 0.0;
};

struct EvolutionResult {
  std::string target;
  Prompt selected;
  double selection_fitness = 0.0;
  bool validation_fallback = false;
  std::vector<GenerationRecord> generations;
  std::vector<Prompt> tracked_best;        // one per generation
  std::vector<double> validation_scores;   // aligned with tracked_best
};

Json to_json(const EvolutionResult& result);

// Evaluates and evolves for T generations (the population after the final
// evaluation is not evolved further), then picks the tracked best with the
// highest validation score, ties to the earliest generation.
EvolutionResult run_evolution(const EvolutionConfig& config, const EvolutionProblem& problem,
                              const std::vector<std::string>& seed_prompts, Mutator& mutator, std::uint64_t seed);

// Fixed seeded subsample; 0 or a budget >= size keeps everything.
std::vector<CodeSample> subsample(const std::vector<CodeSample>& samples, std::size_t budget, std::uint64_t seed);

// Fraction of vulnerable samples whose gold category is in the routed top-k.
double router_fitness(const DetectionPipeline& pipeline, const Prompt& prompt,
                      const std::vector<CodeSample>& samples, std::size_t k);

struct BinaryCounts {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
};
double binary_f1(const BinaryCounts& c);

// Binary F1 over positives, clean and hard negatives of one category.
double detector_fitness(const DetectionPipeline& pipeline, const Prompt& prompt, const CategoryDataset& data);

// Keeps at least one positive when the category has any.
CategoryDataset subsample(const CategoryDataset& data, std::size_t budget, std::uint64_t seed);

struct Stage1Inputs {
  const DetectionPipeline* pipeline = nullptr;
  const LabeledDataset* train = nullptr;
  const LabeledDataset* validation = nullptr;
  std::vector<std::string> seed_prompts;  // defaults to router_seed_prompts
};

EvolutionResult run_stage1(const EvolutionConfig& config, const Stage1Inputs& inputs, Mutator& mutator,
                           std::uint64_t seed);

struct Stage2Inputs {
  const DetectionPipeline* pipeline = nullptr;
  const LabeledDataset* train = nullptr;
  const LabeledDataset* validation = nullptr;
  NegativeRatios ratios;
  std::map<std::string, std::vector<std::string>> seed_prompts;  // per category; defaults to detector_seed_prompts
  std::optional<std::filesystem::path> store;  // write results and resume from completion markers
};

struct Stage2Result {
  std::map<std::string, EvolutionResult> evolved;
  std::map<std::string, Prompt> resumed;  // loaded from completed markers
  std::vector<std::string> skipped;       // categories without training positives
};

// Categories run independently (in parallel when configured); each gets a
// seed derived from the run seed and its id.
Stage2Result run_stage2(const EvolutionConfig& config, const Stage2Inputs& inputs, Mutator& mutator,
                        std::uint64_t seed);

void save_evolution_result(const std::filesystem::path& path, const EvolutionResult& result);

}  // namespace vulnroute
