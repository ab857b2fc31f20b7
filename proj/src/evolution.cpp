#include "vulnroute/evolution.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numeric>

#include <spdlog/spdlog.h>

#include "vulnroute/error.hpp"
#include "vulnroute/util/hash.hpp"
#include "vulnroute/util/json_io.hpp"
#include "vulnroute/util/parallel.hpp"

namespace vulnroute {

std::size_t EvolutionConfig::elite_count() const {
  return static_cast<std::size_t>(std::floor(elite_ratio * static_cast<double>(population)));
}

void EvolutionConfig::validate() const {
  if (population < 2) throw Error(ErrorKind::InvalidArgument, "population size must be >= 2");
  if (iterations < 1) throw Error(ErrorKind::InvalidArgument, "iterations must be >= 1");
  if (!(elite_ratio > 0.0 && elite_ratio < 1.0)) throw Error(ErrorKind::InvalidArgument, "elite ratio must be in (0,1)");
  if (elite_count() < 1) throw Error(ErrorKind::InvalidArgument, "floor(elite_ratio * population) must be >= 1");
  if (top_k < 1) throw Error(ErrorKind::InvalidArgument, "top_k must be >= 1");
}

const std::string& LlmMutator::instruction() {
  static const std::string text =
      "You revise the instruction given to an automated code vulnerability analysis agent.\n"
      "The PARENT PROMPT section holds the agent's current instruction and CURRENT FITNESS its measured score "
      "on labeled samples (higher is better, at most 1).\n"
      "Write one improved instruction for the same agent. Useful edits include:\n"
      "- explicit rules that separate labels the agent tends to confuse\n"
      "- negative constraints naming patterns that must not be reported\n"
      "- concrete code patterns to check before answering\n"
      "Keep every requirement about the output format unchanged.\n"
      "Reply with the new instruction text only, without commentary or code fences.";
  return text;
}

std::string LlmMutator::payload(const MutationRequest& r) {
  char fitness[32];
  const double f = r.parent && r.parent->fitness ? *r.parent->fitness : 0.0;
  std::snprintf(fitness, sizeof fitness, "%.4f", f);
  std::string variant = "generation " + std::to_string(r.generation) + ", slot " + std::to_string(r.slot) +
                        ", attempt " + std::to_string(r.attempt);
  std::string out = render_section("TARGET ROLE", r.description.empty() ? r.target : r.target + "\n" + r.description);
  out += render_section("CURRENT FITNESS", fitness);
  out += render_section("PARENT PROMPT", r.parent ? r.parent->text : std::string());
  out += render_section("VARIANT", variant);
  return out;
}

std::string LlmMutator::mutate(const MutationRequest& request) {
  const ChatRequest req{ModelRole::evolution, instruction(), payload(request), "mutate"};
  return clean_mutation_reply(gateway_.chat(req));
}

std::string clean_mutation_reply(std::string_view reply) {
  std::string s = trim(reply);
  if (s.rfind("```", 0) == 0) {
    const auto first_nl = s.find('\n');
    const auto close = s.rfind("```");
    if (first_nl != std::string::npos && close != std::string::npos && close > first_nl) {
      s = trim(std::string_view(s).substr(first_nl + 1, close - first_nl - 1));
    }
  }
  return s;
}

std::vector<double> rank_weights(const std::vector<double>& fitness) {
  const std::size_t n = fitness.size();
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t better = 0;
    for (double f : fitness) better += f > fitness[i] ? 1 : 0;
    const std::size_t rank = 1 + better;
    w[i] = static_cast<double>(n - rank + 1);
  }
  return w;
}

std::vector<Prompt> evolve_step(const std::vector<Prompt>& population, const EvolutionConfig& config,
                                Mutator& mutator, Rng& rng, std::size_t next_generation, const std::string& target,
                                const std::string& description) {
  const std::size_t n = population.size();
  if (n != config.population) {
    throw Error(ErrorKind::InvalidArgument, "population has " + std::to_string(n) + " members, expected " +
                                                std::to_string(config.population));
  }
  std::vector<double> fitness(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!population[i].fitness) throw Error(ErrorKind::InvalidArgument, "unscored prompt " + population[i].id);
    fitness[i] = *population[i].fitness;
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return fitness[a] > fitness[b]; });

  const std::size_t elites = config.elite_count();
  std::vector<Prompt> next;
  next.reserve(n);
  for (std::size_t i = 0; i < elites; ++i) next.push_back(population[order[i]]);

  const std::vector<double> weights = rank_weights(fitness);
  std::vector<std::size_t> parents(n - elites);
  for (auto& p : parents) p = rng.weighted_index(weights);

  std::vector<Prompt> children(parents.size());
  parallel_for(parents.size(), config.parallelism, [&](std::size_t c) {
    const Prompt& parent = population[parents[c]];
    MutationRequest req{target, description, &parent, next_generation, elites + c, 1};
    std::string text = mutator.mutate(req);
    if (trim(text).empty() || text == parent.text) {
      req.attempt = 2;
      text = mutator.mutate(req);
    }
    if (trim(text).empty()) text = parent.text;
    Prompt child;
    child.id = target + "/g" + std::to_string(next_generation) + "/" + std::to_string(elites + c);
    child.text = std::move(text);
    child.parent = parent.id;
    child.generation = next_generation;
    children[c] = std::move(child);
  });
  for (auto& c : children) next.push_back(std::move(c));
  return next;
}

Json to_json(const EvolutionResult& r) {
  Json gens = Json::array();
  for (const auto& g : r.generations) {
    Json fitness = Json::array();
    Json prompts = Json::array();
    for (const auto& p : g.population) {
      fitness.push_back(p.fitness ? *p.fitness : 0.0);
      prompts.push_back(to_json(p));
    }
    gens.push_back(Json{{"generation", g.generation},
                        {"best_id", g.best_id},
                        {"best_fitness", g.best_fitness},
                        {"fitness", fitness},
                        {"population", prompts}});
  }
  Json tracked = Json::array();
  for (const auto& p : r.tracked_best) tracked.push_back(to_json(p));
  return Json{{"target", r.target},
              {"selected", to_json(r.selected)},
              {"selection_fitness", r.selection_fitness},
              {"validation_fallback", r.validation_fallback},
              {"tracked_best", tracked},
              {"validation_scores", r.validation_scores},
              {"generations", gens}};
}

EvolutionResult run_evolution(const EvolutionConfig& config, const EvolutionProblem& problem,
                              const std::vector<std::string>& seed_prompts, Mutator& mutator, std::uint64_t seed) {
  config.validate();
  if (seed_prompts.empty()) throw Error(ErrorKind::InvalidArgument, "no seed prompts for " + problem.target);
  if (!problem.train) throw Error(ErrorKind::InvalidArgument, "no training fitness for " + problem.target);

  Rng rng(derive_seed(seed, problem.target));
  std::map<std::string, double> memo;
  auto score = [&](Prompt& p) {
    auto it = memo.find(p.text);
    if (it == memo.end()) it = memo.emplace(p.text, problem.train(p)).first;
    p.fitness = it->second;
  };

  std::vector<Prompt> population;
  for (std::size_t i = 0; i < config.population; ++i) {
    Prompt p;
    p.id = problem.target + "/g0/" + std::to_string(i);
    p.text = seed_prompts[i % seed_prompts.size()];
    population.push_back(std::move(p));
  }

  EvolutionResult result;
  result.target = problem.target;
  for (std::size_t t = 0; t < config.iterations; ++t) {
    for (auto& p : population) score(p);
    std::size_t best = 0;
    for (std::size_t i = 1; i < population.size(); ++i) {
      if (*population[i].fitness > *population[best].fitness) best = i;
    }
    result.generations.push_back(GenerationRecord{t, population, population[best].id, *population[best].fitness});
    result.tracked_best.push_back(population[best]);
    spdlog::info("{}: generation {} best {:.4f} ({})", problem.target, t, *population[best].fitness,
                 population[best].id);
    if (t + 1 < config.iterations) {
      population = evolve_step(population, config, mutator, rng, t + 1, problem.target, problem.description);
    }
  }

  result.validation_fallback = !problem.validate;
  std::size_t chosen = 0;
  for (std::size_t i = 0; i < result.tracked_best.size(); ++i) {
    const Prompt& p = result.tracked_best[i];
    const double v = problem.validate ? problem.validate(p) : *p.fitness;
    result.validation_scores.push_back(v);
    if (v > result.validation_scores[chosen]) chosen = i;
  }
  result.selected = result.tracked_best[chosen];
  result.selection_fitness = result.validation_scores[chosen];
  return result;
}

std::vector<CodeSample> subsample(const std::vector<CodeSample>& samples, std::size_t budget, std::uint64_t seed) {
  if (budget == 0 || budget >= samples.size()) return samples;
  std::vector<std::size_t> idx(samples.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(idx);
  idx.resize(budget);
  std::sort(idx.begin(), idx.end());
  std::vector<CodeSample> out;
  out.reserve(budget);
  for (auto i : idx) out.push_back(samples[i]);
  return out;
}

double router_fitness(const DetectionPipeline& pipeline, const Prompt& prompt, const std::vector<CodeSample>& samples,
                      std::size_t k) {
  if (samples.empty()) throw Error(ErrorKind::EmptyDataset, "router fitness needs samples");
  const Taxonomy& tax = pipeline.taxonomy();
  std::vector<const CodeSample*> vulnerable;
  for (const auto& s : samples) {
    if (!tax.is_benign(s.label)) vulnerable.push_back(&s);
  }
  if (vulnerable.empty()) return 0.0;
  std::vector<char> hit(vulnerable.size(), 0);
  parallel_for(vulnerable.size(), pipeline.options().parallelism, [&](std::size_t i) {
    const CodeSample& s = *vulnerable[i];
    const RoutingResult r = pipeline.route(s, k, prompt);
    const std::string gold = tax.project_to_category(s.label);
    hit[i] = std::find(r.ranked_categories.begin(), r.ranked_categories.end(), gold) != r.ranked_categories.end();
  });
  const auto hits = static_cast<double>(std::count(hit.begin(), hit.end(), 1));
  return hits / static_cast<double>(vulnerable.size());
}

double binary_f1(const BinaryCounts& c) {
  if (c.tp == 0) return 0.0;
  const double p = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
  const double r = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  return 2.0 * p * r / (p + r);
}

double detector_fitness(const DetectionPipeline& pipeline, const Prompt& prompt, const CategoryDataset& data) {
  if (data.positives.empty()) throw Error(ErrorKind::NoPositives, "category " + data.category_id + " has no positives");
  std::vector<std::pair<const CodeSample*, bool>> items;
  for (const auto& s : data.positives) items.emplace_back(&s, true);
  for (const auto& s : data.clean) items.emplace_back(&s, false);
  for (const auto& s : data.hard_negatives) items.emplace_back(&s, false);
  std::vector<char> predicted(items.size(), 0);
  parallel_for(items.size(), pipeline.options().parallelism, [&](std::size_t i) {
    const DetectorOutput out = pipeline.detect_category(*items[i].first, data.category_id, prompt);
    predicted[i] = !out.predicted_types.empty();
  });
  BinaryCounts c;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const bool gold = items[i].second;
    if (predicted[i] && gold) ++c.tp;
    else if (predicted[i]) ++c.fp;
    else if (gold) ++c.fn;
    else ++c.tn;
  }
  return binary_f1(c);
}

CategoryDataset subsample(const CategoryDataset& data, std::size_t budget, std::uint64_t seed) {
  if (budget == 0 || budget >= data.size()) return data;
  struct Ref {
    int group;
    std::size_t index;
  };
  std::vector<Ref> refs;
  for (std::size_t i = 0; i < data.positives.size(); ++i) refs.push_back({0, i});
  for (std::size_t i = 0; i < data.clean.size(); ++i) refs.push_back({1, i});
  for (std::size_t i = 0; i < data.hard_negatives.size(); ++i) refs.push_back({2, i});
  Rng rng(seed);
  rng.shuffle(refs);
  auto first_pos = std::find_if(refs.begin(), refs.end(), [](const Ref& r) { return r.group == 0; });
  if (first_pos != refs.end() && first_pos - refs.begin() >= static_cast<std::ptrdiff_t>(budget)) {
    std::iter_swap(refs.begin() + static_cast<std::ptrdiff_t>(budget) - 1, first_pos);
  }
  refs.resize(budget);
  std::sort(refs.begin(), refs.end(),
            [](const Ref& a, const Ref& b) { return std::tie(a.group, a.index) < std::tie(b.group, b.index); });
  CategoryDataset out;
  out.category_id = data.category_id;
  for (const auto& r : refs) {
    if (r.group == 0) out.positives.push_back(data.positives[r.index]);
    else if (r.group == 1) out.clean.push_back(data.clean[r.index]);
    else out.hard_negatives.push_back(data.hard_negatives[r.index]);
  }
  return out;
}

EvolutionResult run_stage1(const EvolutionConfig& config, const Stage1Inputs& in, Mutator& mutator,
                           std::uint64_t seed) {
  if (!in.pipeline || !in.train) throw Error(ErrorKind::InvalidArgument, "stage 1 needs a pipeline and training data");
  if (in.train->empty()) throw Error(ErrorKind::EmptyDataset, "training split is empty");
  const DetectionPipeline& pipeline = *in.pipeline;
  const Taxonomy& tax = pipeline.taxonomy();

  std::vector<CodeSample> train_vuln;
  for (const auto& s : in.train->samples()) {
    if (!tax.is_benign(s.label)) train_vuln.push_back(s);
  }
  if (train_vuln.empty()) throw Error(ErrorKind::NoPositives, "training split has no vulnerable samples");
  const auto train_set = subsample(train_vuln, config.eval_subsample, derive_seed(seed, "router/subsample"));

  std::vector<CodeSample> val_vuln;
  if (in.validation) {
    for (const auto& s : in.validation->samples()) {
      if (!tax.is_benign(s.label)) val_vuln.push_back(s);
    }
  }

  EvolutionProblem problem;
  problem.target = router_target();
  problem.description = "ranks vulnerability categories for a function";
  problem.train = [&](const Prompt& p) { return router_fitness(pipeline, p, train_set, config.top_k); };
  if (!val_vuln.empty()) {
    problem.validate = [&](const Prompt& p) { return router_fitness(pipeline, p, val_vuln, config.top_k); };
  } else {
    spdlog::warn("validation split has no vulnerable samples; selecting the router prompt by training fitness");
  }
  const auto seeds = in.seed_prompts.empty() ? router_seed_prompts(tax) : in.seed_prompts;
  return run_evolution(config, problem, seeds, mutator, seed);
}

void save_evolution_result(const std::filesystem::path& path, const EvolutionResult& result) {
  write_json_file(path, to_json(result));
}

Stage2Result run_stage2(const EvolutionConfig& config, const Stage2Inputs& in, Mutator& mutator,
                        std::uint64_t seed) {
  if (!in.pipeline || !in.train) throw Error(ErrorKind::InvalidArgument, "stage 2 needs a pipeline and training data");
  const DetectionPipeline& pipeline = *in.pipeline;
  const Taxonomy& tax = pipeline.taxonomy();

  Stage2Result result;
  std::vector<std::string> pending;
  std::map<std::string, CategoryDataset> train_data;
  for (const auto& cat : tax.categories()) {
    try {
      train_data.emplace(cat.id, build_category_dataset(*in.train, cat.id, in.ratios, derive_seed(seed, cat.id)));
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::NoPositives) throw;
      result.skipped.push_back(cat.id);
      spdlog::warn("category {} has no training positives; skipped", cat.id);
      continue;
    }
    if (in.store && std::filesystem::exists(detector_marker_path(*in.store, cat.id)) &&
        std::filesystem::exists(detector_prompt_path(*in.store, cat.id))) {
      const Json doc = read_json_file(detector_prompt_path(*in.store, cat.id));
      result.resumed.emplace(cat.id, prompt_from_json(doc.contains("selected") ? doc["selected"] : doc));
      spdlog::info("category {} already evolved; resuming", cat.id);
      continue;
    }
    pending.push_back(cat.id);
  }
  if (train_data.empty()) throw Error(ErrorKind::AllCategoriesEmpty, "no category has training positives");

  std::vector<EvolutionResult> outcomes(pending.size());
  EvolutionConfig inner = config;
  parallel_for(pending.size(), config.parallelism, [&](std::size_t i) {
    const std::string& cat_id = pending[i];
    const Category& cat = tax.category(cat_id);
    const std::uint64_t cat_seed = derive_seed(seed, detector_target(cat_id));
    const CategoryDataset train_set =
        subsample(train_data.at(cat_id), config.eval_subsample, derive_seed(cat_seed, "subsample"));

    std::optional<CategoryDataset> val_set;
    if (in.validation && !in.validation->empty()) {
      try {
        val_set = build_category_dataset(*in.validation, cat_id, in.ratios, derive_seed(cat_seed, "validation"));
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::NoPositives) throw;
      }
    }
    EvolutionProblem problem;
    problem.target = detector_target(cat_id);
    problem.description = "decides which " + cat.name + " types a function contains";
    problem.train = [&](const Prompt& p) { return detector_fitness(pipeline, p, train_set); };
    if (val_set) {
      problem.validate = [&](const Prompt& p) { return detector_fitness(pipeline, p, *val_set); };
    } else {
      spdlog::warn("category {} has no validation positives; selecting by training fitness", cat_id);
    }
    auto it = in.seed_prompts.find(cat_id);
    const auto seeds = it != in.seed_prompts.end() ? it->second : detector_seed_prompts(tax, cat);
    outcomes[i] = run_evolution(inner, problem, seeds, mutator, cat_seed);
    if (in.store) {
      save_evolution_result(detector_prompt_path(*in.store, cat_id), outcomes[i]);
      write_text_file_atomic(detector_marker_path(*in.store, cat_id), outcomes[i].selected.id + "\n");
    }
  });
  for (std::size_t i = 0; i < pending.size(); ++i) result.evolved.emplace(pending[i], std::move(outcomes[i]));
  if (in.store) {
    write_json_file(in.store.value() / "stage2_skipped.json", Json{{"skipped", result.skipped}});
  }
  return result;
}

}  // namespace vulnroute
