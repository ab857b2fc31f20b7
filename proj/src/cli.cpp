#include "vulnroute/cli.hpp"

#include <cstdio>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "vulnroute/error.hpp"
#include "vulnroute/knowledge_base.hpp"
#include "vulnroute/providers.hpp"
#include "vulnroute/util/json_io.hpp"

namespace fs = std::filesystem;

namespace vulnroute {

namespace {

fs::path resolve(const fs::path& base, const Json& value) {
  fs::path p = value.get<std::string>();
  return p.is_absolute() ? p : base / p;
}

template <typename T>
void read_opt(const Json& obj, const char* key, T& target) {
  if (obj.is_object() && obj.contains(key) && !obj[key].is_null()) target = obj[key].get<T>();
}

}  // namespace

RunConfig run_config_from_json(const Json& doc, const fs::path& base_dir) {
  if (!doc.is_object()) throw Error(ErrorKind::MalformedRecord, "run config must be a JSON object");
  RunConfig c;
  try {
    const Json paths = doc.value("paths", Json::object());
    for (auto [key, target] : {std::pair{"taxonomy", &c.taxonomy}, std::pair{"dataset", &c.dataset},
                               std::pair{"kb", &c.kb}, std::pair{"prompts", &c.prompts},
                               std::pair{"output", &c.output}, std::pair{"providers", &c.providers}}) {
      if (paths.contains(key)) *target = resolve(base_dir, paths[key]);
    }
    read_opt(doc, "seed", c.seed);
    read_opt(doc, "parallelism", c.parallelism);

    const Json split = doc.value("split", Json::object());
    read_opt(split, "train", c.split.train);
    read_opt(split, "val", c.split.val);
    read_opt(split, "test", c.split.test);

    const Json pipeline = doc.value("pipeline", Json::object());
    read_opt(pipeline, "k", c.pipeline.k);
    read_opt(pipeline, "r", c.pipeline.r);
    read_opt(pipeline, "record_timing", c.pipeline.record_timing);
    std::string policy = "benign";
    read_opt(pipeline, "routing_failure", policy);
    if (policy == "benign") c.pipeline.routing_failure = RoutingFailurePolicy::benign;
    else if (policy == "error") c.pipeline.routing_failure = RoutingFailurePolicy::error;
    else throw Error(ErrorKind::InvalidArgument, "routing_failure must be \"benign\" or \"error\"");

    const Json evo = doc.value("evolution", Json::object());
    read_opt(evo, "population", c.evolution.population);
    read_opt(evo, "iterations", c.evolution.iterations);
    read_opt(evo, "elite_ratio", c.evolution.elite_ratio);
    c.evolution.top_k = c.pipeline.k;
    read_opt(evo, "top_k", c.evolution.top_k);
    read_opt(evo, "eval_subsample", c.evolution.eval_subsample);
    read_opt(evo, "clean_ratio", c.ratios.clean);
    read_opt(evo, "hard_ratio", c.ratios.hard);

    read_opt(doc.value("structuring", Json::object()), "backend", c.structuring);
    const Json fewshot = doc.value("fewshot", Json::object());
    read_opt(fewshot, "tail_boundary", c.fewshot.tail_boundary);
    read_opt(fewshot, "coverage_threshold", c.fewshot.coverage_threshold);
  } catch (const Json::exception& e) {
    throw Error(ErrorKind::MalformedRecord, std::string("run config: ") + e.what());
  }
  if (c.structuring != "rules" && c.structuring != "llm") {
    throw Error(ErrorKind::InvalidArgument, "structuring backend must be \"rules\" or \"llm\"");
  }
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  if (!fs::exists(path)) throw Error(ErrorKind::Io, "config not found: " + path.string());
  return run_config_from_json(read_json_file(path), fs::absolute(path).parent_path());
}

std::vector<CodeSample> load_detection_input(const fs::path& path) {
  const std::string text = read_text_file(path);
  std::vector<CodeSample> out;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const std::string where = path.string() + " line " + std::to_string(line_no);
    Json j;
    try {
      j = Json::parse(t);
    } catch (const Json::exception& e) {
      throw Error(ErrorKind::MalformedRecord, where + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("id") || !j["id"].is_string() || !j.contains("code") || !j["code"].is_string()) {
      throw Error(ErrorKind::MalformedRecord, where + ": expected {\"id\", \"code\"}");
    }
    CodeSample s{j["id"].get<std::string>(), j["code"].get<std::string>(), {}};
    if (s.id.empty() || trim(s.code).empty()) throw Error(ErrorKind::MalformedRecord, where + ": empty id or code");
    if (!seen.insert(s.id).second) throw Error(ErrorKind::DuplicateId, where + ": duplicate id " + s.id);
    out.push_back(std::move(s));
  }
  return out;
}

namespace {

// Lazily loaded pieces shared by the commands.
struct Session {
  explicit Session(RunConfig c) : cfg(std::move(c)) {}

  RunConfig cfg;
  std::shared_ptr<const Taxonomy> taxonomy;
  std::optional<LabeledDataset> dataset;
  std::optional<DatasetSplits> splits;
  std::unique_ptr<Gateway> gateway;
  std::unique_ptr<Structurer> structurer;
  std::optional<KnowledgeBase> kb;

  static void require(const fs::path& p, const char* what) {
    if (p.empty()) throw Error(ErrorKind::ConfigMissing, std::string("no ") + what + " path configured");
  }

  const Taxonomy& tax() {
    if (!taxonomy) {
      require(cfg.taxonomy, "taxonomy");
      if (!fs::exists(cfg.taxonomy)) throw Error(ErrorKind::Io, "taxonomy not found: " + cfg.taxonomy.string());
      taxonomy = std::make_shared<const Taxonomy>(load_taxonomy(cfg.taxonomy));
    }
    return *taxonomy;
  }

  const LabeledDataset& data() {
    if (!dataset) {
      tax();
      require(cfg.dataset, "dataset");
      if (!fs::exists(cfg.dataset)) throw Error(ErrorKind::Io, "dataset not found: " + cfg.dataset.string());
      dataset = load_dataset(cfg.dataset, taxonomy);
    }
    return *dataset;
  }

  const DatasetSplits& split_data() {
    if (!splits) splits = split(data(), cfg.split, cfg.seed);
    return *splits;
  }

  Gateway& gw() {
    if (!gateway) {
      require(cfg.providers, "providers");
      if (!fs::exists(cfg.providers)) {
        throw Error(ErrorKind::ConfigMissing, "providers config not found: " + cfg.providers.string());
      }
      gateway = load_gateway(cfg.providers);
    }
    return *gateway;
  }

  const Structurer& structure() {
    if (!structurer) {
      if (cfg.structuring == "llm") structurer = std::make_unique<LlmStructurer>(gw());
      else structurer = std::make_unique<RuleStructurer>();
    }
    return *structurer;
  }

  KnowledgeBase& knowledge() {
    if (!kb) {
      tax();
      require(cfg.kb, "kb");
      if (!fs::exists(cfg.kb / "manifest.json")) {
        throw Error(ErrorKind::ConfigMissing, "no knowledge base at " + cfg.kb.string() + "; run build-kb first");
      }
      kb = KnowledgeBase::load(cfg.kb, taxonomy);
      kb->attach_embedder(std::make_shared<GatewayEmbedding>(gw()));
    }
    return *kb;
  }
};

void print_counters(std::ostream& out, const GatewayCounters& c) {
  out << "gateway: " << c.chat_calls << " chat calls, " << c.cache_hits << " cache hits, " << c.failures
      << " failures";
  for (const auto& [agent, n] : c.calls_by_agent) out << ", " << agent << "=" << n;
  out << "\n";
}

Json counters_json(const GatewayCounters& c) {
  return Json{{"chat_calls", c.chat_calls},
              {"provider_invocations", c.provider_invocations},
              {"cache_hits", c.cache_hits},
              {"failures", c.failures},
              {"calls_by_agent", c.calls_by_agent}};
}

int cmd_build_kb(Session& s, bool force, std::ostream& out) {
  const fs::path dir = s.cfg.kb;
  Session::require(dir, "kb");
  s.data();  // validates taxonomy and dataset before touching the store
  if (fs::exists(dir / "manifest.json") && !force) {
    throw Error(ErrorKind::InvalidArgument,
                "knowledge base already exists at " + dir.string() + " (use --force to overwrite)");
  }
  const LabeledDataset& train = s.split_data().train;
  auto kb = KnowledgeBase::build(train, s.structure(), std::make_shared<GatewayEmbedding>(s.gw()));
  if (fs::exists(dir)) {
    for (const char* name : {"manifest.json", "entries.jsonl", "embeddings.bin"}) fs::remove(dir / name);
  }
  kb.save(dir);
  out << "knowledge base: " << kb.size() << " entries, dim " << kb.dim() << ", embedder " << kb.embedder_id() << "\n";
  out << "  clean: " << kb.clean_pool().size() << "\n";
  for (const auto& cat : kb.taxonomy().categories()) {
    out << "  " << cat.id << ": " << kb.category_pool(cat.id).size() << "\n";
  }
  out << "written to " << dir.string() << "\n";
  return kExitOk;
}

DetectionPipeline make_pipeline(Session& s, PipelineOptions opts) {
  opts.parallelism = s.cfg.parallelism;
  return DetectionPipeline(s.knowledge(), s.gw(), s.structure(), opts);
}

int cmd_evolve(Session& s, const std::string& stage, std::ostream& out) {
  Session::require(s.cfg.prompts, "prompts");
  const fs::path store = s.cfg.prompts;
  const bool run1 = stage == "1" || stage == "all";
  const bool run2 = stage == "2" || stage == "all";
  if (!run1 && !run2) throw Error(ErrorKind::InvalidArgument, "--stage must be 1, 2 or all");
  if (!run1 && !fs::exists(router_prompt_path(store))) {
    throw Error(ErrorKind::ConfigMissing, "stage 2 needs stage 1 output at " + router_prompt_path(store).string());
  }
  EvolutionConfig config = s.cfg.evolution;
  config.parallelism = s.cfg.parallelism;
  config.validate();

  const DatasetSplits& splits = s.split_data();
  const DetectionPipeline pipeline = make_pipeline(s, s.cfg.pipeline);
  LlmMutator mutator(s.gw());
  fs::create_directories(store);

  if (run1) {
    if (stage == "all" && fs::exists(router_prompt_path(store))) {
      out << "stage 1: router prompt already in store; skipping\n";
    } else {
      Stage1Inputs in{&pipeline, &splits.train, &splits.val, {}};
      const EvolutionResult r = run_stage1(config, in, mutator, s.cfg.seed);
      save_evolution_result(router_prompt_path(store), r);
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.4f", r.selection_fitness);
      out << "stage 1: selected " << r.selected.id << " (recall@" << config.top_k << " " << buf << ")\n";
    }
  }
  if (run2) {
    Stage2Inputs in;
    in.pipeline = &pipeline;
    in.train = &splits.train;
    in.validation = &splits.val;
    in.ratios = s.cfg.ratios;
    in.store = store;
    const Stage2Result r = run_stage2(config, in, mutator, s.cfg.seed);
    for (const auto& [cat, res] : r.evolved) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.4f", res.selection_fitness);
      out << "stage 2: " << cat << " selected " << res.selected.id << " (F1 " << buf << ")\n";
    }
    for (const auto& [cat, p] : r.resumed) out << "stage 2: " << cat << " already complete (" << p.id << ")\n";
    for (const auto& cat : r.skipped) out << "stage 2: " << cat << " skipped (no training positives)\n";
  }
  print_counters(out, s.gw().counters());
  return kExitOk;
}

struct DetectFlags {
  std::optional<fs::path> input;
  std::optional<fs::path> output;
  std::optional<std::size_t> k;
  bool no_retrieval = false;
  bool no_agents = false;
  std::optional<std::string> manual_prompts;
};

int cmd_detect(Session& s, const DetectFlags& f, std::ostream& out) {
  const Taxonomy& tax = s.tax();
  std::vector<CodeSample> samples = f.input ? load_detection_input(*f.input) : s.split_data().test.samples();
  const fs::path out_dir = f.output ? *f.output : s.cfg.output;
  Session::require(out_dir, "output");

  PromptSet prompts;
  if (f.manual_prompts) {
    prompts = *f.manual_prompts == "builtin" ? builtin_manual_prompts(tax) : load_prompt_set(*f.manual_prompts, tax);
  } else {
    Session::require(s.cfg.prompts, "prompts");
    prompts = load_prompt_set(s.cfg.prompts, tax);
  }
  if (f.no_agents && !prompts.flat) prompts.flat = builtin_manual_prompts(tax).flat;
  if (!f.no_agents && !prompts.router) {
    throw Error(ErrorKind::ConfigMissing, "prompt store has no router prompt; run evolve or pass --manual-prompts");
  }

  PipelineOptions opts = s.cfg.pipeline;
  if (f.k) opts.k = *f.k;
  if (f.no_retrieval) opts.use_retrieval = false;
  const DetectionPipeline pipeline = make_pipeline(s, opts);
  const auto reports = pipeline.detect_batch(samples, prompts, f.no_agents);

  const fs::path traces = out_dir / "traces";
  fs::remove_all(traces);
  fs::create_directories(traces);
  std::string lines;
  std::size_t failed = 0, errored = 0;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const DetectionReport& r = reports[i];
    char idx[16];
    std::snprintf(idx, sizeof idx, "%05zu", i);
    const std::string ref = std::string("traces/") + idx + "_" + sanitize_filename(r.sample_id) + ".json";
    write_json_file(out_dir / ref, trace_to_json(r, opts.record_timing));
    Json line{{"id", r.sample_id}, {"labels", r.final_labels}, {"trace_ref", ref}};
    if (r.failed) line["failed"] = true;
    if (r.errored) line["errored"] = true;
    lines += line.dump() + "\n";
    failed += r.failed ? 1 : 0;
    errored += r.errored ? 1 : 0;
  }
  write_text_file_atomic(out_dir / "reports.jsonl", lines);

  const GatewayCounters counters = s.gw().counters();
  write_json_file(out_dir / "summary.json", Json{{"samples", reports.size()},
                                                 {"failed", failed},
                                                 {"errored", errored},
                                                 {"mode", f.no_agents ? "flat" : "agents"},
                                                 {"k", opts.k},
                                                 {"retrieval", opts.use_retrieval},
                                                 {"gateway", counters_json(counters)}});
  out << reports.size() << " samples, " << failed << " failed";
  if (errored) out << ", " << errored << " errored";
  out << "\n";
  print_counters(out, counters);
  out << "reports written to " << (out_dir / "reports.jsonl").string() << "\n";
  if (!reports.empty() && failed == reports.size()) {
    throw Error(ErrorKind::ProviderUnavailable, "every sample failed");
  }
  return kExitOk;
}

struct EvaluateFlags {
  std::optional<fs::path> reports;
  std::optional<fs::path> golds;
  std::optional<fs::path> output;
  std::size_t allow_missing = 0;
  bool full_taxonomy = false;
};

int cmd_evaluate(Session& s, const EvaluateFlags& f, std::ostream& out) {
  s.tax();
  const fs::path out_dir = f.output ? *f.output : s.cfg.output;
  Session::require(out_dir, "output");
  const fs::path reports_path = f.reports ? *f.reports : out_dir / "reports.jsonl";
  if (!fs::exists(reports_path)) throw Error(ErrorKind::Io, "reports not found: " + reports_path.string());

  std::optional<LabeledDataset> gold_file;
  if (f.golds) gold_file = load_dataset(*f.golds, s.taxonomy);
  const LabeledDataset& golds = gold_file ? *gold_file : s.split_data().test;

  std::vector<PredictionRecord> predictions;
  std::set<std::string> reported;
  std::vector<std::string> unknown;
  std::size_t skipped = 0;
  std::istringstream in(read_text_file(reports_path));
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    Json j;
    try {
      j = Json::parse(line);
      PredictionRecord p{j.at("id").get<std::string>(), j.at("labels").get<std::vector<std::string>>(), {}};
      reported.insert(p.id);
      if (!golds.find(p.id)) {
        unknown.push_back(p.id);
        continue;
      }
      if (j.value("errored", false)) {
        ++skipped;
        continue;
      }
      if (j.contains("trace_ref")) {
        const fs::path trace = reports_path.parent_path() / j["trace_ref"].get<std::string>();
        if (fs::exists(trace)) {
          const Json t = read_json_file(trace);
          if (t.contains("routing") && t["routing"].is_object()) {
            p.ranked_categories = t["routing"]["ranked_categories"].get<std::vector<std::string>>();
          }
        }
      }
      predictions.push_back(std::move(p));
    } catch (const Json::exception& e) {
      throw Error(ErrorKind::MalformedRecord, reports_path.string() + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  std::vector<std::string> missing;
  for (const auto& g : golds.samples()) {
    if (!reported.count(g.id)) missing.push_back(g.id);
  }
  const std::size_t mismatches = missing.size() + unknown.size();
  if (mismatches > f.allow_missing) {
    std::string msg = std::to_string(missing.size()) + " gold ids without reports, " + std::to_string(unknown.size()) +
                      " reports without gold (allowed " + std::to_string(f.allow_missing) + ")";
    const auto& first = missing.empty() ? unknown : missing;
    msg += "; e.g. " + first.front();
    throw Error(ErrorKind::MissingGold, msg);
  }

  const LabelUniverse universe = f.full_taxonomy ? LabelUniverse::taxonomy : LabelUniverse::gold;
  EvaluationSummary summary;
  summary.type_level = macro_metrics(predictions, golds, MetricLevel::type, universe);
  summary.category_level = macro_metrics(predictions, golds, MetricLevel::category, universe);
  const auto counts = s.cfg.dataset.empty() || !fs::exists(s.cfg.dataset) ? label_counts(golds) : label_counts(s.data());
  summary.fewshot = fewshot_report(summary.type_level, counts, s.cfg.fewshot);
  summary.skipped = skipped;
  std::size_t max_ranked = 0;
  for (const auto& p : predictions) {
    if (p.ranked_categories) max_ranked = std::max(max_ranked, p.ranked_categories->size());
  }
  for (std::size_t k = 1; k <= max_ranked; ++k) summary.recall_at[k] = recall_at_k(predictions, golds, k);

  write_json_file(out_dir / "metrics.json", to_json(summary));
  write_text_file_atomic(out_dir / "metrics.txt", format_summary(summary));
  write_text_file_atomic(out_dir / "per_label.jsonl", per_label_jsonl(summary));
  out << format_summary(summary);
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Coarse-to-fine CWE vulnerability detection with routed LLM agents", "vulnroute"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every command");

  fs::path config_path = "vulnroute.json";
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> parallelism;
  std::optional<fs::path> providers;
  bool verbose = false;
  app.add_option("--config", config_path, "Run configuration file")->capture_default_str();
  app.add_option("--seed", seed, "Override the configured seed");
  app.add_option("--parallelism", parallelism, "Worker threads for agent calls")->check(CLI::PositiveNumber);
  app.add_option("--providers", providers, "Provider configuration file");
  app.add_flag("-v,--verbose", verbose, "Log progress to stderr");

  bool force = false;
  auto* build = app.add_subcommand("build-kb", "Structure, embed and store the training split");
  build->add_flag("--force", force, "Overwrite an existing store");

  std::string stage = "all";
  auto* evolve = app.add_subcommand("evolve", "Evolve router and detector prompts");
  evolve->add_option("--stage", stage, "1, 2 or all")->check(CLI::IsMember({"1", "2", "all"}))->capture_default_str();

  DetectFlags df;
  auto* detect = app.add_subcommand("detect", "Run detection and write reports and traces");
  detect->add_option("--input", df.input, "JSONL samples (default: test split)");
  detect->add_option("--output", df.output, "Output directory (default: configured output)");
  detect->add_option("--k", df.k, "Categories to route to")->check(CLI::PositiveNumber);
  detect->add_flag("--no-retrieval", df.no_retrieval, "Call agents with empty evidence");
  detect->add_flag("--no-agents", df.no_agents, "Single flat prompt over all types, no routing");
  detect->add_option("--manual-prompts", df.manual_prompts, "Prompt directory, or 'builtin' for seed prompts");

  EvaluateFlags ef;
  auto* evaluate = app.add_subcommand("evaluate", "Score reports against gold labels");
  evaluate->add_option("--reports", ef.reports, "reports.jsonl (default: <output>/reports.jsonl)");
  evaluate->add_option("--golds", ef.golds, "Labeled JSONL (default: test split)");
  evaluate->add_option("--output", ef.output, "Directory for metrics files (default: configured output)");
  evaluate->add_option("--allow-missing", ef.allow_missing, "Tolerated id mismatches")->capture_default_str();
  evaluate->add_flag("--full-taxonomy", ef.full_taxonomy, "Average over every taxonomy label, not only gold labels");
  std::optional<std::size_t> tail_boundary;
  std::optional<double> coverage_threshold;
  evaluate->add_option("--tail-boundary", tail_boundary, "Few-shot tail boundary (gold samples)");
  evaluate->add_option("--coverage-threshold", coverage_threshold, "Few-shot coverage F1 threshold");

  std::vector<std::string> argv_store{"vulnroute"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitInvalid;
  }

  spdlog::set_level(verbose ? spdlog::level::info : spdlog::level::warn);
  try {
    RunConfig cfg = load_run_config(config_path);
    if (seed) cfg.seed = *seed;
    if (parallelism) cfg.parallelism = *parallelism;
    if (providers) cfg.providers = fs::absolute(*providers);
    if (tail_boundary) cfg.fewshot.tail_boundary = *tail_boundary;
    if (coverage_threshold) cfg.fewshot.coverage_threshold = *coverage_threshold;
    Session session(std::move(cfg));
    if (*build) return cmd_build_kb(session, force, out);
    if (*evolve) return cmd_evolve(session, stage, out);
    if (*detect) return cmd_detect(session, df, out);
    return cmd_evaluate(session, ef, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return e.is_provider_error() ? kExitProvider : kExitInvalid;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitInvalid;
  }
}

}  // namespace vulnroute
