#include "vulnroute/pipeline.hpp"

#include <algorithm>
#include <set>

#include <spdlog/spdlog.h>

#include "vulnroute/error.hpp"
#include "vulnroute/util/hash.hpp"
#include "vulnroute/util/parallel.hpp"

namespace vulnroute {

namespace {

using Clock = std::chrono::steady_clock;

std::chrono::microseconds since(Clock::time_point start) {
  return std::chrono::duration_cast<std::chrono::microseconds>(Clock::now() - start);
}

const char* to_string(EvidenceBundle::Kind kind) {
  switch (kind) {
    case EvidenceBundle::Kind::global: return "global";
    case EvidenceBundle::Kind::contrastive: return "contrastive";
    case EvidenceBundle::Kind::none: return "none";
  }
  return "none";
}

Json budget_json(const ContrastiveBudget& b) {
  return Json{{"positive", b.positive}, {"clean", b.clean}, {"hard", b.hard}};
}

}  // namespace

Json to_json(const EvidenceBundle& bundle) {
  Json items = Json::array();
  for (const auto& it : bundle.items) {
    items.push_back(Json{{"sample_id", it.sample_id},
                         {"label", it.label},
                         {"pool", to_string(it.pool)},
                         {"similarity", it.similarity}});
  }
  Json j{{"kind", to_string(bundle.kind)}, {"requested", bundle.requested}, {"items", items}};
  if (bundle.kind == EvidenceBundle::Kind::contrastive) {
    j["budget"] = budget_json(bundle.budget);
    j["returned"] = budget_json(bundle.returned);
  }
  return j;
}

Json to_json(const RoutingResult& r) {
  return Json{{"prompt_id", r.prompt_id},
              {"ranked_categories", r.ranked_categories},
              {"confidences", r.confidences},
              {"evidence", to_json(r.evidence)},
              {"raw_response", r.raw_response},
              {"warnings", r.warnings},
              {"repaired", r.repaired},
              {"abstained", r.abstained}};
}

Json to_json(const DetectorOutput& d, bool timing) {
  Json j{{"category", d.category_id},
         {"prompt_id", d.prompt_id},
         {"predicted_types", d.predicted_types},
         {"confidences", d.confidences},
         {"explanations", d.explanations},
         {"evidence", to_json(d.evidence)},
         {"raw_response", d.raw_response},
         {"warnings", d.warnings},
         {"abstained", d.abstained}};
  j["error"] = d.error ? Json(*d.error) : Json(nullptr);
  if (timing) j["elapsed_us"] = d.elapsed.count();
  return j;
}

Json trace_to_json(const DetectionReport& r, bool timing) {
  Json detectors = Json::array();
  for (const auto& d : r.detectors) detectors.push_back(to_json(d, timing));
  Json j{{"id", r.sample_id},
         {"mode", r.mode},
         {"final_labels", r.final_labels},
         {"evidence", r.evidence},
         {"detectors", detectors},
         {"detectors_run", Json::array()},
         {"warnings", r.warnings},
         {"failed", r.failed},
         {"errored", r.errored}};
  for (const auto& d : r.detectors) j["detectors_run"].push_back(d.category_id);
  j["routing"] = r.routing ? to_json(*r.routing) : Json(nullptr);
  j["failure"] = r.failure ? Json(*r.failure) : Json(nullptr);
  if (timing) j["elapsed_us"] = r.elapsed.count();
  return j;
}

DetectionPipeline::DetectionPipeline(const KnowledgeBase& kb, Gateway& gateway, const Structurer& structurer,
                                     PipelineOptions options)
    : kb_(kb), gateway_(gateway), structurer_(structurer), options_(options) {
  if (options_.k < 1) throw Error(ErrorKind::InvalidArgument, "k must be >= 1");
  if (options_.r < 3) throw Error(ErrorKind::InvalidArgument, "r must be >= 3");
  if (options_.parallelism < 1) options_.parallelism = 1;
}

const DetectionPipeline::Prepared& DetectionPipeline::prepare(const CodeSample& sample) const {
  const std::string key = sample.id + '\0' + std::to_string(fnv1a64(sample.code));
  {
    std::lock_guard lock(prepared_mu_);
    auto it = prepared_.find(key);
    if (it != prepared_.end()) return *it->second;
  }
  auto p = std::make_unique<Prepared>();
  p->representation = structurer_.structure(sample.id, sample.code);
  p->embedding = kb_.embed_query(p->representation);
  std::lock_guard lock(prepared_mu_);
  auto [it, inserted] = prepared_.emplace(key, std::move(p));
  return *it->second;
}

std::string DetectionPipeline::router_payload(const CodeSample& sample, const EvidenceBundle& evidence) const {
  std::string cats;
  for (const auto& c : taxonomy().categories()) {
    cats += c.id;
    if (c.name != c.id) cats += ": " + c.name;
    cats += '\n';
  }
  return render_section("CATEGORIES", cats) + render_section("TARGET CODE", sample.code) +
         render_section("EVIDENCE", render_evidence(evidence));
}

std::string DetectionPipeline::detector_payload(const CodeSample& sample, const Category& category,
                                                const EvidenceBundle& evidence) const {
  std::string types;
  for (const auto& id : category.types) {
    const CweType* t = taxonomy().find_type(id);
    types += id;
    if (t && t->name != id) types += ": " + t->name;
    types += '\n';
  }
  return render_section("CATEGORY", category.id) + render_section("CANDIDATE TYPES", types) +
         render_section("TARGET CODE", sample.code) + render_section("EVIDENCE", render_evidence(evidence));
}

RoutingResult DetectionPipeline::route(const CodeSample& sample, std::size_t k, const Prompt& router_prompt) const {
  if (k < 1) throw Error(ErrorKind::InvalidArgument, "k must be >= 1");
  RoutingResult out;
  out.prompt_id = router_prompt.id;
  if (options_.use_retrieval) {
    const Prepared& prep = prepare(sample);
    out.evidence = kb_.retrieve_global(prep.embedding, options_.r, kb_.leakage_guard(sample.id));
  }
  const ChatRequest req{ModelRole::execution, router_prompt.text, router_payload(sample, out.evidence),
                        router_target()};
  out.raw_response = gateway_.chat(req);
  const Taxonomy& tax = taxonomy();
  auto parsed = parse_prediction_with_repair(
      gateway_, req, out.raw_response, [&](std::string_view ref) { return tax.resolve_category(ref); });
  out.warnings = std::move(parsed.warnings);
  out.repaired = parsed.repaired;
  out.abstained = parsed.abstained;
  for (const auto& e : parsed.entries) {
    if (out.ranked_categories.size() >= k) break;
    if (std::find(out.ranked_categories.begin(), out.ranked_categories.end(), e.label) !=
        out.ranked_categories.end()) {
      continue;
    }
    out.ranked_categories.push_back(e.label);
    out.confidences.push_back(e.confidence);
  }
  return out;
}

DetectorOutput DetectionPipeline::detect_category(const CodeSample& sample, std::string_view category_id,
                                                  const Prompt& prompt) const {
  const auto start = Clock::now();
  const Category& category = taxonomy().category(category_id);
  DetectorOutput out;
  out.category_id = category.id;
  out.prompt_id = prompt.id;
  if (options_.use_retrieval) {
    const Prepared& prep = prepare(sample);
    out.evidence = kb_.retrieve_contrastive(prep.embedding, category.id, options_.r, kb_.leakage_guard(sample.id));
  }
  const ChatRequest req{ModelRole::execution, prompt.text, detector_payload(sample, category, out.evidence),
                        detector_target(category.id)};
  out.raw_response = gateway_.chat(req);
  const Taxonomy& tax = taxonomy();
  auto parsed = parse_prediction_with_repair(gateway_, req, out.raw_response,
                                             [&](std::string_view ref) { return tax.resolve_type(ref); });
  out.warnings = std::move(parsed.warnings);
  out.abstained = parsed.abstained;
  for (auto& e : parsed.entries) {
    if (tax.category_of(e.label) != category.id) {
      out.warnings.push_back("filtered out-of-category label " + e.label);
      spdlog::warn("detector {} dropped out-of-category label {} for {}", category.id, e.label, sample.id);
      continue;
    }
    out.predicted_types.push_back(e.label);
    out.confidences[e.label] = e.confidence;
    out.explanations[e.label] = std::move(e.rationale);
  }
  out.elapsed = since(start);
  return out;
}

DetectionReport DetectionPipeline::finalize(DetectionReport report) const {
  std::set<std::string> labels;
  for (const auto& d : report.detectors) {
    for (const auto& t : d.predicted_types) {
      labels.insert(t);
      auto it = d.explanations.find(t);
      if (it != d.explanations.end() && !report.evidence.count(t)) report.evidence[t] = it->second;
    }
  }
  if (report.errored) {
    report.final_labels.clear();
    return report;
  }
  report.final_labels.assign(labels.begin(), labels.end());
  if (report.final_labels.empty()) report.final_labels.push_back(taxonomy().benign_label());
  return report;
}

DetectionReport DetectionPipeline::detect(const CodeSample& sample, const PromptSet& prompts) const {
  const auto start = Clock::now();
  DetectionReport report;
  report.sample_id = sample.id;
  report.mode = "agents";
  if (!prompts.router) throw Error(ErrorKind::ConfigMissing, "no router prompt available");
  try {
    report.routing = route(sample, options_.k, *prompts.router);
  } catch (const Error& e) {
    if (!e.is_provider_error()) throw;
    report.failed = true;
    report.failure = std::string("routing failed: ") + e.what();
    report.errored = options_.routing_failure == RoutingFailurePolicy::error;
    report.elapsed = since(start);
    return finalize(std::move(report));
  }

  std::vector<std::string> runnable;
  for (const auto& cat : report.routing->ranked_categories) {
    if (!prompts.detectors.count(cat)) {
      report.warnings.push_back(std::string(to_string(ErrorKind::MissingDetectorPrompt)) + ": " + cat + " skipped");
      spdlog::warn("no detector prompt for category {}; skipping", cat);
      continue;
    }
    runnable.push_back(cat);
  }
  std::vector<DetectorOutput> outputs(runnable.size());
  parallel_for(runnable.size(), options_.parallelism, [&](std::size_t i) {
    const std::string& cat = runnable[i];
    try {
      outputs[i] = detect_category(sample, cat, prompts.detectors.at(cat));
    } catch (const Error& e) {
      if (!e.is_provider_error()) throw;
      outputs[i].category_id = cat;
      outputs[i].prompt_id = prompts.detectors.at(cat).id;
      outputs[i].error = e.what();
    }
  });
  for (auto& o : outputs) {
    if (o.error) {
      report.failed = true;
      report.failure = "detector " + o.category_id + " failed: " + *o.error;
    }
    report.detectors.push_back(std::move(o));
  }
  report.elapsed = since(start);
  return finalize(std::move(report));
}

DetectionReport DetectionPipeline::detect_flat(const CodeSample& sample, const Prompt& flat_prompt) const {
  const auto start = Clock::now();
  DetectionReport report;
  report.sample_id = sample.id;
  report.mode = "flat";
  DetectorOutput out;
  out.category_id = flat_target();
  out.prompt_id = flat_prompt.id;
  try {
    if (options_.use_retrieval) {
      const Prepared& prep = prepare(sample);
      out.evidence = kb_.retrieve_global(prep.embedding, options_.r, kb_.leakage_guard(sample.id));
    }
    std::string types;
    for (const auto& t : taxonomy().types()) types += t.id + (t.name != t.id ? ": " + t.name : "") + "\n";
    const ChatRequest req{ModelRole::execution, flat_prompt.text,
                          render_section("CANDIDATE TYPES", types) + render_section("TARGET CODE", sample.code) +
                              render_section("EVIDENCE", render_evidence(out.evidence)),
                          flat_target()};
    out.raw_response = gateway_.chat(req);
    const Taxonomy& tax = taxonomy();
    auto parsed = parse_prediction_with_repair(gateway_, req, out.raw_response,
                                               [&](std::string_view ref) { return tax.resolve_type(ref); });
    out.warnings = std::move(parsed.warnings);
    out.abstained = parsed.abstained;
    for (auto& e : parsed.entries) {
      out.predicted_types.push_back(e.label);
      out.confidences[e.label] = e.confidence;
      out.explanations[e.label] = std::move(e.rationale);
    }
  } catch (const Error& e) {
    if (!e.is_provider_error()) throw;
    out.error = e.what();
    report.failed = true;
    report.failure = std::string("flat agent failed: ") + e.what();
  }
  out.elapsed = since(start);
  report.detectors.push_back(std::move(out));
  report.elapsed = since(start);
  return finalize(std::move(report));
}

std::vector<DetectionReport> DetectionPipeline::detect_batch(std::span<const CodeSample> samples,
                                                             const PromptSet& prompts, bool flat) const {
  if (flat && !prompts.flat) throw Error(ErrorKind::ConfigMissing, "no flat prompt available");
  if (!flat && !prompts.router) throw Error(ErrorKind::ConfigMissing, "no router prompt available");
  std::vector<DetectionReport> reports(samples.size());
  parallel_for(samples.size(), options_.parallelism, [&](std::size_t i) {
    try {
      reports[i] = flat ? detect_flat(samples[i], *prompts.flat) : detect(samples[i], prompts);
    } catch (const std::exception& e) {
      DetectionReport r;
      r.sample_id = samples[i].id;
      r.mode = flat ? "flat" : "agents";
      r.failed = true;
      r.failure = e.what();
      reports[i] = finalize(std::move(r));
    }
  });
  return reports;
}

}  // namespace vulnroute
