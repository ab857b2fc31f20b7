#pragma once

#include <chrono>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vulnroute/corpus.hpp"
#include "vulnroute/gateway.hpp"
#include "vulnroute/knowledge_base.hpp"
#include "vulnroute/prediction_parser.hpp"
#include "vulnroute/prompts.hpp"
#include "vulnroute/structuring.hpp"

namespace vulnroute {

enum class RoutingFailurePolicy {
  benign,  // report {y0} and flag the sample as failed
  error,   // report no labels and mark the sample errored
};

struct PipelineOptions {
  std::size_t k = 3;
  std::size_t r = 9;
  bool use_retrieval = true;
  std::size_t parallelism = 1;
  RoutingFailurePolicy routing_failure = RoutingFailurePolicy::benign;
  bool record_timing = false;
};

struct RoutingResult {
  std::vector<std::string> ranked_categories;  // unique, valid, length <= k
  std::vector<double> confidences;
  EvidenceBundle evidence;
  std::string raw_response;
  std::string prompt_id;
  std::vector<std::string> warnings;
  bool repaired = false;
  bool abstained = false;
};

struct DetectorOutput {
  std::string category_id;
  std::string prompt_id;
  std::vector<std::string> predicted_types;  // subset of the category's types
  std::map<std::string, double> confidences;
  std::map<std::string, std::string> explanations;
  EvidenceBundle evidence;
  std::string raw_response;
  std::vector<std::string> warnings;
  std::optional<std::string> error;  // provider failure
  bool abstained = false;
  std::chrono::microseconds elapsed{0};
};

struct DetectionReport {
  std::string sample_id;
  std::vector<std::string> final_labels;  // sorted; {y0} when nothing was found
  std::map<std::string, std::string> evidence;
  std::string mode;  // "agents" | "flat"
  std::optional<RoutingResult> routing;
  std::vector<DetectorOutput> detectors;  // detectors that ran, in routed order
  std::vector<std::string> warnings;
  bool failed = false;
  bool errored = false;
  std::optional<std::string> failure;
  std::chrono::microseconds elapsed{0};
};

Json to_json(const EvidenceBundle& bundle);
Json to_json(const RoutingResult& routing);
Json to_json(const DetectorOutput& output, bool timing);
Json trace_to_json(const DetectionReport& report, bool timing);

// Coarse-to-fine detection: route to the top-k categories with global
// evidence, run only the routed category detectors with contrastive
// evidence, union their findings. All shared state is immutable apart from
// the gateway.
class DetectionPipeline {
 public:
  DetectionPipeline(const KnowledgeBase& kb, Gateway& gateway, const Structurer& structurer, PipelineOptions options);

  const PipelineOptions& options() const { return options_; }
  const Taxonomy& taxonomy() const { return kb_.taxonomy(); }

  RoutingResult route(const CodeSample& sample, std::size_t k, const Prompt& router_prompt) const;
  DetectorOutput detect_category(const CodeSample& sample, std::string_view category_id, const Prompt& prompt) const;
  DetectionReport detect(const CodeSample& sample, const PromptSet& prompts) const;
  // Single agent over the full type list, no routing.
  DetectionReport detect_flat(const CodeSample& sample, const Prompt& flat_prompt) const;

  // Output order matches input; one failing sample never aborts the batch.
  std::vector<DetectionReport> detect_batch(std::span<const CodeSample> samples, const PromptSet& prompts,
                                            bool flat = false) const;

  std::string router_payload(const CodeSample& sample, const EvidenceBundle& evidence) const;
  std::string detector_payload(const CodeSample& sample, const Category& category,
                               const EvidenceBundle& evidence) const;

 private:
  struct Prepared {
    StructuredRepresentation representation;
    std::vector<float> embedding;
  };
  const Prepared& prepare(const CodeSample& sample) const;
  DetectionReport finalize(DetectionReport report) const;

  const KnowledgeBase& kb_;
  Gateway& gateway_;
  const Structurer& structurer_;
  PipelineOptions options_;
  mutable std::mutex prepared_mu_;
  mutable std::map<std::string, std::unique_ptr<Prepared>> prepared_;
};

}  // namespace vulnroute
