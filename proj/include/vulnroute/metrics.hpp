#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vulnroute/corpus.hpp"
#include "vulnroute/util/json_io.hpp"

namespace vulnroute {

enum class MetricLevel { type, category };
const char* to_string(MetricLevel level) noexcept;

// Predicted label set for one sample, plus the router's ranking when the
// sample went through the agents path.
struct PredictionRecord {
  std::string id;
  std::vector<std::string> labels;
  std::optional<std::vector<std::string>> ranked_categories;
};

struct LabelStats {
  std::string label;
  std::size_t support = 0;  // gold samples with this label
  std::size_t tp = 0, fp = 0, fn = 0;
  double precision = 0.0, recall = 0.0, f1 = 0.0;
};

LabelStats make_label_stats(std::string label, std::size_t tp, std::size_t fp, std::size_t fn);

struct MetricsReport {
  MetricLevel level = MetricLevel::type;
  std::vector<LabelStats> per_label;  // sorted by label; benign never included
  double macro_precision = 0.0, macro_recall = 0.0, macro_f1 = 0.0;
  std::size_t evaluated = 0;
};

enum class LabelUniverse {
  gold,      // labels present in the gold records
  taxonomy,  // every type (or category) in the taxonomy
};

// One-vs-rest scoring of set-valued predictions against single gold labels.
// Every prediction must have a gold record (MissingGold otherwise).
MetricsReport macro_metrics(std::span<const PredictionRecord> predictions, const LabeledDataset& golds,
                            MetricLevel level, LabelUniverse universe = LabelUniverse::gold);

// Fraction of vulnerable gold samples whose category is among the first k
// routed categories. Predictions without a ranking count as misses.
double recall_at_k(std::span<const PredictionRecord> predictions, const LabeledDataset& golds, std::size_t k);

// sum_i sum_j |v_i - v_j| / (2 n^2 mean); 0 when the mean is 0.
double gini(std::span<const double> values);

struct FewShotOptions {
  std::size_t tail_boundary = 500;
  double coverage_threshold = 0.1;
};

struct FewShotReport {
  double tail_f1 = 0.0;
  std::size_t tail_labels = 0;
  std::optional<std::size_t> fail_threshold;
  double coverage = 0.0;
  double gini = 0.0;
};

// `counts` gives the number of gold samples per label used for the tail
// boundary and fail threshold; labels missing from it use their support.
FewShotReport fewshot_report(const MetricsReport& type_metrics, const std::map<std::string, std::size_t>& counts,
                             const FewShotOptions& options = {});

std::map<std::string, std::size_t> label_counts(const LabeledDataset& dataset);

Json to_json(const LabelStats& s);
Json to_json(const MetricsReport& r);
Json to_json(const FewShotReport& r);

struct EvaluationSummary {
  MetricsReport type_level;
  MetricsReport category_level;
  FewShotReport fewshot;
  std::map<std::size_t, double> recall_at;  // k -> recall@k
  std::size_t skipped = 0;                  // errored reports excluded
};

Json to_json(const EvaluationSummary& s);
// Aligned text table with percentages.
std::string format_summary(const EvaluationSummary& s);
// One JSON object per line: level plus LabelStats fields.
std::string per_label_jsonl(const EvaluationSummary& s);

}  // namespace vulnroute
