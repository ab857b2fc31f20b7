#include "vulnroute/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include "vulnroute/error.hpp"

namespace vulnroute {

const char* to_string(MetricLevel level) noexcept {
  return level == MetricLevel::type ? "type" : "category";
}

LabelStats make_label_stats(std::string label, std::size_t tp, std::size_t fp, std::size_t fn) {
  LabelStats s;
  s.label = std::move(label);
  s.tp = tp;
  s.fp = fp;
  s.fn = fn;
  s.support = tp + fn;
  s.precision = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  s.recall = tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  s.f1 = s.precision + s.recall > 0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  return s;
}

MetricsReport macro_metrics(std::span<const PredictionRecord> predictions, const LabeledDataset& golds,
                            MetricLevel level, LabelUniverse universe) {
  const Taxonomy& tax = golds.taxonomy();
  auto project = [&](const std::string& label) {
    return level == MetricLevel::type ? label : tax.project_to_category(label);
  };

  std::set<std::string> labels;
  if (universe == LabelUniverse::taxonomy) {
    if (level == MetricLevel::type) {
      for (const auto& t : tax.types()) labels.insert(t.id);
    } else {
      for (const auto& c : tax.categories()) labels.insert(c.id);
    }
  }

  struct Counts {
    std::size_t tp = 0, fp = 0, fn = 0;
  };
  std::map<std::string, Counts> counts;
  MetricsReport report;
  report.level = level;
  for (const auto& p : predictions) {
    const CodeSample* gold_sample = golds.find(p.id);
    if (!gold_sample) throw Error(ErrorKind::MissingGold, "no gold record for " + p.id);
    const std::string gold = project(gold_sample->label);
    std::set<std::string> predicted;
    for (const auto& l : p.labels) predicted.insert(project(l));
    if (universe == LabelUniverse::gold) labels.insert(gold);
    for (const auto& l : predicted) {
      if (l == gold) ++counts[l].tp;
      else ++counts[l].fp;
    }
    if (!predicted.count(gold)) ++counts[gold].fn;
    ++report.evaluated;
  }

  labels.erase(tax.benign_label());
  for (const auto& l : labels) {
    const Counts c = counts[l];
    report.per_label.push_back(make_label_stats(l, c.tp, c.fp, c.fn));
  }
  if (!report.per_label.empty()) {
    double p = 0, r = 0, f = 0;
    for (const auto& s : report.per_label) {
      p += s.precision;
      r += s.recall;
      f += s.f1;
    }
    const auto n = static_cast<double>(report.per_label.size());
    report.macro_precision = p / n;
    report.macro_recall = r / n;
    report.macro_f1 = f / n;
  }
  return report;
}

double recall_at_k(std::span<const PredictionRecord> predictions, const LabeledDataset& golds, std::size_t k) {
  if (k < 1) throw Error(ErrorKind::InvalidArgument, "k must be >= 1");
  const Taxonomy& tax = golds.taxonomy();
  std::size_t total = 0, hits = 0;
  for (const auto& p : predictions) {
    const CodeSample* g = golds.find(p.id);
    if (!g) throw Error(ErrorKind::MissingGold, "no gold record for " + p.id);
    if (tax.is_benign(g->label)) continue;
    ++total;
    if (!p.ranked_categories) continue;
    const std::string gold = tax.project_to_category(g->label);
    const auto& ranked = *p.ranked_categories;
    const auto end = ranked.begin() + static_cast<std::ptrdiff_t>(std::min(k, ranked.size()));
    if (std::find(ranked.begin(), end, gold) != end) ++hits;
  }
  return total ? static_cast<double>(hits) / static_cast<double>(total) : 0.0;
}

double gini(std::span<const double> values) {
  if (values.empty()) throw Error(ErrorKind::EmptyInput, "gini of an empty sequence");
  double sum = 0.0;
  for (double v : values) {
    if (v < 0.0) throw Error(ErrorKind::InvalidArgument, "gini requires nonnegative values");
    sum += v;
  }
  const auto n = static_cast<double>(values.size());
  const double mean = sum / n;
  if (mean == 0.0) return 0.0;
  double diff = 0.0;
  for (double a : values) {
    for (double b : values) diff += std::fabs(a - b);
  }
  return diff / (2.0 * n * n * mean);
}

std::map<std::string, std::size_t> label_counts(const LabeledDataset& dataset) {
  std::map<std::string, std::size_t> out;
  for (const auto& s : dataset.samples()) ++out[s.label];
  return out;
}

FewShotReport fewshot_report(const MetricsReport& m, const std::map<std::string, std::size_t>& counts,
                             const FewShotOptions& options) {
  if (m.level != MetricLevel::type) throw Error(ErrorKind::InvalidArgument, "few-shot report needs type-level metrics");
  FewShotReport r;
  double tail_sum = 0.0;
  std::size_t covered = 0;
  std::vector<double> f1s;
  for (const auto& s : m.per_label) {
    auto it = counts.find(s.label);
    const std::size_t count = it != counts.end() ? it->second : s.support;
    f1s.push_back(s.f1);
    if (s.f1 > 0.0 && (!r.fail_threshold || count < *r.fail_threshold)) r.fail_threshold = count;
    if (count < options.tail_boundary) {
      ++r.tail_labels;
      tail_sum += s.f1;
      if (s.f1 > options.coverage_threshold) ++covered;
    }
  }
  if (r.tail_labels) {
    r.tail_f1 = tail_sum / static_cast<double>(r.tail_labels);
    r.coverage = static_cast<double>(covered) / static_cast<double>(r.tail_labels);
  }
  r.gini = f1s.empty() ? 0.0 : gini(f1s);
  return r;
}

Json to_json(const LabelStats& s) {
  return Json{{"label", s.label},         {"support", s.support}, {"tp", s.tp},
              {"fp", s.fp},               {"fn", s.fn},           {"precision", s.precision},
              {"recall", s.recall},       {"f1", s.f1}};
}

Json to_json(const MetricsReport& r) {
  Json per = Json::array();
  for (const auto& s : r.per_label) per.push_back(to_json(s));
  return Json{{"level", to_string(r.level)},
              {"evaluated", r.evaluated},
              {"labels", r.per_label.size()},
              {"macro_precision", r.macro_precision},
              {"macro_recall", r.macro_recall},
              {"macro_f1", r.macro_f1},
              {"per_label", per}};
}

Json to_json(const FewShotReport& r) {
  return Json{{"tail_f1", r.tail_f1},
              {"tail_labels", r.tail_labels},
              {"fail_threshold", r.fail_threshold ? Json(*r.fail_threshold) : Json(nullptr)},
              {"coverage", r.coverage},
              {"gini", r.gini}};
}

Json to_json(const EvaluationSummary& s) {
  Json recall = Json::object();
  for (const auto& [k, v] : s.recall_at) recall[std::to_string(k)] = v;
  return Json{{"type_level", to_json(s.type_level)},
              {"category_level", to_json(s.category_level)},
              {"fewshot", to_json(s.fewshot)},
              {"recall_at_k", recall},
              {"skipped", s.skipped}};
}

namespace {

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%6.2f", v * 100.0);
  return buf;
}

std::string row(const std::string& name, const MetricsReport& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-10s %8s %8s %8s %7zu\n", name.c_str(), pct(r.macro_precision).c_str(),
                pct(r.macro_recall).c_str(), pct(r.macro_f1).c_str(), r.per_label.size());
  return buf;
}

}  // namespace

std::string format_summary(const EvaluationSummary& s) {
  std::string out;
  out += "Level       Prec(%)   Rec(%)    F1(%)  Labels\n";
  out += row("Category", s.category_level);
  out += row("Type", s.type_level);
  out += "\n";
  for (const auto& [k, v] : s.recall_at) out += "Recall@" + std::to_string(k) + " (%)  " + pct(v) + "\n";
  if (!s.recall_at.empty()) out += "\n";
  out += "Few-shot\n";
  out += "  Tail F1         " + pct(s.fewshot.tail_f1) + "  (" + std::to_string(s.fewshot.tail_labels) + " labels)\n";
  out += "  Fail threshold  " + (s.fewshot.fail_threshold ? std::to_string(*s.fewshot.fail_threshold) : "n/a") + "\n";
  out += "  Coverage (%)    " + pct(s.fewshot.coverage) + "\n";
  char g[32];
  std::snprintf(g, sizeof g, "%.4f", s.fewshot.gini);
  out += std::string("  Gini            ") + g + "\n";
  out += "\nEvaluated " + std::to_string(s.type_level.evaluated) + " samples";
  if (s.skipped) out += ", skipped " + std::to_string(s.skipped) + " errored";
  out += "\n";
  return out;
}

std::string per_label_jsonl(const EvaluationSummary& s) {
  std::string out;
  for (const MetricsReport* r : {&s.category_level, &s.type_level}) {
    for (const auto& l : r->per_label) {
      Json j = to_json(l);
      j["level"] = to_string(r->level);
      out += j.dump() + "\n";
    }
  }
  return out;
}

}  // namespace vulnroute
