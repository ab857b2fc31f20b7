#include "vulnroute/prediction_parser.hpp"

#include <cmath>

#include <spdlog/spdlog.h>

#include "vulnroute/error.hpp"
#include "vulnroute/taxonomy.hpp"

namespace vulnroute {

LabelResolver exact_labels(std::set<std::string> allowed) {
  return [allowed = std::move(allowed)](std::string_view label) -> std::optional<std::string> {
    const std::string key = trim(label);
    if (allowed.count(key)) return key;
    const std::string lower = lowercase(key);
    for (const auto& a : allowed) {
      if (lowercase(a) == lower) return a;
    }
    return std::nullopt;
  };
}

std::vector<std::string> extract_json_candidates(std::string_view text) {
  std::vector<std::string> out;
  // Fenced blocks first.
  std::size_t pos = 0;
  while ((pos = text.find("```", pos)) != std::string_view::npos) {
    auto body_start = text.find('\n', pos);
    if (body_start == std::string_view::npos) break;
    const auto close = text.find("```", body_start);
    if (close == std::string_view::npos) break;
    out.emplace_back(trim(text.substr(body_start + 1, close - body_start - 1)));
    pos = close + 3;
  }
  // Balanced spans, string-literal aware.
  for (std::size_t start = 0; start < text.size(); ++start) {
    const char open = text[start];
    if (open != '{' && open != '[') continue;
    int depth = 0;
    bool in_string = false;
    bool escaped = false;
    for (std::size_t i = start; i < text.size(); ++i) {
      const char c = text[i];
      if (in_string) {
        if (escaped) {
          escaped = false;
        } else if (c == '\\') {
          escaped = true;
        } else if (c == '"') {
          in_string = false;
        }
        continue;
      }
      if (c == '"') {
        in_string = true;
      } else if (c == '{' || c == '[') {
        ++depth;
      } else if (c == '}' || c == ']') {
        if (--depth == 0) {
          out.emplace_back(text.substr(start, i - start + 1));
          start = i;  // continue after this span
          break;
        }
      }
    }
  }
  return out;
}

namespace {

constexpr const char* kLabelKeys[] = {"label", "category", "cwe", "cwe_id", "type", "id", "name"};
constexpr const char* kListKeys[] = {"predictions", "labels", "categories", "types", "vulnerabilities", "findings"};
constexpr const char* kConfidenceKeys[] = {"confidence", "score", "probability"};
constexpr const char* kRationaleKeys[] = {"reason", "rationale", "explanation", "evidence"};

std::optional<double> as_number(const Json& v) {
  if (v.is_number()) return v.get<double>();
  if (v.is_string()) {
    try {
      std::size_t used = 0;
      const std::string s = v.get<std::string>();
      const double d = std::stod(s, &used);
      if (used == s.size()) return d;
    } catch (...) {
    }
  }
  return std::nullopt;
}

struct RawEntry {
  std::string label;
  std::optional<double> confidence;
  std::string rationale;
};

bool entry_from_item(const Json& item, RawEntry& out) {
  if (item.is_string()) {
    out.label = item.get<std::string>();
    return true;
  }
  if (!item.is_object()) return false;
  for (const char* k : kLabelKeys) {
    if (item.contains(k) && item[k].is_string()) {
      out.label = item[k].get<std::string>();
      break;
    }
  }
  if (out.label.empty()) return false;
  for (const char* k : kConfidenceKeys) {
    if (item.contains(k)) {
      out.confidence = as_number(item[k]);
      if (out.confidence) break;
    }
  }
  for (const char* k : kRationaleKeys) {
    if (item.contains(k) && item[k].is_string()) {
      out.rationale = item[k].get<std::string>();
      break;
    }
  }
  return true;
}

// Returns nullopt when the document does not fit the output schema.
std::optional<std::vector<RawEntry>> schema_entries(const Json& doc) {
  const Json* list = nullptr;
  if (doc.is_array()) {
    list = &doc;
  } else if (doc.is_object()) {
    for (const char* k : kListKeys) {
      if (doc.contains(k) && doc[k].is_array()) {
        list = &doc[k];
        break;
      }
    }
  }
  if (list) {
    std::vector<RawEntry> out;
    for (const auto& item : *list) {
      RawEntry e;
      if (!entry_from_item(item, e)) return std::nullopt;
      out.push_back(std::move(e));
    }
    return out;
  }
  if (!doc.is_object() || doc.empty()) return std::nullopt;
  RawEntry single;
  if (entry_from_item(doc, single)) return std::vector<RawEntry>{single};
  // Flat {"label": confidence} map.
  std::vector<RawEntry> out;
  for (const auto& [key, value] : doc.items()) {
    auto conf = as_number(value);
    if (!conf) return std::nullopt;
    out.push_back(RawEntry{key, conf, {}});
  }
  return out;
}

}  // namespace

std::optional<ParsedPrediction> try_parse_prediction(std::string_view response, const LabelResolver& resolve) {
  for (const auto& candidate : extract_json_candidates(response)) {
    Json doc = Json::parse(candidate, nullptr, /*allow_exceptions=*/false);
    if (doc.is_discarded()) continue;
    auto raw = schema_entries(doc);
    if (!raw) continue;

    ParsedPrediction out;
    std::set<std::string> seen;
    for (auto& e : *raw) {
      auto label = resolve(e.label);
      if (!label) {
        out.warnings.push_back("dropped label outside the allowed set: " + e.label);
        continue;
      }
      double conf = e.confidence.value_or(1.0);
      if (std::isnan(conf)) conf = 0.0;
      if (conf > 1.0 || conf < 0.0) {
        out.warnings.push_back("confidence " + std::to_string(conf) + " for " + *label + " clamped to [0,1]");
        conf = conf > 1.0 ? 1.0 : 0.0;
      }
      if (!seen.insert(*label).second) continue;
      out.entries.push_back(PredictionEntry{*label, conf, std::move(e.rationale)});
    }
    for (const auto& w : out.warnings) spdlog::warn("{}", w);
    return out;
  }
  return std::nullopt;
}

ParsedPrediction parse_prediction(std::string_view response, const LabelResolver& resolve) {
  try {
    if (auto parsed = try_parse_prediction(response, resolve)) return *parsed;
  } catch (const std::exception& e) {
    spdlog::warn("prediction parse failed: {}", e.what());
  }
  ParsedPrediction out;
  out.abstained = true;
  out.warnings.push_back("unparseable response; abstaining");
  return out;
}

ParsedPrediction parse_prediction_with_repair(Gateway& gateway, const ChatRequest& original, std::string_view response,
                                              const LabelResolver& resolve) {
  try {
    if (auto parsed = try_parse_prediction(response, resolve)) return *parsed;
  } catch (const std::exception& e) {
    spdlog::warn("prediction parse failed: {}", e.what());
  }
  ParsedPrediction out;
  out.warnings.push_back("unparseable response; re-asking once");
  ChatRequest retry = original;
  retry.instruction = original.instruction + "\n\n" + std::string(kRepairInstruction);
  retry.payload = original.payload + render_section("PREVIOUS REPLY", response);
  try {
    const std::string second = gateway.chat(retry);
    if (auto parsed = try_parse_prediction(second, resolve)) {
      parsed->repaired = true;
      parsed->warnings.insert(parsed->warnings.begin(), out.warnings.begin(), out.warnings.end());
      return *parsed;
    }
    out.warnings.push_back("repair reply also unparseable; abstaining");
  } catch (const Error& e) {
    out.warnings.push_back(std::string("repair re-ask failed: ") + e.what());
  }
  out.abstained = true;
  return out;
}

}  // namespace vulnroute
