#pragma once

#include <functional>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "vulnroute/gateway.hpp"

namespace vulnroute {

struct PredictionEntry {
  std::string label;
  double confidence = 1.0;  // clamped to [0, 1]
  std::string rationale;
};

struct ParsedPrediction {
  std::vector<PredictionEntry> entries;
  std::vector<std::string> warnings;
  bool abstained = false;  // no well-formed output even after repair
  bool repaired = false;   // a repair re-ask produced the result
};

// Maps a raw label to its canonical form, or nullopt when not allowed.
using LabelResolver = std::function<std::optional<std::string>(std::string_view)>;

LabelResolver exact_labels(std::set<std::string> allowed);

// Candidate JSON fragments in order: ```json fenced bodies, then balanced
// {...} / [...] spans.
std::vector<std::string> extract_json_candidates(std::string_view text);

// Parses the first well-formed fragment matching the agent output schema:
//   {"predictions": [{"category"|"cwe"|"type"|"label": s, "confidence": x, "reason": s}]}
// or a bare array of such items / strings, a single such object, or a flat
// {"<label>": confidence} map. Nullopt when nothing matches.
std::optional<ParsedPrediction> try_parse_prediction(std::string_view response, const LabelResolver& resolve);

// Never throws; unparseable input yields an abstaining prediction.
ParsedPrediction parse_prediction(std::string_view response, const LabelResolver& resolve);

inline constexpr std::string_view kRepairInstruction =
    "Your previous reply could not be parsed. Reply with valid structured output only: a single JSON object "
    "of the form {\"predictions\": [{\"label\": \"...\", \"confidence\": 0.0, \"reason\": \"...\"}]} and no "
    "other text.";

// parse_prediction plus one repair re-ask through the gateway on failure.
ParsedPrediction parse_prediction_with_repair(Gateway& gateway, const ChatRequest& original, std::string_view response,
                                              const LabelResolver& resolve);

}  // namespace vulnroute
