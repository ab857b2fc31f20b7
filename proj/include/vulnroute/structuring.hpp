#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "vulnroute/gateway.hpp"

namespace vulnroute {

// Structured textual form of a code snippet consumed by embedding and
// retrieval.
struct StructuredRepresentation {
  std::string source_id;
  std::string text;
};

struct ControlEvent {
  std::size_t line;     // 1-based source line
  std::string keyword;  // if | for | while | switch | return | goto
};

class Structurer {
 public:
  virtual ~Structurer() = default;
  virtual std::string id() const = 0;
  // Throws Error{EmptyInput} for blank code.
  virtual StructuredRepresentation structure(std::string_view source_id, std::string_view code) const = 0;
};

// Deterministic keyword/brace heuristics over lines; no parser. Output:
//   # signature / L<n>: <line>     lines that open a function at brace depth 0
//   # events    / L<n> <keyword>   control-flow keywords in source order
//   # body      / normalized code  comments stripped, whitespace collapsed
class RuleStructurer final : public Structurer {
 public:
  std::string id() const override { return "rules-v1"; }
  StructuredRepresentation structure(std::string_view source_id, std::string_view code) const override;

  // Exposed for tests.
  static std::vector<ControlEvent> control_events(std::string_view code);
  static std::vector<std::pair<std::size_t, std::string>> signatures(std::string_view code);
  // Replaces comment and string/char literal contents with spaces, keeping
  // line structure intact.
  static std::string strip_comments_and_literals(std::string_view code);
};

// One execution-model call per snippet with a fixed instruction; falls back
// to the rule-based form if the gateway fails or returns nothing.
class LlmStructurer final : public Structurer {
 public:
  explicit LlmStructurer(Gateway& gateway) : gateway_(gateway) {}
  std::string id() const override { return "llm-v1"; }
  StructuredRepresentation structure(std::string_view source_id, std::string_view code) const override;

  static constexpr std::string_view kInstruction =
      "Rewrite the function below as a structured outline for vulnerability analysis. List the function "
      "signature, then each control-flow step in execution order (conditions, loops, switches, returns, "
      "jumps) with its source line, and attach a one-line natural-language comment to each step describing "
      "what it checks or changes. Output plain text only.";

 private:
  Gateway& gateway_;
  RuleStructurer fallback_;
};

}  // namespace vulnroute
