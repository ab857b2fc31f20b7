#include "vulnroute/structuring.hpp"

#include <array>
#include <cctype>
#include <sstream>

#include <spdlog/spdlog.h>

#include "vulnroute/error.hpp"
#include "vulnroute/taxonomy.hpp"

namespace vulnroute {

namespace {

constexpr std::array<std::string_view, 6> kEventKeywords = {"if", "for", "while", "switch", "return", "goto"};
constexpr std::array<std::string_view, 8> kNonSignatureStarts = {"if", "for", "while", "switch",
                                                                 "return", "else", "do", "case"};

bool is_ident(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    if (end == text.size()) break;
    pos = end + 1;
  }
  return lines;
}

std::string collapse_ws(std::string_view s) {
  std::string out;
  bool pending = false;
  for (char c : s) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      pending = !out.empty();
    } else {
      if (pending) out.push_back(' ');
      pending = false;
      out.push_back(c);
    }
  }
  return out;
}

std::string first_word(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
  std::size_t j = i;
  while (j < s.size() && is_ident(s[j])) ++j;
  return std::string(s.substr(i, j - i));
}

}  // namespace

namespace {

// Blanks comments (and literal contents when `literals` is set) with spaces,
// preserving newlines so line numbers stay valid.
std::string blank_regions(std::string_view code, bool literals) {
  std::string out(code);
  enum class State { code, line_comment, block_comment, literal } st = State::code;
  char quote = 0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const char c = out[i];
    const char next = i + 1 < out.size() ? out[i + 1] : '\0';
    switch (st) {
      case State::code:
        if (c == '/' && next == '/') {
          st = State::line_comment;
          out[i] = out[i + 1] = ' ';
          ++i;
        } else if (c == '/' && next == '*') {
          st = State::block_comment;
          out[i] = out[i + 1] = ' ';
          ++i;
        } else if (c == '"' || c == '\'') {
          st = State::literal;
          quote = c;
        }
        break;
      case State::line_comment:
        if (c == '\n') {
          st = State::code;
        } else {
          out[i] = ' ';
        }
        break;
      case State::block_comment:
        if (c == '*' && next == '/') {
          out[i] = out[i + 1] = ' ';
          ++i;
          st = State::code;
        } else if (c != '\n') {
          out[i] = ' ';
        }
        break;
      case State::literal:
        if (c == '\\' && next != '\n' && next != '\0') {
          if (literals) out[i] = out[i + 1] = ' ';
          ++i;
        } else if (c == quote || c == '\n') {
          st = State::code;  // closing quote, or an unterminated literal
        } else if (literals) {
          out[i] = ' ';
        }
        break;
    }
  }
  return out;
}

}  // namespace

std::string RuleStructurer::strip_comments_and_literals(std::string_view code) {
  return blank_regions(code, true);
}

std::vector<ControlEvent> RuleStructurer::control_events(std::string_view code) {
  const std::string clean = strip_comments_and_literals(code);
  std::vector<ControlEvent> events;
  std::size_t line = 1;
  for (std::size_t i = 0; i < clean.size();) {
    const char c = clean[i];
    if (c == '\n') {
      ++line;
      ++i;
      continue;
    }
    if (!is_ident(c)) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < clean.size() && is_ident(clean[j])) ++j;
    const std::string_view word(clean.data() + i, j - i);
    for (auto kw : kEventKeywords) {
      if (word == kw) {
        events.push_back(ControlEvent{line, std::string(kw)});
        break;
      }
    }
    i = j;
  }
  return events;
}

std::vector<std::pair<std::size_t, std::string>> RuleStructurer::signatures(std::string_view code) {
  const std::string clean = strip_comments_and_literals(code);
  const auto clean_lines = split_lines(clean);
  const auto raw_lines = split_lines(code);
  std::vector<std::pair<std::size_t, std::string>> out;
  int depth = 0;
  for (std::size_t n = 0; n < clean_lines.size(); ++n) {
    const std::string_view line = clean_lines[n];
    if (depth == 0 && line.find('(') != std::string_view::npos) {
      const std::string head = first_word(line);
      bool control = false;
      for (auto kw : kNonSignatureStarts) control = control || head == kw;
      const bool has_semicolon_before_brace = [&] {
        const auto semi = line.find(';');
        const auto brace = line.find('{');
        return semi != std::string_view::npos && (brace == std::string_view::npos || semi < brace);
      }();
      bool opens_body = line.find('{') != std::string_view::npos;
      if (!opens_body && n + 1 < clean_lines.size()) {
        const std::string next = trim(clean_lines[n + 1]);
        opens_body = !next.empty() && next.front() == '{';
      }
      if (!control && !head.empty() && !has_semicolon_before_brace && opens_body) {
        std::string sig = collapse_ws(raw_lines[n]);
        const auto brace = sig.find('{');
        if (brace != std::string::npos) sig = trim(sig.substr(0, brace));
        out.emplace_back(n + 1, sig);
      }
    }
    for (char c : line) {
      if (c == '{') ++depth;
      if (c == '}' && depth > 0) --depth;
    }
  }
  return out;
}

StructuredRepresentation RuleStructurer::structure(std::string_view source_id, std::string_view code) const {
  if (trim(code).empty()) throw Error(ErrorKind::EmptyInput, "cannot structure empty code");
  std::ostringstream os;
  os << "# signature\n";
  for (const auto& [line, sig] : signatures(code)) os << 'L' << line << ": " << sig << '\n';
  os << "# events\n";
  for (const auto& ev : control_events(code)) os << 'L' << ev.line << ' ' << ev.keyword << '\n';
  os << "# body\n";
  const std::string no_comments = blank_regions(code, false);
  for (auto line : split_lines(no_comments)) {
    const std::string norm = collapse_ws(line);
    if (!norm.empty()) os << norm << '\n';
  }
  return StructuredRepresentation{std::string(source_id), os.str()};
}

StructuredRepresentation LlmStructurer::structure(std::string_view source_id, std::string_view code) const {
  if (trim(code).empty()) throw Error(ErrorKind::EmptyInput, "cannot structure empty code");
  try {
    ChatRequest req{ModelRole::execution, std::string(kInstruction), render_section("TARGET CODE", code), "structure"};
    std::string text = trim(gateway_.chat(req));
    if (!text.empty()) return StructuredRepresentation{std::string(source_id), text + "\n"};
    spdlog::warn("structuring of {} returned nothing; using rule-based form", source_id);
  } catch (const Error& e) {
    spdlog::warn("structuring of {} failed ({}); using rule-based form", source_id, e.what());
  }
  return fallback_.structure(source_id, code);
}

}  // namespace vulnroute
