#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vulnroute/taxonomy.hpp"
#include "vulnroute/util/json_io.hpp"

namespace vulnroute {

// An evolvable agent instruction.
struct Prompt {
  std::string id;
  std::string text;
  std::optional<std::string> parent;
  std::size_t generation = 0;
  std::optional<double> fitness;
};

Json to_json(const Prompt& p);
Prompt prompt_from_json(const Json& j);

// Agent target names: "router", "detector:<category id>", "flat".
inline std::string router_target() { return "router"; }
inline std::string detector_target(std::string_view category_id) { return "detector:" + std::string(category_id); }
inline std::string flat_target() { return "flat"; }

// Hand-written starting templates. Seeds differ in emphasis so the initial
// population is not degenerate.
std::vector<std::string> router_seed_prompts(const Taxonomy& taxonomy);
std::vector<std::string> detector_seed_prompts(const Taxonomy& taxonomy, const Category& category);
std::string flat_prompt(const Taxonomy& taxonomy);

// Prompts used for detection: one router, one per category, and the flat
// single-agent prompt for the no-agents mode.
struct PromptSet {
  std::optional<Prompt> router;
  std::map<std::string, Prompt> detectors;
  std::optional<Prompt> flat;
};

// First seed template for every agent, with ids "manual/<target>".
PromptSet builtin_manual_prompts(const Taxonomy& taxonomy);

// Prompt store layout (directory):
//   router.json                 {"target", "selected": Prompt, "record": {...}}
//   detector.<category>.json    same shape, one per evolved category
//   detector.<category>.done    completion marker
//   stage2_skipped.json         categories without positives
//   flat.json                   optional
// Plain Prompt documents ({"id", "text"}) are accepted in place of the
// {"selected": ...} wrapper, which lets a manual prompt directory share it.
std::filesystem::path router_prompt_path(const std::filesystem::path& store);
std::filesystem::path detector_prompt_path(const std::filesystem::path& store, std::string_view category_id);
std::filesystem::path detector_marker_path(const std::filesystem::path& store, std::string_view category_id);
std::filesystem::path flat_prompt_path(const std::filesystem::path& store);

PromptSet load_prompt_set(const std::filesystem::path& store, const Taxonomy& taxonomy);

}  // namespace vulnroute
