#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "vulnroute/corpus.hpp"
#include "vulnroute/evolution.hpp"
#include "vulnroute/metrics.hpp"
#include "vulnroute/pipeline.hpp"

namespace vulnroute {

// Exit codes shared by every command.
inline constexpr int kExitOk = 0;
inline constexpr int kExitInvalid = 2;
inline constexpr int kExitProvider = 3;

// Run configuration document. Relative paths resolve against the directory
// holding the config file.
//
// {
//   "paths": {"taxonomy", "dataset", "kb", "prompts", "output", "providers"},
//   "seed": 7, "parallelism": 1,
//   "split": {"train": 0.8, "val": 0.1, "test": 0.1},
//   "pipeline": {"k": 3, "r": 9, "routing_failure": "benign" | "error", "record_timing": false},
//   "evolution": {"population", "iterations", "elite_ratio", "top_k", "eval_subsample",
//                 "clean_ratio", "hard_ratio"},
//   "structuring": {"backend": "rules" | "llm"},
//   "fewshot": {"tail_boundary": 500, "coverage_threshold": 0.1}
// }
struct RunConfig {
  std::filesystem::path taxonomy;
  std::filesystem::path dataset;
  std::filesystem::path kb;
  std::filesystem::path prompts;
  std::filesystem::path output;
  std::filesystem::path providers;
  std::uint64_t seed = 7;
  std::size_t parallelism = 1;
  SplitFractions split;
  PipelineOptions pipeline;
  EvolutionConfig evolution;
  NegativeRatios ratios;
  std::string structuring = "rules";
  FewShotOptions fewshot;
};

RunConfig run_config_from_json(const Json& doc, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);

// Detection input: {"id", "code"} per line; a "label" field is allowed and
// ignored.
std::vector<CodeSample> load_detection_input(const std::filesystem::path& path);

// Entry point for the `vulnroute` tool. `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace vulnroute
