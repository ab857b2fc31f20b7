#include "vulnroute/prompts.hpp"

#include <sstream>

#include "vulnroute/error.hpp"

namespace vulnroute {

Json to_json(const Prompt& p) {
  Json j{{"id", p.id}, {"text", p.text}, {"generation", p.generation}};
  j["parent"] = p.parent ? Json(*p.parent) : Json(nullptr);
  j["fitness"] = p.fitness ? Json(*p.fitness) : Json(nullptr);
  return j;
}

Prompt prompt_from_json(const Json& j) {
  if (!j.is_object() || !j.contains("text") || !j["text"].is_string()) {
    throw Error(ErrorKind::MalformedRecord, "prompt document needs a string 'text'");
  }
  Prompt p;
  p.id = j.value("id", "");
  p.text = j["text"].get<std::string>();
  if (trim(p.text).empty()) throw Error(ErrorKind::MalformedRecord, "prompt text is empty");
  p.generation = j.value("generation", std::size_t{0});
  if (j.contains("parent") && j["parent"].is_string()) p.parent = j["parent"].get<std::string>();
  if (j.contains("fitness") && j["fitness"].is_number()) p.fitness = j["fitness"].get<double>();
  return p;
}

namespace {

std::string category_list(const Taxonomy& taxonomy) {
  std::ostringstream os;
  for (const auto& c : taxonomy.categories()) {
    os << "- " << c.id;
    if (c.name != c.id) os << " (" << c.name << ")";
    os << '\n';
  }
  return os.str();
}

std::string type_list(const Taxonomy& taxonomy, const std::vector<std::string>& ids) {
  std::ostringstream os;
  for (const auto& id : ids) {
    const CweType* t = taxonomy.find_type(id);
    os << "- " << id;
    if (t && t->name != id) os << ": " << t->name;
    os << '\n';
  }
  return os.str();
}

constexpr const char* kRouterSchema =
    "Output JSON only:\n{\"predictions\": [{\"category\": \"<category id>\", \"confidence\": 0.0, "
    "\"reason\": \"<one sentence>\"}]}";

constexpr const char* kDetectorSchema =
    "Output JSON only:\n{\"predictions\": [{\"cwe\": \"<type id>\", \"confidence\": 0.0, "
    "\"reason\": \"<one sentence>\"}]}";

}  // namespace

std::vector<std::string> router_seed_prompts(const Taxonomy& taxonomy) {
  const std::string cats = category_list(taxonomy);
  return {
      "Role: security reviewer triaging C/C++ functions.\n"
      "Task: decide which vulnerability categories the target function most likely belongs to. The evidence "
      "section holds similar labeled functions retrieved from a reference corpus; use them as patterns.\n"
      "Categories:\n" + cats +
          "Rank candidate categories from most to least likely and leave out categories with no supporting "
          "signal. Return an empty list if the function looks safe.\n" + kRouterSchema,

      "Role: vulnerability triage agent.\n"
      "Compare the target code against each evidence example and note which labeled patterns it shares. "
      "Prefer categories whose evidence examples match the target's data flow, not just its vocabulary.\n"
      "Categories:\n" + cats + "List the matching categories, most likely first.\n" + kRouterSchema,

      "You route code to specialist security auditors. Name the weakness categories worth a detailed audit "
      "for the target function, ordered by likelihood. Missing the true category is worse than listing an "
      "extra one.\nCategories:\n" + cats + kRouterSchema,

      "Role: static-analysis assistant.\n"
      "1. Read the target function and identify risky operations (memory copies, pointer arithmetic, "
      "external input, arithmetic on sizes, locking, privilege checks).\n"
      "2. Check which evidence examples show the same operations and what they are labeled.\n"
      "3. Rank the categories that apply.\nCategories:\n" + cats + kRouterSchema,
  };
}

std::vector<std::string> detector_seed_prompts(const Taxonomy& taxonomy, const Category& category) {
  const std::string types = type_list(taxonomy, category.types);
  const std::string header = "Category: " + category.name + "\nCandidate types:\n" + types;
  return {
      "Role: specialist auditor for " + category.name + " weaknesses.\n" + header +
          "The evidence holds positive examples from this category, clean functions, and hard negatives from "
          "other categories. Report only candidate types whose pattern clearly appears in the target. Return "
          "an empty list if none applies.\n" + kDetectorSchema,

      "You confirm or reject suspected " + category.name + " weaknesses.\n" + header +
          "For each candidate type, check whether the target shares the defining flaw of a positive evidence "
          "example and differs from the clean and hard-negative examples. Report confirmed types only.\n" +
          kDetectorSchema,

      "Role: precise vulnerability classifier.\n" + header +
          "Name the exact type(s) present in the target. Do not report types from other categories and do not "
          "speculate about code that is not shown.\n" + kDetectorSchema,

      "Role: code auditor.\n" + header +
          "Step 1: locate the operations relevant to this category. Step 2: compare them with the evidence "
          "examples. Step 3: output the matching candidate types, or an empty list.\n" + kDetectorSchema,
  };
}

std::string flat_prompt(const Taxonomy& taxonomy) {
  std::vector<std::string> all;
  for (const auto& t : taxonomy.types()) all.push_back(t.id);
  return "Role: security reviewer.\nTask: identify the vulnerability types present in the target function. The "
         "evidence holds similar labeled functions from a reference corpus.\nCandidate types:\n" +
         type_list(taxonomy, all) + "Return an empty list if the function looks safe.\n" + kDetectorSchema;
}

PromptSet builtin_manual_prompts(const Taxonomy& taxonomy) {
  PromptSet set;
  set.router = Prompt{"manual/" + router_target(), router_seed_prompts(taxonomy).front(), std::nullopt, 0, std::nullopt};
  for (const auto& c : taxonomy.categories()) {
    set.detectors.emplace(c.id, Prompt{"manual/" + detector_target(c.id), detector_seed_prompts(taxonomy, c).front(),
                                       std::nullopt, 0, std::nullopt});
  }
  set.flat = Prompt{"manual/" + flat_target(), flat_prompt(taxonomy), std::nullopt, 0, std::nullopt};
  return set;
}

std::filesystem::path router_prompt_path(const std::filesystem::path& store) { return store / "router.json"; }

std::filesystem::path detector_prompt_path(const std::filesystem::path& store, std::string_view category_id) {
  return store / ("detector." + sanitize_filename(category_id) + ".json");
}

std::filesystem::path detector_marker_path(const std::filesystem::path& store, std::string_view category_id) {
  return store / ("detector." + sanitize_filename(category_id) + ".done");
}

std::filesystem::path flat_prompt_path(const std::filesystem::path& store) { return store / "flat.json"; }

namespace {

Prompt read_prompt_doc(const std::filesystem::path& path, const std::string& fallback_id) {
  const Json doc = read_json_file(path);
  Prompt p = prompt_from_json(doc.contains("selected") ? doc["selected"] : doc);
  if (p.id.empty()) p.id = fallback_id;
  return p;
}

}  // namespace

PromptSet load_prompt_set(const std::filesystem::path& store, const Taxonomy& taxonomy) {
  if (!std::filesystem::is_directory(store)) throw Error(ErrorKind::Io, "prompt store not found: " + store.string());
  PromptSet set;
  if (std::filesystem::exists(router_prompt_path(store))) {
    set.router = read_prompt_doc(router_prompt_path(store), "store/" + router_target());
  }
  for (const auto& c : taxonomy.categories()) {
    const auto path = detector_prompt_path(store, c.id);
    if (std::filesystem::exists(path)) set.detectors.emplace(c.id, read_prompt_doc(path, "store/" + detector_target(c.id)));
  }
  if (std::filesystem::exists(flat_prompt_path(store))) {
    set.flat = read_prompt_doc(flat_prompt_path(store), "store/" + flat_target());
  }
  return set;
}

}  // namespace vulnroute
