#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "vulnroute/util/json_io.hpp"

namespace vulnroute {

inline constexpr std::string_view kDefaultBenignLabel = "BENIGN";

struct CweType {
  std::string id;
  std::string name;
};

struct Category {
  std::string id;
  std::string name;
  std::vector<std::string> types;    // CweType ids, in config order
  std::vector<std::string> aliases;  // extra names an agent may answer with
};

// Two-level label space: M categories with pairwise disjoint type sets, plus
// a benign sentinel that belongs to no category. Immutable once built.
class Taxonomy {
 public:
  // Validates disjointness, non-empty categories and unique ids.
  Taxonomy(std::vector<Category> categories, std::vector<CweType> types,
           std::string benign_label = std::string(kDefaultBenignLabel));

  const std::vector<Category>& categories() const { return categories_; }
  const std::vector<CweType>& types() const { return types_; }
  const std::string& benign_label() const { return benign_label_; }

  std::size_t category_count() const { return categories_.size(); }
  std::size_t type_count() const { return types_.size(); }

  bool is_benign(std::string_view label) const { return label == benign_label_; }
  bool has_type(std::string_view type_id) const;
  bool has_category(std::string_view category_id) const;

  // Owning category id; none for the benign label or unknown ids.
  std::optional<std::string> category_of(std::string_view type_id) const;

  const Category& category(std::string_view category_id) const;
  const CweType* find_type(std::string_view type_id) const;

  // Maps an agent-supplied category reference (id, name or alias, case
  // insensitive) to the canonical category id.
  std::optional<std::string> resolve_category(std::string_view reference) const;
  // Case-insensitive type id lookup.
  std::optional<std::string> resolve_type(std::string_view reference) const;

  // Projects a label to category level. Benign stays benign; unknown labels
  // are returned unchanged.
  std::string project_to_category(std::string_view label) const;

 private:
  std::vector<Category> categories_;
  std::vector<CweType> types_;
  std::string benign_label_;
  std::map<std::string, std::size_t, std::less<>> category_index_;
  std::map<std::string, std::string, std::less<>> type_to_category_;
  std::map<std::string, std::size_t, std::less<>> type_index_;
  std::map<std::string, std::string, std::less<>> category_refs_;
  std::map<std::string, std::string, std::less<>> type_refs_;
};

// Accepts either a bare array of categories or {"benign_label", "categories"}.
// Each category is {id, name, types: [string | {id, name}], aliases?}.
Taxonomy taxonomy_from_json(const Json& doc);
Taxonomy load_taxonomy(const std::filesystem::path& path);
Json taxonomy_to_json(const Taxonomy& taxonomy);

std::string lowercase(std::string_view s);
std::string trim(std::string_view s);

}  // namespace vulnroute
