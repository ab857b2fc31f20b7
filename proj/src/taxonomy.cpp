#include "vulnroute/taxonomy.hpp"

#include <algorithm>
#include <cctype>
#include <set>

#include "vulnroute/error.hpp"

namespace vulnroute {

std::string lowercase(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

Taxonomy::Taxonomy(std::vector<Category> categories, std::vector<CweType> types,
                   std::string benign_label)
    : categories_(std::move(categories)), types_(std::move(types)), benign_label_(std::move(benign_label)) {
  if (benign_label_.empty()) throw Error(ErrorKind::InvalidArgument, "benign label must be nonempty");
  if (categories_.empty()) throw Error(ErrorKind::EmptyCategory, "taxonomy has no categories");

  std::map<std::string, const CweType*, std::less<>> declared;
  for (const auto& t : types_) {
    if (t.id.empty()) throw Error(ErrorKind::InvalidArgument, "type id must be nonempty");
    if (!declared.emplace(t.id, &t).second) throw Error(ErrorKind::DuplicateType, t.id);
  }

  for (std::size_t i = 0; i < categories_.size(); ++i) {
    const Category& c = categories_[i];
    if (c.id.empty()) throw Error(ErrorKind::InvalidArgument, "category id must be nonempty");
    if (!category_index_.emplace(c.id, i).second) throw Error(ErrorKind::DuplicateCategoryId, c.id);
    if (c.types.empty()) throw Error(ErrorKind::EmptyCategory, c.id);
    for (const auto& t : c.types) {
      if (t == benign_label_) {
        throw Error(ErrorKind::InvalidArgument, "benign label '" + t + "' listed as a type in " + c.id);
      }
      if (!type_to_category_.emplace(t, c.id).second) {
        throw Error(ErrorKind::DuplicateType, t + " appears in more than one category");
      }
    }
  }

  // Types referenced by categories but not declared separately get their id
  // as name; declared types not in any category are rejected.
  for (const auto& [type_id, cat] : type_to_category_) {
    if (!declared.count(type_id)) types_.push_back(CweType{type_id, type_id});
  }
  for (const auto& t : types_) {
    if (!type_to_category_.count(t.id)) {
      throw Error(ErrorKind::InvalidArgument, "type " + t.id + " belongs to no category");
    }
  }
  // Order the type universe by category then config order.
  std::vector<CweType> ordered;
  ordered.reserve(types_.size());
  for (const auto& c : categories_) {
    for (const auto& id : c.types) {
      auto it = std::find_if(types_.begin(), types_.end(), [&](const CweType& t) { return t.id == id; });
      ordered.push_back(*it);
    }
  }
  types_ = std::move(ordered);
  for (std::size_t i = 0; i < types_.size(); ++i) {
    type_index_.emplace(types_[i].id, i);
    type_refs_.emplace(lowercase(types_[i].id), types_[i].id);
  }

  for (const auto& c : categories_) {
    category_refs_.emplace(lowercase(c.id), c.id);
  }
  // Names and aliases never shadow another category's id.
  for (const auto& c : categories_) {
    if (!c.name.empty()) category_refs_.emplace(lowercase(c.name), c.id);
    for (const auto& a : c.aliases) category_refs_.emplace(lowercase(a), c.id);
  }
}

bool Taxonomy::has_type(std::string_view type_id) const { return type_index_.count(type_id) > 0; }

bool Taxonomy::has_category(std::string_view category_id) const {
  return category_index_.count(category_id) > 0;
}

std::optional<std::string> Taxonomy::category_of(std::string_view type_id) const {
  auto it = type_to_category_.find(type_id);
  if (it == type_to_category_.end()) return std::nullopt;
  return it->second;
}

const Category& Taxonomy::category(std::string_view category_id) const {
  auto it = category_index_.find(category_id);
  if (it == category_index_.end()) throw Error(ErrorKind::UnknownCategory, std::string(category_id));
  return categories_[it->second];
}

const CweType* Taxonomy::find_type(std::string_view type_id) const {
  auto it = type_index_.find(type_id);
  return it == type_index_.end() ? nullptr : &types_[it->second];
}

std::optional<std::string> Taxonomy::resolve_category(std::string_view reference) const {
  auto it = category_refs_.find(lowercase(trim(reference)));
  if (it == category_refs_.end()) return std::nullopt;
  return it->second;
}

std::optional<std::string> Taxonomy::resolve_type(std::string_view reference) const {
  auto it = type_refs_.find(lowercase(trim(reference)));
  if (it == type_refs_.end()) return std::nullopt;
  return it->second;
}

std::string Taxonomy::project_to_category(std::string_view label) const {
  if (is_benign(label)) return benign_label_;
  if (auto c = category_of(label)) return *c;
  return std::string(label);
}

Taxonomy taxonomy_from_json(const Json& doc) {
  const Json* cats = nullptr;
  std::string benign(kDefaultBenignLabel);
  if (doc.is_array()) {
    cats = &doc;
  } else if (doc.is_object() && doc.contains("categories") && doc["categories"].is_array()) {
    cats = &doc["categories"];
    if (doc.contains("benign_label")) benign = doc["benign_label"].get<std::string>();
  } else {
    throw Error(ErrorKind::MalformedRecord, "taxonomy document must be a list of categories");
  }

  std::vector<Category> categories;
  std::vector<CweType> types;
  for (const auto& c : *cats) {
    if (!c.is_object() || !c.contains("id") || !c["id"].is_string()) {
      throw Error(ErrorKind::MalformedRecord, "category entry needs a string id");
    }
    Category cat;
    cat.id = c["id"].get<std::string>();
    cat.name = c.value("name", cat.id);
    if (c.contains("aliases")) cat.aliases = c["aliases"].get<std::vector<std::string>>();
    if (c.contains("types")) {
      for (const auto& t : c["types"]) {
        if (t.is_string()) {
          cat.types.push_back(t.get<std::string>());
        } else if (t.is_object() && t.contains("id")) {
          CweType ty{t["id"].get<std::string>(), t.value("name", t["id"].get<std::string>())};
          cat.types.push_back(ty.id);
          types.push_back(std::move(ty));
        } else {
          throw Error(ErrorKind::MalformedRecord, "bad type entry in category " + cat.id);
        }
      }
    }
    categories.push_back(std::move(cat));
  }
  return Taxonomy(std::move(categories), std::move(types), benign);
}

Taxonomy load_taxonomy(const std::filesystem::path& path) { return taxonomy_from_json(read_json_file(path)); }

Json taxonomy_to_json(const Taxonomy& taxonomy) {
  Json cats = Json::array();
  for (const auto& c : taxonomy.categories()) {
    Json types = Json::array();
    for (const auto& id : c.types) {
      const CweType* t = taxonomy.find_type(id);
      types.push_back(Json{{"id", id}, {"name", t ? t->name : id}});
    }
    Json entry{{"id", c.id}, {"name", c.name}, {"types", types}};
    if (!c.aliases.empty()) entry["aliases"] = c.aliases;
    cats.push_back(std::move(entry));
  }
  return Json{{"benign_label", taxonomy.benign_label()}, {"categories", cats}};
}

}  // namespace vulnroute
