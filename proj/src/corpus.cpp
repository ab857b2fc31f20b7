#include "vulnroute/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "vulnroute/error.hpp"
#include "vulnroute/util/hash.hpp"
#include "vulnroute/util/rng.hpp"

namespace vulnroute {

LabeledDataset::LabeledDataset(std::shared_ptr<const Taxonomy> taxonomy, std::vector<CodeSample> samples)
    : taxonomy_(std::move(taxonomy)), samples_(std::move(samples)) {
  if (!taxonomy_) throw Error(ErrorKind::InvalidArgument, "dataset requires a taxonomy");
  for (std::size_t i = 0; i < samples_.size(); ++i) {
    const CodeSample& s = samples_[i];
    if (s.id.empty()) throw Error(ErrorKind::MalformedRecord, "sample with empty id");
    if (s.code.empty()) throw Error(ErrorKind::MalformedRecord, "sample " + s.id + " has empty code");
    if (!taxonomy_->is_benign(s.label) && !taxonomy_->has_type(s.label)) {
      throw Error(ErrorKind::UnknownLabel, s.id + " has label " + s.label);
    }
    if (!index_.emplace(s.id, i).second) throw Error(ErrorKind::DuplicateId, s.id);
  }
}

const CodeSample* LabeledDataset::find(std::string_view id) const {
  auto it = index_.find(id);
  return it == index_.end() ? nullptr : &samples_[it->second];
}

LabeledDataset parse_dataset(std::string_view text, std::shared_ptr<const Taxonomy> taxonomy) {
  std::vector<CodeSample> samples;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    const std::string trimmed = trim(line);
    if (trimmed.empty() || trimmed.front() == '#') {
      if (end == text.size()) break;
      continue;
    }
    Json rec;
    try {
      rec = Json::parse(trimmed);
    } catch (const Json::parse_error&) {
      throw Error(ErrorKind::MalformedRecord, "line " + std::to_string(line_no));
    }
    auto str_field = [&](const char* key) -> std::string {
      if (!rec.is_object() || !rec.contains(key) || !rec[key].is_string()) {
        throw Error(ErrorKind::MalformedRecord,
                    "line " + std::to_string(line_no) + ": missing string field '" + key + "'");
      }
      return rec[key].get<std::string>();
    };
    CodeSample s{str_field("id"), str_field("code"), str_field("label")};
    if (!taxonomy->is_benign(s.label) && !taxonomy->has_type(s.label)) {
      throw Error(ErrorKind::UnknownLabel, "record " + s.id + " has label " + s.label);
    }
    samples.push_back(std::move(s));
    if (end == text.size()) break;
  }
  return LabeledDataset(std::move(taxonomy), std::move(samples));
}

LabeledDataset load_dataset(const std::filesystem::path& path, std::shared_ptr<const Taxonomy> taxonomy) {
  return parse_dataset(read_text_file(path), std::move(taxonomy));
}

std::string dataset_to_jsonl(const LabeledDataset& dataset) {
  std::string out;
  for (const auto& s : dataset.samples()) {
    out += Json{{"id", s.id}, {"code", s.code}, {"label", s.label}}.dump();
    out += '\n';
  }
  return out;
}

namespace {

// Largest-remainder apportionment of `total` across strata with the given
// real-valued quotas. Ties go to the lower stratum index.
std::vector<std::size_t> apportion(const std::vector<double>& quotas, std::size_t total,
                                   const std::vector<std::size_t>& caps) {
  std::vector<std::size_t> out(quotas.size());
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < quotas.size(); ++i) {
    out[i] = std::min(static_cast<std::size_t>(std::floor(quotas[i])), caps[i]);
    assigned += out[i];
  }
  std::vector<std::size_t> order(quotas.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return (quotas[a] - std::floor(quotas[a])) > (quotas[b] - std::floor(quotas[b]));
  });
  while (assigned < total) {
    bool progressed = false;
    for (std::size_t i : order) {
      if (assigned >= total) break;
      if (out[i] < caps[i]) {
        ++out[i];
        ++assigned;
        progressed = true;
      }
    }
    if (!progressed) break;
  }
  return out;
}

}  // namespace

DatasetSplits split(const LabeledDataset& dataset, const SplitFractions& f, std::uint64_t seed) {
  if (dataset.empty()) throw Error(ErrorKind::EmptyDataset, "cannot split an empty dataset");
  if (!(f.train > 0.0 && f.val > 0.0 && f.test > 0.0) || std::abs(f.train + f.val + f.test - 1.0) > 1e-9) {
    throw Error(ErrorKind::InvalidArgument, "split fractions must be positive and sum to 1");
  }

  std::map<std::string, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < dataset.size(); ++i) strata[dataset.samples()[i].label].push_back(i);

  std::vector<std::vector<std::size_t>> eligible;
  std::vector<std::size_t> train_idx, val_idx, test_idx;
  Rng rng(seed);
  std::size_t eligible_total = 0;
  for (auto& [label, idx] : strata) {
    if (idx.size() < 3) {
      train_idx.insert(train_idx.end(), idx.begin(), idx.end());
    } else {
      rng.shuffle(idx);
      eligible_total += idx.size();
      eligible.push_back(idx);
    }
  }

  const auto n_val = static_cast<std::size_t>(std::llround(f.val * static_cast<double>(eligible_total)));
  const auto n_test = static_cast<std::size_t>(std::llround(f.test * static_cast<double>(eligible_total)));

  std::vector<double> qv, qt;
  std::vector<std::size_t> caps;
  for (const auto& idx : eligible) {
    qv.push_back(f.val * static_cast<double>(idx.size()));
    caps.push_back(idx.size());
  }
  const auto val_counts = apportion(qv, n_val, caps);
  for (std::size_t s = 0; s < eligible.size(); ++s) {
    qt.push_back(f.test * static_cast<double>(eligible[s].size()));
    caps[s] = eligible[s].size() - val_counts[s];
  }
  const auto test_counts = apportion(qt, n_test, caps);

  for (std::size_t s = 0; s < eligible.size(); ++s) {
    const auto& idx = eligible[s];
    std::size_t j = 0;
    for (; j < val_counts[s]; ++j) val_idx.push_back(idx[j]);
    for (std::size_t t = 0; t < test_counts[s]; ++t, ++j) test_idx.push_back(idx[j]);
    for (; j < idx.size(); ++j) train_idx.push_back(idx[j]);
  }

  auto materialize = [&](std::vector<std::size_t>& idx) {
    std::sort(idx.begin(), idx.end());
    std::vector<CodeSample> out;
    out.reserve(idx.size());
    for (std::size_t i : idx) out.push_back(dataset.samples()[i]);
    return LabeledDataset(dataset.taxonomy_ptr(), std::move(out));
  };
  return DatasetSplits{materialize(train_idx), materialize(val_idx), materialize(test_idx)};
}

CategoryDataset build_category_dataset(const LabeledDataset& dataset, std::string_view category_id,
                                       const NegativeRatios& ratios, std::uint64_t seed) {
  const Taxonomy& tax = dataset.taxonomy();
  if (!tax.has_category(category_id)) throw Error(ErrorKind::UnknownCategory, std::string(category_id));
  if (ratios.clean < 0.0 || ratios.hard < 0.0) throw Error(ErrorKind::InvalidArgument, "negative ratio");

  CategoryDataset out;
  out.category_id = std::string(category_id);
  std::vector<std::size_t> clean_idx, hard_idx;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const CodeSample& s = dataset.samples()[i];
    if (tax.is_benign(s.label)) {
      clean_idx.push_back(i);
    } else if (tax.category_of(s.label) == category_id) {
      out.positives.push_back(s);
    } else {
      hard_idx.push_back(i);
    }
  }
  if (out.positives.empty()) throw Error(ErrorKind::NoPositives, out.category_id);

  Rng rng(derive_seed(seed, out.category_id));
  auto draw = [&](std::vector<std::size_t> pool, double ratio) {
    const auto want = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(out.positives.size())));
    rng.shuffle(pool);
    pool.resize(std::min(want, pool.size()));
    std::sort(pool.begin(), pool.end());
    std::vector<CodeSample> picked;
    for (std::size_t i : pool) picked.push_back(dataset.samples()[i]);
    return picked;
  };
  out.clean = draw(clean_idx, ratios.clean);
  out.hard_negatives = draw(hard_idx, ratios.hard);
  return out;
}

std::array<Tier, 6> tier_report(const LabeledDataset& dataset) {
  constexpr std::size_t kOpen = std::numeric_limits<std::size_t>::max();
  std::array<Tier, 6> tiers{{
      {"Head", 5000, kOpen},
      {"Medium", 1000, 5000},
      {"Low", 100, 1000},
      {"Rare", 50, 100},
      {"Very Rare", 10, 50},
      {"Ext. Rare", 0, 10},
  }};
  std::map<std::string, std::size_t> counts;
  for (const auto& s : dataset.samples()) {
    if (!dataset.taxonomy().is_benign(s.label)) ++counts[s.label];
  }
  for (const auto& [label, n] : counts) {
    for (auto& t : tiers) {
      if (n >= t.min_count && n < t.max_count) {
        ++t.cwe_count;
        t.sample_count += n;
        break;
      }
    }
  }
  return tiers;
}

}  // namespace vulnroute
