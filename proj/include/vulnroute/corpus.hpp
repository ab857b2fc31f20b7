#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "vulnroute/taxonomy.hpp"

namespace vulnroute {

struct CodeSample {
  std::string id;
  std::string code;
  std::string label;  // CweType id or the taxonomy's benign label
};

// Labeled samples sharing one taxonomy. Ids are unique, codes nonempty and
// every label is either benign or a known type.
class LabeledDataset {
 public:
  LabeledDataset(std::shared_ptr<const Taxonomy> taxonomy, std::vector<CodeSample> samples);

  const Taxonomy& taxonomy() const { return *taxonomy_; }
  std::shared_ptr<const Taxonomy> taxonomy_ptr() const { return taxonomy_; }
  const std::vector<CodeSample>& samples() const { return samples_; }
  std::size_t size() const { return samples_.size(); }
  bool empty() const { return samples_.empty(); }

  const CodeSample* find(std::string_view id) const;

 private:
  std::shared_ptr<const Taxonomy> taxonomy_;
  std::vector<CodeSample> samples_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

// Line-delimited {"id","code","label"} records. Blank lines and lines
// starting with '#' are skipped.
LabeledDataset load_dataset(const std::filesystem::path& path, std::shared_ptr<const Taxonomy> taxonomy);
LabeledDataset parse_dataset(std::string_view text, std::shared_ptr<const Taxonomy> taxonomy);
std::string dataset_to_jsonl(const LabeledDataset& dataset);

struct SplitFractions {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

struct DatasetSplits {
  LabeledDataset train;
  LabeledDataset val;
  LabeledDataset test;
};

// Seeded stratified split. Labels with fewer than three samples go entirely
// to train. Each split keeps the input's sample order.
DatasetSplits split(const LabeledDataset& dataset, const SplitFractions& fractions, std::uint64_t seed);

struct NegativeRatios {
  double clean = 1.0;
  double hard = 1.0;
};

struct CategoryDataset {
  std::string category_id;
  std::vector<CodeSample> positives;
  std::vector<CodeSample> clean;
  std::vector<CodeSample> hard_negatives;

  std::size_t size() const { return positives.size() + clean.size() + hard_negatives.size(); }
};

// Positives are every in-category sample; clean and hard negatives are drawn
// without replacement up to ratio x |positives|. Throws NoPositives.
CategoryDataset build_category_dataset(const LabeledDataset& dataset, std::string_view category_id,
                                       const NegativeRatios& ratios, std::uint64_t seed);

struct Tier {
  std::string name;
  std::size_t min_count;  // inclusive
  std::size_t max_count;  // exclusive; SIZE_MAX for the open top tier
  std::size_t cwe_count = 0;
  std::size_t sample_count = 0;
};

// Head (>=5000), Medium (1000-4999), Low (100-999), Rare (50-99),
// Very Rare (10-49), Ext. Rare (<10). Only labels present in the data count.
std::array<Tier, 6> tier_report(const LabeledDataset& dataset);

}  // namespace vulnroute
