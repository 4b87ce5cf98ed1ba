#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace stem {

// Per-field vocabularies. Index 0 of every field is the default feature;
// real features start at 1.
struct FieldSchema {
  std::vector<std::uint32_t> vocab_sizes;

  std::size_t num_fields() const { return vocab_sizes.size(); }
  // N: total rows of an embedding table covering every field.
  std::size_t total_features() const;
  // Global row of field f's first feature.
  std::vector<std::uint32_t> offsets() const;

  friend bool operator==(const FieldSchema&, const FieldSchema&) = default;
};

struct Sample {
  std::vector<std::uint32_t> features;  // one in-field id per field
  std::vector<std::uint8_t> labels;     // one 0/1 label per task
};

// Samples stored column-flat: features n x M, labels n x T.
class Dataset {
 public:
  Dataset() = default;
  Dataset(FieldSchema schema, std::vector<std::string> task_names);

  const FieldSchema& schema() const { return schema_; }
  const std::vector<std::string>& task_names() const { return task_names_; }
  void set_task_names(std::vector<std::string> names);
  std::size_t size() const { return num_fields() == 0 ? 0 : features_.size() / num_fields(); }
  bool empty() const { return size() == 0; }
  std::size_t num_fields() const { return schema_.num_fields(); }
  std::size_t num_tasks() const { return task_names_.size(); }

  // Validates the sample against the schema before appending.
  void add(const Sample& s);
  void add(std::span<const std::uint32_t> features, std::span<const std::uint8_t> labels);

  std::span<const std::uint32_t> features(std::size_t i) const {
    return {features_.data() + i * num_fields(), num_fields()};
  }
  std::span<const std::uint8_t> labels(std::size_t i) const {
    return {labels_.data() + i * num_tasks(), num_tasks()};
  }
  std::uint32_t feature(std::size_t i, std::size_t f) const { return features_[i * num_fields() + f]; }
  std::uint8_t label(std::size_t i, std::size_t t) const { return labels_[i * num_tasks() + t]; }
  Sample sample(std::size_t i) const;

  // Same schema and tasks, samples at the given indices in that order.
  Dataset subset(std::span<const std::size_t> indices) const;
  // Copy under a different schema; every id must fit the new vocabularies.
  Dataset with_schema(FieldSchema schema) const;

  double positive_ratio(std::size_t task) const;

  friend bool operator==(const Dataset&, const Dataset&) = default;

 private:
  FieldSchema schema_;
  std::vector<std::string> task_names_;
  std::vector<std::uint32_t> features_;
  std::vector<std::uint8_t> labels_;
};

// CSV with header f0..f{M-1},y0..y{T-1}. Vocabulary sizes are max id + 1 per
// field unless a schema hint is supplied. Errors name the offending row.
Dataset load_csv(const std::filesystem::path& path,
                 const std::optional<FieldSchema>& schema_hint = std::nullopt);
Dataset parse_csv(const std::string& text, const std::optional<FieldSchema>& schema_hint = std::nullopt,
                  const std::string& source = "<memory>");
void write_csv(const Dataset& data, const std::filesystem::path& path);
std::string to_csv(const Dataset& data);

// Per-field old id -> new id. Ids not listed (including ids never seen in
// training) map to the default id 0.
class RemapTable {
 public:
  RemapTable() = default;
  explicit RemapTable(std::vector<std::vector<std::uint32_t>> old_to_new);

  std::uint32_t map(std::size_t field, std::uint32_t old_id) const;
  FieldSchema schema() const;
  Dataset apply(const Dataset& data) const;

  std::string to_csv() const;
  static RemapTable from_csv(const std::string& text);
  void save(const std::filesystem::path& path) const;
  static RemapTable load(const std::filesystem::path& path);

  friend bool operator==(const RemapTable&, const RemapTable&) = default;

 private:
  // old_to_new_[f][old] = new id; 0 means default.
  std::vector<std::vector<std::uint32_t>> old_to_new_;
};

struct FilterResult {
  RemapTable remap;
  Dataset filtered;
};

// Features seen fewer than min_count times in `train` (counted per field) go
// to the default id; survivors are re-indexed densely from 1 in ascending old
// id order.
FilterResult frequency_filter(const Dataset& train, std::uint32_t min_count);

struct SplitRatios {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

struct DataSplits {
  Dataset train;
  Dataset val;
  Dataset test;
};

// Seeded shuffle, then contiguous slices of floor(n * r_train) and
// floor(n * r_val); the test part takes the remainder.
DataSplits split(const Dataset& data, const SplitRatios& ratios, std::uint64_t seed);

// Index batches covering 0..n-1 exactly once; the last batch may be short.
std::vector<std::vector<std::size_t>> batch_iter(std::size_t n, std::size_t batch_size,
                                                 bool shuffle, std::uint64_t seed);

}  // namespace stem
