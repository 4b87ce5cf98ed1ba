#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "stem/data.hpp"
#include "stem/matrix.hpp"

namespace stem {

// Mann-Whitney AUC with half credit for ties, by sort-and-rank in
// O(n log n). Absent when labels hold a single class.
std::optional<double> auc(std::span<const double> scores, std::span<const std::uint8_t> labels);

// Mean binary cross-entropy with scores clamped to [1e-12, 1 - 1e-12].
double logloss(std::span<const double> scores, std::span<const std::uint8_t> labels);

struct TaskMetrics {
  std::size_t task = 0;
  std::string name;
  std::optional<double> auc;
  double logloss = 0.0;
};

struct MetricsReport {
  std::vector<TaskMetrics> tasks;
  // Mean of the present per-task AUCs; absent if none is present.
  std::optional<double> average_auc;

  const TaskMetrics* find(std::size_t task) const;
};

// Metrics for the listed task columns of an n x T prediction matrix.
MetricsReport evaluate_predictions(const Matrix& predictions, const Dataset& data,
                                   std::span<const std::size_t> tasks);

// Model average AUC minus the average of the single-task AUCs, where each
// single-task report contributes the tasks it covers. Every task of the model
// report must be covered exactly once.
double mtl_gain(const MetricsReport& model, std::span<const MetricsReport> single_task_reports);

// Equal-frequency bucketing: stable ascending rank, bucket of rank r is
// floor(r * n_buckets / n), so bucket sizes differ by at most one.
std::vector<int> equal_freq_buckets(std::span<const double> scores, std::size_t n_buckets = 10);

enum class Subset { kBOverwhelming, kComparable, kAOverwhelming };
std::string to_string(Subset s);

struct BucketSplit {
  std::vector<int> bucket_a;
  std::vector<int> bucket_b;
  std::vector<int> delta;  // bucket_a - bucket_b
  std::vector<Subset> subset;
  int lo = -4;
  int hi = 6;

  std::size_t size() const { return subset.size(); }
  std::size_t count(Subset s) const;
  std::vector<std::size_t> indices(Subset s) const;
};

// delta <= lo: B overwhelming; lo < delta <= hi: comparable; delta > hi: A
// overwhelming.
Subset classify_delta(int delta, int lo, int hi);

BucketSplit subset_split(std::span<const double> scores_a, std::span<const double> scores_b,
                         int lo = -4, int hi = 6, std::size_t n_buckets = 10);

struct SubsetAuc {
  Subset subset;
  std::size_t count = 0;
  std::optional<double> auc;
};

// Focus-task AUC within each subset, in the order B, comparable, A.
std::vector<SubsetAuc> evaluate_subsets(std::span<const double> focus_scores,
                                        std::span<const std::uint8_t> focus_labels,
                                        const BucketSplit& split);

}  // namespace stem
