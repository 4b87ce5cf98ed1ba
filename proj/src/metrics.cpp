#include "stem/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "stem/errors.hpp"

namespace stem {

std::optional<double> auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) {
    throw ShapeError("auc: " + std::to_string(scores.size()) + " scores vs " +
                     std::to_string(labels.size()) + " labels");
  }
  const std::size_t n = scores.size();
  for (double s : scores) {
    if (!std::isfinite(s)) throw NumericError("auc: non-finite score");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Sum of (1-based, tie-averaged) ranks over positives.
  double pos_rank_sum = 0.0;
  double n_pos = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    double pos_in_group = 0.0;
    while (j < n && scores[order[j]] == scores[order[i]]) {
      pos_in_group += labels[order[j]] != 0 ? 1.0 : 0.0;
      ++j;
    }
    const double mid_rank = 0.5 * static_cast<double>(i + 1 + j);
    pos_rank_sum += pos_in_group * mid_rank;
    n_pos += pos_in_group;
    i = j;
  }
  const double n_neg = static_cast<double>(n) - n_pos;
  if (n_pos == 0.0 || n_neg == 0.0) return std::nullopt;
  return (pos_rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg);
}

double logloss(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) throw ShapeError("logloss: length mismatch");
  if (scores.empty()) throw EmptyInputError("logloss: empty input");
  double total = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double p = std::clamp(scores[i], 1e-12, 1.0 - 1e-12);
    total -= labels[i] != 0 ? std::log(p) : std::log(1.0 - p);
  }
  return total / static_cast<double>(scores.size());
}

const TaskMetrics* MetricsReport::find(std::size_t task) const {
  for (const auto& t : tasks) {
    if (t.task == task) return &t;
  }
  return nullptr;
}

MetricsReport evaluate_predictions(const Matrix& predictions, const Dataset& data,
                                   std::span<const std::size_t> tasks) {
  if (predictions.rows() != data.size()) throw ShapeError("evaluate: prediction/data size mismatch");
  MetricsReport report;
  double sum = 0.0;
  std::size_t present = 0;
  std::vector<double> scores(data.size());
  std::vector<std::uint8_t> labels(data.size());
  for (std::size_t t : tasks) {
    for (std::size_t i = 0; i < data.size(); ++i) {
      scores[i] = predictions(i, t);
      labels[i] = data.label(i, t);
    }
    TaskMetrics m;
    m.task = t;
    m.name = data.task_names().at(t);
    m.auc = auc(scores, labels);
    m.logloss = logloss(scores, labels);
    if (m.auc) {
      sum += *m.auc;
      ++present;
    }
    report.tasks.push_back(std::move(m));
  }
  if (present > 0) report.average_auc = sum / static_cast<double>(present);
  return report;
}

double mtl_gain(const MetricsReport& model, std::span<const MetricsReport> single_task_reports) {
  if (!model.average_auc) throw ConfigError("mtl_gain: model report has no average AUC");
  double sum = 0.0;
  for (const auto& tm : model.tasks) {
    const TaskMetrics* match = nullptr;
    for (const auto& rep : single_task_reports) {
      if (const TaskMetrics* m = rep.find(tm.task)) {
        if (match != nullptr) {
          throw ConfigError("mtl_gain: task " + std::to_string(tm.task) + " covered twice");
        }
        match = m;
      }
    }
    if (match == nullptr || !match->auc) {
      throw ConfigError("mtl_gain: no single-task AUC for task " + std::to_string(tm.task));
    }
    sum += *match->auc;
  }
  for (const auto& rep : single_task_reports) {
    for (const auto& m : rep.tasks) {
      if (model.find(m.task) == nullptr) {
        throw ConfigError("mtl_gain: single-task report covers task " + std::to_string(m.task) +
                          " absent from the model report");
      }
    }
  }
  return *model.average_auc - sum / static_cast<double>(model.tasks.size());
}

std::vector<int> equal_freq_buckets(std::span<const double> scores, std::size_t n_buckets) {
  if (n_buckets < 2) throw ConfigError("equal_freq_buckets: need at least 2 buckets");
  const std::size_t n = scores.size();
  if (n < n_buckets) {
    throw ConfigError("equal_freq_buckets: " + std::to_string(n) + " samples for " +
                      std::to_string(n_buckets) + " buckets");
  }
  for (double s : scores) {
    if (!std::isfinite(s)) throw NumericError("equal_freq_buckets: non-finite score");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::vector<int> bucket(n);
  for (std::size_t rank = 0; rank < n; ++rank) {
    bucket[order[rank]] = static_cast<int>(rank * n_buckets / n);
  }
  return bucket;
}

std::string to_string(Subset s) {
  switch (s) {
    case Subset::kBOverwhelming: return "B_Overwhelming";
    case Subset::kComparable: return "Comparable";
    case Subset::kAOverwhelming: return "A_Overwhelming";
  }
  return "?";
}

std::size_t BucketSplit::count(Subset s) const {
  return static_cast<std::size_t>(std::count(subset.begin(), subset.end(), s));
}

std::vector<std::size_t> BucketSplit::indices(Subset s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < subset.size(); ++i) {
    if (subset[i] == s) out.push_back(i);
  }
  return out;
}

Subset classify_delta(int delta, int lo, int hi) {
  if (delta <= lo) return Subset::kBOverwhelming;
  if (delta <= hi) return Subset::kComparable;
  return Subset::kAOverwhelming;
}

BucketSplit subset_split(std::span<const double> scores_a, std::span<const double> scores_b,
                         int lo, int hi, std::size_t n_buckets) {
  if (scores_a.size() != scores_b.size()) {
    throw ShapeError("subset_split: " + std::to_string(scores_a.size()) + " vs " +
                     std::to_string(scores_b.size()) + " scores");
  }
  if (lo >= hi) throw ConfigError("subset_split: lo must be < hi");
  BucketSplit s;
  s.lo = lo;
  s.hi = hi;
  s.bucket_a = equal_freq_buckets(scores_a, n_buckets);
  s.bucket_b = equal_freq_buckets(scores_b, n_buckets);
  s.delta.resize(scores_a.size());
  s.subset.resize(scores_a.size());
  for (std::size_t i = 0; i < scores_a.size(); ++i) {
    s.delta[i] = s.bucket_a[i] - s.bucket_b[i];
    s.subset[i] = classify_delta(s.delta[i], lo, hi);
  }
  return s;
}

std::vector<SubsetAuc> evaluate_subsets(std::span<const double> focus_scores,
                                        std::span<const std::uint8_t> focus_labels,
                                        const BucketSplit& split) {
  if (focus_scores.size() != split.size() || focus_labels.size() != split.size()) {
    throw ShapeError("evaluate_subsets: split computed on a different sample set");
  }
  std::vector<SubsetAuc> out;
  for (Subset s : {Subset::kBOverwhelming, Subset::kComparable, Subset::kAOverwhelming}) {
    std::vector<double> sc;
    std::vector<std::uint8_t> lb;
    for (std::size_t i : split.indices(s)) {
      sc.push_back(focus_scores[i]);
      lb.push_back(focus_labels[i]);
    }
    out.push_back(SubsetAuc{s, sc.size(), sc.empty() ? std::nullopt : auc(sc, lb)});
  }
  return out;
}

}  // namespace stem
