#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "stem/data.hpp"
#include "stem/matrix.hpp"

namespace stem {

// (user row, item row) pairs as global embedding-table rows.
struct PairSet {
  std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs;
  std::string provenance;

  std::size_t size() const { return pairs.size(); }
};

// Euclidean distance between two rows of one table.
double pair_distance(const Matrix& table, std::uint32_t user_row, std::uint32_t item_row);

// Distinct (user, item) combinations present in `data`, sorted by row.
PairSet candidate_pairs(const Dataset& data, std::size_t user_field = 0,
                        std::size_t item_field = 1);

struct ContradictorySelection {
  PairSet selected;
  std::size_t num_candidates = 0;
  // |S| / |candidates|
  double fraction = 0.0;
};

// Pairs ranked in the top `top_frac` of distances under table_a and in the
// bottom `bottom_frac` under table_b. Ranks are ascending with a stable
// tie-break on candidate order; the top band holds floor(top_frac * n) pairs.
ContradictorySelection select_contradictory(const PairSet& candidates, const Matrix& table_a,
                                            const Matrix& table_b, double top_frac = 0.40,
                                            double bottom_frac = 0.40);

struct HistogramRow {
  double bin_lo = 0.0;
  double bin_hi = 0.0;
  std::size_t count_s = 0;
  std::size_t count_all = 0;
};

// Equal-width bins spanning the candidate distances under `table`; the
// selected set is counted on the same edges.
std::vector<HistogramRow> distance_histogram(const PairSet& selected, const PairSet& candidates,
                                             const Matrix& table, std::size_t n_bins);

// CSV: table_name,bin_lo,bin_hi,count_S,count_all
std::string histogram_csv(const std::string& table_name, const std::vector<HistogramRow>& rows);

double mean_distance(const PairSet& pairs, const Matrix& table);

}  // namespace stem
