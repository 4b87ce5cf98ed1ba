#include "stem/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "stem/errors.hpp"

namespace stem {
namespace {

std::vector<double> distances(const PairSet& pairs, const Matrix& table) {
  std::vector<double> out(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    out[i] = pair_distance(table, pairs.pairs[i].first, pairs.pairs[i].second);
  }
  return out;
}

// rank[i] = position of element i in the stable ascending order.
std::vector<std::size_t> ranks(const std::vector<double>& values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<std::size_t> rank(values.size());
  for (std::size_t r = 0; r < order.size(); ++r) rank[order[r]] = r;
  return rank;
}

}  // namespace

double pair_distance(const Matrix& table, std::uint32_t user_row, std::uint32_t item_row) {
  if (user_row >= table.rows() || item_row >= table.rows()) {
    throw BoundsError("pair_distance: rows (" + std::to_string(user_row) + ", " +
                      std::to_string(item_row) + ") outside table of " +
                      std::to_string(table.rows()) + " rows");
  }
  double s = 0.0;
  const auto u = table.row(user_row);
  const auto v = table.row(item_row);
  for (std::size_t k = 0; k < u.size(); ++k) s += (u[k] - v[k]) * (u[k] - v[k]);
  return std::sqrt(s);
}

PairSet candidate_pairs(const Dataset& data, std::size_t user_field, std::size_t item_field) {
  if (user_field >= data.num_fields() || item_field >= data.num_fields()) {
    throw ConfigError("candidate_pairs: user/item field out of range");
  }
  const auto offsets = data.schema().offsets();
  PairSet out;
  out.pairs.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    out.pairs.emplace_back(offsets[user_field] + data.feature(i, user_field),
                           offsets[item_field] + data.feature(i, item_field));
  }
  std::sort(out.pairs.begin(), out.pairs.end());
  out.pairs.erase(std::unique(out.pairs.begin(), out.pairs.end()), out.pairs.end());
  out.provenance = "distinct (user,item) pairs of " + std::to_string(data.size()) + " samples";
  return out;
}

ContradictorySelection select_contradictory(const PairSet& candidates, const Matrix& table_a,
                                            const Matrix& table_b, double top_frac,
                                            double bottom_frac) {
  if (!(top_frac > 0.0 && top_frac < 1.0) || !(bottom_frac > 0.0 && bottom_frac < 1.0)) {
    throw ConfigError("select_contradictory: fractions must lie in (0, 1)");
  }
  if (candidates.pairs.empty()) throw EmptyInputError("select_contradictory: no candidate pairs");
  const std::size_t n = candidates.size();
  const auto rank_a = ranks(distances(candidates, table_a));
  const auto rank_b = ranks(distances(candidates, table_b));
  const auto top_count = static_cast<std::size_t>(std::floor(top_frac * static_cast<double>(n)));
  const auto bottom_count =
      static_cast<std::size_t>(std::floor(bottom_frac * static_cast<double>(n)));
  ContradictorySelection sel;
  sel.num_candidates = n;
  for (std::size_t i = 0; i < n; ++i) {
    if (rank_a[i] >= n - top_count && rank_b[i] < bottom_count) {
      sel.selected.pairs.push_back(candidates.pairs[i]);
    }
  }
  std::ostringstream prov;
  prov << "top " << top_frac << " under A, bottom " << bottom_frac << " under B, of "
       << candidates.provenance;
  sel.selected.provenance = prov.str();
  sel.fraction = static_cast<double>(sel.selected.size()) / static_cast<double>(n);
  return sel;
}

std::vector<HistogramRow> distance_histogram(const PairSet& selected, const PairSet& candidates,
                                             const Matrix& table, std::size_t n_bins) {
  if (n_bins < 1) throw ConfigError("distance_histogram: n_bins must be >= 1");
  if (candidates.pairs.empty()) throw EmptyInputError("distance_histogram: no candidate pairs");
  const auto all = distances(candidates, table);
  const auto [mn_it, mx_it] = std::minmax_element(all.begin(), all.end());
  const double lo = *mn_it;
  const double hi = *mx_it;
  const double width = (hi - lo) / static_cast<double>(n_bins);
  std::vector<HistogramRow> rows(n_bins);
  for (std::size_t b = 0; b < n_bins; ++b) {
    rows[b].bin_lo = lo + width * static_cast<double>(b);
    rows[b].bin_hi = b + 1 == n_bins ? hi : lo + width * static_cast<double>(b + 1);
  }
  auto bin_of = [&](double d) -> std::size_t {
    if (width <= 0.0) return 0;
    const double pos = std::floor((d - lo) / width);
    if (pos < 0.0) return 0;
    return std::min(n_bins - 1, static_cast<std::size_t>(pos));
  };
  for (double d : all) ++rows[bin_of(d)].count_all;
  for (double d : distances(selected, table)) ++rows[bin_of(d)].count_s;
  return rows;
}

std::string histogram_csv(const std::string& table_name, const std::vector<HistogramRow>& rows) {
  std::ostringstream out;
  out.precision(10);
  out << "table_name,bin_lo,bin_hi,count_S,count_all\n";
  for (const auto& r : rows) {
    out << table_name << ',' << r.bin_lo << ',' << r.bin_hi << ',' << r.count_s << ','
        << r.count_all << '\n';
  }
  return out.str();
}

double mean_distance(const PairSet& pairs, const Matrix& table) {
  if (pairs.pairs.empty()) throw EmptyInputError("mean_distance: empty pair set");
  const auto d = distances(pairs, table);
  return std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size());
}

}  // namespace stem
