#include "stem/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "stem/errors.hpp"
#include "stem/rng.hpp"

namespace stem {
namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << text;
}

std::vector<std::string_view> split_line(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      cells.push_back(line.substr(start));
      break;
    }
    cells.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return cells;
}

bool parse_u32(std::string_view cell, std::uint32_t& out) {
  if (cell.empty()) return false;
  const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), out);
  return ec == std::errc() && ptr == cell.data() + cell.size();
}

// Splits on LF, tolerating a trailing CR and a final newline.
std::vector<std::string_view> lines_of(const std::string& text) {
  std::vector<std::string_view> lines;
  std::string_view rest(text);
  while (!rest.empty()) {
    const std::size_t nl = rest.find('\n');
    std::string_view line = rest.substr(0, nl);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    if (nl == std::string_view::npos) break;
    rest.remove_prefix(nl + 1);
  }
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  return lines;
}

}  // namespace

std::size_t FieldSchema::total_features() const {
  return std::accumulate(vocab_sizes.begin(), vocab_sizes.end(), std::size_t{0});
}

std::vector<std::uint32_t> FieldSchema::offsets() const {
  std::vector<std::uint32_t> out(vocab_sizes.size());
  std::uint32_t acc = 0;
  for (std::size_t f = 0; f < vocab_sizes.size(); ++f) {
    out[f] = acc;
    acc += vocab_sizes[f];
  }
  return out;
}

Dataset::Dataset(FieldSchema schema, std::vector<std::string> task_names)
    : schema_(std::move(schema)), task_names_(std::move(task_names)) {
  for (std::uint32_t v : schema_.vocab_sizes) {
    if (v < 1) throw ConfigError("vocabulary sizes must be >= 1");
  }
}

void Dataset::set_task_names(std::vector<std::string> names) {
  if (names.size() != task_names_.size()) {
    throw ShapeError("dataset has " + std::to_string(task_names_.size()) + " tasks, got " +
                     std::to_string(names.size()) + " names");
  }
  task_names_ = std::move(names);
}

void Dataset::add(const Sample& s) { add(s.features, s.labels); }

void Dataset::add(std::span<const std::uint32_t> features, std::span<const std::uint8_t> labels) {
  if (features.size() != num_fields() || labels.size() != num_tasks()) {
    throw ShapeError("sample has " + std::to_string(features.size()) + " features and " +
                     std::to_string(labels.size()) + " labels, expected " +
                     std::to_string(num_fields()) + " and " + std::to_string(num_tasks()));
  }
  for (std::size_t f = 0; f < features.size(); ++f) {
    if (features[f] >= schema_.vocab_sizes[f]) {
      throw BoundsError("feature id " + std::to_string(features[f]) + " >= vocabulary size " +
                        std::to_string(schema_.vocab_sizes[f]) + " of field " +
                        std::to_string(f));
    }
  }
  for (std::uint8_t y : labels) {
    if (y > 1) throw DataError("label " + std::to_string(y) + " not in {0,1}");
  }
  features_.insert(features_.end(), features.begin(), features.end());
  labels_.insert(labels_.end(), labels.begin(), labels.end());
}

Sample Dataset::sample(std::size_t i) const {
  const auto f = features(i);
  const auto y = labels(i);
  return Sample{{f.begin(), f.end()}, {y.begin(), y.end()}};
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out(schema_, task_names_);
  out.features_.reserve(indices.size() * num_fields());
  out.labels_.reserve(indices.size() * num_tasks());
  for (std::size_t i : indices) {
    const auto f = features(i);
    const auto y = labels(i);
    out.features_.insert(out.features_.end(), f.begin(), f.end());
    out.labels_.insert(out.labels_.end(), y.begin(), y.end());
  }
  return out;
}

Dataset Dataset::with_schema(FieldSchema schema) const {
  if (schema.num_fields() != num_fields()) throw ShapeError("schema field count mismatch");
  Dataset out(std::move(schema), task_names_);
  for (std::size_t i = 0; i < size(); ++i) out.add(features(i), labels(i));
  return out;
}

double Dataset::positive_ratio(std::size_t task) const {
  if (empty()) return 0.0;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < size(); ++i) pos += label(i, task);
  return static_cast<double>(pos) / static_cast<double>(size());
}

Dataset parse_csv(const std::string& text, const std::optional<FieldSchema>& schema_hint,
                  const std::string& source) {
  const auto lines = lines_of(text);
  if (lines.empty()) throw ParseError(source + ": missing header row");
  const auto header = split_line(lines[0]);

  // Column positions of f{i} and y{i}, located by name.
  std::vector<int> fcol, ycol;
  for (std::size_t c = 0; c < header.size(); ++c) {
    const std::string_view h = header[c];
    std::uint32_t idx = 0;
    if (h.size() < 2 || (h[0] != 'f' && h[0] != 'y') || !parse_u32(h.substr(1), idx)) {
      throw ParseError(source + ": unexpected column '" + std::string(h) + "'");
    }
    auto& cols = h[0] == 'f' ? fcol : ycol;
    if (cols.size() <= idx) cols.resize(idx + 1, -1);
    if (cols[idx] != -1) throw ParseError(source + ": duplicate column '" + std::string(h) + "'");
    cols[idx] = static_cast<int>(c);
  }
  for (std::size_t i = 0; i < fcol.size(); ++i) {
    if (fcol[i] < 0) throw ParseError(source + ": missing column 'f" + std::to_string(i) + "'");
  }
  for (std::size_t i = 0; i < ycol.size(); ++i) {
    if (ycol[i] < 0) throw ParseError(source + ": missing column 'y" + std::to_string(i) + "'");
  }
  if (fcol.empty()) throw ParseError(source + ": no feature columns");
  if (ycol.empty()) throw ParseError(source + ": no label columns");
  if (schema_hint && schema_hint->num_fields() != fcol.size()) {
    throw ParseError(source + ": schema hint has " + std::to_string(schema_hint->num_fields()) +
                     " fields, file has " + std::to_string(fcol.size()));
  }

  const std::size_t m = fcol.size();
  const std::size_t t = ycol.size();
  std::vector<std::uint32_t> feats;
  std::vector<std::uint8_t> labels;
  feats.reserve((lines.size() - 1) * m);
  labels.reserve((lines.size() - 1) * t);
  std::vector<std::uint32_t> max_id(m, 0);
  for (std::size_t r = 1; r < lines.size(); ++r) {
    const auto cells = split_line(lines[r]);
    const std::string where = source + ": row " + std::to_string(r);
    if (cells.size() != header.size()) {
      throw ParseError(where + ": expected " + std::to_string(header.size()) + " cells, got " +
                       std::to_string(cells.size()));
    }
    for (std::size_t f = 0; f < m; ++f) {
      std::uint32_t v = 0;
      if (!parse_u32(cells[fcol[f]], v)) {
        throw ParseError(where + ": non-integer feature '" + std::string(cells[fcol[f]]) + "'");
      }
      if (schema_hint && v >= schema_hint->vocab_sizes[f]) {
        throw ParseError(where + ": feature id " + std::to_string(v) + " exceeds vocabulary of f" +
                         std::to_string(f));
      }
      max_id[f] = std::max(max_id[f], v);
      feats.push_back(v);
    }
    for (std::size_t k = 0; k < t; ++k) {
      std::uint32_t v = 0;
      if (!parse_u32(cells[ycol[k]], v) || v > 1) {
        throw ParseError(where + ": label '" + std::string(cells[ycol[k]]) + "' not in {0,1}");
      }
      labels.push_back(static_cast<std::uint8_t>(v));
    }
  }

  FieldSchema schema;
  if (schema_hint) {
    schema = *schema_hint;
  } else {
    for (std::uint32_t v : max_id) schema.vocab_sizes.push_back(v + 1);
  }
  std::vector<std::string> names;
  for (std::size_t k = 0; k < t; ++k) names.push_back("y" + std::to_string(k));
  Dataset out(std::move(schema), std::move(names));
  const std::size_t n = feats.size() / m;
  for (std::size_t i = 0; i < n; ++i) {
    out.add(std::span(feats).subspan(i * m, m), std::span(labels).subspan(i * t, t));
  }
  return out;
}

Dataset load_csv(const std::filesystem::path& path, const std::optional<FieldSchema>& schema_hint) {
  return parse_csv(read_file(path), schema_hint, path.string());
}

std::string to_csv(const Dataset& data) {
  std::string out;
  out.reserve(data.size() * (data.num_fields() + data.num_tasks()) * 4 + 64);
  for (std::size_t f = 0; f < data.num_fields(); ++f) {
    if (f > 0) out += ',';
    out += 'f' + std::to_string(f);
  }
  for (std::size_t t = 0; t < data.num_tasks(); ++t) out += ",y" + std::to_string(t);
  out += '\n';
  char buf[16];
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto feats = data.features(i);
    for (std::size_t f = 0; f < feats.size(); ++f) {
      if (f > 0) out += ',';
      const auto res = std::to_chars(buf, buf + sizeof buf, feats[f]);
      out.append(buf, res.ptr);
    }
    for (std::uint8_t y : data.labels(i)) {
      out += ',';
      out += static_cast<char>('0' + y);
    }
    out += '\n';
  }
  return out;
}

void write_csv(const Dataset& data, const std::filesystem::path& path) {
  write_file(path, to_csv(data));
}

RemapTable::RemapTable(std::vector<std::vector<std::uint32_t>> old_to_new)
    : old_to_new_(std::move(old_to_new)) {}

std::uint32_t RemapTable::map(std::size_t field, std::uint32_t old_id) const {
  if (field >= old_to_new_.size()) throw BoundsError("remap: field " + std::to_string(field));
  const auto& m = old_to_new_[field];
  return old_id < m.size() ? m[old_id] : 0;
}

FieldSchema RemapTable::schema() const {
  FieldSchema s;
  for (const auto& m : old_to_new_) {
    const std::uint32_t mx = m.empty() ? 0 : *std::max_element(m.begin(), m.end());
    s.vocab_sizes.push_back(mx + 1);
  }
  return s;
}

Dataset RemapTable::apply(const Dataset& data) const {
  if (data.num_fields() != old_to_new_.size()) {
    throw ShapeError("remap table has " + std::to_string(old_to_new_.size()) +
                     " fields, dataset has " + std::to_string(data.num_fields()));
  }
  Dataset out(schema(), data.task_names());
  std::vector<std::uint32_t> feats(data.num_fields());
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (std::size_t f = 0; f < feats.size(); ++f) feats[f] = map(f, data.feature(i, f));
    out.add(feats, data.labels(i));
  }
  return out;
}

std::string RemapTable::to_csv() const {
  std::ostringstream out;
  out << "field,old_id,new_id\n";
  for (std::size_t f = 0; f < old_to_new_.size(); ++f) {
    for (std::size_t old = 0; old < old_to_new_[f].size(); ++old) {
      out << f << ',' << old << ',' << old_to_new_[f][old] << '\n';
    }
  }
  return out.str();
}

RemapTable RemapTable::from_csv(const std::string& text) {
  const auto lines = lines_of(text);
  if (lines.empty() || lines[0] != "field,old_id,new_id") {
    throw ParseError("remap table: expected header 'field,old_id,new_id'");
  }
  std::vector<std::vector<std::uint32_t>> table;
  for (std::size_t r = 1; r < lines.size(); ++r) {
    const auto cells = split_line(lines[r]);
    std::uint32_t f = 0, old = 0, now = 0;
    if (cells.size() != 3 || !parse_u32(cells[0], f) || !parse_u32(cells[1], old) ||
        !parse_u32(cells[2], now)) {
      throw ParseError("remap table: malformed row " + std::to_string(r));
    }
    if (table.size() <= f) table.resize(f + 1);
    if (table[f].size() <= old) table[f].resize(old + 1, 0);
    table[f][old] = now;
  }
  return RemapTable(std::move(table));
}

void RemapTable::save(const std::filesystem::path& path) const { write_file(path, to_csv()); }

RemapTable RemapTable::load(const std::filesystem::path& path) {
  return from_csv(read_file(path));
}

FilterResult frequency_filter(const Dataset& train, std::uint32_t min_count) {
  if (train.empty()) throw EmptyInputError("frequency_filter: empty dataset");
  if (min_count < 1) throw ConfigError("frequency_filter: min_count must be >= 1");
  const std::size_t m = train.num_fields();
  std::vector<std::vector<std::uint32_t>> counts(m);
  for (std::size_t f = 0; f < m; ++f) counts[f].assign(train.schema().vocab_sizes[f], 0);
  for (std::size_t i = 0; i < train.size(); ++i) {
    for (std::size_t f = 0; f < m; ++f) ++counts[f][train.feature(i, f)];
  }
  std::vector<std::vector<std::uint32_t>> table(m);
  for (std::size_t f = 0; f < m; ++f) {
    table[f].assign(counts[f].size(), 0);
    std::uint32_t next = 1;
    for (std::size_t old = 1; old < counts[f].size(); ++old) {
      if (counts[f][old] >= min_count) table[f][old] = next++;
    }
  }
  RemapTable remap(std::move(table));
  Dataset filtered = remap.apply(train);
  return FilterResult{std::move(remap), std::move(filtered)};
}

DataSplits split(const Dataset& data, const SplitRatios& r, std::uint64_t seed) {
  if (r.train < 0 || r.val < 0 || r.test < 0) throw ConfigError("split ratios must be >= 0");
  if (std::abs(r.train + r.val + r.test - 1.0) > 1e-9) {
    throw ConfigError("split ratios must sum to 1");
  }
  const std::size_t n = data.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order.begin(), order.end());
  // The epsilon absorbs representation error such as 10 * 0.7 = 7.000000000000001
  // and 100 * 0.29 = 28.999999999999996.
  const auto part = [n](double ratio) {
    return std::min(n, static_cast<std::size_t>(std::floor(static_cast<double>(n) * ratio + 1e-9)));
  };
  const std::size_t n_train = part(r.train);
  const std::size_t n_val = std::min(n - n_train, part(r.val));
  const std::span<const std::size_t> all(order);
  return DataSplits{data.subset(all.subspan(0, n_train)),
                    data.subset(all.subspan(n_train, n_val)),
                    data.subset(all.subspan(n_train + n_val))};
}

std::vector<std::vector<std::size_t>> batch_iter(std::size_t n, std::size_t batch_size,
                                                 bool shuffle, std::uint64_t seed) {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  if (shuffle) {
    Rng rng(seed);
    rng.shuffle(order.begin(), order.end());
  }
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

}  // namespace stem
