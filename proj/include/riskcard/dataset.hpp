#pragma once

// Tabular data: CSV ingestion, stratified splitting, fold plans and
// noise-feature injection.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "riskcard/common.hpp"

namespace riskcard {

enum class ColumnRole { feature, target, event, ignore };

struct ColumnSpec {
  std::string name;
  ColumnRole role = ColumnRole::feature;
  std::size_t index = 0;
};

struct Schema {
  std::vector<ColumnSpec> columns;
  TaskKind task = TaskKind::classification;
};

/// Error raised while reading a CSV. Carries the offending coordinates when known.
class DataError : public Error {
 public:
  DataError(const std::string& what, std::string column = {}, std::optional<std::size_t> row = {})
      : Error(what), column_(std::move(column)), row_(row) {}
  const std::string& column() const { return column_; }
  std::optional<std::size_t> row() const { return row_; }

 private:
  std::string column_;
  std::optional<std::size_t> row_;
};

/// Row-major feature matrix with an explicit missing flag per cell and a typed target.
/// Immutable after construction by convention; every operation returns a new Dataset.
struct Dataset {
  TaskKind task = TaskKind::classification;
  std::vector<std::string> feature_names;
  std::string target_name = "target";
  std::string event_name;  // survival only
  std::vector<Cell> cells;
  std::vector<double> target;        // label, value or survival time
  std::vector<std::uint8_t> event;   // survival only

  std::size_t rows() const { return target.size(); }
  std::size_t cols() const { return feature_names.size(); }

  std::span<const Cell> row(std::size_t i) const { return {cells.data() + i * cols(), cols()}; }
  const Cell& at(std::size_t i, std::size_t j) const { return cells[i * cols() + j]; }

  std::vector<Cell> column(std::size_t j) const {
    std::vector<Cell> out(rows());
    for (std::size_t i = 0; i < rows(); ++i) out[i] = at(i, j);
    return out;
  }

  std::optional<std::size_t> feature_index(std::string_view name) const {
    auto it = std::find(feature_names.begin(), feature_names.end(), name);
    if (it == feature_names.end()) return std::nullopt;
    return static_cast<std::size_t>(it - feature_names.begin());
  }

  /// Stratification key per row: the label for classification, the event flag for survival.
  std::vector<int> strata() const {
    std::vector<int> out(rows(), 0);
    if (task == TaskKind::classification)
      for (std::size_t i = 0; i < rows(); ++i) out[i] = target[i] > 0.5 ? 1 : 0;
    else if (task == TaskKind::survival)
      for (std::size_t i = 0; i < rows(); ++i) out[i] = event[i];
    return out;
  }

  Dataset subset(std::span<const std::size_t> idx) const {
    Dataset out;
    out.task = task;
    out.feature_names = feature_names;
    out.target_name = target_name;
    out.event_name = event_name;
    out.cells.reserve(idx.size() * cols());
    out.target.reserve(idx.size());
    for (std::size_t i : idx) {
      auto r = row(i);
      out.cells.insert(out.cells.end(), r.begin(), r.end());
      out.target.push_back(target[i]);
      if (task == TaskKind::survival) out.event.push_back(event[i]);
    }
    return out;
  }

  /// Throws DataError when an invariant is violated.
  void validate() const {
    if (rows() < 2) throw DataError("dataset needs at least 2 rows");
    if (cells.size() != rows() * cols()) throw DataError("cell count does not match rows x columns");
    std::set<std::string> seen;
    for (const auto& n : feature_names)
      if (!seen.insert(n).second) throw DataError("duplicate column name '" + n + "'", n);
    for (std::size_t i = 0; i < cells.size(); ++i)
      if (cells[i] && !std::isfinite(*cells[i]))
        throw DataError("non-finite cell", feature_names[i % cols()], i / cols());
    for (std::size_t i = 0; i < rows(); ++i) {
      if (!std::isfinite(target[i])) throw DataError("non-finite target", target_name, i);
      if (task == TaskKind::classification && target[i] != 0.0 && target[i] != 1.0)
        throw DataError("binary target must be 0 or 1", target_name, i);
      if (task == TaskKind::survival && !(target[i] > 0.0))
        throw DataError("survival time must be strictly positive", target_name, i);
    }
    if (task == TaskKind::survival) {
      if (event.size() != rows()) throw DataError("event column length mismatch", event_name);
      for (std::size_t i = 0; i < rows(); ++i)
        if (event[i] > 1) throw DataError("event indicator must be 0 or 1", event_name, i);
    }
  }
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(field));
      field.clear();
    } else if (c != '\r') {
      field += c;
    }
  }
  out.push_back(std::move(field));
  return out;
}

inline std::string trim(std::string s) {
  auto ws = [](unsigned char c) { return std::isspace(c) != 0; };
  while (!s.empty() && ws(static_cast<unsigned char>(s.back()))) s.pop_back();
  std::size_t b = 0;
  while (b < s.size() && ws(static_cast<unsigned char>(s[b]))) ++b;
  return s.substr(b);
}

}  // namespace detail

/// Reads the header line of a CSV file.
inline std::vector<std::string> read_csv_header(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw DataError("'" + path + "' is empty");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  auto header = detail::split_csv_line(line);
  for (auto& h : header) h = detail::trim(h);
  return header;
}

/// Builds a schema from a header: the named target (and event) columns, the listed
/// ignore columns, and every other column as a feature.
inline Schema schema_from_header(const std::vector<std::string>& header, TaskKind task,
                                 const std::string& target, const std::string& event = {},
                                 const std::vector<std::string>& ignore = {}) {
  Schema s;
  s.task = task;
  bool have_target = false, have_event = false;
  for (std::size_t i = 0; i < header.size(); ++i) {
    ColumnSpec c{header[i], ColumnRole::feature, i};
    if (header[i] == target) {
      c.role = ColumnRole::target;
      have_target = true;
    } else if (!event.empty() && header[i] == event) {
      c.role = ColumnRole::event;
      have_event = true;
    } else if (std::find(ignore.begin(), ignore.end(), header[i]) != ignore.end()) {
      c.role = ColumnRole::ignore;
    }
    s.columns.push_back(std::move(c));
  }
  if (!have_target) throw DataError("target column '" + target + "' not found in header", target);
  if (task == TaskKind::survival && !have_event)
    throw DataError("event column '" + event + "' not found in header", event);
  return s;
}

inline Dataset load_csv(const std::string& path, const Schema& schema,
                        const std::string& missing_token = "") {
  std::size_t n_target = 0, n_event = 0;
  std::set<std::string> names;
  for (const auto& c : schema.columns) {
    if (!names.insert(c.name).second) throw DataError("duplicate schema column '" + c.name + "'", c.name);
    n_target += c.role == ColumnRole::target;
    n_event += c.role == ColumnRole::event;
  }
  if (n_target != 1) throw DataError("schema must contain exactly one target column");
  if ((schema.task == TaskKind::survival) != (n_event == 1) || n_event > 1)
    throw DataError("schema must contain an event column iff the task is survival");

  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  auto header = read_csv_header(path);
  std::string line;
  std::getline(in, line);  // header, already parsed
  for (const auto& c : schema.columns)
    if (c.index >= header.size() || header[c.index] != c.name)
      throw DataError("schema column '" + c.name + "' does not match header at position " +
                          std::to_string(c.index),
                      c.name);

  Dataset d;
  d.task = schema.task;
  std::vector<const ColumnSpec*> features;
  const ColumnSpec* target = nullptr;
  const ColumnSpec* event = nullptr;
  for (const auto& c : schema.columns) {
    if (c.role == ColumnRole::feature) {
      features.push_back(&c);
      d.feature_names.push_back(c.name);
    } else if (c.role == ColumnRole::target) {
      target = &c;
    } else if (c.role == ColumnRole::event) {
      event = &c;
    }
  }
  d.target_name = target->name;
  if (event) d.event_name = event->name;

  auto cell = [&](const std::vector<std::string>& f, const ColumnSpec& c, std::size_t row) -> Cell {
    const std::string v = detail::trim(f[c.index]);
    if (v.empty() || v == missing_token) return std::nullopt;
    auto parsed = parse_double(v);
    if (!parsed || !std::isfinite(*parsed))
      throw DataError("non-numeric value '" + v + "' at row " + std::to_string(row) + ", column '" +
                          c.name + "'",
                      c.name, row);
    return parsed;
  };

  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    auto f = detail::split_csv_line(line);
    if (f.size() != header.size())
      throw DataError("row " + std::to_string(row) + " has " + std::to_string(f.size()) +
                          " fields, expected " + std::to_string(header.size()),
                      {}, row);
    for (const auto* c : features) d.cells.push_back(cell(f, *c, row));
    auto t = cell(f, *target, row);
    if (!t) throw DataError("missing target at row " + std::to_string(row), target->name, row);
    d.target.push_back(*t);
    if (event) {
      auto e = cell(f, *event, row);
      if (!e || (*e != 0.0 && *e != 1.0))
        throw DataError("event indicator must be 0 or 1 at row " + std::to_string(row), event->name, row);
      d.event.push_back(static_cast<std::uint8_t>(*e));
    }
    ++row;
  }
  d.validate();
  return d;
}

/// Reads only the named columns (in the given order) from a CSV; other columns, including
/// any target, are not inspected. Returns one aligned row of cells per data line.
inline std::vector<std::vector<Cell>> read_columns(const std::string& path, const std::vector<std::string>& names,
                                                   const std::string& missing_token = "") {
  const auto header = read_csv_header(path);
  std::vector<std::size_t> idx;
  for (const auto& n : names) {
    auto it = std::find(header.begin(), header.end(), n);
    if (it == header.end()) throw DataError("input is missing column '" + n + "'", n);
    idx.push_back(static_cast<std::size_t>(it - header.begin()));
  }
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  std::vector<std::vector<Cell>> rows;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    auto f = detail::split_csv_line(line);
    if (f.size() != header.size())
      throw DataError("row " + std::to_string(row) + " has " + std::to_string(f.size()) + " fields, expected " +
                          std::to_string(header.size()),
                      {}, row);
    std::vector<Cell> r;
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const std::string v = detail::trim(f[idx[k]]);
      if (v.empty() || v == missing_token) {
        r.emplace_back(std::nullopt);
        continue;
      }
      auto parsed = parse_double(v);
      if (!parsed || !std::isfinite(*parsed))
        throw DataError("non-numeric value '" + v + "' at row " + std::to_string(row) + ", column '" + names[k] + "'",
                        names[k], row);
      r.emplace_back(parsed);
    }
    rows.push_back(std::move(r));
    ++row;
  }
  return rows;
}

/// Writes features, target and (for survival) event; values in shortest round-trip form.
inline void write_csv(const Dataset& d, const std::string& path, const std::string& missing_token = "") {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  for (const auto& n : d.feature_names) out << n << ',';
  out << d.target_name;
  if (d.task == TaskKind::survival) out << ',' << d.event_name;
  out << '\n';
  for (std::size_t i = 0; i < d.rows(); ++i) {
    for (const auto& c : d.row(i)) out << (c ? format_double(*c) : missing_token) << ',';
    out << format_double(d.target[i]);
    if (d.task == TaskKind::survival) out << ',' << int(d.event[i]);
    out << '\n';
  }
}

/// Groups row indices by stratum (a single group for regression).
inline std::vector<std::vector<std::size_t>> stratum_groups(const Dataset& d) {
  std::map<int, std::vector<std::size_t>> g;
  auto s = d.strata();
  for (std::size_t i = 0; i < d.rows(); ++i) g[s[i]].push_back(i);
  std::vector<std::vector<std::size_t>> out;
  for (auto& [k, v] : g) out.push_back(std::move(v));
  return out;
}

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Stratified train/test partition. The test size is ceil(fraction * n); it is spread over
/// the strata by largest remainder so every stratum is within one row of proportional.
inline SplitIndices stratified_split_indices(const Dataset& d, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw Error("test_fraction must be in (0, 1)");
  const std::size_t n = d.rows();
  auto groups = stratum_groups(d);
  if (d.task == TaskKind::classification) {
    if (groups.size() < 2) throw Error("stratified split needs both classes");
    for (const auto& g : groups)
      if (g.size() < 2) throw Error("stratified split needs at least 2 rows per class");
  }
  const auto n_test = static_cast<std::size_t>(std::ceil(test_fraction * static_cast<double>(n) - 1e-9));
  if (n_test == 0 || n_test >= n) throw Error("test_fraction leaves an empty split");

  std::vector<std::size_t> quota(groups.size());
  std::vector<std::pair<double, std::size_t>> rem;
  std::size_t assigned = 0;
  for (std::size_t k = 0; k < groups.size(); ++k) {
    const double exact = static_cast<double>(n_test) * static_cast<double>(groups[k].size()) / static_cast<double>(n);
    quota[k] = static_cast<std::size_t>(std::floor(exact));
    assigned += quota[k];
    rem.emplace_back(-(exact - std::floor(exact)), k);
  }
  std::sort(rem.begin(), rem.end());
  for (std::size_t r = 0; assigned < n_test; ++r, ++assigned) ++quota[rem[r % rem.size()].second];

  Rng rng(seed);
  SplitIndices out;
  for (std::size_t k = 0; k < groups.size(); ++k) {
    auto g = groups[k];
    rng.shuffle(g);
    const std::size_t q = std::min(quota[k], g.size());
    out.test.insert(out.test.end(), g.begin(), g.begin() + static_cast<std::ptrdiff_t>(q));
    out.train.insert(out.train.end(), g.begin() + static_cast<std::ptrdiff_t>(q), g.end());
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

inline std::pair<Dataset, Dataset> stratified_split(const Dataset& d, double test_fraction, std::uint64_t seed) {
  auto idx = stratified_split_indices(d, test_fraction, seed);
  return {d.subset(idx.train), d.subset(idx.test)};
}

struct FoldPlan {
  std::size_t k = 0;
  std::size_t repeats = 0;
  std::uint64_t seed = 0;
  std::vector<std::vector<std::size_t>> assignments;  // [repeat][row] -> fold

  std::size_t rows() const { return assignments.empty() ? 0 : assignments.front().size(); }

  SplitIndices fold(std::size_t repeat, std::size_t f) const {
    SplitIndices out;
    const auto& a = assignments.at(repeat);
    for (std::size_t i = 0; i < a.size(); ++i) (a[i] == f ? out.test : out.train).push_back(i);
    return out;
  }
};

/// Repeated stratified k-fold plan. Within a repeat each stratum is shuffled and dealt
/// round-robin, continuing the deal across strata so fold sizes stay balanced.
inline FoldPlan make_folds(const Dataset& d, std::size_t k, std::size_t repeats, std::uint64_t seed) {
  if (k < 2) throw Error("k must be at least 2");
  if (k > d.rows()) throw Error("k exceeds the number of rows");
  if (repeats < 1) throw Error("repeats must be at least 1");
  auto groups = stratum_groups(d);
  if (d.task == TaskKind::classification)
    for (const auto& g : groups)
      if (g.size() < k) throw Error("each class needs at least k rows for stratified folds");

  FoldPlan plan{k, repeats, seed, {}};
  for (std::size_t r = 0; r < repeats; ++r) {
    Rng rng(seed, r);
    std::vector<std::size_t> a(d.rows(), 0);
    std::size_t next = 0;
    for (auto g : groups) {
      rng.shuffle(g);
      for (std::size_t i : g) a[i] = next++ % k;
    }
    plan.assignments.push_back(std::move(a));
  }
  return plan;
}

inline std::string random_feature_name(std::size_t k) { return "__random_" + std::to_string(k); }

inline bool is_random_feature_name(std::string_view name) { return name.rfind("__random_", 0) == 0; }

/// Appends `count` uniform(0,1) noise columns named __random_0, __random_1, ...
inline Dataset inject_random_features(const Dataset& d, std::size_t count, std::uint64_t seed) {
  if (count == 0) return d;
  Dataset out = d;
  const std::size_t p = d.cols();
  std::size_t base = 0;
  while (d.feature_index(random_feature_name(base))) ++base;
  for (std::size_t k = 0; k < count; ++k) out.feature_names.push_back(random_feature_name(base + k));
  out.cells.clear();
  out.cells.reserve(d.rows() * (p + count));
  Rng rng(seed, 0x5EED);
  for (std::size_t i = 0; i < d.rows(); ++i) {
    auto r = d.row(i);
    out.cells.insert(out.cells.end(), r.begin(), r.end());
    for (std::size_t k = 0; k < count; ++k) out.cells.emplace_back(rng.uniform());
  }
  return out;
}

}  // namespace riskcard
