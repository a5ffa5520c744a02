#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "riskcard/binning.hpp"
#include "riskcard/dataset.hpp"
#include "riskcard/gbt.hpp"
#include "riskcard/scorecard.hpp"

#ifndef RISKCARD_TEST_DATA
#define RISKCARD_TEST_DATA "tests/data"
#endif

namespace fixture {

using riskcard::Cell;
using riskcard::Dataset;
using riskcard::Rng;
using riskcard::TaskKind;

inline std::string data_path(const std::string& name) { return std::string(RISKCARD_TEST_DATA) + "/" + name; }

inline Dataset breast_cancer() {
  const auto path = data_path("breast_cancer.csv");
  const auto header = riskcard::read_csv_header(path);
  return riskcard::load_csv(path, riskcard::schema_from_header(header, TaskKind::classification, "malignant"));
}

/// Features x1..xp standard normal (cells missing with probability `missing`).
inline Dataset gaussian_features(std::size_t n, std::size_t p, std::uint64_t seed, double missing = 0.0) {
  Dataset d;
  for (std::size_t j = 0; j < p; ++j) d.feature_names.push_back("x" + std::to_string(j + 1));
  Rng rng(seed, 1);
  d.cells.reserve(n * p);
  for (std::size_t i = 0; i < n * p; ++i) {
    const double v = rng.normal();
    d.cells.push_back(rng.uniform() < missing ? Cell{} : Cell{v});
  }
  d.target.assign(n, 0.0);
  return d;
}

/// Binary outcome with P(y = 1) = sigmoid(x1 + x2); x3 is noise.
inline Dataset logistic_data(std::size_t n, std::uint64_t seed, double missing = 0.0) {
  Dataset d = gaussian_features(n, 3, seed, missing);
  d.task = TaskKind::classification;
  Rng rng(seed, 2);
  for (std::size_t i = 0; i < n; ++i) {
    const double a = d.at(i, 0).value_or(0.0), b = d.at(i, 1).value_or(0.0);
    d.target[i] = rng.uniform() < riskcard::sigmoid(a + b) ? 1.0 : 0.0;
  }
  return d;
}

/// y = 2 x1 - x2 + noise.
inline Dataset regression_data(std::size_t n, std::uint64_t seed) {
  Dataset d = gaussian_features(n, 3, seed);
  d.task = TaskKind::regression;
  Rng rng(seed, 2);
  for (std::size_t i = 0; i < n; ++i) d.target[i] = 2.0 * *d.at(i, 0) - *d.at(i, 1) + 0.3 * rng.normal();
  return d;
}

/// Exponential event times with hazard exp(x1 + 0.5 x2), independent censoring.
inline Dataset survival_data(std::size_t n, std::uint64_t seed) {
  Dataset d = gaussian_features(n, 3, seed);
  d.task = TaskKind::survival;
  d.target_name = "time";
  d.event_name = "event";
  Rng rng(seed, 2);
  d.event.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const double hazard = std::exp(*d.at(i, 0) + 0.5 * *d.at(i, 1));
    const double t = -std::log(1.0 - rng.uniform()) / hazard;
    const double c = -std::log(1.0 - rng.uniform()) / 0.3;
    d.target[i] = std::min(t, c);
    d.event[i] = t <= c ? 1 : 0;
  }
  return d;
}

/// Random tree over `p` features with consistent covers; features may repeat on a path.
inline riskcard::Tree random_tree(Rng& rng, int p, int max_depth) {
  riskcard::Tree t;
  auto grow = [&](auto&& self, int depth) -> int {
    const int id = static_cast<int>(t.nodes.size());
    t.nodes.emplace_back();
    if (depth == max_depth || (depth > 0 && rng.uniform() < 0.25)) {
      t.nodes[static_cast<std::size_t>(id)].leaf_value = rng.uniform(-2.0, 2.0);
      t.nodes[static_cast<std::size_t>(id)].cover = 0.5 + rng.uniform() * 10.0;
      return id;
    }
    riskcard::TreeNode n;
    n.feature = static_cast<int>(rng.below(static_cast<std::uint64_t>(p)));
    n.threshold = rng.uniform(-1.0, 1.0);
    n.default_left = rng.uniform() < 0.5;
    n.left = self(self, depth + 1);
    n.right = self(self, depth + 1);
    n.cover = t.nodes[static_cast<std::size_t>(n.left)].cover + t.nodes[static_cast<std::size_t>(n.right)].cover;
    t.nodes[static_cast<std::size_t>(id)] = n;
    return id;
  };
  grow(grow, 0);
  return t;
}

inline std::vector<Cell> random_point(Rng& rng, std::size_t p, double missing = 0.2) {
  std::vector<Cell> x(p);
  for (auto& v : x) v = rng.uniform() < missing ? Cell{} : Cell{rng.uniform(-1.5, 1.5)};
  return x;
}

/// Binning tree whose leaves reproduce the given thresholds and leaf means exactly:
/// two sample points per bin, each carrying the bin's value as its attribution.
inline riskcard::BinningTree step_tree(const std::string& feature, const std::vector<std::pair<double, double>>& bins,
                                       const std::vector<double>& means) {
  std::vector<Cell> x;
  std::vector<double> phi;
  for (std::size_t b = 0; b < bins.size(); ++b) {
    x.emplace_back(bins[b].first);
    x.emplace_back(bins[b].second);
    phi.push_back(means[b]);
    phi.push_back(means[b]);
  }
  auto t = riskcard::grow_binning_tree(x, phi, 3, 1);
  t.feature = feature;
  t.max_leaves = static_cast<int>(bins.size());
  return t;
}

/// A three-feature card with the cut points and points of a reference cardiovascular
/// score sheet: ap_hi {0, 2, 5, 10}, age {0, 3, 4, 6}, cholesterol {0, 1, 4}.
inline riskcard::Scorecard cardio_card() {
  std::vector<riskcard::BinningTree> trees;
  trees.push_back(step_tree("ap_hi", {{100, 118}, {119, 129}, {130, 134}, {135, 180}}, {0.0, 0.2, 0.5, 1.0}));
  trees.push_back(step_tree("age", {{30, 42}, {43, 54.3}, {54.5, 60.7}, {60.9, 70}}, {-0.3, 0.0, 0.1, 0.3}));
  trees.push_back(step_tree("cholesterol", {{1, 1}, {2, 2}, {3, 3}}, {0.1, 0.2, 0.5}));
  auto card = riskcard::make_scorecard(std::move(trees), 10);
  card.feature_ranges = {{"ap_hi", 90, 200}, {"age", 29, 65}, {"cholesterol", 1, 3}};
  return card;
}

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() /
           ("riskcard_" + tag + "_" + riskcard::hex64(Rng(std::random_device{}()).next()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
};

}  // namespace fixture
