#pragma once

// Exact path-dependent Shapley attributions for tree ensembles, global
// importance ranking and top-K selection with random-feature halting.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "riskcard/common.hpp"
#include "riskcard/dataset.hpp"
#include "riskcard/gbt.hpp"

namespace riskcard {

/// n x p attributions in margin space plus the shared base value.
struct ShapMatrix {
  double base_value = 0.0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;  // row-major
  std::vector<std::string> feature_names;

  double at(std::size_t i, std::size_t j) const { return values[i * cols + j]; }
  std::span<const double> row(std::size_t i) const { return {values.data() + i * cols, cols}; }
  std::vector<double> column(std::size_t j) const {
    std::vector<double> out(rows);
    for (std::size_t i = 0; i < rows; ++i) out[i] = at(i, j);
    return out;
  }
};

namespace detail {

struct PathElement {
  int feature = -1;
  double zero_fraction = 0.0;
  double one_fraction = 0.0;
  double pweight = 0.0;
};

inline void extend_path(PathElement* path, int depth, double zero_fraction, double one_fraction, int feature) {
  path[depth] = {feature, zero_fraction, one_fraction, depth == 0 ? 1.0 : 0.0};
  for (int i = depth - 1; i >= 0; --i) {
    path[i + 1].pweight += one_fraction * path[i].pweight * (i + 1) / static_cast<double>(depth + 1);
    path[i].pweight = zero_fraction * path[i].pweight * (depth - i) / static_cast<double>(depth + 1);
  }
}

inline void unwind_path(PathElement* path, int depth, int index) {
  const double one = path[index].one_fraction;
  const double zero = path[index].zero_fraction;
  double next_one_portion = path[depth].pweight;
  for (int i = depth - 1; i >= 0; --i) {
    if (one != 0.0) {
      const double tmp = path[i].pweight;
      path[i].pweight = next_one_portion * (depth + 1) / static_cast<double>((i + 1) * one);
      next_one_portion = tmp - path[i].pweight * zero * (depth - i) / static_cast<double>(depth + 1);
    } else {
      path[i].pweight = path[i].pweight * (depth + 1) / (zero * (depth - i));
    }
  }
  for (int i = index; i < depth; ++i) {
    path[i].feature = path[i + 1].feature;
    path[i].zero_fraction = path[i + 1].zero_fraction;
    path[i].one_fraction = path[i + 1].one_fraction;
  }
}

/// Total permutation weight if element `index` were unwound.
inline double unwound_path_sum(const PathElement* path, int depth, int index) {
  const double one = path[index].one_fraction;
  const double zero = path[index].zero_fraction;
  double next_one_portion = path[depth].pweight;
  double total = 0.0;
  for (int i = depth - 1; i >= 0; --i) {
    if (one != 0.0) {
      const double tmp = next_one_portion * (depth + 1) / static_cast<double>((i + 1) * one);
      total += tmp;
      next_one_portion = path[i].pweight - tmp * zero * ((depth - i) / static_cast<double>(depth + 1));
    } else if (zero != 0.0) {
      total += (path[i].pweight / zero) / ((depth - i) / static_cast<double>(depth + 1));
    }
  }
  return total;
}

inline void tree_shap_recurse(const Tree& tree, std::span<const Cell> x, std::span<double> phi, int node,
                              int depth, PathElement* parent_path, double parent_zero, double parent_one,
                              int parent_feature) {
  PathElement* path = parent_path + depth + 1;
  std::copy(parent_path, parent_path + depth + 1, path);
  extend_path(path, depth, parent_zero, parent_one, parent_feature);

  const auto& n = tree.nodes[static_cast<std::size_t>(node)];
  if (n.is_leaf()) {
    for (int i = 1; i <= depth; ++i) {
      const double w = unwound_path_sum(path, depth, i);
      const auto& el = path[i];
      phi[static_cast<std::size_t>(el.feature)] += w * (el.one_fraction - el.zero_fraction) * n.leaf_value;
    }
    return;
  }

  const int hot = goes_left(n, x[static_cast<std::size_t>(n.feature)]) ? n.left : n.right;
  const int cold = hot == n.left ? n.right : n.left;
  const double hot_zero = tree.nodes[static_cast<std::size_t>(hot)].cover / n.cover;
  const double cold_zero = tree.nodes[static_cast<std::size_t>(cold)].cover / n.cover;
  double incoming_zero = 1.0;
  double incoming_one = 1.0;

  // a feature already on the path is unwound and re-extended with the combined fractions
  int k = 0;
  for (; k <= depth; ++k)
    if (path[k].feature == n.feature) break;
  if (k != depth + 1) {
    incoming_zero = path[k].zero_fraction;
    incoming_one = path[k].one_fraction;
    unwind_path(path, depth, k);
    depth -= 1;
  }

  tree_shap_recurse(tree, x, phi, hot, depth + 1, path, hot_zero * incoming_zero, incoming_one, n.feature);
  tree_shap_recurse(tree, x, phi, cold, depth + 1, path, cold_zero * incoming_zero, 0.0, n.feature);
}

inline double node_expectation(const Tree& t, int id) {
  const auto& n = t.nodes[static_cast<std::size_t>(id)];
  if (n.is_leaf()) return n.leaf_value;
  const auto& l = t.nodes[static_cast<std::size_t>(n.left)];
  const auto& r = t.nodes[static_cast<std::size_t>(n.right)];
  return (l.cover * node_expectation(t, n.left) + r.cover * node_expectation(t, n.right)) / n.cover;
}

}  // namespace detail

/// Cover-weighted mean leaf value of a tree.
inline double tree_expectation(const Tree& t) {
  if (!(t.root().cover > 0.0)) throw Error("tree root has non-positive cover (corrupt model)");
  return detail::node_expectation(t, 0);
}

/// Adds one tree's attributions for `x` into `phi`.
inline void tree_shap(const Tree& tree, std::span<const Cell> x, std::span<double> phi) {
  const int max_depth = tree.depth() + 2;
  std::vector<detail::PathElement> path(static_cast<std::size_t>((max_depth * (max_depth + 1)) / 2 + 1));
  detail::tree_shap_recurse(tree, x, phi, 0, 0, path.data(), 1.0, 1.0, -1);
}

inline double expected_margin(const GbtModel& m) {
  double phi0 = m.base_score;
  for (const auto& t : m.trees) phi0 += tree_expectation(t);
  return phi0;
}

/// Attributions for every row of `d`. `jobs` > 1 splits rows across threads; output is
/// identical for any job count.
inline ShapMatrix shap_values(const GbtModel& m, const Dataset& d, unsigned jobs = 1) {
  if (d.cols() != m.arity())
    throw Error("dataset has " + std::to_string(d.cols()) + " features, model expects " + std::to_string(m.arity()));
  ShapMatrix s;
  s.base_value = expected_margin(m);
  s.rows = d.rows();
  s.cols = d.cols();
  s.values.assign(s.rows * s.cols, 0.0);
  s.feature_names = d.feature_names;

  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      std::span<double> phi(s.values.data() + i * s.cols, s.cols);
      for (const auto& t : m.trees) tree_shap(t, d.row(i), phi);
    }
  };
  jobs = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(std::max<std::size_t>(1, s.rows / 64))));
  if (jobs == 1) {
    work(0, s.rows);
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (s.rows + jobs - 1) / jobs;
    for (unsigned k = 0; k < jobs; ++k) {
      const std::size_t b = k * chunk, e = std::min(s.rows, b + chunk);
      if (b < e) pool.emplace_back(work, b, e);
    }
    for (auto& t : pool) t.join();
  }
  return s;
}

/// Largest |phi_0 + sum_j phi_j(x_i) - margin(x_i)| over the rows.
inline double local_accuracy_error(const GbtModel& m, const Dataset& d, const ShapMatrix& s) {
  double worst = 0.0;
  for (std::size_t i = 0; i < d.rows(); ++i) {
    auto r = s.row(i);
    const double sum = std::accumulate(r.begin(), r.end(), s.base_value);
    worst = std::max(worst, std::abs(sum - predict_margin(m, d.row(i))));
  }
  return worst;
}

/// Shapley values of one tree by direct enumeration of feature coalitions.
/// An absent feature's splits are averaged over both children by cover.
inline std::vector<double> brute_force_shap(const Tree& tree, std::span<const Cell> x) {
  std::vector<int> used;
  for (const auto& n : tree.nodes)
    if (!n.is_leaf()) used.push_back(n.feature);
  std::sort(used.begin(), used.end());
  used.erase(std::unique(used.begin(), used.end()), used.end());
  if (used.size() > 12) throw Error("brute_force_shap supports at most 12 distinct features");
  for (int f : used)
    if (static_cast<std::size_t>(f) >= x.size()) throw Error("feature vector is shorter than the tree's features");

  const std::size_t u = used.size();
  std::vector<double> phi(x.size(), 0.0);
  if (u == 0) return phi;

  // value(S) = E[f(X) | X_S = x_S], path-dependent
  auto value = [&](std::uint32_t mask) {
    auto rec = [&](auto&& self, int id) -> double {
      const auto& n = tree.nodes[static_cast<std::size_t>(id)];
      if (n.is_leaf()) return n.leaf_value;
      const auto pos = static_cast<std::size_t>(std::lower_bound(used.begin(), used.end(), n.feature) - used.begin());
      if (mask & (1u << pos)) return self(self, goes_left(n, x[static_cast<std::size_t>(n.feature)]) ? n.left : n.right);
      const auto& l = tree.nodes[static_cast<std::size_t>(n.left)];
      const auto& r = tree.nodes[static_cast<std::size_t>(n.right)];
      return (l.cover * self(self, n.left) + r.cover * self(self, n.right)) / n.cover;
    };
    return rec(rec, 0);
  };

  std::vector<double> v(std::size_t{1} << u);
  for (std::uint32_t mask = 0; mask < v.size(); ++mask) v[mask] = value(mask);

  std::vector<double> fact(u + 1, 1.0);
  for (std::size_t k = 1; k <= u; ++k) fact[k] = fact[k - 1] * static_cast<double>(k);
  for (std::size_t a = 0; a < u; ++a) {
    double sum = 0.0;
    for (std::uint32_t mask = 0; mask < v.size(); ++mask) {
      if (mask & (1u << a)) continue;
      const auto s = static_cast<std::size_t>(__builtin_popcount(mask));
      const double w = fact[s] * fact[u - s - 1] / fact[u];
      sum += w * (v[mask | (1u << a)] - v[mask]);
    }
    phi[static_cast<std::size_t>(used[a])] = sum;
  }
  return phi;
}

// ---------------------------------------------------------------------------
// Ranking and selection

struct ImportanceRanking {
  std::vector<std::string> feature_names;
  std::vector<double> importances;     // mean |phi_j|
  std::vector<std::size_t> order;      // descending importance, ties by index
  std::vector<std::size_t> selected;
  std::optional<std::string> halted_by_random;

  std::vector<std::string> selected_names() const {
    std::vector<std::string> out;
    for (std::size_t j : selected) out.push_back(feature_names[j]);
    return out;
  }
};

inline ImportanceRanking rank_features(const ShapMatrix& s) {
  if (s.rows == 0) throw Error("rank_features needs at least one row");
  ImportanceRanking r;
  r.feature_names = s.feature_names;
  r.importances.assign(s.cols, 0.0);
  for (std::size_t i = 0; i < s.rows; ++i)
    for (std::size_t j = 0; j < s.cols; ++j) r.importances[j] += std::abs(s.at(i, j));
  for (auto& v : r.importances) v /= static_cast<double>(s.rows);
  r.order.resize(s.cols);
  std::iota(r.order.begin(), r.order.end(), std::size_t{0});
  std::stable_sort(r.order.begin(), r.order.end(),
                   [&](std::size_t a, std::size_t b) { return r.importances[a] > r.importances[b]; });
  return r;
}

/// Walks the ranking collecting up to k features; stops at the first random feature.
inline ImportanceRanking select_top_k(ImportanceRanking r, std::size_t k,
                                      const std::set<std::string>& random_feature_names) {
  if (k < 1) throw Error("k must be at least 1");
  r.selected.clear();
  r.halted_by_random.reset();
  for (std::size_t j : r.order) {
    if (r.selected.size() >= k) break;
    if (random_feature_names.count(r.feature_names[j])) {
      r.halted_by_random = r.feature_names[j];
      break;
    }
    r.selected.push_back(j);
  }
  if (r.selected.empty()) throw Error("no informative features");
  return r;
}

/// CSV dump: first column phi0 (repeated), then one column per feature.
inline void write_shap_csv(const ShapMatrix& s, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path + "'");
  out << "phi0";
  for (const auto& n : s.feature_names) out << ',' << n;
  out << '\n';
  for (std::size_t i = 0; i < s.rows; ++i) {
    out << format_double(s.base_value);
    for (std::size_t j = 0; j < s.cols; ++j) out << ',' << format_double(s.at(i, j));
    out << '\n';
  }
}

}  // namespace riskcard
