#pragma once

// Univariate regression trees fitted to one feature's SHAP column. Leaves of the
// pruned tree become the feature's bins; root-to-leaf paths collapse to intervals.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "riskcard/common.hpp"

namespace riskcard {

constexpr double kInf = std::numeric_limits<double>::infinity();

/// One simplified interval over a feature, plus whether missing values land here.
struct IntervalRule {
  double lower = -kInf;
  bool lower_inclusive = false;
  double upper = kInf;
  bool upper_inclusive = true;
  bool covers_missing = false;

  bool contains(const Cell& v) const {
    if (!v) return covers_missing;
    const double x = *v;
    const bool above = lower_inclusive ? x >= lower : x > lower;
    const bool below = upper_inclusive ? x <= upper : x < upper;
    return above && below;
  }

  /// Human-readable form, e.g. "age ≤ 54.4 & age > 42.5". `decimals` < 0 keeps full precision.
  std::string text(const std::string& feature, int decimals = 1) const {
    auto num = [&](double v) {
      if (decimals < 0) return format_double(v);
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
      return std::string(buf);
    };
    std::string s;
    const bool has_upper = std::isfinite(upper);
    const bool has_lower = std::isfinite(lower);
    if (has_upper) s += feature + (upper_inclusive ? " ≤ " : " < ") + num(upper);
    if (has_upper && has_lower) s += " & ";
    if (has_lower) s += feature + (lower_inclusive ? " ≥ " : " > ") + num(lower);
    if (!has_upper && !has_lower) s = "any " + feature;
    if (covers_missing) s += " (or missing)";
    return s;
  }

  bool operator==(const IntervalRule&) const = default;
};

struct BinNode {
  double threshold = 0.0;
  bool default_left = true;
  int left = -1;
  int right = -1;
  double mean = 0.0;        // mean SHAP of rows routed here
  double sse = 0.0;         // sum of squared deviations from `mean`
  std::size_t count = 0;
  int leaf_id = -1;

  bool is_leaf() const { return left < 0; }
};

struct BinLeaf {
  int id = 0;
  double mean = 0.0;
  std::size_t count = 0;
  IntervalRule rule;
};

struct BinningTree {
  std::string feature;
  std::vector<BinNode> nodes;  // preorder, left subtree first; nodes[0] is the root
  std::vector<BinLeaf> leaves; // ordered by id (left to right)
  double ccp_alpha = 0.0;
  int max_leaves = 0;

  std::size_t leaf_count() const { return leaves.size(); }
};

struct BinningOptions {
  int max_leaves = 4;
  int cv_folds = 5;
  std::uint64_t seed = 0;
  /// 0 derives max(ceil(0.01 n), 5).
  std::size_t min_leaf = 0;
};

inline int depth_for_leaves(int max_leaves) {
  return static_cast<int>(std::floor(std::log2(static_cast<double>(max_leaves)))) + 1;
}

/// Leaf id reached by `value`: threshold descent, missing follows default_left.
inline int route(const BinningTree& t, const Cell& value) {
  int id = 0;
  while (!t.nodes[static_cast<std::size_t>(id)].is_leaf()) {
    const auto& n = t.nodes[static_cast<std::size_t>(id)];
    const bool left = value ? *value <= n.threshold : n.default_left;
    id = left ? n.left : n.right;
  }
  return t.nodes[static_cast<std::size_t>(id)].leaf_id;
}

namespace detail {

inline void collect_rules(const BinningTree& t, int id, IntervalRule rule, bool on_missing_path,
                          std::vector<std::pair<int, IntervalRule>>& out) {
  const auto& n = t.nodes[static_cast<std::size_t>(id)];
  if (n.is_leaf()) {
    rule.covers_missing = on_missing_path;
    out.emplace_back(n.leaf_id, rule);
    return;
  }
  // x <= threshold tightens the upper bound; x > threshold raises the lower bound.
  IntervalRule l = rule, r = rule;
  if (n.threshold < l.upper) {
    l.upper = n.threshold;
    l.upper_inclusive = true;
  }
  if (n.threshold > r.lower) {
    r.lower = n.threshold;
    r.lower_inclusive = false;
  }
  collect_rules(t, n.left, l, on_missing_path && n.default_left, out);
  collect_rules(t, n.right, r, on_missing_path && !n.default_left, out);
}

}  // namespace detail

/// One interval per leaf, ordered by leaf id.
inline std::vector<std::pair<int, IntervalRule>> extract_rules(const BinningTree& t) {
  std::vector<std::pair<int, IntervalRule>> out;
  detail::collect_rules(t, 0, IntervalRule{}, true, out);
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  return out;
}

namespace detail {

/// Assigns leaf ids left to right and rebuilds the leaf table.
inline void finalize(BinningTree& t) {
  int next = 0;
  auto assign = [&](auto&& self, int id) -> void {
    auto& n = t.nodes[static_cast<std::size_t>(id)];
    if (n.is_leaf()) {
      n.leaf_id = next++;
      return;
    }
    n.leaf_id = -1;
    self(self, n.left);
    self(self, n.right);
  };
  assign(assign, 0);
  t.leaves.clear();
  for (const auto& [id, rule] : extract_rules(t)) t.leaves.push_back({id, 0.0, 0, rule});
  for (const auto& n : t.nodes)
    if (n.is_leaf()) {
      t.leaves[static_cast<std::size_t>(n.leaf_id)].mean = n.mean;
      t.leaves[static_cast<std::size_t>(n.leaf_id)].count = n.count;
    }
}

class BinGrower {
 public:
  BinGrower(std::span<const Cell> x, std::span<const double> phi, int max_depth, std::size_t min_leaf)
      : x_(x), phi_(phi), max_depth_(max_depth), min_leaf_(std::max<std::size_t>(1, min_leaf)) {}

  BinningTree grow(std::vector<std::size_t> rows) {
    BinningTree t;
    grow_node(t, std::move(rows), 0);
    finalize(t);
    return t;
  }

 private:
  int grow_node(BinningTree& t, std::vector<std::size_t> rows, int depth) {
    const int id = static_cast<int>(t.nodes.size());
    t.nodes.emplace_back();
    BinNode node;
    node.count = rows.size();
    double sum = 0.0;
    for (std::size_t i : rows) sum += phi_[i];
    node.mean = rows.empty() ? 0.0 : sum / static_cast<double>(rows.size());
    for (std::size_t i : rows) node.sse += (phi_[i] - node.mean) * (phi_[i] - node.mean);

    std::vector<std::size_t> present, missing;
    for (std::size_t i : rows) (x_[i] ? present : missing).push_back(i);
    const std::size_t m = present.size();

    bool split = false;
    std::size_t best_k = 0;
    if (depth < max_depth_ && m >= 2 * min_leaf_) {
      std::stable_sort(present.begin(), present.end(), [&](std::size_t a, std::size_t b) { return *x_[a] < *x_[b]; });
      double total = 0.0, total_sq = 0.0;
      for (std::size_t i : present) {
        total += phi_[i];
        total_sq += phi_[i] * phi_[i];
      }
      const double parent_score = total * total / static_cast<double>(m);
      double best_score = -kInf;
      double left_sum = 0.0;
      for (std::size_t k = 1; k < m; ++k) {
        left_sum += phi_[present[k - 1]];
        if (k < min_leaf_ || m - k < min_leaf_) continue;
        if (!(*x_[present[k - 1]] < *x_[present[k]])) continue;
        const double right_sum = total - left_sum;
        const double score = left_sum * left_sum / static_cast<double>(k) +
                             right_sum * right_sum / static_cast<double>(m - k);
        if (score > best_score) {
          best_score = score;
          best_k = k;
        }
      }
      // reduction in SSE, guarded against rounding noise on near-constant columns
      const double reduction = best_score - parent_score;
      split = best_k > 0 && reduction > 0.0 && reduction > 1e-12 * total_sq;
    }
    if (!split) {
      t.nodes[static_cast<std::size_t>(id)] = node;
      return id;
    }

    const double a = *x_[present[best_k - 1]];
    const double b = *x_[present[best_k]];
    double threshold = a + (b - a) * 0.5;
    if (!(threshold >= a && threshold < b)) threshold = a;
    node.threshold = threshold;

    std::vector<std::size_t> left(present.begin(), present.begin() + static_cast<std::ptrdiff_t>(best_k));
    std::vector<std::size_t> right(present.begin() + static_cast<std::ptrdiff_t>(best_k), present.end());
    if (missing.empty()) {
      node.default_left = left.size() >= right.size();
    } else {
      // missing rows go to the side whose mean fits them better
      auto mean_of = [&](const std::vector<std::size_t>& r) {
        double s = 0.0;
        for (std::size_t i : r) s += phi_[i];
        return s / static_cast<double>(r.size());
      };
      const double ml = mean_of(left), mr = mean_of(right);
      double el = 0.0, er = 0.0;
      for (std::size_t i : missing) {
        el += (phi_[i] - ml) * (phi_[i] - ml);
        er += (phi_[i] - mr) * (phi_[i] - mr);
      }
      node.default_left = el < er || (el == er && left.size() >= right.size());
    }
    auto& dest = node.default_left ? left : right;
    dest.insert(dest.end(), missing.begin(), missing.end());
    std::sort(left.begin(), left.end());
    std::sort(right.begin(), right.end());

    node.left = grow_node(t, std::move(left), depth + 1);
    node.right = grow_node(t, std::move(right), depth + 1);
    t.nodes[static_cast<std::size_t>(id)] = node;
    return id;
  }

  std::span<const Cell> x_;
  std::span<const double> phi_;
  int max_depth_;
  std::size_t min_leaf_;
};

}  // namespace detail

/// Greedy CART (squared error) on one feature, unpruned.
inline BinningTree grow_binning_tree(std::span<const Cell> x, std::span<const double> phi, int max_depth,
                                     std::size_t min_leaf, std::span<const std::size_t> rows = {}) {
  if (x.size() != phi.size()) throw Error("feature and SHAP columns differ in length");
  std::vector<std::size_t> idx;
  if (rows.empty()) {
    idx.resize(x.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
  } else {
    idx.assign(rows.begin(), rows.end());
  }
  return detail::BinGrower(x, phi, max_depth, min_leaf).grow(std::move(idx));
}

// ---------------------------------------------------------------------------
// Minimal cost-complexity pruning

struct CcpStep {
  double alpha = 0.0;
  std::size_t leaves = 0;
};

/// Weakest-link pruning path. `collapse_alpha[node]` is the alpha at which an internal
/// node becomes a leaf (infinity for original leaves).
struct CcpPath {
  std::vector<CcpStep> steps;
  std::vector<double> collapse_alpha;
};

/// Risk of a node as a leaf, in the units of the training MSE (SSE / root count).
inline double node_risk(const BinningTree& t, int id) {
  return t.nodes[static_cast<std::size_t>(id)].sse / static_cast<double>(std::max<std::size_t>(1, t.nodes[0].count));
}

inline CcpPath ccp_path(const BinningTree& t) {
  const std::size_t n_nodes = t.nodes.size();
  CcpPath path;
  path.collapse_alpha.assign(n_nodes, kInf);
  std::vector<std::uint8_t> collapsed(n_nodes, 0);
  const double tol = 1e-12 * std::max(node_risk(t, 0), std::numeric_limits<double>::min());

  std::vector<std::size_t> leaves(n_nodes);
  std::vector<double> subtree_risk(n_nodes);
  auto refresh = [&](auto&& self, int id) -> void {
    const auto i = static_cast<std::size_t>(id);
    const auto& n = t.nodes[i];
    if (n.is_leaf() || collapsed[i]) {
      leaves[i] = 1;
      subtree_risk[i] = node_risk(t, id);
      return;
    }
    self(self, n.left);
    self(self, n.right);
    leaves[i] = leaves[static_cast<std::size_t>(n.left)] + leaves[static_cast<std::size_t>(n.right)];
    subtree_risk[i] = subtree_risk[static_cast<std::size_t>(n.left)] + subtree_risk[static_cast<std::size_t>(n.right)];
  };

  refresh(refresh, 0);
  path.steps.push_back({0.0, leaves[0]});
  while (leaves[0] > 1) {
    // weakest link: g(t) = (R(t) - R(T_t)) / (|T_t| - 1) over live internal nodes
    std::vector<std::pair<int, double>> links;
    auto gather = [&](auto&& self, int id) -> void {
      const auto i = static_cast<std::size_t>(id);
      const auto& n = t.nodes[i];
      if (n.is_leaf() || collapsed[i]) return;
      links.emplace_back(id, (node_risk(t, id) - subtree_risk[i]) / static_cast<double>(leaves[i] - 1));
      self(self, n.left);
      self(self, n.right);
    };
    gather(gather, 0);
    double g_min = kInf;
    for (const auto& [id, g] : links) g_min = std::min(g_min, g);
    g_min = std::max(g_min, 0.0);

    const double alpha = g_min <= path.steps.back().alpha + tol ? path.steps.back().alpha : g_min;
    for (const auto& [id, g] : links) {
      if (g <= g_min + tol && !collapsed[static_cast<std::size_t>(id)]) {
        collapsed[static_cast<std::size_t>(id)] = 1;
        path.collapse_alpha[static_cast<std::size_t>(id)] = alpha;
      }
    }
    refresh(refresh, 0);
    if (alpha == path.steps.back().alpha)
      path.steps.back().leaves = leaves[0];
    else
      path.steps.push_back({alpha, leaves[0]});
  }
  // descendants of a collapsed node disappear with it
  auto propagate = [&](auto&& self, int id, double ceiling) -> void {
    const auto i = static_cast<std::size_t>(id);
    const auto& n = t.nodes[i];
    if (n.is_leaf()) return;
    path.collapse_alpha[i] = std::min(path.collapse_alpha[i], ceiling);
    self(self, n.left, path.collapse_alpha[i]);
    self(self, n.right, path.collapse_alpha[i]);
  };
  propagate(propagate, 0, kInf);
  return path;
}

/// Strictly increasing alphas with the leaf count of the optimal subtree at each;
/// the last entry is the root-only tree.
inline std::vector<CcpStep> ccp_alpha_sequence(const BinningTree& t) { return ccp_path(t).steps; }

/// Subtree of `t` in which every node with collapse alpha <= `alpha` is a leaf.
inline BinningTree prune_at(const BinningTree& t, const CcpPath& path, double alpha) {
  BinningTree out;
  out.feature = t.feature;
  out.max_leaves = t.max_leaves;
  out.ccp_alpha = alpha;
  auto copy = [&](auto&& self, int id) -> int {
    const auto i = static_cast<std::size_t>(id);
    const int nid = static_cast<int>(out.nodes.size());
    out.nodes.push_back(t.nodes[i]);
    if (!t.nodes[i].is_leaf() && path.collapse_alpha[i] > alpha) {
      const int l = self(self, t.nodes[i].left);
      const int r = self(self, t.nodes[i].right);
      out.nodes[static_cast<std::size_t>(nid)].left = l;
      out.nodes[static_cast<std::size_t>(nid)].right = r;
    } else {
      out.nodes[static_cast<std::size_t>(nid)].left = -1;
      out.nodes[static_cast<std::size_t>(nid)].right = -1;
    }
    return nid;
  };
  copy(copy, 0);
  detail::finalize(out);
  return out;
}

namespace detail {

/// Prediction of the subtree pruned at `alpha`, without materializing it.
inline double predict_pruned(const BinningTree& t, const CcpPath& path, double alpha, const Cell& v) {
  int id = 0;
  for (;;) {
    const auto i = static_cast<std::size_t>(id);
    const auto& n = t.nodes[i];
    if (n.is_leaf() || path.collapse_alpha[i] <= alpha) return n.mean;
    id = (v ? *v <= n.threshold : n.default_left) ? n.left : n.right;
  }
}

}  // namespace detail

/// Fits the binning tree for one feature: grow to depth floor(log2 M) + 1, pick the
/// pruning strength by k-fold CV with the one-standard-error rule, then prune further
/// along the path if more than M leaves remain.
inline BinningTree fit_binning_tree(std::span<const Cell> x, std::span<const double> phi,
                                    const BinningOptions& opt, std::string feature = {}) {
  if (opt.max_leaves < 2) throw Error("max_leaves must be at least 2");
  if (x.size() != phi.size()) throw Error("feature and SHAP columns differ in length");
  if (std::none_of(x.begin(), x.end(), [](const Cell& c) { return c.has_value(); }))
    throw Error("feature '" + feature + "' has no observed values");
  const std::size_t n = x.size();
  const std::size_t min_leaf =
      opt.min_leaf > 0 ? opt.min_leaf
                       : std::max<std::size_t>(static_cast<std::size_t>(std::ceil(0.01 * static_cast<double>(n))), 5);
  const int depth = depth_for_leaves(opt.max_leaves);

  BinningTree full = grow_binning_tree(x, phi, depth, min_leaf);
  const CcpPath path = ccp_path(full);
  const auto& steps = path.steps;

  std::size_t chosen = 0;
  const auto k_folds = static_cast<std::size_t>(std::max(opt.cv_folds, 0));
  if (k_folds >= 2 && steps.size() > 1 && n >= 2 * k_folds) {
    // geometric midpoints of the alpha sequence represent each optimal subtree
    std::vector<double> beta(steps.size());
    for (std::size_t k = 0; k < steps.size(); ++k)
      beta[k] = k + 1 < steps.size() ? std::sqrt(steps[k].alpha * steps[k + 1].alpha) : steps[k].alpha;

    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    Rng rng(opt.seed, 0xB1);
    rng.shuffle(perm);
    std::vector<std::vector<double>> sq_err(steps.size(), std::vector<double>(n, 0.0));
    for (std::size_t f = 0; f < k_folds; ++f) {
      std::vector<std::size_t> train, valid;
      for (std::size_t pos = 0; pos < n; ++pos) (pos % k_folds == f ? valid : train).push_back(perm[pos]);
      std::sort(train.begin(), train.end());
      if (std::none_of(train.begin(), train.end(), [&](std::size_t i) { return x[i].has_value(); })) continue;
      BinningTree ft = grow_binning_tree(x, phi, depth, min_leaf, train);
      const CcpPath fp = ccp_path(ft);
      for (std::size_t k = 0; k < steps.size(); ++k)
        for (std::size_t i : valid) {
          const double e = phi[i] - detail::predict_pruned(ft, fp, beta[k], x[i]);
          sq_err[k][i] = e * e;
        }
    }
    std::vector<double> mean(steps.size()), se(steps.size());
    for (std::size_t k = 0; k < steps.size(); ++k) {
      const double m = std::accumulate(sq_err[k].begin(), sq_err[k].end(), 0.0) / static_cast<double>(n);
      double v = 0.0;
      for (double e : sq_err[k]) v += (e - m) * (e - m);
      mean[k] = m;
      se[k] = std::sqrt(v / static_cast<double>(n - 1) / static_cast<double>(n));
    }
    const auto best = static_cast<std::size_t>(std::min_element(mean.begin(), mean.end()) - mean.begin());
    const double limit = mean[best] + se[best];
    for (std::size_t k = 0; k < steps.size(); ++k)
      if (mean[k] <= limit * (1.0 + 1e-12)) chosen = k;
  }
  while (chosen + 1 < steps.size() && steps[chosen].leaves > static_cast<std::size_t>(opt.max_leaves)) ++chosen;

  BinningTree out = prune_at(full, path, steps[chosen].alpha);
  out.feature = std::move(feature);
  out.max_leaves = opt.max_leaves;
  return out;
}

// ---------------------------------------------------------------------------
// Serialization (embedded in the scorecard document)

inline nlohmann::ordered_json rule_to_json(const IntervalRule& r) {
  nlohmann::ordered_json j;
  j["lower"] = std::isfinite(r.lower) ? nlohmann::ordered_json(r.lower) : nlohmann::ordered_json(nullptr);
  j["lower_inclusive"] = r.lower_inclusive;
  j["upper"] = std::isfinite(r.upper) ? nlohmann::ordered_json(r.upper) : nlohmann::ordered_json(nullptr);
  j["upper_inclusive"] = r.upper_inclusive;
  j["covers_missing"] = r.covers_missing;
  return j;
}

template <typename Json>
IntervalRule rule_from_json(const Json& j) {
  IntervalRule r;
  r.lower = j.at("lower").is_null() ? -kInf : j.at("lower").template get<double>();
  r.lower_inclusive = j.at("lower_inclusive").template get<bool>();
  r.upper = j.at("upper").is_null() ? kInf : j.at("upper").template get<double>();
  r.upper_inclusive = j.at("upper_inclusive").template get<bool>();
  r.covers_missing = j.at("covers_missing").template get<bool>();
  return r;
}

namespace detail {

inline nlohmann::ordered_json bin_node_to_json(const BinningTree& t, int id) {
  const auto& n = t.nodes[static_cast<std::size_t>(id)];
  nlohmann::ordered_json j;
  if (n.is_leaf()) {
    j["leaf_id"] = n.leaf_id;
  } else {
    j["threshold"] = n.threshold;
    j["default_left"] = n.default_left;
  }
  j["mean"] = n.mean;
  j["sse"] = n.sse;
  j["count"] = n.count;
  if (!n.is_leaf())
    j["children"] = nlohmann::ordered_json::array({bin_node_to_json(t, n.left), bin_node_to_json(t, n.right)});
  return j;
}

template <typename Json>
int bin_node_from_json(const Json& j, BinningTree& t) {
  const int id = static_cast<int>(t.nodes.size());
  t.nodes.emplace_back();
  BinNode n;
  n.mean = j.at("mean").template get<double>();
  n.sse = j.at("sse").template get<double>();
  n.count = j.at("count").template get<std::size_t>();
  if (j.contains("children")) {
    n.threshold = j.at("threshold").template get<double>();
    n.default_left = j.at("default_left").template get<bool>();
    n.left = bin_node_from_json(j.at("children")[0], t);
    n.right = bin_node_from_json(j.at("children")[1], t);
  }
  t.nodes[static_cast<std::size_t>(id)] = n;
  return id;
}

}  // namespace detail

inline nlohmann::ordered_json binning_tree_to_json(const BinningTree& t) {
  nlohmann::ordered_json j;
  j["feature"] = t.feature;
  j["max_leaves"] = t.max_leaves;
  j["ccp_alpha"] = t.ccp_alpha;
  j["root"] = detail::bin_node_to_json(t, 0);
  return j;
}

template <typename Json>
BinningTree binning_tree_from_json(const Json& j) {
  BinningTree t;
  t.feature = j.at("feature").template get<std::string>();
  t.max_leaves = j.at("max_leaves").template get<int>();
  t.ccp_alpha = j.at("ccp_alpha").template get<double>();
  detail::bin_node_from_json(j.at("root"), t);
  detail::finalize(t);
  return t;
}

}  // namespace riskcard
