#pragma once

// Gradient-boosted regression trees with second-order (Newton) leaf values,
// exact greedy split search, learned missing-value directions and optional
// monotone constraints.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "riskcard/common.hpp"
#include "riskcard/dataset.hpp"

namespace riskcard {

enum class Objective { binary_logistic, squared_error, cox };

inline std::string_view to_string(Objective o) {
  switch (o) {
    case Objective::binary_logistic: return "binary-logistic";
    case Objective::squared_error: return "squared-error";
    case Objective::cox: return "cox-partial-likelihood";
  }
  return "unknown";
}

inline Objective parse_objective(std::string_view s) {
  if (s == "binary-logistic") return Objective::binary_logistic;
  if (s == "squared-error") return Objective::squared_error;
  if (s == "cox-partial-likelihood") return Objective::cox;
  throw Error("unknown objective '" + std::string(s) + "'");
}

inline Objective objective_for(TaskKind t) {
  switch (t) {
    case TaskKind::classification: return Objective::binary_logistic;
    case TaskKind::regression: return Objective::squared_error;
    case TaskKind::survival: return Objective::cox;
  }
  return Objective::squared_error;
}

struct Hyperparameters {
  int n_estimators = 300;
  int max_depth = 6;
  double learning_rate = 0.1;
  double subsample = 1.0;
  double colsample_bytree = 1.0;
  double reg_lambda = 1.0;
  double min_child_weight = 1.0;
  std::vector<int> monotone_constraints;  // empty, or one of {-1,0,+1} per feature

  void validate(std::size_t n_features) const {
    if (n_estimators < 0) throw Error("n_estimators must be non-negative");
    if (max_depth < 1) throw Error("max_depth must be at least 1");
    if (!(learning_rate > 0.0 && learning_rate <= 1.0)) throw Error("learning_rate must be in (0, 1]");
    if (!(subsample > 0.0 && subsample <= 1.0)) throw Error("subsample must be in (0, 1]");
    if (!(colsample_bytree > 0.0 && colsample_bytree <= 1.0)) throw Error("colsample_bytree must be in (0, 1]");
    if (!(reg_lambda >= 0.0)) throw Error("reg_lambda must be non-negative");
    if (!(min_child_weight >= 0.0)) throw Error("min_child_weight must be non-negative");
    if (!monotone_constraints.empty()) {
      if (monotone_constraints.size() != n_features)
        throw Error("monotone_constraints must have one entry per feature");
      for (int c : monotone_constraints)
        if (c < -1 || c > 1) throw Error("monotone constraint must be -1, 0 or +1");
    }
  }

  int constraint(std::size_t f) const {
    return monotone_constraints.empty() ? 0 : monotone_constraints[f];
  }
};

inline void to_json(nlohmann::ordered_json& j, const Hyperparameters& h) {
  j = nlohmann::ordered_json{{"n_estimators", h.n_estimators},
                             {"max_depth", h.max_depth},
                             {"learning_rate", h.learning_rate},
                             {"subsample", h.subsample},
                             {"colsample_bytree", h.colsample_bytree},
                             {"reg_lambda", h.reg_lambda},
                             {"min_child_weight", h.min_child_weight},
                             {"monotone_constraints", h.monotone_constraints}};
}

/// Reads the keys present in `j` over the current values of `h`.
template <typename Json>
void merge_hyper(const Json& j, Hyperparameters& h) {
  if (j.contains("n_estimators")) h.n_estimators = j.at("n_estimators").template get<int>();
  if (j.contains("max_depth")) h.max_depth = j.at("max_depth").template get<int>();
  if (j.contains("learning_rate")) h.learning_rate = j.at("learning_rate").template get<double>();
  if (j.contains("subsample")) h.subsample = j.at("subsample").template get<double>();
  if (j.contains("colsample_bytree")) h.colsample_bytree = j.at("colsample_bytree").template get<double>();
  if (j.contains("reg_lambda")) h.reg_lambda = j.at("reg_lambda").template get<double>();
  if (j.contains("min_child_weight")) h.min_child_weight = j.at("min_child_weight").template get<double>();
  if (j.contains("monotone_constraints"))
    h.monotone_constraints = j.at("monotone_constraints").template get<std::vector<int>>();
}

/// Flat node record. Internal nodes have left/right >= 0; `default_left` is the missing route.
struct TreeNode {
  int feature = -1;
  double threshold = 0.0;
  bool default_left = true;
  int left = -1;
  int right = -1;
  double leaf_value = 0.0;
  double cover = 0.0;
  double gain = 0.0;

  bool is_leaf() const { return left < 0; }
};

/// Routing rule shared by every tree in the library: value <= threshold goes left.
inline bool goes_left(const TreeNode& n, const Cell& v) {
  return v ? *v <= n.threshold : n.default_left;
}

struct Tree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root

  const TreeNode& root() const { return nodes.front(); }

  double predict(std::span<const Cell> x) const {
    int i = 0;
    while (!nodes[static_cast<std::size_t>(i)].is_leaf()) {
      const auto& n = nodes[static_cast<std::size_t>(i)];
      i = goes_left(n, x[static_cast<std::size_t>(n.feature)]) ? n.left : n.right;
    }
    return nodes[static_cast<std::size_t>(i)].leaf_value;
  }

  int depth(int node = 0) const {
    const auto& n = nodes[static_cast<std::size_t>(node)];
    return n.is_leaf() ? 0 : 1 + std::max(depth(n.left), depth(n.right));
  }
};

struct GbtModel {
  Objective objective = Objective::squared_error;
  double base_score = 0.0;
  std::vector<Tree> trees;  // learning rate already folded into leaf values
  std::vector<std::string> feature_names;
  Hyperparameters hyper;
  std::uint64_t seed = 0;
  bool degenerate = false;  // target had nothing to fit; model is base_score only
  std::string warning;

  std::size_t arity() const { return feature_names.size(); }
};

// ---------------------------------------------------------------------------
// Losses and derivatives

struct GradHess {
  std::vector<double> grad;
  std::vector<double> hess;
};

namespace detail {

/// Rows ordered by ascending time; ties keep index order.
inline std::vector<std::size_t> time_order(std::span<const double> time) {
  std::vector<std::size_t> order(time.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return time[a] < time[b]; });
  return order;
}

/// Per-row sum of exp(margin - shift) over the risk set {j : t_j >= t_i}.
inline std::vector<double> risk_sums(std::span<const double> time, std::span<const double> margin,
                                     const std::vector<std::size_t>& order, double shift) {
  const std::size_t n = time.size();
  std::vector<double> risk(n);
  double acc = 0.0;
  for (std::size_t k = n; k-- > 0;) {
    std::size_t start = k;
    while (start > 0 && time[order[start - 1]] == time[order[k]]) --start;
    for (std::size_t m = start; m <= k; ++m) acc += std::exp(margin[order[m]] - shift);
    for (std::size_t m = start; m <= k; ++m) risk[order[m]] = acc;
    k = start;
  }
  return risk;
}

}  // namespace detail

/// Negative Breslow partial log-likelihood.
inline double cox_loss(std::span<const double> time, std::span<const std::uint8_t> event,
                       std::span<const double> margin) {
  const std::size_t n = time.size();
  const double shift = *std::max_element(margin.begin(), margin.end());
  auto order = detail::time_order(time);
  auto risk = detail::risk_sums(time, margin, order, shift);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    if (event[i]) loss -= (margin[i] - shift) - std::log(risk[i]);
  return loss;
}

/// Total training loss for an objective at the given margins.
inline double loss(Objective obj, const Dataset& d, std::span<const double> margin) {
  double l = 0.0;
  switch (obj) {
    case Objective::binary_logistic:
      for (std::size_t i = 0; i < d.rows(); ++i) {
        const double m = margin[i];
        // log(1 + e^m) - y m, evaluated without overflow
        l += (m > 0 ? m + std::log1p(std::exp(-m)) : std::log1p(std::exp(m))) - d.target[i] * m;
      }
      return l;
    case Objective::squared_error:
      for (std::size_t i = 0; i < d.rows(); ++i) l += 0.5 * (margin[i] - d.target[i]) * (margin[i] - d.target[i]);
      return l;
    case Objective::cox:
      return cox_loss(d.target, d.event, margin);
  }
  return l;
}

inline GradHess cox_grad_hess(std::span<const double> time, std::span<const std::uint8_t> event,
                              std::span<const double> margin) {
  const std::size_t n = time.size();
  if (std::none_of(event.begin(), event.end(), [](std::uint8_t e) { return e != 0; }))
    throw Error("no events observed");
  const double shift = *std::max_element(margin.begin(), margin.end());
  auto order = detail::time_order(time);

  // Breslow: every event at time t shares the risk set {j : t_j >= t}.
  auto risk = detail::risk_sums(time, margin, order, shift);

  // For row k: A_k = sum over events i with t_i <= t_k of 1/S_i, B_k the same with 1/S_i^2.
  GradHess out{std::vector<double>(n), std::vector<double>(n)};
  double a = 0.0, b = 0.0;
  for (std::size_t k = 0; k < n;) {
    std::size_t end = k;
    while (end < n && time[order[end]] == time[order[k]]) ++end;
    for (std::size_t m = k; m < end; ++m) {
      const std::size_t i = order[m];
      if (event[i]) {
        a += 1.0 / risk[i];
        b += 1.0 / (risk[i] * risk[i]);
      }
    }
    for (std::size_t m = k; m < end; ++m) {
      const std::size_t i = order[m];
      const double e = std::exp(margin[i] - shift);
      out.grad[i] = e * a - (event[i] ? 1.0 : 0.0);
      out.hess[i] = std::max(e * a - e * e * b, 0.0);
    }
    k = end;
  }
  return out;
}

/// Gradient and diagonal hessian of the loss with respect to the margin.
inline GradHess grad_hess(Objective obj, const Dataset& d, std::span<const double> margin) {
  const std::size_t n = d.rows();
  if (margin.size() != n) throw Error("margin length does not match the dataset");
  for (double m : margin)
    if (!std::isfinite(m)) throw Error("non-finite margin");
  GradHess out{std::vector<double>(n), std::vector<double>(n)};
  switch (obj) {
    case Objective::binary_logistic:
      for (std::size_t i = 0; i < n; ++i) {
        const double p = sigmoid(margin[i]);
        out.grad[i] = p - d.target[i];
        out.hess[i] = p * (1.0 - p);
      }
      return out;
    case Objective::squared_error:
      for (std::size_t i = 0; i < n; ++i) {
        out.grad[i] = margin[i] - d.target[i];
        out.hess[i] = 1.0;
      }
      return out;
    case Objective::cox:
      if (d.task != TaskKind::survival) throw Error("cox objective needs survival targets");
      return cox_grad_hess(d.target, d.event, margin);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Prediction

inline double predict_margin(const GbtModel& m, std::span<const Cell> x,
                             std::size_t n_trees = std::numeric_limits<std::size_t>::max()) {
  if (x.size() != m.arity())
    throw Error("feature vector has " + std::to_string(x.size()) + " values, model expects " +
                std::to_string(m.arity()));
  double s = m.base_score;
  const std::size_t t_end = std::min(n_trees, m.trees.size());
  for (std::size_t t = 0; t < t_end; ++t) s += m.trees[t].predict(x);
  return s;
}

inline std::vector<double> predict_margins(const GbtModel& m, const Dataset& d) {
  if (d.cols() != m.arity()) throw Error("dataset arity does not match the model");
  std::vector<double> out(d.rows());
  for (std::size_t i = 0; i < d.rows(); ++i) out[i] = predict_margin(m, d.row(i));
  return out;
}

inline double predict_probability(const GbtModel& m, std::span<const Cell> x) {
  if (m.objective != Objective::binary_logistic)
    throw Error("predict_probability needs a binary-logistic model");
  return sigmoid(predict_margin(m, x));
}

// ---------------------------------------------------------------------------
// Training

namespace detail {

constexpr double kMinSplitGain = 1e-12;

struct Bounds {
  double lo = -std::numeric_limits<double>::infinity();
  double hi = std::numeric_limits<double>::infinity();
};

inline double leaf_weight(double g, double h, double lambda, const Bounds& b) {
  return std::clamp(-g / (h + lambda), b.lo, b.hi);
}

/// Objective reduction of a leaf with weight w: -(2 G w + (H + lambda) w^2).
/// Equals G^2 / (H + lambda) at the unconstrained optimum.
inline double weight_score(double g, double h, double lambda, double w) {
  return -(2.0 * g * w + (h + lambda) * w * w);
}

struct SplitCandidate {
  double gain = 0.0;
  int feature = -1;
  double threshold = 0.0;
  bool default_left = false;
  bool valid = false;
};

struct GrowNode {
  double g = 0.0, h = 0.0;
  Bounds bounds;
  int depth = 0;
  SplitCandidate best;
  // scan state
  double scan_g = 0.0, scan_h = 0.0;
  double last_value = 0.0;
  bool has_last = false;
  std::size_t rows = 0;
};

/// Strictly-between threshold for adjacent distinct values a < b, stored so that a <= t < b.
inline double midpoint(double a, double b) {
  double t = a + (b - a) * 0.5;
  if (!(t >= a && t < b)) t = a;
  return t;
}

class TreeGrower {
 public:
  TreeGrower(const std::vector<std::vector<double>>& columns,
             const std::vector<std::vector<std::uint32_t>>& sorted_rows, const Hyperparameters& hyper)
      : columns_(columns), sorted_(sorted_rows), hyper_(hyper) {}

  Tree grow(const std::vector<double>& grad, const std::vector<double>& hess,
            const std::vector<std::uint8_t>& in_sample, const std::vector<std::size_t>& features) {
    const std::size_t n = grad.size();
    row_node_.assign(n, -1);
    Tree tree;
    tree.nodes.emplace_back();
    nodes_.clear();
    nodes_.emplace_back();
    for (std::size_t i = 0; i < n; ++i) {
      if (!in_sample[i]) continue;
      row_node_[i] = 0;
      nodes_[0].g += grad[i];
      nodes_[0].h += hess[i];
      ++nodes_[0].rows;
    }

    std::vector<int> frontier{0};
    for (int depth = 0; depth < hyper_.max_depth && !frontier.empty(); ++depth) {
      std::vector<int> expandable;
      for (int id : frontier)
        if (nodes_[static_cast<std::size_t>(id)].h >= 2.0 * hyper_.min_child_weight &&
            nodes_[static_cast<std::size_t>(id)].rows >= 2)
          expandable.push_back(id);
      if (expandable.empty()) break;
      active_.assign(nodes_.size(), 0);
      for (int id : expandable) {
        active_[static_cast<std::size_t>(id)] = 1;
        nodes_[static_cast<std::size_t>(id)].best = {};
      }
      for (std::size_t f : features) {
        scan(f, grad, hess, /*forward=*/true);
        scan(f, grad, hess, /*forward=*/false);
      }

      fix_default_directions(expandable, hess);

      std::vector<int> next;
      for (int id : expandable) {
        auto& node = nodes_[static_cast<std::size_t>(id)];
        if (!node.best.valid) continue;
        const int l = static_cast<int>(nodes_.size());
        const int r = l + 1;
        tree.nodes.resize(nodes_.size() + 2);
        auto& tn = tree.nodes[static_cast<std::size_t>(id)];
        tn.feature = node.best.feature;
        tn.threshold = node.best.threshold;
        tn.default_left = node.best.default_left;
        tn.gain = node.best.gain;
        tn.left = l;
        tn.right = r;
        GrowNode ln, rn;
        ln.depth = rn.depth = depth + 1;
        ln.bounds = rn.bounds = node.bounds;
        const int c = hyper_.constraint(static_cast<std::size_t>(node.best.feature));
        nodes_.push_back(ln);
        nodes_.push_back(rn);
        pending_.push_back({id, c});
        next.push_back(l);
        next.push_back(r);
      }
      // route rows of split nodes to their children and accumulate child stats
      for (std::size_t i = 0; i < n; ++i) {
        const int id = row_node_[i];
        if (id < 0) continue;
        const auto& tn = tree.nodes[static_cast<std::size_t>(id)];
        if (tn.is_leaf() || !active_[static_cast<std::size_t>(id)]) continue;
        const double v = columns_[static_cast<std::size_t>(tn.feature)][i];
        const bool left = std::isnan(v) ? tn.default_left : v <= tn.threshold;
        const int child = left ? tn.left : tn.right;
        row_node_[i] = child;
        auto& cn = nodes_[static_cast<std::size_t>(child)];
        cn.g += grad[i];
        cn.h += hess[i];
        ++cn.rows;
      }
      // monotone bounds for children
      for (auto [id, c] : pending_) {
        const auto& tn = tree.nodes[static_cast<std::size_t>(id)];
        auto& pn = nodes_[static_cast<std::size_t>(id)];
        auto& ln = nodes_[static_cast<std::size_t>(tn.left)];
        auto& rn = nodes_[static_cast<std::size_t>(tn.right)];
        if (c != 0) {
          const double wl = leaf_weight(ln.g, ln.h, hyper_.reg_lambda, pn.bounds);
          const double wr = leaf_weight(rn.g, rn.h, hyper_.reg_lambda, pn.bounds);
          const double mid = 0.5 * (wl + wr);
          if (c > 0) {
            ln.bounds.hi = mid;
            rn.bounds.lo = mid;
          } else {
            ln.bounds.lo = mid;
            rn.bounds.hi = mid;
          }
        }
      }
      pending_.clear();
      frontier = std::move(next);
    }

    // leaf values, then covers bottom-up so cover(parent) == cover(left) + cover(right) exactly
    for (std::size_t id = 0; id < tree.nodes.size(); ++id) {
      auto& tn = tree.nodes[id];
      const auto& gn = nodes_[id];
      if (tn.is_leaf()) {
        tn.leaf_value = hyper_.learning_rate * leaf_weight(gn.g, gn.h, hyper_.reg_lambda, gn.bounds);
        tn.cover = gn.h;
      }
    }
    fill_cover(tree, 0);
    return tree;
  }

 private:
  static double fill_cover(Tree& t, int id) {
    auto& n = t.nodes[static_cast<std::size_t>(id)];
    if (n.is_leaf()) return n.cover;
    const double l = fill_cover(t, n.left);
    const double r = fill_cover(t, n.right);
    t.nodes[static_cast<std::size_t>(id)].cover = l + r;
    return l + r;
  }

  // A split whose node saw no missing values for its feature sends future missing
  // values to the child with the larger cover.
  void fix_default_directions(const std::vector<int>& ids, const std::vector<double>& hess) {
    std::vector<double> hl(nodes_.size(), 0.0);
    std::vector<std::uint8_t> has_missing(nodes_.size(), 0);
    for (std::size_t i = 0; i < row_node_.size(); ++i) {
      const int id = row_node_[i];
      if (id < 0 || !active_[static_cast<std::size_t>(id)]) continue;
      const auto& best = nodes_[static_cast<std::size_t>(id)].best;
      if (!best.valid) continue;
      const double v = columns_[static_cast<std::size_t>(best.feature)][i];
      if (std::isnan(v))
        has_missing[static_cast<std::size_t>(id)] = 1;
      else if (v <= best.threshold)
        hl[static_cast<std::size_t>(id)] += hess[i];
    }
    for (int id : ids) {
      auto& nd = nodes_[static_cast<std::size_t>(id)];
      if (nd.best.valid && !has_missing[static_cast<std::size_t>(id)])
        nd.best.default_left = hl[static_cast<std::size_t>(id)] >= nd.h - hl[static_cast<std::size_t>(id)];
    }
  }

  void evaluate(GrowNode& node, std::size_t f, double gl, double hl, double threshold, bool default_left) {
    const double lambda = hyper_.reg_lambda;
    const double gr = node.g - gl;
    const double hr = node.h - hl;
    if (hl < hyper_.min_child_weight || hr < hyper_.min_child_weight) return;
    if (!(hl > 0.0) || !(hr > 0.0)) return;
    const double wl = leaf_weight(gl, hl, lambda, node.bounds);
    const double wr = leaf_weight(gr, hr, lambda, node.bounds);
    const int c = hyper_.constraint(f);
    if ((c > 0 && wl > wr) || (c < 0 && wl < wr)) return;
    const double wp = leaf_weight(node.g, node.h, lambda, node.bounds);
    const double gain = 0.5 * (weight_score(gl, hl, lambda, wl) + weight_score(gr, hr, lambda, wr) -
                               weight_score(node.g, node.h, lambda, wp));
    if (gain > kMinSplitGain && (!node.best.valid || gain > node.best.gain)) {
      node.best = {gain, static_cast<int>(f), threshold, default_left, true};
    }
  }

  // Forward scan: accumulated side is left, missing rows fall right.
  // Backward scan: accumulated side is right, missing rows fall left.
  void scan(std::size_t f, const std::vector<double>& grad, const std::vector<double>& hess, bool forward) {
    for (std::size_t id = 0; id < nodes_.size(); ++id) {
      if (!active_[id]) continue;
      auto& nd = nodes_[id];
      nd.scan_g = nd.scan_h = 0.0;
      nd.has_last = false;
    }
    const auto& order = sorted_[f];
    const auto& col = columns_[f];
    const std::size_t m = order.size();
    for (std::size_t k = 0; k < m; ++k) {
      const std::size_t i = order[forward ? k : m - 1 - k];
      const int id = row_node_[i];
      if (id < 0 || !active_[static_cast<std::size_t>(id)]) continue;
      auto& nd = nodes_[static_cast<std::size_t>(id)];
      const double v = col[i];
      if (nd.has_last && v != nd.last_value) {
        if (forward)
          evaluate(nd, f, nd.scan_g, nd.scan_h, midpoint(nd.last_value, v), false);
        else
          evaluate(nd, f, nd.g - nd.scan_g, nd.h - nd.scan_h, midpoint(v, nd.last_value), true);
      }
      nd.scan_g += grad[i];
      nd.scan_h += hess[i];
      nd.last_value = v;
      nd.has_last = true;
    }
  }

  const std::vector<std::vector<double>>& columns_;
  const std::vector<std::vector<std::uint32_t>>& sorted_;
  const Hyperparameters& hyper_;
  std::vector<int> row_node_;
  std::vector<GrowNode> nodes_;
  std::vector<std::uint8_t> active_;
  std::vector<std::pair<int, int>> pending_;
};

inline double initial_base_score(Objective obj, const Dataset& d) {
  switch (obj) {
    case Objective::binary_logistic: {
      const double p = std::accumulate(d.target.begin(), d.target.end(), 0.0) / static_cast<double>(d.rows());
      return std::log(p / (1.0 - p));
    }
    case Objective::squared_error:
      return std::accumulate(d.target.begin(), d.target.end(), 0.0) / static_cast<double>(d.rows());
    case Objective::cox:
      return 0.0;
  }
  return 0.0;
}

/// Returns a reason string when the target leaves nothing to fit.
inline std::string degenerate_reason(Objective obj, const Dataset& d) {
  switch (obj) {
    case Objective::binary_logistic: {
      const auto pos = std::count(d.target.begin(), d.target.end(), 1.0);
      if (pos == 0 || pos == static_cast<std::ptrdiff_t>(d.rows())) return "single-class target";
      return {};
    }
    case Objective::squared_error:
      if (std::all_of(d.target.begin(), d.target.end(), [&](double v) { return v == d.target.front(); }))
        return "zero-variance target";
      return {};
    case Objective::cox:
      if (std::none_of(d.event.begin(), d.event.end(), [](std::uint8_t e) { return e != 0; }))
        return "no events observed";
      return {};
  }
  return {};
}

}  // namespace detail

/// Trains an ensemble. Deterministic in (dataset, hyperparameters, seed).
inline GbtModel fit(const Dataset& d, Objective objective, const Hyperparameters& hyper, std::uint64_t seed) {
  hyper.validate(d.cols());
  if ((objective == Objective::cox) != (d.task == TaskKind::survival))
    throw Error("objective " + std::string(to_string(objective)) + " does not match the " +
                std::string(to_string(d.task)) + " target");
  if (objective == Objective::binary_logistic && d.task != TaskKind::classification)
    throw Error("binary-logistic objective needs a binary target");

  GbtModel model;
  model.objective = objective;
  model.feature_names = d.feature_names;
  model.hyper = hyper;
  model.seed = seed;

  if (auto reason = detail::degenerate_reason(objective, d); !reason.empty()) {
    model.degenerate = true;
    model.warning = reason;
    if (objective == Objective::squared_error) model.base_score = d.target.front();
    return model;
  }
  model.base_score = detail::initial_base_score(objective, d);

  const std::size_t n = d.rows();
  const std::size_t p = d.cols();
  std::vector<std::vector<double>> columns(p, std::vector<double>(n));
  std::vector<std::vector<std::uint32_t>> sorted(p);
  for (std::size_t j = 0; j < p; ++j) {
    for (std::size_t i = 0; i < n; ++i) {
      const auto& c = d.at(i, j);
      columns[j][i] = c ? *c : std::numeric_limits<double>::quiet_NaN();
      if (c) sorted[j].push_back(static_cast<std::uint32_t>(i));
    }
    std::stable_sort(sorted[j].begin(), sorted[j].end(),
                     [&](std::uint32_t a, std::uint32_t b) { return columns[j][a] < columns[j][b]; });
  }

  std::vector<double> margin(n, model.base_score);
  detail::TreeGrower grower(columns, sorted, model.hyper);
  std::vector<std::uint8_t> in_sample(n, 1);
  std::vector<std::size_t> all_features(p);
  std::iota(all_features.begin(), all_features.end(), std::size_t{0});

  for (int round = 0; round < hyper.n_estimators; ++round) {
    Rng rng(seed, static_cast<std::uint64_t>(round));
    auto gh = grad_hess(objective, d, margin);

    if (hyper.subsample < 1.0) {
      std::vector<std::size_t> idx(n);
      std::iota(idx.begin(), idx.end(), std::size_t{0});
      rng.shuffle(idx);
      const auto keep = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(hyper.subsample * double(n))));
      std::fill(in_sample.begin(), in_sample.end(), 0);
      for (std::size_t k = 0; k < keep; ++k) in_sample[idx[k]] = 1;
    }
    std::vector<std::size_t> features = all_features;
    if (hyper.colsample_bytree < 1.0) {
      rng.shuffle(features);
      const auto keep =
          std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(hyper.colsample_bytree * double(p))));
      features.resize(keep);
      std::sort(features.begin(), features.end());
    }

    Tree tree = grower.grow(gh.grad, gh.hess, in_sample, features);
    if (tree.nodes.size() == 1 && std::abs(tree.nodes[0].leaf_value) <= 1e-12) break;
    for (std::size_t i = 0; i < n; ++i) margin[i] += tree.predict(d.row(i));
    model.trees.push_back(std::move(tree));
  }
  return model;
}

// ---------------------------------------------------------------------------
// Serialization

constexpr int kModelFormatVersion = 1;

namespace detail {

inline nlohmann::ordered_json node_to_json(const Tree& t, int id) {
  const auto& n = t.nodes[static_cast<std::size_t>(id)];
  nlohmann::ordered_json j;
  if (n.is_leaf()) {
    j["leaf_value"] = n.leaf_value;
    j["cover"] = n.cover;
    return j;
  }
  j["feature"] = n.feature;
  j["threshold"] = n.threshold;
  j["default_left"] = n.default_left;
  j["gain"] = n.gain;
  j["cover"] = n.cover;
  j["children"] = nlohmann::ordered_json::array({node_to_json(t, n.left), node_to_json(t, n.right)});
  return j;
}

template <typename Json>
int node_from_json(const Json& j, Tree& t) {
  const int id = static_cast<int>(t.nodes.size());
  t.nodes.emplace_back();
  TreeNode n;
  n.cover = j.at("cover").template get<double>();
  if (j.contains("leaf_value")) {
    n.leaf_value = j.at("leaf_value").template get<double>();
    t.nodes[static_cast<std::size_t>(id)] = n;
    return id;
  }
  n.feature = j.at("feature").template get<int>();
  n.threshold = j.at("threshold").template get<double>();
  n.default_left = j.at("default_left").template get<bool>();
  n.gain = j.value("gain", 0.0);
  const auto& ch = j.at("children");
  if (ch.size() != 2) throw Error("internal node must have two children");
  n.left = node_from_json(ch[0], t);
  n.right = node_from_json(ch[1], t);
  t.nodes[static_cast<std::size_t>(id)] = n;
  return id;
}

}  // namespace detail

inline nlohmann::ordered_json model_to_json(const GbtModel& m) {
  nlohmann::ordered_json j;
  j["format"] = "riskcard-gbt";
  j["version"] = kModelFormatVersion;
  j["objective"] = std::string(to_string(m.objective));
  j["base_score"] = m.base_score;
  j["learning_rate"] = m.hyper.learning_rate;
  j["seed"] = m.seed;
  j["feature_names"] = m.feature_names;
  j["hyper"] = m.hyper;
  j["degenerate"] = m.degenerate;
  j["warning"] = m.warning;
  auto trees = nlohmann::ordered_json::array();
  for (const auto& t : m.trees) trees.push_back(detail::node_to_json(t, 0));
  j["trees"] = std::move(trees);
  return j;
}

template <typename Json>
GbtModel model_from_json(const Json& j) {
  if (j.value("format", std::string{}) != "riskcard-gbt") throw Error("not a riskcard model document");
  if (j.at("version").template get<int>() != kModelFormatVersion) throw Error("unsupported model version");
  GbtModel m;
  m.objective = parse_objective(j.at("objective").template get<std::string>());
  m.base_score = j.at("base_score").template get<double>();
  m.seed = j.at("seed").template get<std::uint64_t>();
  m.feature_names = j.at("feature_names").template get<std::vector<std::string>>();
  merge_hyper(j.at("hyper"), m.hyper);
  m.degenerate = j.value("degenerate", false);
  m.warning = j.value("warning", std::string{});
  for (const auto& tj : j.at("trees")) {
    Tree t;
    detail::node_from_json(tj, t);
    for (const auto& n : t.nodes)
      if (!n.is_leaf() && (n.feature < 0 || static_cast<std::size_t>(n.feature) >= m.feature_names.size()))
        throw Error("tree references an unknown feature");
    m.trees.push_back(std::move(t));
  }
  return m;
}

inline std::string model_hash(const GbtModel& m) { return hex64(fnv1a(model_to_json(m).dump())); }

}  // namespace riskcard
