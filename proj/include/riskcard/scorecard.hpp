#pragma once

// Integer point scorecards built from per-feature binning trees.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "riskcard/binning.hpp"
#include "riskcard/common.hpp"
#include "riskcard/dataset.hpp"
#include "riskcard/gbt.hpp"

namespace riskcard {

struct RiskLevel {
  std::string feature;
  int leaf_id = 0;
  IntervalRule rule;
  double leaf_mean = 0.0;
  double raw_score = 0.0;   // leaf mean minus the feature's lowest leaf mean
  int scaled_score = 0;
  std::size_t sample_count = 0;
  bool reference = false;   // the zero-point level of its feature
};

struct CalibrationBin {
  int lower = 0;  // inclusive integer score range
  int upper = 0;
  std::size_t count = 0;
  std::optional<double> rate;  // empty when no sample falls in the bin
  double cumulative_percentile = 0.0;
};

struct Calibration {
  std::string outcome;  // positive_rate | mean_outcome | event_rate
  std::size_t n = 0;
  std::vector<CalibrationBin> bins;
  std::vector<std::size_t> score_counts;  // rows per integer total, 0..total_max

  bool empty() const { return n == 0; }
};

struct FeatureRange {
  std::string name;
  double min = 0.0;
  double max = 0.0;
};

struct Provenance {
  std::string task;
  std::uint64_t seed = 0;
  Hyperparameters hyper;
  int top_k = 0;
  int max_leaves = 0;
  std::size_t random_features = 0;
  std::optional<std::string> halted_by_random;
  std::string model_hash;
  std::vector<std::string> ranking;     // features in importance order
  std::vector<double> importances;      // aligned with `ranking`
};

struct Scorecard {
  std::vector<std::string> features;  // selection order
  std::vector<RiskLevel> levels;      // grouped by feature, then leaf id
  std::vector<BinningTree> trees;     // aligned with `features`
  int s_max = 10;
  int total_max = 0;
  Calibration calibration;
  std::vector<FeatureRange> feature_ranges;
  Provenance provenance;

  std::vector<const RiskLevel*> levels_of(std::string_view feature) const {
    std::vector<const RiskLevel*> out;
    for (const auto& l : levels)
      if (l.feature == feature) out.push_back(&l);
    return out;
  }

  int max_points(std::string_view feature) const {
    int m = 0;
    for (const auto& l : levels)
      if (l.feature == feature) m = std::max(m, l.scaled_score);
    return m;
  }
};

// ---------------------------------------------------------------------------
// Construction

/// Raw risk levels: per feature, each leaf's mean minus the feature's minimum leaf mean.
inline std::vector<RiskLevel> build_levels(std::span<const BinningTree> trees) {
  if (trees.empty()) throw Error("build_levels needs at least one binning tree");
  std::vector<RiskLevel> out;
  for (const auto& t : trees) {
    if (t.leaves.empty()) throw Error("binning tree for '" + t.feature + "' has no leaves");
    double lowest = kInf;
    int reference = -1;
    for (const auto& leaf : t.leaves)
      if (leaf.mean < lowest) {
        lowest = leaf.mean;
        reference = leaf.id;
      }
    for (const auto& leaf : t.leaves) {
      RiskLevel l;
      l.feature = t.feature;
      l.leaf_id = leaf.id;
      l.rule = leaf.rule;
      l.leaf_mean = leaf.mean;
      l.raw_score = leaf.mean - lowest;
      l.sample_count = leaf.count;
      l.reference = leaf.id == reference;
      out.push_back(std::move(l));
    }
  }
  return out;
}

/// Integer points floor(s_max * (raw - min) / (max - min)) over the whole card.
/// A 1e-9 slack absorbs representation error at exact integer boundaries.
inline std::vector<RiskLevel> scale_levels(std::vector<RiskLevel> levels, int s_max) {
  if (s_max < 1) throw Error("s_max must be at least 1");
  if (levels.empty()) throw Error("scale_levels needs at least one level");
  double lo = kInf, hi = -kInf;
  for (const auto& l : levels) {
    lo = std::min(lo, l.raw_score);
    hi = std::max(hi, l.raw_score);
  }
  for (auto& l : levels) {
    if (!(hi > lo)) {
      l.scaled_score = 0;
      continue;
    }
    const double v = static_cast<double>(s_max) * (l.raw_score - lo) / (hi - lo);
    l.scaled_score = std::clamp(static_cast<int>(std::floor(v + 1e-9)), 0, s_max);
  }
  return levels;
}

inline Scorecard make_scorecard(std::vector<BinningTree> trees, int s_max) {
  Scorecard c;
  c.s_max = s_max;
  c.levels = scale_levels(build_levels(trees), s_max);
  for (const auto& t : trees) c.features.push_back(t.feature);
  c.trees = std::move(trees);
  for (const auto& f : c.features) c.total_max += c.max_points(f);
  return c;
}

inline std::vector<FeatureRange> observed_ranges(const Dataset& d, const std::vector<std::string>& features) {
  std::vector<FeatureRange> out;
  for (const auto& f : features) {
    auto j = d.feature_index(f);
    if (!j) throw Error("feature '" + f + "' not found in dataset");
    FeatureRange r{f, kInf, -kInf};
    for (std::size_t i = 0; i < d.rows(); ++i)
      if (const auto& c = d.at(i, *j)) {
        r.min = std::min(r.min, *c);
        r.max = std::max(r.max, *c);
      }
    if (r.min > r.max) r.min = r.max = 0.0;
    out.push_back(r);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Scoring

struct FeaturePoints {
  std::string feature;
  int leaf_id = 0;
  std::string rule;
  int points = 0;
};

struct ScoreResult {
  int total = 0;
  std::vector<FeaturePoints> per_feature;
};

/// Scores one row whose cells are aligned with `card.features`.
inline ScoreResult score_aligned(const Scorecard& card, std::span<const Cell> values) {
  if (values.size() != card.features.size()) throw Error("value count does not match the scorecard features");
  ScoreResult r;
  for (std::size_t f = 0; f < card.features.size(); ++f) {
    const int leaf = route(card.trees[f], values[f]);
    const RiskLevel* hit = nullptr;
    for (const auto& l : card.levels)
      if (l.feature == card.features[f] && l.leaf_id == leaf) {
        hit = &l;
        break;
      }
    if (!hit) throw Error("scorecard has no level for leaf " + std::to_string(leaf) + " of '" + card.features[f] + "'");
    r.total += hit->scaled_score;
    r.per_feature.push_back({hit->feature, leaf, hit->rule.text(hit->feature), hit->scaled_score});
  }
  return r;
}

/// Scores a name -> value map (std::nullopt = missing). Every scorecard feature must be present.
inline ScoreResult score(const Scorecard& card, const std::unordered_map<std::string, Cell>& x) {
  std::vector<Cell> aligned;
  aligned.reserve(card.features.size());
  for (const auto& f : card.features) {
    auto it = x.find(f);
    if (it == x.end()) throw Error("input is missing feature '" + f + "'");
    aligned.push_back(it->second);
  }
  return score_aligned(card, aligned);
}

/// Column index in `d` of each scorecard feature.
inline std::vector<std::size_t> feature_columns(const Scorecard& card, const Dataset& d) {
  std::vector<std::size_t> cols;
  for (const auto& f : card.features) {
    auto j = d.feature_index(f);
    if (!j) throw Error("dataset is missing scorecard feature '" + f + "'");
    cols.push_back(*j);
  }
  return cols;
}

inline std::vector<int> score_dataset(const Scorecard& card, const Dataset& d) {
  const auto cols = feature_columns(card, d);
  std::vector<int> out(d.rows());
  std::vector<Cell> row(cols.size());
  for (std::size_t i = 0; i < d.rows(); ++i) {
    for (std::size_t k = 0; k < cols.size(); ++k) row[k] = d.at(i, cols[k]);
    out[i] = score_aligned(card, row).total;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Calibration

/// Equal-width integer bins over [0, total_max] with observed outcome rate per bin.
inline Calibration calibrate_scores(std::span<const int> totals, const Dataset& d, int total_max, int bins) {
  if (bins < 2) throw Error("calibration needs at least 2 bins");
  if (totals.size() != d.rows()) throw Error("score count does not match the dataset");
  Calibration c;
  c.outcome = d.task == TaskKind::classification ? "positive_rate"
              : d.task == TaskKind::survival     ? "event_rate"
                                                 : "mean_outcome";
  c.n = d.rows();
  const int span = total_max + 1;
  const int b_count = std::min(bins, span);
  c.score_counts.assign(static_cast<std::size_t>(span), 0);
  std::vector<double> outcome_sum(static_cast<std::size_t>(b_count), 0.0);
  c.bins.resize(static_cast<std::size_t>(b_count));
  for (int b = 0; b < b_count; ++b) {
    // bin b holds the totals s with floor(s * b_count / span) == b
    c.bins[static_cast<std::size_t>(b)].lower = (b * span + b_count - 1) / b_count;
    c.bins[static_cast<std::size_t>(b)].upper = ((b + 1) * span + b_count - 1) / b_count - 1;
  }
  auto bin_of = [&](int s) { return std::min(b_count - 1, (s * b_count) / span); };
  for (std::size_t i = 0; i < totals.size(); ++i) {
    const int s = std::clamp(totals[i], 0, total_max);
    ++c.score_counts[static_cast<std::size_t>(s)];
    const auto b = static_cast<std::size_t>(bin_of(s));
    ++c.bins[b].count;
    outcome_sum[b] += d.task == TaskKind::survival ? static_cast<double>(d.event[i]) : d.target[i];
  }
  std::size_t cumulative = 0;
  for (std::size_t b = 0; b < c.bins.size(); ++b) {
    auto& bin = c.bins[b];
    if (bin.count > 0) bin.rate = outcome_sum[b] / static_cast<double>(bin.count);
    cumulative += bin.count;
    bin.cumulative_percentile = c.n == 0 ? 0.0 : 100.0 * static_cast<double>(cumulative) / static_cast<double>(c.n);
  }
  return c;
}

inline Calibration calibrate(const Scorecard& card, const Dataset& d, int bins) {
  const auto totals = score_dataset(card, d);
  return calibrate_scores(totals, d, card.total_max, bins);
}

/// Index of the calibration bin holding `total`.
inline std::size_t calibration_bin(const Calibration& c, int total) {
  for (std::size_t b = 0; b < c.bins.size(); ++b)
    if (total >= c.bins[b].lower && total <= c.bins[b].upper) return b;
  return total < 0 ? 0 : c.bins.size() - 1;
}

/// Share of the calibration population scoring at most `total`, in percent.
inline double percentile_at_most(const Calibration& c, int total) {
  if (c.n == 0) return 0.0;
  std::size_t k = 0;
  for (std::size_t s = 0; s < c.score_counts.size() && static_cast<int>(s) <= total; ++s) k += c.score_counts[s];
  return 100.0 * static_cast<double>(k) / static_cast<double>(c.n);
}

/// Share of the calibration population scoring strictly below `total`, in percent.
inline double percentile_below(const Calibration& c, int total) {
  return total <= 0 ? 0.0 : percentile_at_most(c, total - 1);
}

// ---------------------------------------------------------------------------
// Export

constexpr int kScorecardFormatVersion = 1;

inline nlohmann::ordered_json calibration_to_json(const Calibration& c) {
  nlohmann::ordered_json j;
  j["outcome"] = c.outcome;
  j["n"] = c.n;
  auto bins = nlohmann::ordered_json::array();
  for (const auto& b : c.bins) {
    nlohmann::ordered_json bj;
    bj["lower"] = b.lower;
    bj["upper"] = b.upper;
    bj["count"] = b.count;
    bj["rate"] = b.rate ? nlohmann::ordered_json(*b.rate) : nlohmann::ordered_json(nullptr);
    bj["cumulative_percentile"] = b.cumulative_percentile;
    bins.push_back(std::move(bj));
  }
  j["bins"] = std::move(bins);
  j["score_counts"] = c.score_counts;
  return j;
}

template <typename Json>
Calibration calibration_from_json(const Json& j) {
  Calibration c;
  c.outcome = j.at("outcome").template get<std::string>();
  c.n = j.at("n").template get<std::size_t>();
  for (const auto& bj : j.at("bins")) {
    CalibrationBin b;
    b.lower = bj.at("lower").template get<int>();
    b.upper = bj.at("upper").template get<int>();
    b.count = bj.at("count").template get<std::size_t>();
    if (!bj.at("rate").is_null()) b.rate = bj.at("rate").template get<double>();
    b.cumulative_percentile = bj.at("cumulative_percentile").template get<double>();
    c.bins.push_back(b);
  }
  c.score_counts = j.at("score_counts").template get<std::vector<std::size_t>>();
  return c;
}

inline nlohmann::ordered_json level_to_json(const RiskLevel& l) {
  nlohmann::ordered_json j;
  j["feature"] = l.feature;
  j["leaf_id"] = l.leaf_id;
  j["rule"] = rule_to_json(l.rule);
  j["rule_text"] = l.rule.text(l.feature);
  j["leaf_mean"] = l.leaf_mean;
  j["raw_score"] = l.raw_score;
  j["scaled_score"] = l.scaled_score;
  j["sample_count"] = l.sample_count;
  j["reference"] = l.reference;
  return j;
}

inline nlohmann::ordered_json scorecard_to_json(const Scorecard& c) {
  nlohmann::ordered_json j;
  j["format"] = "riskcard-scorecard";
  j["version"] = kScorecardFormatVersion;
  j["features"] = c.features;
  j["s_max"] = c.s_max;
  j["total_max"] = c.total_max;
  auto levels = nlohmann::ordered_json::array();
  for (const auto& l : c.levels) levels.push_back(level_to_json(l));
  j["levels"] = std::move(levels);
  auto trees = nlohmann::ordered_json::array();
  for (const auto& t : c.trees) trees.push_back(binning_tree_to_json(t));
  j["trees"] = std::move(trees);
  j["calibration"] = calibration_to_json(c.calibration);
  auto ranges = nlohmann::ordered_json::array();
  for (const auto& r : c.feature_ranges) ranges.push_back({{"name", r.name}, {"min", r.min}, {"max", r.max}});
  j["feature_ranges"] = std::move(ranges);
  const auto& p = c.provenance;
  nlohmann::ordered_json pj;
  pj["task"] = p.task;
  pj["seed"] = p.seed;
  pj["hyper"] = p.hyper;
  pj["top_k"] = p.top_k;
  pj["max_leaves"] = p.max_leaves;
  pj["random_features"] = p.random_features;
  pj["halted_by_random"] = p.halted_by_random ? nlohmann::ordered_json(*p.halted_by_random) : nlohmann::ordered_json(nullptr);
  pj["model_hash"] = p.model_hash;
  pj["ranking"] = p.ranking;
  pj["importances"] = p.importances;
  j["provenance"] = std::move(pj);
  return j;
}

template <typename Json>
Scorecard scorecard_from_json(const Json& j) {
  if (j.value("format", std::string{}) != "riskcard-scorecard") throw Error("not a riskcard scorecard document");
  if (j.at("version").template get<int>() != kScorecardFormatVersion) throw Error("unsupported scorecard version");
  Scorecard c;
  c.features = j.at("features").template get<std::vector<std::string>>();
  c.s_max = j.at("s_max").template get<int>();
  c.total_max = j.at("total_max").template get<int>();
  for (const auto& lj : j.at("levels")) {
    RiskLevel l;
    l.feature = lj.at("feature").template get<std::string>();
    l.leaf_id = lj.at("leaf_id").template get<int>();
    l.rule = rule_from_json(lj.at("rule"));
    l.leaf_mean = lj.at("leaf_mean").template get<double>();
    l.raw_score = lj.at("raw_score").template get<double>();
    l.scaled_score = lj.at("scaled_score").template get<int>();
    l.sample_count = lj.at("sample_count").template get<std::size_t>();
    l.reference = lj.at("reference").template get<bool>();
    c.levels.push_back(std::move(l));
  }
  for (const auto& tj : j.at("trees")) c.trees.push_back(binning_tree_from_json(tj));
  if (c.trees.size() != c.features.size()) throw Error("scorecard needs one tree per feature");
  for (std::size_t f = 0; f < c.features.size(); ++f)
    if (c.trees[f].feature != c.features[f]) throw Error("scorecard trees are not aligned with its features");
  c.calibration = calibration_from_json(j.at("calibration"));
  for (const auto& rj : j.at("feature_ranges"))
    c.feature_ranges.push_back({rj.at("name").template get<std::string>(), rj.at("min").template get<double>(),
                                rj.at("max").template get<double>()});
  const auto& pj = j.at("provenance");
  auto& p = c.provenance;
  p.task = pj.at("task").template get<std::string>();
  p.seed = pj.at("seed").template get<std::uint64_t>();
  merge_hyper(pj.at("hyper"), p.hyper);
  p.top_k = pj.at("top_k").template get<int>();
  p.max_leaves = pj.at("max_leaves").template get<int>();
  p.random_features = pj.at("random_features").template get<std::size_t>();
  if (!pj.at("halted_by_random").is_null()) p.halted_by_random = pj.at("halted_by_random").template get<std::string>();
  p.model_hash = pj.at("model_hash").template get<std::string>();
  p.ranking = pj.at("ranking").template get<std::vector<std::string>>();
  p.importances = pj.at("importances").template get<std::vector<double>>();
  return c;
}

inline std::string export_json(const Scorecard& c) { return scorecard_to_json(c).dump(2) + "\n"; }

inline Scorecard import_json(std::string_view text) {
  return scorecard_from_json(nlohmann::ordered_json::parse(text));
}

/// Score sheet: one row per level plus the total-potential row; thresholds to 1 decimal.
inline std::string export_markdown(const Scorecard& c) {
  std::ostringstream out;
  out << "| Feature | Rule | Score |\n";
  out << "|---|---|---:|\n";
  for (const auto& f : c.features) {
    bool first = true;
    for (const auto* l : c.levels_of(f)) {
      out << "| " << (first ? f : "") << " | " << l->rule.text(f) << " | " << l->scaled_score << " |\n";
      first = false;
    }
  }
  out << "| **Total Potential Score** | | **" << c.total_max << "** |\n";
  return out.str();
}

}  // namespace riskcard
