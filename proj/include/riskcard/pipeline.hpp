#pragma once

// End-to-end construction of a scorecard from a training dataset:
// base model -> attributions -> feature selection -> binning -> points.

#include <fstream>
#include <functional>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "riskcard/binning.hpp"
#include "riskcard/dataset.hpp"
#include "riskcard/gbt.hpp"
#include "riskcard/scorecard.hpp"
#include "riskcard/tree_shap.hpp"
#include "riskcard/tuning.hpp"

namespace riskcard {

struct PipelineConfig {
  TaskKind task = TaskKind::classification;
  std::string target = "target";
  std::string event;
  std::vector<std::string> ignore;
  std::string missing_token;
  int top_k = 3;
  int max_leaves = 4;
  int s_max = 10;
  std::size_t random_features = 0;
  Hyperparameters hyper;
  int tune_budget = 0;  // 0 keeps `hyper`
  int tune_folds = 3;
  int binning_cv_folds = 5;
  int calibration_bins = 10;
  std::uint64_t seed = 42;
  unsigned shap_jobs = 1;

  void validate() const {
    if (top_k < 1) throw Error("top_k must be at least 1");
    if (max_leaves < 2) throw Error("max_leaves must be at least 2");
    if (s_max < 1) throw Error("s_max must be at least 1");
    if (tune_budget < 0) throw Error("tune_budget must be non-negative");
    if (calibration_bins < 2) throw Error("calibration_bins must be at least 2");
    if ((task == TaskKind::survival) != !event.empty())
      throw Error("an event column is required for survival tasks and only for them");
  }
};

/// Reads a JSON config; absent keys keep their defaults.
inline PipelineConfig config_from_json(const nlohmann::json& j, PipelineConfig c = {}) {
  if (j.contains("task")) c.task = parse_task(j.at("task").get<std::string>());
  if (j.contains("target")) c.target = j.at("target").get<std::string>();
  if (j.contains("event")) c.event = j.at("event").get<std::string>();
  if (j.contains("ignore")) c.ignore = j.at("ignore").get<std::vector<std::string>>();
  if (j.contains("missing_token")) c.missing_token = j.at("missing_token").get<std::string>();
  if (j.contains("top_k")) c.top_k = j.at("top_k").get<int>();
  if (j.contains("max_leaves")) c.max_leaves = j.at("max_leaves").get<int>();
  if (j.contains("s_max")) c.s_max = j.at("s_max").get<int>();
  if (j.contains("random_features")) c.random_features = j.at("random_features").get<std::size_t>();
  if (j.contains("hyper")) merge_hyper(j.at("hyper"), c.hyper);
  if (j.contains("tune_budget")) c.tune_budget = j.at("tune_budget").get<int>();
  if (j.contains("tune_folds")) c.tune_folds = j.at("tune_folds").get<int>();
  if (j.contains("binning_cv_folds")) c.binning_cv_folds = j.at("binning_cv_folds").get<int>();
  if (j.contains("calibration_bins")) c.calibration_bins = j.at("calibration_bins").get<int>();
  if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

inline PipelineConfig load_config(const std::string& path, PipelineConfig defaults = {}) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config '" + path + "'");
  return config_from_json(nlohmann::json::parse(in), std::move(defaults));
}

inline Dataset load_dataset(const std::string& path, const PipelineConfig& c) {
  const auto header = read_csv_header(path);
  return load_csv(path, schema_from_header(header, c.task, c.target, c.event, c.ignore), c.missing_token);
}

/// Everything produced while building a scorecard.
struct PipelineResult {
  Dataset training;  // with injected random features, if any
  GbtModel model;
  Hyperparameters hyper;
  ShapMatrix shap;
  ImportanceRanking ranking;
  Scorecard card;
  double local_accuracy_error = 0.0;
};

namespace detail {

inline Scorecard assemble_scorecard(const Dataset& train, const ShapMatrix& shap, const ImportanceRanking& ranking,
                                    const PipelineConfig& cfg, std::size_t k, int max_leaves) {
  std::set<std::string> random_names;
  for (const auto& n : train.feature_names)
    if (is_random_feature_name(n)) random_names.insert(n);
  const auto selected = select_top_k(ranking, k, random_names);
  std::vector<BinningTree> trees;
  for (std::size_t j : selected.selected) {
    BinningOptions opt;
    opt.max_leaves = max_leaves;
    opt.cv_folds = cfg.binning_cv_folds;
    opt.seed = Rng::mix(cfg.seed, j);
    const auto x = train.column(j);
    const auto phi = shap.column(j);
    trees.push_back(fit_binning_tree(x, phi, opt, train.feature_names[j]));
  }
  Scorecard card = make_scorecard(std::move(trees), cfg.s_max);
  card.feature_ranges = observed_ranges(train, card.features);
  auto& p = card.provenance;
  p.task = std::string(to_string(cfg.task));
  p.seed = cfg.seed;
  p.top_k = static_cast<int>(k);
  p.max_leaves = max_leaves;
  p.random_features = cfg.random_features;
  p.halted_by_random = selected.halted_by_random;
  for (std::size_t j : ranking.order) {
    p.ranking.push_back(ranking.feature_names[j]);
    p.importances.push_back(ranking.importances[j]);
  }
  return card;
}

}  // namespace detail

/// Builds the scorecard from `data` (the training rows). The calibration table is
/// computed on the same rows; callers evaluating held-out data recalibrate.
inline PipelineResult run_pipeline(const Dataset& data, const PipelineConfig& cfg,
                                   const std::function<void(const std::string&)>& log = {}) {
  cfg.validate();
  if (data.task != cfg.task) throw Error("dataset task does not match the config");
  auto note = [&](const std::string& s) {
    if (log) log(s);
  };
  PipelineResult r;
  r.training = inject_random_features(data, cfg.random_features, cfg.seed);
  const Objective obj = objective_for(cfg.task);

  r.hyper = cfg.hyper;
  if (cfg.tune_budget > 0) {
    note("tuning: " + std::to_string(cfg.tune_budget) + " configurations");
    r.hyper = random_search_tune(r.training, obj, cfg.tune_budget, cfg.tune_folds, cfg.seed);
  }
  if (!r.hyper.monotone_constraints.empty() && r.hyper.monotone_constraints.size() < r.training.cols())
    r.hyper.monotone_constraints.resize(r.training.cols(), 0);

  note("training base model");
  r.model = fit(r.training, obj, r.hyper, cfg.seed);
  if (r.model.degenerate) note("warning: " + r.model.warning);

  note("computing attributions");
  r.shap = shap_values(r.model, r.training, cfg.shap_jobs);
  r.local_accuracy_error = local_accuracy_error(r.model, r.training, r.shap);
  r.ranking = rank_features(r.shap);

  note("binning selected features");
  r.card = detail::assemble_scorecard(r.training, r.shap, r.ranking, cfg, static_cast<std::size_t>(cfg.top_k),
                                      cfg.max_leaves);
  r.card.provenance.hyper = r.hyper;
  r.card.provenance.model_hash = model_hash(r.model);
  r.card.calibration = calibrate(r.card, r.training, cfg.calibration_bins);
  return r;
}

/// Rebuilds only the selection/binning/points stages for a different (k, M) on a
/// trained pipeline.
inline Scorecard rebuild_scorecard(const PipelineResult& r, const PipelineConfig& cfg, std::size_t k, int max_leaves) {
  Scorecard card = detail::assemble_scorecard(r.training, r.shap, r.ranking, cfg, k, max_leaves);
  card.provenance.hyper = r.hyper;
  card.provenance.model_hash = model_hash(r.model);
  card.calibration = calibrate(card, r.training, cfg.calibration_bins);
  return card;
}

}  // namespace riskcard
