#pragma once

// Repeated stratified cross-validation of the full scorecard pipeline, and the
// parsimony sweep over (top-k, max leaves).

#include <atomic>
#include <chrono>
#include <fstream>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "riskcard/metrics.hpp"
#include "riskcard/pipeline.hpp"

namespace riskcard {

struct MetricReport {
  std::string metric;
  double mean = 0.0;
  double std = 0.0;
  std::vector<double> per_fold;
  double wall_time_seconds = 0.0;  // mean per-fold pipeline time
};

struct FoldOutcome {
  std::size_t repeat = 0;
  std::size_t fold = 0;
  bool skipped = false;
  std::string warning;
  std::vector<std::pair<std::string, double>> metrics;
  double wall_time_seconds = 0.0;
  double local_accuracy_error = 0.0;  // of the fold's base-model attributions
  Scorecard card;
};

struct EvaluationReport {
  TaskKind task = TaskKind::classification;
  std::size_t k = 0;
  std::size_t repeats = 0;
  std::uint64_t seed = 0;
  std::vector<FoldOutcome> folds;  // ordered by (repeat, fold)
  std::vector<MetricReport> metrics;
  std::vector<std::string> warnings;

  const MetricReport& metric(std::string_view name) const {
    for (const auto& m : metrics)
      if (m.metric == name) return m;
    throw Error("report has no metric '" + std::string(name) + "'");
  }
};

namespace detail {

inline std::vector<double> as_doubles(std::span<const int> v) { return {v.begin(), v.end()}; }

inline bool single_class(const Dataset& d) {
  if (d.task != TaskKind::classification) return false;
  for (double t : d.target)
    if ((t > 0.5) != (d.target.front() > 0.5)) return false;
  return true;
}

inline double rmse(std::span<const double> pred, std::span<const double> truth) {
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - truth[i]) * (pred[i] - truth[i]);
  return std::sqrt(s / static_cast<double>(pred.size()));
}

/// Held-out metrics of a scorecard and its base model. Throws riskcard::Error when a
/// metric is undefined on `test`.
inline std::vector<std::pair<std::string, double>> holdout_metrics(const Scorecard& card, const GbtModel& model,
                                                                   const Dataset& test) {
  const auto totals = as_doubles(score_dataset(card, test));
  Dataset aligned = test;
  std::vector<double> margin;
  if (model.arity() != test.cols()) {
    // the model saw injected random features; they carry no signal at test time
    aligned = inject_random_features(test, model.arity() - test.cols(), model.seed);
  }
  margin = predict_margins(model, aligned);
  switch (test.task) {
    case TaskKind::classification:
      return {{"scorecard_roc_auc", roc_auc(totals, test.target)},
              {"scorecard_pr_auc", pr_auc(totals, test.target)},
              {"base_roc_auc", roc_auc(margin, test.target)},
              {"base_pr_auc", pr_auc(margin, test.target)}};
    case TaskKind::survival:
      return {{"scorecard_c_index", c_index(totals, test.target, test.event)},
              {"base_c_index", c_index(margin, test.target, test.event)}};
    case TaskKind::regression:
      return {{"scorecard_spearman", spearman(totals, test.target)},
              {"base_spearman", spearman(margin, test.target)},
              {"base_rmse", rmse(margin, test.target)}};
  }
  throw Error("unknown task");
}

inline MetricReport summarize(std::string name, std::vector<double> values, double wall) {
  MetricReport m;
  m.metric = std::move(name);
  m.per_fold = std::move(values);
  m.mean = mean_of(m.per_fold);
  m.std = sample_std(m.per_fold);
  m.wall_time_seconds = wall;
  return m;
}

}  // namespace detail

/// Runs the whole pipeline on every training fold and scores the held-out fold with
/// the resulting scorecard. Folds run on up to `jobs` threads; results are merged
/// in (repeat, fold) order so the report does not depend on scheduling.
inline EvaluationReport cross_validate(const Dataset& d, const PipelineConfig& cfg, const FoldPlan& plan,
                                       unsigned jobs = 1) {
  cfg.validate();
  if (plan.rows() != d.rows()) throw Error("fold plan does not match the dataset");
  EvaluationReport rep;
  rep.task = d.task;
  rep.k = plan.k;
  rep.repeats = plan.repeats;
  rep.seed = plan.seed;
  rep.folds.resize(plan.k * plan.repeats);

  auto run_one = [&](std::size_t idx) {
    FoldOutcome& out = rep.folds[idx];
    out.repeat = idx / plan.k;
    out.fold = idx % plan.k;
    const auto split = plan.fold(out.repeat, out.fold);
    const Dataset train = d.subset(split.train);
    const Dataset test = d.subset(split.test);
    const std::string where = "repeat " + std::to_string(out.repeat) + " fold " + std::to_string(out.fold);
    if (detail::single_class(test) || detail::single_class(train)) {
      out.skipped = true;
      out.warning = where + ": single class, fold skipped";
      return;
    }
    const auto start = std::chrono::steady_clock::now();
    PipelineResult r = run_pipeline(train, cfg);
    out.wall_time_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    try {
      out.metrics = detail::holdout_metrics(r.card, r.model, test);
    } catch (const Error& e) {
      out.skipped = true;
      out.warning = where + ": " + e.what() + ", fold skipped";
    }
    out.local_accuracy_error = r.local_accuracy_error;
    out.card = std::move(r.card);
  };

  const std::size_t total = rep.folds.size();
  const unsigned workers = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(total)));
  if (workers == 1) {
    for (std::size_t i = 0; i < total; ++i) run_one(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(total);
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < total; i = next++) {
          try {
            run_one(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    for (auto& t : pool) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  std::vector<std::string> names;
  std::vector<std::vector<double>> values;
  std::vector<double> times;
  for (const auto& f : rep.folds) {
    if (f.skipped) {
      rep.warnings.push_back(f.warning);
      continue;
    }
    times.push_back(f.wall_time_seconds);
    for (const auto& [name, v] : f.metrics) {
      auto it = std::find(names.begin(), names.end(), name);
      if (it == names.end()) {
        names.push_back(name);
        values.emplace_back();
        it = names.end() - 1;
      }
      values[static_cast<std::size_t>(it - names.begin())].push_back(v);
    }
  }
  const double mean_time = mean_of(times);
  for (std::size_t i = 0; i < names.size(); ++i)
    rep.metrics.push_back(detail::summarize(names[i], std::move(values[i]), mean_time));
  rep.metrics.push_back(detail::summarize("wall_time_seconds", times, mean_time));
  return rep;
}

inline nlohmann::ordered_json report_to_json(const EvaluationReport& r) {
  nlohmann::ordered_json j;
  j["task"] = std::string(to_string(r.task));
  j["folds"] = r.k;
  j["repeats"] = r.repeats;
  j["seed"] = r.seed;
  j["wall_time_boundary"] = "full pipeline per training fold (base model, attributions, binning, points)";
  auto& metrics = j["metrics"] = nlohmann::ordered_json::array();
  for (const auto& m : r.metrics)
    metrics.push_back({{"metric", m.metric},
                       {"mean", m.mean},
                       {"std", m.std},
                       {"per_fold", m.per_fold},
                       {"wall_time_seconds", m.wall_time_seconds}});
  j["warnings"] = r.warnings;
  return j;
}

/// Flat CSV with one row per metric per evaluated fold.
inline std::string report_to_csv(const EvaluationReport& r) {
  std::string out = "repeat,fold,metric,value\n";
  for (const auto& f : r.folds) {
    if (f.skipped) continue;
    auto row = [&](const std::string& name, double v) {
      out += std::to_string(f.repeat) + "," + std::to_string(f.fold) + "," + name + "," + format_double(v) + "\n";
    };
    for (const auto& [name, v] : f.metrics) row(name, v);
    row("wall_time_seconds", f.wall_time_seconds);
  }
  return out;
}

struct SweepRow {
  int k = 0;
  int max_leaves = 0;
  int total_parameters = 0;
  std::string metric;
  double value = 0.0;
  std::size_t levels = 0;
  std::vector<std::string> features;
};

/// One stratified 80/20 split and one base model; every (k, M) cell re-runs only the
/// selection, binning and point stages and is scored on the held-out rows.
inline std::vector<SweepRow> parsimony_sweep(const Dataset& d, const std::vector<int>& k_values,
                                             const std::vector<int>& m_values, std::uint64_t seed,
                                             PipelineConfig cfg = {}) {
  if (k_values.empty() || m_values.empty()) throw Error("sweep grids must be non-empty");
  cfg.seed = seed;
  cfg.task = d.task;
  const auto [train, test] = stratified_split(d, 0.2, seed);
  const PipelineResult base = run_pipeline(train, cfg);
  std::vector<SweepRow> rows;
  for (int k : k_values)
    for (int m : m_values) {
      if (k < 1 || m < 2) throw Error("sweep needs k >= 1 and M >= 2");
      const Scorecard card = rebuild_scorecard(base, cfg, static_cast<std::size_t>(k), m);
      const auto metrics = detail::holdout_metrics(card, base.model, test);
      SweepRow row;
      row.k = k;
      row.max_leaves = m;
      row.total_parameters = k * m;
      row.metric = metrics.front().first;
      row.value = metrics.front().second;
      row.levels = card.levels.size();
      row.features = card.features;
      rows.push_back(std::move(row));
    }
  return rows;
}

inline std::string sweep_to_csv(const std::vector<SweepRow>& rows) {
  std::string out = "k,max_leaves,total_parameters,metric,value,levels,features\n";
  for (const auto& r : rows) {
    std::string feats;
    for (const auto& f : r.features) feats += (feats.empty() ? "" : ";") + f;
    out += std::to_string(r.k) + "," + std::to_string(r.max_leaves) + "," + std::to_string(r.total_parameters) + "," +
           r.metric + "," + format_double(r.value) + "," + std::to_string(r.levels) + "," + feats + "\n";
  }
  return out;
}

}  // namespace riskcard
