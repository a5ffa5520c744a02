// Acceptance gate: one PASS/FAIL/SKIP line per criterion, non-zero exit on any FAIL.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <sstream>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "riskcard/commands.hpp"

using namespace riskcard;

namespace {

struct Outcome {
  enum Kind { pass, fail, skip } kind = fail;
  std::string detail;
};

Outcome verdict(bool ok, std::string detail) { return {ok ? Outcome::pass : Outcome::fail, std::move(detail)}; }

std::string num(double v, int precision = 4) {
  std::ostringstream os;
  os.precision(precision);
  os << v;
  return os.str();
}

double seconds_since(std::chrono::steady_clock::time_point t) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

// Largest local-accuracy error seen by any pipeline fit in this run.
double g_max_local_accuracy = 0.0;

void note_local_accuracy(double e) { g_max_local_accuracy = std::max(g_max_local_accuracy, e); }

/// Spearman correlation of calibration bin index against bin rate (occupied bins only).
double calibration_trend(const Calibration& c) {
  std::vector<double> idx, rate;
  for (std::size_t b = 0; b < c.bins.size(); ++b)
    if (c.bins[b].rate) {
      idx.push_back(static_cast<double>(b));
      rate.push_back(*c.bins[b].rate);
    }
  return idx.size() < 2 ? 0.0 : spearman(idx, rate);
}

std::pair<double, double> end_bin_rates(const Calibration& c) {
  double lo = -1, hi = -1;
  for (const auto& b : c.bins)
    if (b.rate) {
      if (lo < 0) lo = *b.rate;
      hi = *b.rate;
    }
  return {lo, hi};
}

// ---------------------------------------------------------------------------

Outcome breast_cancer_cv() {
  const auto d = fixture::breast_cancer();
  PipelineConfig cfg;
  cfg.target = "malignant";
  cfg.top_k = 3;
  cfg.max_leaves = 4;
  const auto start = std::chrono::steady_clock::now();
  const auto rep = cross_validate(d, cfg, make_folds(d, 10, 1, cfg.seed), 1);
  const double wall = seconds_since(start);
  for (const auto& f : rep.folds) note_local_accuracy(f.local_accuracy_error);
  const auto& auc = rep.metric("scorecard_roc_auc");
  const bool ok = auc.per_fold.size() == 10 && auc.mean >= 0.95 && wall < 60.0;
  return verdict(ok, "mean scorecard AUC " + num(auc.mean) + " +/- " + num(auc.std) + " (>= 0.95), base AUC " +
                         num(rep.metric("base_roc_auc").mean) + ", wall " + num(wall, 3) + " s single-threaded (< 60)");
}

std::string cardio_path() {
  if (const char* env = std::getenv("RISKCARD_CARDIO_CSV"); env && *env) return env;
  const auto local = fixture::data_path("cardio_train.csv");
  return std::filesystem::exists(local) ? local : std::string{};
}

/// Loads the public cardio file (semicolon or comma separated, id column, age in days).
Dataset load_cardio(const std::string& path, const std::filesystem::path& scratch) {
  std::string text = read_text(path);
  if (text.find(';') != std::string::npos) std::replace(text.begin(), text.end(), ';', ',');
  const auto csv = scratch / "cardio.csv";
  write_text(csv, text);
  const auto header = read_csv_header(csv.string());
  Dataset d = load_csv(csv.string(), schema_from_header(header, TaskKind::classification, "cardio", {}, {"id"}));
  if (const auto age = d.feature_index("age")) {
    double max_age = 0;
    for (std::size_t i = 0; i < d.rows(); ++i)
      if (d.at(i, *age)) max_age = std::max(max_age, *d.at(i, *age));
    if (max_age > 1000)  // days to years
      for (std::size_t i = 0; i < d.rows(); ++i)
        if (auto& c = d.cells[i * d.cols() + *age]) *c /= 365.25;
  }
  return d;
}

Outcome cardio_holdout() {
  const auto path = cardio_path();
  if (path.empty()) return {Outcome::skip, "cardio data absent; set RISKCARD_CARDIO_CSV or add tests/data/cardio_train.csv"};
  fixture::TempDir tmp("cardio");
  const Dataset d = load_cardio(path, tmp.path);
  PipelineConfig cfg;
  cfg.target = "cardio";
  cfg.top_k = 3;
  cfg.max_leaves = 4;
  const auto [train, test] = stratified_split(d, 0.2, cfg.seed);
  const auto r = run_pipeline(train, cfg);
  note_local_accuracy(r.local_accuracy_error);
  const auto totals = score_dataset(r.card, test);
  const double card_auc = roc_auc(detail::as_doubles(totals), test.target);
  const double base_auc = roc_auc(predict_margins(r.model, test), test.target);
  const auto [lo, hi] = end_bin_rates(calibrate(r.card, test, cfg.calibration_bins));
  std::string feats;
  for (const auto& f : r.card.features) feats += (feats.empty() ? "" : ",") + f;
  const bool ok = card_auc >= 0.764 && card_auc <= 0.804 && base_auc >= card_auc && r.card.features.size() == 3 &&
                  r.card.levels.size() <= 12 && lo < 0.35 && hi > 0.75;
  return verdict(ok, "scorecard AUC " + num(card_auc) + " in [0.764, 0.804], base AUC " + num(base_auc) +
                         ", features {" + feats + "}, levels " + std::to_string(r.card.levels.size()) +
                         ", bin rates " + num(lo, 3) + " .. " + num(hi, 3));
}

Outcome shap_oracle() {
  Rng rng(2024, 1);
  double worst = 0.0, worst_local = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const int p = 1 + static_cast<int>(rng.below(8));
    GbtModel m;
    m.objective = Objective::squared_error;
    m.base_score = rng.normal();
    for (int j = 0; j < p; ++j) m.feature_names.push_back("f" + std::to_string(j));
    const int trees = 1 + static_cast<int>(rng.below(5));
    for (int t = 0; t < trees; ++t) m.trees.push_back(fixture::random_tree(rng, p, 1 + static_cast<int>(rng.below(3))));
    Dataset d;
    d.task = TaskKind::regression;
    d.feature_names = m.feature_names;
    for (int i = 0; i < 10; ++i) {
      const auto x = fixture::random_point(rng, static_cast<std::size_t>(p));
      d.cells.insert(d.cells.end(), x.begin(), x.end());
      d.target.push_back(0.0);
    }
    const auto s = shap_values(m, d);
    for (std::size_t i = 0; i < d.rows(); ++i) {
      std::vector<double> ref(static_cast<std::size_t>(p), 0.0);
      for (const auto& t : m.trees) {
        const auto b = brute_force_shap(t, d.row(i));
        for (std::size_t j = 0; j < ref.size(); ++j) ref[j] += b[j];
      }
      for (std::size_t j = 0; j < ref.size(); ++j) worst = std::max(worst, std::abs(s.at(i, j) - ref[j]));
    }
    worst_local = std::max(worst_local, local_accuracy_error(m, d, s));
  }
  note_local_accuracy(worst_local);
  return verdict(worst < 1e-9 && g_max_local_accuracy < 1e-6,
                 "max |TreeSHAP - brute force| " + num(worst, 3) + " (< 1e-9) over 200 ensembles, max local accuracy " +
                     num(g_max_local_accuracy, 3) + " (< 1e-6) over every fit in this run");
}

Outcome pruning_oracle() {
  Rng rng(2024, 2);
  std::size_t mismatches = 0, checks = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 20 + rng.below(60);
    std::vector<Cell> x;
    std::vector<double> phi;
    const double cut1 = rng.uniform(2, 5), cut2 = rng.uniform(5, 8);
    for (std::size_t i = 0; i < n; ++i) {
      if (rng.uniform() < 0.1) {
        x.emplace_back(std::nullopt);
        phi.push_back(1.5 + 0.3 * rng.normal());
        continue;
      }
      const double v = std::floor(rng.uniform(0, 10) * 2) / 2;
      x.emplace_back(v);
      phi.push_back((v > cut1 ? 1.0 : 0.0) + (v > cut2 ? 1.0 : 0.0) + 0.3 * rng.normal());
    }
    const auto tree = grow_binning_tree(x, phi, 3, 1 + rng.below(4));
    if (tree.nodes.size() > 15) return {Outcome::fail, "grown tree exceeds 15 nodes"};
    const auto all = oracle::enumerate_subtrees(tree);
    const auto path = ccp_path(tree);
    const double tol = 1e-12 * std::max(tree.nodes[0].sse / static_cast<double>(tree.nodes[0].count), 1e-300);
    auto check = [&](double alpha, double slack) {
      auto cost = [&](const oracle::Subtree& s) { return s.risk + alpha * static_cast<double>(s.leaves.size()); };
      double best = 1e300;
      for (const auto& s : all) best = std::min(best, cost(s));
      const oracle::Subtree* smallest = nullptr;
      for (const auto& s : all)
        if (cost(s) <= best + slack + 1e-15 * best && (!smallest || s.leaves.size() < smallest->leaves.size()))
          smallest = &s;
      const auto pruned = prune_at(tree, path, alpha);
      ++checks;
      if (!smallest || oracle::kept_leaves(tree, path.collapse_alpha, alpha) != smallest->leaves ||
          pruned.leaf_count() != smallest->leaves.size())
        ++mismatches;
    };
    const auto& steps = path.steps;
    for (std::size_t k = 0; k < steps.size(); ++k) {
      check(steps[k].alpha, 4 * tol);
      if (k + 1 < steps.size()) check(0.5 * (steps[k].alpha + steps[k + 1].alpha), 0.0);
    }
    check(steps.back().alpha * 2 + 1.0, 0.0);
  }
  return verdict(mismatches == 0, std::to_string(checks) + " alpha values over 100 trees, " +
                                      std::to_string(mismatches) + " disagreements with exhaustive enumeration");
}

Outcome gradient_checks() {
  double worst = 0.0;
  auto sweep = [&](Objective obj, const Dataset& d, const std::function<double(std::span<const double>)>& f,
                   double scale, std::uint64_t stream, bool check_hess) {
    Rng rng(2024, stream);
    for (int point = 0; point < 20; ++point) {
      std::vector<double> m(d.rows());
      for (auto& v : m) v = scale * rng.normal();
      const auto gh = grad_hess(obj, d, m);
      for (std::size_t i = 0; i < d.rows(); ++i) {
        worst = std::max(worst, oracle::rel_error(gh.grad[i], oracle::central_diff(f, m, i)));
        if (check_hess) {
          auto g = [&](std::span<const double> mm) { return grad_hess(obj, d, mm).grad[i]; };
          worst = std::max(worst, oracle::rel_error(gh.hess[i], oracle::central_diff(g, m, i)));
        }
      }
    }
  };
  const auto lg = fixture::logistic_data(30, 4);
  sweep(Objective::binary_logistic, lg, [&](std::span<const double> m) { return oracle::logistic_loss(m, lg.target); },
        2.0, 3, true);
  const auto sq = fixture::regression_data(30, 4);
  sweep(Objective::squared_error, sq, [&](std::span<const double> m) { return oracle::squared_loss(m, sq.target); },
        3.0, 4, true);
  auto sv = fixture::survival_data(30, 4);
  for (auto& t : sv.target) t = std::ceil(t * 4.0) / 4.0 + 0.25;  // tied event times
  sweep(Objective::cox, sv, [&](std::span<const double> m) { return oracle::cox_loss(m, sv.target, sv.event); }, 1.0,
        5, true);
  return verdict(worst < 1e-5, "max relative error " + num(worst, 3) +
                                   " (< 1e-5), logistic / squared / Cox with ties, 20 points each");
}

Outcome metric_oracles() {
  Rng rng(2024, 6);
  double worst = 0.0;
  for (int k = 0; k < 50; ++k) {
    const std::size_t n = 2 + rng.below(39);
    std::vector<double> s, y, t;
    std::vector<std::uint8_t> e;
    const double levels = 2.0 + static_cast<double>(rng.below(8));
    for (std::size_t i = 0; i < n; ++i) {
      s.push_back(std::floor(rng.uniform() * levels));
      y.push_back(rng.uniform() < 0.4 ? 1.0 : 0.0);
      t.push_back(1.0 + std::floor(rng.uniform() * 6.0));
      e.push_back(rng.uniform() < 0.6 ? 1 : 0);
    }
    y[0] = 1.0;
    y[1] = 0.0;
    e[0] = 1;
    t[0] = 0.5;
    worst = std::max(worst, std::abs(roc_auc(s, y) - oracle::auc_pairs(s, y)));
    worst = std::max(worst, std::abs(pr_auc(s, y) - oracle::ap_sweep(s, y)));
    worst = std::max(worst, std::abs(c_index(s, t, e) - oracle::cindex_pairs(s, t, e)));
  }
  return verdict(worst <= 1e-12, "max |fast - oracle| " + num(worst, 3) + " (<= 1e-12) over 50 tied instances");
}

Outcome scaling_law() {
  Rng rng(2024, 7);
  int violations = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const int s_max = 1 + static_cast<int>(rng.below(20));
    std::vector<BinningTree> trees;
    const int features = 1 + static_cast<int>(rng.below(4));
    for (int f = 0; f < features; ++f) {
      std::vector<Cell> x;
      std::vector<double> phi;
      const double slope = rng.normal();
      for (int i = 0; i < 300; ++i) {
        const double v = rng.uniform(0, 10);
        x.emplace_back(rng.uniform() < 0.1 ? Cell{} : Cell{v});
        phi.push_back(slope * std::floor(v / 2.5) + 0.2 * rng.normal());
      }
      BinningOptions opt;
      opt.max_leaves = 2 + static_cast<int>(rng.below(4));
      trees.push_back(fit_binning_tree(x, phi, opt, "f" + std::to_string(f)));
    }
    const auto card = make_scorecard(std::move(trees), s_max);
    int lo = 1 << 30, hi = -1;
    double raw_hi = 0;
    for (const auto& l : card.levels) {
      lo = std::min(lo, l.scaled_score);
      hi = std::max(hi, l.scaled_score);
      raw_hi = std::max(raw_hi, l.raw_score);
    }
    if (lo != 0 || (raw_hi > 0 && hi != s_max)) ++violations;
  }
  // every raw score equal: the range is zero and the card must be all zeros
  std::vector<Cell> x;
  std::vector<double> phi;
  for (int i = 0; i < 50; ++i) {
    x.emplace_back(static_cast<double>(i));
    phi.push_back(0.3);
  }
  bool zero_ok = false;
  try {
    const auto flat = make_scorecard({fit_binning_tree(x, phi, {}, "a"), fit_binning_tree(x, phi, {}, "b")}, 10);
    zero_ok = flat.total_max == 0 &&
              std::all_of(flat.levels.begin(), flat.levels.end(), [](const RiskLevel& l) { return l.scaled_score == 0; });
  } catch (const std::exception&) {
    zero_ok = false;
  }
  return verdict(violations == 0 && zero_ok, "50 random cards, " + std::to_string(violations) +
                                                 " violations of min 0 / max S_max; zero-range card " +
                                                 (zero_ok ? "all zero" : "WRONG"));
}

Outcome monotone_calibration() {
  const auto d = fixture::logistic_data(5000, 2024);
  PipelineConfig cfg;
  cfg.target = d.target_name;
  cfg.calibration_bins = 10;
  const auto [train, test] = stratified_split(d, 0.3, cfg.seed);
  const auto r = run_pipeline(train, cfg);
  note_local_accuracy(r.local_accuracy_error);
  const double rho_train = calibration_trend(r.card.calibration);
  const double rho_test = calibration_trend(calibrate(r.card, test, 10));
  return verdict(rho_train >= 0.9 && rho_test >= 0.9, "Spearman(bin, rate) " + num(rho_train) + " on training rows, " +
                                                          num(rho_test) + " held out (>= 0.9), " +
                                                          std::to_string(r.card.calibration.bins.size()) + " bins");
}

Scorecard g_breast_card;  // reused by the totality check

Outcome determinism() {
  fixture::TempDir tmp("determinism");
  PipelineConfig cfg;
  cfg.target = "malignant";
  const auto data = fixture::data_path("breast_cancer.csv");
  const auto a = cmd_train(cfg, data, tmp.path / "a");
  const auto b = cmd_train(cfg, data, tmp.path / "b");
  note_local_accuracy(a.local_accuracy_error);
  note_local_accuracy(b.local_accuracy_error);
  g_breast_card = a.card;
  const bool same = read_text(tmp.path / "a" / "scorecard.json") == read_text(tmp.path / "b" / "scorecard.json");
  const bool all_same = same && read_text(tmp.path / "a" / "model.json") == read_text(tmp.path / "b" / "model.json") &&
                        read_text(tmp.path / "a" / "calibration.json") == read_text(tmp.path / "b" / "calibration.json");
  return verdict(same, std::string("scorecard.json ") + (same ? "byte-identical" : "DIFFERS") + " across two runs" +
                           (all_same ? ", model.json and calibration.json too" : ""));
}

Outcome missing_totality() {
  if (g_breast_card.features.empty()) return {Outcome::fail, "no trained card available"};
  const auto& card = g_breast_card;
  Rng rng(2024, 8);
  int bad = 0;
  std::size_t missing_cells = 0;
  for (int k = 0; k < 1000; ++k) {
    std::unordered_map<std::string, Cell> x;
    for (const auto& r : card.feature_ranges) {
      if (rng.uniform() < 0.5) {
        x[r.name] = std::nullopt;
        ++missing_cells;
      } else {
        const double w = r.max - r.min;
        x[r.name] = rng.uniform(r.min - 0.2 * w, r.max + 0.2 * w);
      }
    }
    try {
      const auto s = score(card, x);
      int sum = 0;
      for (const auto& p : s.per_feature) sum += p.points;
      if (s.total < 0 || s.total > card.total_max || sum != s.total) ++bad;
    } catch (const std::exception&) {
      ++bad;
    }
  }
  return verdict(bad == 0, "1000 vectors, " + std::to_string(missing_cells) + " missing cells, " +
                               std::to_string(bad) + " invalid totals or errors");
}

Outcome ranking_fidelity() {
  double worst = 1.0;
  std::string detail;
  auto one = [&](const Dataset& d, const std::string& name) {
    PipelineConfig cfg;
    cfg.target = d.target_name;
    const auto [train, test] = stratified_split(d, 0.2, cfg.seed);
    const auto r = run_pipeline(train, cfg);
    note_local_accuracy(r.local_accuracy_error);
    const double rho = spearman(detail::as_doubles(score_dataset(r.card, test)), predict_margins(r.model, test));
    worst = std::min(worst, rho);
    detail += (detail.empty() ? "" : ", ") + name + " " + num(rho);
  };
  one(fixture::breast_cancer(), "breast cancer");
  one(fixture::logistic_data(3000, 2025), "synthetic logistic");
  return verdict(worst >= 0.8, "held-out Spearman(total, base margin): " + detail + " (>= 0.8)");
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    std::function<Outcome()> run;
  };
  // The SHAP line runs last so that its local-accuracy bound covers every fit above.
  const std::vector<Criterion> criteria{
      {"breast_cancer_cv_auc", breast_cancer_cv},
      {"cardio_holdout (soft)", cardio_holdout},
      {"pruning_oracle", pruning_oracle},
      {"gradient_checks", gradient_checks},
      {"metric_oracles", metric_oracles},
      {"scaling_law", scaling_law},
      {"monotone_calibration", monotone_calibration},
      {"determinism", determinism},
      {"missing_value_totality", missing_totality},
      {"ranking_fidelity", ranking_fidelity},
      {"shap_oracle", shap_oracle},
  };
  int failures = 0, passes = 0, skips = 0;
  for (const auto& c : criteria) {
    Outcome o;
    const auto start = std::chrono::steady_clock::now();
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {Outcome::fail, std::string("exception: ") + e.what()};
    }
    const char* tag = o.kind == Outcome::pass ? "PASS" : o.kind == Outcome::skip ? "SKIP" : "FAIL";
    failures += o.kind == Outcome::fail;
    passes += o.kind == Outcome::pass;
    skips += o.kind == Outcome::skip;
    std::cout << "[" << tag << "] " << c.name << ": " << o.detail << " [" << num(seconds_since(start), 3) << " s]"
              << std::endl;
  }
  std::cout << passes << " passed, " << failures << " failed, " << skips << " skipped" << std::endl;
  return failures == 0 ? 0 : 1;
}
