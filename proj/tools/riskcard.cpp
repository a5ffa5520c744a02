#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "riskcard/commands.hpp"

namespace {

// Pipeline settings that may come from --config and be overridden by flags.
struct ConfigFlags {
  std::string config_path;
  std::optional<std::string> task, target, event, missing_token;
  std::optional<std::uint64_t> seed;
  std::optional<int> top_k, max_leaves, s_max, tune_budget;
  std::optional<std::size_t> random_features;

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "JSON pipeline config")->check(CLI::ExistingFile);
    app->add_option("--task", task, "classification | regression | survival");
    app->add_option("--target", target, "target (or survival time) column");
    app->add_option("--event", event, "event indicator column (survival)");
    app->add_option("--missing-token", missing_token, "CSV token read as missing (empty cells always are)");
    app->add_option("--seed", seed, "random seed");
    app->add_option("--top-k", top_k, "number of scorecard features");
    app->add_option("--max-leaves", max_leaves, "maximum risk levels per feature");
    app->add_option("--s-max", s_max, "points of the riskiest level");
    app->add_option("--random-features", random_features, "uniform noise features injected as a selection stop");
    app->add_option("--tune-budget", tune_budget, "random-search configurations (0 keeps defaults)");
  }

  riskcard::PipelineConfig resolve() const {
    riskcard::PipelineConfig c;
    if (!config_path.empty()) c = riskcard::load_config(config_path);
    if (task) c.task = riskcard::parse_task(*task);
    if (target) c.target = *target;
    if (event) c.event = *event;
    if (missing_token) c.missing_token = *missing_token;
    if (seed) c.seed = *seed;
    if (top_k) c.top_k = *top_k;
    if (max_leaves) c.max_leaves = *max_leaves;
    if (s_max) c.s_max = *s_max;
    if (random_features) c.random_features = *random_features;
    if (tune_budget) c.tune_budget = *tune_budget;
    c.validate();
    return c;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"riskcard: integer-point risk scorecards from gradient-boosted trees"};
  app.require_subcommand(1);
  app.fallthrough();
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "progress messages on stderr");

  std::string data, out = "out", scorecard_path, calibration_path, bind = "127.0.0.1:8080", format = "markdown";
  std::string missing_token;
  bool dump_shap = false;
  std::size_t folds = 10, repeats = 1;
  unsigned jobs = 1;
  std::vector<int> k_values{1, 2, 3, 4, 5}, m_values{2, 3, 4, 5, 6};

  ConfigFlags train_flags, eval_flags, sweep_flags;

  auto* train = app.add_subcommand("train", "build a scorecard from a CSV");
  train_flags.attach(train);
  train->add_option("--data", data, "training CSV")->required()->check(CLI::ExistingFile);
  train->add_option("--out", out, "output directory")->capture_default_str();
  train->add_flag("--dump-shap", dump_shap, "also write shap.csv");

  auto* score = app.add_subcommand("score", "score rows of a CSV with a scorecard");
  score->add_option("--scorecard", scorecard_path, "scorecard JSON")->required()->check(CLI::ExistingFile);
  score->add_option("--data", data, "input CSV")->required()->check(CLI::ExistingFile);
  score->add_option("--out", out, "output CSV")->required();
  score->add_option("--missing-token", missing_token, "CSV token read as missing");

  auto* evaluate = app.add_subcommand("evaluate", "repeated stratified cross-validation");
  eval_flags.attach(evaluate);
  evaluate->add_option("--data", data, "CSV")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--out", out, "output directory")->capture_default_str();
  evaluate->add_option("--folds", folds, "folds per repeat")->capture_default_str()->check(CLI::Range(2, 1000));
  evaluate->add_option("--repeats", repeats, "repeats")->capture_default_str()->check(CLI::Range(1, 1000));
  evaluate->add_option("--jobs", jobs, "worker threads over folds")->capture_default_str()->check(CLI::Range(1, 256));

  auto* sweep = app.add_subcommand("sweep", "parsimony sweep over top-k and max leaves");
  sweep_flags.attach(sweep);
  sweep->add_option("--data", data, "CSV")->required()->check(CLI::ExistingFile);
  sweep->add_option("--out", out, "output directory")->capture_default_str();
  sweep->add_option("--k-values", k_values, "top-k grid")->delimiter(',');
  sweep->add_option("--m-values", m_values, "max-leaves grid")->delimiter(',');

  auto* serve = app.add_subcommand("serve", "serve the scoring HTTP API");
  serve->add_option("--scorecard", scorecard_path, "scorecard JSON")->required()->check(CLI::ExistingFile);
  serve->add_option("--calibration", calibration_path, "calibration JSON (defaults to the embedded table)")
      ->check(CLI::ExistingFile);
  serve->add_option("--bind", bind, "host:port")->capture_default_str();

  auto* exp = app.add_subcommand("export", "re-export a scorecard");
  exp->add_option("--scorecard", scorecard_path, "scorecard JSON")->required()->check(CLI::ExistingFile);
  exp->add_option("--format", format, "json | markdown")->capture_default_str();
  exp->add_option("--out", out, "output file")->required();

  CLI11_PARSE(app, argc, argv);

  riskcard::Logger log;
  if (verbose) log = [](const std::string& s) { std::cerr << "[riskcard] " << s << "\n"; };

  try {
    if (*train) {
      riskcard::cmd_train(train_flags.resolve(), data, out, dump_shap, log);
    } else if (*score) {
      riskcard::cmd_score(scorecard_path, data, out, missing_token);
    } else if (*evaluate) {
      riskcard::cmd_evaluate(eval_flags.resolve(), data, folds, repeats, jobs, out, log);
    } else if (*sweep) {
      riskcard::cmd_sweep(sweep_flags.resolve(), data, k_values, m_values, out, log);
    } else if (*serve) {
      riskcard::cmd_serve(scorecard_path, calibration_path, bind, [](const std::string& s) {
        std::cerr << "[riskcard] " << s << "\n";
      });
    } else if (*exp) {
      riskcard::cmd_export(scorecard_path, format, out);
    }
  } catch (const riskcard::DataError& e) {
    std::cerr << "error: " << e.what();
    if (!e.column().empty()) std::cerr << " [column=" << e.column() << "]";
    if (e.row()) std::cerr << " [row=" << *e.row() << "]";
    std::cerr << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
