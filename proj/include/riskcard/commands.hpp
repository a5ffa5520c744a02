#pragma once

// The command-line subcommands as library functions. Each writes its outputs to
// files and reports progress through an optional logger.

#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "riskcard/evaluation.hpp"
#include "riskcard/pipeline.hpp"
#include "riskcard/service.hpp"

namespace riskcard {

using Logger = std::function<void(const std::string&)>;

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw Error("failed writing '" + path.string() + "'");
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::filesystem::path prepare_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error("cannot create directory '" + dir.string() + "': " + ec.message());
  return dir;
}

/// Trains on `data_path` and writes scorecard.json, model.json, scorecard.md and
/// calibration.json (plus shap.csv when requested) into `out_dir`.
inline PipelineResult cmd_train(const PipelineConfig& cfg, const std::string& data_path,
                                const std::filesystem::path& out_dir, bool dump_shap = false,
                                const Logger& log = {}) {
  const Dataset d = load_dataset(data_path, cfg);
  if (log) log("loaded " + std::to_string(d.rows()) + " rows x " + std::to_string(d.cols()) + " features");
  PipelineResult r = run_pipeline(d, cfg, log);
  prepare_dir(out_dir);
  write_text(out_dir / "scorecard.json", export_json(r.card));
  write_text(out_dir / "model.json", model_to_json(r.model).dump(2) + "\n");
  write_text(out_dir / "scorecard.md", export_markdown(r.card));
  write_text(out_dir / "calibration.json", calibration_to_json(r.card.calibration).dump(2) + "\n");
  if (dump_shap) write_shap_csv(r.shap, (out_dir / "shap.csv").string());
  if (log) {
    log("selected features:" + [&] {
      std::string s;
      for (const auto& f : r.card.features) s += " " + f;
      return s;
    }());
    log("levels: " + std::to_string(r.card.levels.size()) + ", total potential score: " +
        std::to_string(r.card.total_max));
  }
  return r;
}

inline Scorecard load_scorecard(const std::filesystem::path& path) { return import_json(read_text(path)); }

/// Scores every row of `input_csv`; writes row_id, total and one points column per feature.
inline std::vector<ScoreResult> cmd_score(const std::filesystem::path& scorecard_path, const std::string& input_csv,
                                          const std::filesystem::path& output_csv,
                                          const std::string& missing_token = "") {
  const Scorecard card = load_scorecard(scorecard_path);
  const auto rows = read_columns(input_csv, card.features, missing_token);
  std::vector<ScoreResult> results;
  results.reserve(rows.size());
  std::string out = "row_id,total";
  for (const auto& f : card.features) out += "," + f;
  out += "\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    results.push_back(score_aligned(card, rows[i]));
    out += std::to_string(i) + "," + std::to_string(results.back().total);
    for (const auto& p : results.back().per_feature) out += "," + std::to_string(p.points);
    out += "\n";
  }
  write_text(output_csv, out);
  return results;
}

/// Repeated stratified CV; writes evaluation.json and evaluation.csv into `out_dir`.
inline EvaluationReport cmd_evaluate(const PipelineConfig& cfg, const std::string& data_path, std::size_t folds,
                                     std::size_t repeats, unsigned jobs, const std::filesystem::path& out_dir,
                                     const Logger& log = {}) {
  const Dataset d = load_dataset(data_path, cfg);
  const FoldPlan plan = make_folds(d, folds, repeats, cfg.seed);
  if (log) log("evaluating " + std::to_string(folds) + " folds x " + std::to_string(repeats) + " repeats");
  EvaluationReport rep = cross_validate(d, cfg, plan, jobs);
  prepare_dir(out_dir);
  write_text(out_dir / "evaluation.json", report_to_json(rep).dump(2) + "\n");
  write_text(out_dir / "evaluation.csv", report_to_csv(rep));
  if (log) {
    for (const auto& w : rep.warnings) log("warning: " + w);
    for (const auto& m : rep.metrics) log(m.metric + ": " + format_double(m.mean) + " +/- " + format_double(m.std));
  }
  return rep;
}

/// Parsimony sweep; writes sweep.csv into `out_dir`.
inline std::vector<SweepRow> cmd_sweep(const PipelineConfig& cfg, const std::string& data_path,
                                       const std::vector<int>& k_values, const std::vector<int>& m_values,
                                       const std::filesystem::path& out_dir, const Logger& log = {}) {
  const Dataset d = load_dataset(data_path, cfg);
  auto rows = parsimony_sweep(d, k_values, m_values, cfg.seed, cfg);
  prepare_dir(out_dir);
  write_text(out_dir / "sweep.csv", sweep_to_csv(rows));
  if (log)
    for (const auto& r : rows)
      log("k=" + std::to_string(r.k) + " M=" + std::to_string(r.max_leaves) + " " + r.metric + "=" +
          format_double(r.value));
  return rows;
}

/// Re-exports a scorecard as "json" or "markdown".
inline void cmd_export(const std::filesystem::path& scorecard_path, const std::string& format,
                       const std::filesystem::path& out_path) {
  const Scorecard card = load_scorecard(scorecard_path);
  if (format == "json")
    write_text(out_path, export_json(card));
  else if (format == "markdown" || format == "md")
    write_text(out_path, export_markdown(card));
  else
    throw Error("unknown export format '" + format + "' (expected json or markdown)");
}

/// Loads a scorecard (optionally replacing its calibration) into a service.
inline std::shared_ptr<const ScoreService> load_service(const std::filesystem::path& scorecard_path,
                                                        const std::filesystem::path& calibration_path = {},
                                                        BandThresholds bands = {}) {
  Scorecard card = load_scorecard(scorecard_path);
  if (!calibration_path.empty())
    card.calibration = calibration_from_json(nlohmann::ordered_json::parse(read_text(calibration_path)));
  return std::make_shared<const ScoreService>(std::move(card), bands);
}

/// Serves the API until the process is stopped. Throws if the address cannot be bound.
inline void cmd_serve(const std::filesystem::path& scorecard_path, const std::filesystem::path& calibration_path,
                      const std::string& bind, const Logger& log = {}) {
  auto svc = load_service(scorecard_path, calibration_path);
  const auto [host, port] = parse_bind(bind);
  httplib::Server server;
  mount(server, svc);
  if (!server.bind_to_port(host, port)) throw Error("cannot bind " + bind);
  if (log) log("serving on " + host + ":" + std::to_string(port));
  if (!server.listen_after_bind()) throw Error("server stopped unexpectedly");
}

}  // namespace riskcard
