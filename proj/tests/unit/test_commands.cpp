#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "riskcard/commands.hpp"

using namespace riskcard;
namespace fs = std::filesystem;

namespace {

PipelineConfig breast_config() {
  PipelineConfig c;
  c.target = "malignant";
  c.hyper.n_estimators = 80;
  return c;
}

std::size_t line_count(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST(Train, WritesAllArtifactsAndIsByteReproducible) {
  fixture::TempDir tmp("train");
  const auto data = fixture::data_path("breast_cancer.csv");
  const auto r = cmd_train(breast_config(), data, tmp.path / "a", true);
  cmd_train(breast_config(), data, tmp.path / "b");
  for (const char* name : {"scorecard.json", "model.json", "scorecard.md", "calibration.json"}) {
    ASSERT_TRUE(fs::exists(tmp.path / "a" / name)) << name;
    EXPECT_EQ(read_text(tmp.path / "a" / name), read_text(tmp.path / "b" / name)) << name;
  }
  EXPECT_TRUE(fs::exists(tmp.path / "a" / "shap.csv"));
  EXPECT_FALSE(fs::exists(tmp.path / "b" / "shap.csv"));
  EXPECT_EQ(export_json(load_scorecard(tmp.path / "a" / "scorecard.json")), export_json(r.card));
  EXPECT_EQ(read_text(tmp.path / "a" / "scorecard.md"), export_markdown(r.card));
}

TEST(Train, SmallestCardFromFlags) {
  fixture::TempDir tmp("small");
  auto cfg = breast_config();
  cfg.top_k = 1;
  cfg.max_leaves = 2;
  const auto r = cmd_train(cfg, fixture::data_path("breast_cancer.csv"), tmp.path);
  EXPECT_EQ(r.card.levels.size(), 2u);
  EXPECT_EQ(load_scorecard(tmp.path / "scorecard.json").levels.size(), 2u);
}

TEST(Score, TotalsMatchLibraryScoring) {
  fixture::TempDir tmp("score");
  const auto data = fixture::data_path("breast_cancer.csv");
  const auto r = cmd_train(breast_config(), data, tmp.path);
  const auto results = cmd_score(tmp.path / "scorecard.json", data, tmp.path / "scores.csv");
  const auto expect = score_dataset(r.card, fixture::breast_cancer());
  ASSERT_EQ(results.size(), expect.size());
  for (std::size_t i = 0; i < expect.size(); ++i) EXPECT_EQ(results[i].total, expect[i]);

  const auto csv = read_text(tmp.path / "scores.csv");
  EXPECT_EQ(line_count(csv), expect.size() + 1);
  std::string header = "row_id,total";
  for (const auto& f : r.card.features) header += "," + f;
  EXPECT_EQ(csv.substr(0, csv.find('\n')), header);
}

TEST(Score, MissingColumnIsNamed) {
  fixture::TempDir tmp("missing");
  write_text(tmp.path / "in.csv", "age,ap_hi\n50,120\n");
  write_text(tmp.path / "card.json", export_json(fixture::cardio_card()));
  try {
    cmd_score(tmp.path / "card.json", (tmp.path / "in.csv").string(), tmp.path / "out.csv");
    FAIL();
  } catch (const DataError& e) {
    EXPECT_EQ(e.column(), "cholesterol");
  }
}

TEST(Score, MissingTokenAndEmptyCellsScore) {
  fixture::TempDir tmp("token");
  write_text(tmp.path / "in.csv", "cholesterol,age,ap_hi,extra\n3,65,140,x\nNA,,NA,y\n");
  write_text(tmp.path / "card.json", export_json(fixture::cardio_card()));
  const auto res = cmd_score(tmp.path / "card.json", (tmp.path / "in.csv").string(), tmp.path / "out.csv", "NA");
  ASSERT_EQ(res.size(), 2u);
  EXPECT_EQ(res[0].total, 20);
  EXPECT_GE(res[1].total, 0);
  EXPECT_THROW(cmd_score(tmp.path / "card.json", (tmp.path / "in.csv").string(), tmp.path / "out.csv"), DataError);
}

TEST(Evaluate, WritesReportFiles) {
  fixture::TempDir tmp("eval");
  auto cfg = breast_config();
  cfg.hyper.n_estimators = 40;
  const auto rep = cmd_evaluate(cfg, fixture::data_path("breast_cancer.csv"), 2, 1, 1, tmp.path);
  EXPECT_EQ(rep.metric("scorecard_roc_auc").per_fold.size(), 2u);
  const auto j = nlohmann::json::parse(read_text(tmp.path / "evaluation.json"));
  EXPECT_EQ(j["folds"], 2);
  EXPECT_EQ(line_count(read_text(tmp.path / "evaluation.csv")), 1u + 2u * rep.metrics.size());
}

TEST(Sweep, WritesCsv) {
  fixture::TempDir tmp("sweep");
  auto cfg = breast_config();
  cfg.hyper.n_estimators = 40;
  const auto rows = cmd_sweep(cfg, fixture::data_path("breast_cancer.csv"), {1, 2}, {2, 3}, tmp.path);
  EXPECT_EQ(rows.size(), 4u);
  const auto csv = read_text(tmp.path / "sweep.csv");
  EXPECT_EQ(line_count(csv), 5u);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "k,max_leaves,total_parameters,metric,value,levels,features");
}

TEST(Export, FormatsAndErrors) {
  fixture::TempDir tmp("export");
  const auto card = fixture::cardio_card();
  write_text(tmp.path / "card.json", export_json(card));
  cmd_export(tmp.path / "card.json", "markdown", tmp.path / "card.md");
  EXPECT_EQ(read_text(tmp.path / "card.md"), export_markdown(card));
  cmd_export(tmp.path / "card.json", "json", tmp.path / "copy.json");
  EXPECT_EQ(read_text(tmp.path / "copy.json"), read_text(tmp.path / "card.json"));
  EXPECT_THROW(cmd_export(tmp.path / "card.json", "xml", tmp.path / "x"), Error);
  EXPECT_THROW(load_scorecard(tmp.path / "absent.json"), Error);
}

TEST(Serve, ServiceLoadsCalibrationOverride) {
  fixture::TempDir tmp("serve");
  const auto r = cmd_train(breast_config(), fixture::data_path("breast_cancer.csv"), tmp.path);
  const auto svc = load_service(tmp.path / "scorecard.json", tmp.path / "calibration.json");
  EXPECT_EQ(calibration_to_json(svc->card().calibration).dump(), calibration_to_json(r.card.calibration).dump());
  EXPECT_THROW(cmd_serve(tmp.path / "scorecard.json", {}, "256.0.0.1:99999"), Error);
}
