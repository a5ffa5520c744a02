#include <thread>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "riskcard/service.hpp"

using namespace riskcard;
using nlohmann::json;

namespace {

/// The three-feature cardiovascular card with a calibration table from synthetic totals.
Scorecard calibrated_card() {
  auto card = fixture::cardio_card();
  Dataset d = fixture::logistic_data(1000, 61);
  std::vector<int> totals(d.rows());
  for (std::size_t i = 0; i < d.rows(); ++i)
    totals[i] = std::clamp(static_cast<int>(std::floor((*d.at(i, 0) + *d.at(i, 1) + 3.0) * 3.3)), 0, 20);
  card.calibration = calibrate_scores(totals, d, card.total_max, 10);
  return card;
}

std::string patient(double ap_hi, double age, double chol) {
  return json{{"features", {{"ap_hi", ap_hi}, {"age", age}, {"cholesterol", chol}}}}.dump();
}

}  // namespace

TEST(ServiceHandlers, ExamplePatientScoresTwenty) {
  ScoreService svc(calibrated_card());
  const auto r = svc.score(patient(140, 65, 3));
  ASSERT_EQ(r.status, 200) << r.body;
  const auto j = json::parse(r.body);
  EXPECT_EQ(j["total"], 20);
  ASSERT_EQ(j["per_feature"].size(), 3u);
  EXPECT_EQ(j["per_feature"][0]["feature"], "ap_hi");
  EXPECT_EQ(j["per_feature"][0]["points"], 10);
  EXPECT_EQ(j["per_feature"][0]["rule"], "ap_hi > 134.5");
  EXPECT_EQ(j["percentile"], 100.0);
  EXPECT_EQ(j["risk_band"], "high");

  const auto w = json::parse(svc.score(patient(140, 65, 1)).body);
  EXPECT_EQ(w["total"].get<int>() - j["total"].get<int>(), -4);
}

TEST(ServiceHandlers, AllReferencePatientIsLowBand) {
  ScoreService svc(calibrated_card());
  const auto j = json::parse(svc.score(patient(100, 30, 1)).body);
  EXPECT_EQ(j["total"], 0);
  EXPECT_EQ(j["risk_band"], "low");
  EXPECT_GE(j["percentile"].get<double>(), 0.0);
}

TEST(ServiceHandlers, TotalsMatchLibraryAndRateMatchesTable) {
  const auto card = calibrated_card();
  ScoreService svc(card);
  Rng rng(62);
  double prev_pct = -1;
  int prev_total = -1;
  std::vector<std::pair<int, double>> seen;
  for (int k = 0; k < 300; ++k) {
    json features;
    std::unordered_map<std::string, Cell> x;
    for (const auto& f : card.features) {
      if (rng.uniform() < 0.15) {
        features[f] = nullptr;
        x[f] = std::nullopt;
      } else {
        const double v = rng.uniform(0, 200);
        features[f] = v;
        x[f] = v;
      }
    }
    const auto body = json{{"features", features}}.dump();
    const auto r = svc.score(body);
    ASSERT_EQ(r.status, 200);
    EXPECT_EQ(svc.score(body).body, r.body);  // stateless
    const auto j = json::parse(r.body);
    const int total = j["total"];
    EXPECT_EQ(total, score(card, x).total);
    const auto& bin = card.calibration.bins[calibration_bin(card.calibration, total)];
    if (bin.rate) {
      EXPECT_EQ(j["risk_rate"].get<double>(), *bin.rate);
    }
    seen.emplace_back(total, j["percentile"].get<double>());
  }
  std::sort(seen.begin(), seen.end());
  for (const auto& [total, pct] : seen) {
    if (total > prev_total) {
      EXPECT_GE(pct, prev_pct);
    }
    prev_total = total;
    prev_pct = pct;
  }
}

TEST(ServiceHandlers, MissingKeysAre400AndBadValues422) {
  ScoreService svc(calibrated_card());
  auto r = svc.score(R"({"features": {"ap_hi": 120}})");
  EXPECT_EQ(r.status, 400);
  const auto j = json::parse(r.body);
  EXPECT_EQ(j["missing"], (json{"age", "cholesterol"}));

  r = svc.score(R"({"features": {"ap_hi": 120, "age": "old", "cholesterol": true}})");
  EXPECT_EQ(r.status, 422);
  EXPECT_EQ(json::parse(r.body)["invalid"], (json{"age", "cholesterol"}));

  EXPECT_EQ(svc.score("not json").status, 400);
  EXPECT_EQ(svc.score(R"({"values": {}})").status, 400);
}

TEST(ServiceHandlers, EmptyBinBorrowsNearestRate) {
  auto card = fixture::cardio_card();
  Calibration c;
  c.outcome = "positive_rate";
  c.n = 10;
  c.bins = {{0, 4, 5, 0.1, 50}, {5, 9, 0, std::nullopt, 50}, {10, 14, 0, std::nullopt, 50}, {15, 20, 5, 0.9, 100}};
  c.score_counts.assign(21, 0);
  c.score_counts[0] = 5;
  c.score_counts[20] = 5;
  card.calibration = c;
  ScoreService svc(card);
  EXPECT_EQ(*svc.risk_rate(6), 0.1);
  EXPECT_EQ(*svc.risk_rate(12), 0.9);
}

TEST(ServiceHandlers, ScorecardEnvelopeMatchesExport) {
  const auto card = calibrated_card();
  ScoreService svc(card);
  const auto env = nlohmann::ordered_json::parse(svc.scorecard().body);
  EXPECT_EQ(env["scorecard"].dump(2) + "\n", export_json(card));
  EXPECT_EQ(env["scorecard"]["levels"].size(), 11u);
  const auto& meta = env["metadata"]["features"];
  ASSERT_EQ(meta.size(), 3u);
  EXPECT_EQ(meta[0]["name"], "ap_hi");
  EXPECT_EQ(meta[0]["min"], 90.0);
  EXPECT_EQ(meta[0]["max"], 200.0);
}

TEST(ServiceHandlers, PopulationEqualsCalibration) {
  const auto card = calibrated_card();
  ScoreService svc(card);
  const auto j = json::parse(svc.population().body);
  ASSERT_EQ(j.size(), card.calibration.bins.size());
  std::size_t sum = 0;
  for (std::size_t b = 0; b < j.size(); ++b) {
    EXPECT_EQ(j[b]["lower"], card.calibration.bins[b].lower);
    EXPECT_EQ(j[b]["upper"], card.calibration.bins[b].upper);
    EXPECT_EQ(j[b]["count"], card.calibration.bins[b].count);
    sum += j[b]["count"].get<std::size_t>();
  }
  EXPECT_EQ(sum, card.calibration.n);
}

TEST(ServiceHandlers, BandThresholdsAreConfigurable) {
  ScoreService strict(calibrated_card(), {10.0, 20.0});
  const auto j = json::parse(strict.score(patient(125, 50, 2)).body);
  EXPECT_NE(j["risk_band"], "low");
  EXPECT_THROW(ScoreService(calibrated_card(), {60.0, 40.0}), Error);
}

TEST(BindAddress, Parsing) {
  EXPECT_EQ(parse_bind("127.0.0.1:8080"), (std::pair<std::string, int>{"127.0.0.1", 8080}));
  EXPECT_EQ(parse_bind(":9000").first, "0.0.0.0");
  EXPECT_THROW(parse_bind("localhost"), Error);
  EXPECT_THROW(parse_bind("h:99999"), Error);
}

TEST(HttpServer, EndpointsOverTheWire) {
  auto svc = std::make_shared<const ScoreService>(calibrated_card());
  httplib::Server server;
  mount(server, svc);
  const int port = server.bind_to_any_port("127.0.0.1");
  ASSERT_GT(port, 0);
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  httplib::Client cli("127.0.0.1", port);
  auto health = cli.Get("/health");
  ASSERT_TRUE(health);
  EXPECT_EQ(health->status, 200);
  EXPECT_EQ(health->body, "ok");
  EXPECT_EQ(health->get_header_value("Access-Control-Allow-Origin"), "*");

  auto sc = cli.Get("/api/scorecard");
  ASSERT_TRUE(sc);
  EXPECT_EQ(sc->body, svc->scorecard().body);

  auto pop = cli.Get("/api/population");
  ASSERT_TRUE(pop);
  EXPECT_EQ(pop->body, svc->population().body);

  auto res = cli.Post("/api/score", patient(140, 65, 3), "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  EXPECT_EQ(json::parse(res->body)["total"], 20);

  auto bad = cli.Post("/api/score", R"({"features":{}})", "application/json");
  ASSERT_TRUE(bad);
  EXPECT_EQ(bad->status, 400);

  auto pre = cli.Options("/api/score");
  ASSERT_TRUE(pre);
  EXPECT_EQ(pre->status, 204);

  // concurrent clients see identical answers
  std::vector<std::thread> clients;
  std::atomic<int> ok{0};
  for (int t = 0; t < 4; ++t)
    clients.emplace_back([&] {
      httplib::Client c("127.0.0.1", port);
      for (int k = 0; k < 10; ++k) {
        auto r = c.Post("/api/score", patient(130, 55, 2), "application/json");
        if (r && r->status == 200 && json::parse(r->body)["total"] == 5 + 4 + 1) ++ok;
      }
    });
  for (auto& c : clients) c.join();
  EXPECT_EQ(ok.load(), 40);

  server.stop();
  th.join();
}
