#pragma once

// HTTP JSON API over a loaded scorecard. The request handlers are plain functions
// of (service, body) so they can be exercised without a socket.

#include <memory>
#include <string>
#include <unordered_map>

#include <httplib.h>
#include <json.hpp>

#include "riskcard/scorecard.hpp"

namespace riskcard {

struct BandThresholds {
  double moderate_from = 50.0;  // percentile below which a total is "low"
  double high_above = 90.0;     // percentile above which a total is "high"
};

struct HttpReply {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
};

/// Immutable after construction; safe to share across request threads.
class ScoreService {
 public:
  explicit ScoreService(Scorecard card, BandThresholds bands = {}) : card_(std::move(card)), bands_(bands) {
    if (!(bands_.moderate_from <= bands_.high_above)) throw Error("band thresholds must be ordered");
    nlohmann::ordered_json env;
    env["scorecard"] = scorecard_to_json(card_);
    auto features = nlohmann::ordered_json::array();
    for (const auto& f : card_.features) {
      nlohmann::ordered_json fj{{"name", f}, {"min", nullptr}, {"max", nullptr}};
      for (const auto& r : card_.feature_ranges)
        if (r.name == f) {
          fj["min"] = r.min;
          fj["max"] = r.max;
        }
      features.push_back(std::move(fj));
    }
    env["metadata"] = {{"features", std::move(features)}, {"total_max", card_.total_max}};
    scorecard_body_ = env.dump();
  }

  const Scorecard& card() const { return card_; }
  const BandThresholds& bands() const { return bands_; }

  HttpReply health() const { return {200, "ok", "text/plain"}; }

  HttpReply scorecard() const { return {200, scorecard_body_}; }

  HttpReply population() const {
    auto arr = nlohmann::ordered_json::array();
    for (const auto& b : card_.calibration.bins)
      arr.push_back({{"lower", b.lower},
                     {"upper", b.upper},
                     {"count", b.count},
                     {"rate", b.rate ? nlohmann::ordered_json(*b.rate) : nlohmann::ordered_json(nullptr)}});
    return {200, arr.dump()};
  }

  HttpReply score(const std::string& body) const {
    nlohmann::json req;
    try {
      req = nlohmann::json::parse(body);
    } catch (const nlohmann::json::parse_error& e) {
      return error(400, std::string("malformed JSON: ") + e.what());
    }
    if (!req.is_object() || !req.contains("features") || !req["features"].is_object())
      return error(400, "request body must be {\"features\": {name: number|null}}");
    const auto& features = req["features"];
    std::unordered_map<std::string, Cell> x;
    auto missing = nlohmann::ordered_json::array();
    auto invalid = nlohmann::ordered_json::array();
    for (const auto& f : card_.features) {
      auto it = features.find(f);
      if (it == features.end()) {
        missing.push_back(f);
      } else if (it->is_null()) {
        x[f] = std::nullopt;
      } else if (it->is_number()) {
        x[f] = it->get<double>();
      } else {
        invalid.push_back(f);
      }
    }
    if (!missing.empty()) return error(400, "missing features", {{"missing", missing}});
    if (!invalid.empty()) return error(422, "feature values must be numbers or null", {{"invalid", invalid}});

    const ScoreResult r = riskcard::score(card_, x);
    nlohmann::ordered_json out;
    out["total"] = r.total;
    auto per = nlohmann::ordered_json::array();
    for (const auto& p : r.per_feature) per.push_back({{"feature", p.feature}, {"rule", p.rule}, {"points", p.points}});
    out["per_feature"] = std::move(per);
    const auto rate = risk_rate(r.total);
    out["risk_rate"] = rate ? nlohmann::ordered_json(*rate) : nlohmann::ordered_json(nullptr);
    if (card_.calibration.empty()) {
      out["percentile"] = nullptr;
      out["risk_band"] = nullptr;
    } else {
      out["percentile"] = percentile_at_most(card_.calibration, r.total);
      out["risk_band"] = risk_band(r.total);
    }
    return {200, out.dump()};
  }

  /// Observed outcome rate of the calibration bin holding `total`; an empty bin
  /// borrows the rate of the nearest occupied bin (the lower one on a tie).
  std::optional<double> risk_rate(int total) const {
    const auto& bins = card_.calibration.bins;
    if (bins.empty()) return std::nullopt;
    const auto b = static_cast<std::ptrdiff_t>(calibration_bin(card_.calibration, total));
    const auto n = static_cast<std::ptrdiff_t>(bins.size());
    for (std::ptrdiff_t d = 0; d < n; ++d) {
      if (b - d >= 0 && bins[static_cast<std::size_t>(b - d)].rate) return bins[static_cast<std::size_t>(b - d)].rate;
      if (b + d < n && bins[static_cast<std::size_t>(b + d)].rate) return bins[static_cast<std::size_t>(b + d)].rate;
    }
    return std::nullopt;
  }

  /// Band from the share of the calibration population scoring strictly below `total`.
  std::string risk_band(int total) const {
    const double p = percentile_below(card_.calibration, total);
    if (p < bands_.moderate_from) return "low";
    if (p > bands_.high_above) return "high";
    return "moderate";
  }

 private:
  static HttpReply error(int status, const std::string& message, nlohmann::ordered_json extra = nlohmann::ordered_json::object()) {
    extra["error"] = message;
    return {status, extra.dump()};
  }

  Scorecard card_;
  BandThresholds bands_;
  std::string scorecard_body_;
};

/// Registers the API routes (with permissive CORS) on `server`.
inline void mount(httplib::Server& server, std::shared_ptr<const ScoreService> svc) {
  auto send = [](httplib::Response& res, const HttpReply& r) {
    res.status = r.status;
    res.set_content(r.body, r.content_type);
  };
  server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                              {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                              {"Access-Control-Allow-Headers", "Content-Type"}});
  server.Get("/health", [svc, send](const httplib::Request&, httplib::Response& res) { send(res, svc->health()); });
  server.Get("/api/scorecard",
             [svc, send](const httplib::Request&, httplib::Response& res) { send(res, svc->scorecard()); });
  server.Get("/api/population",
             [svc, send](const httplib::Request&, httplib::Response& res) { send(res, svc->population()); });
  server.Post("/api/score",
              [svc, send](const httplib::Request& req, httplib::Response& res) { send(res, svc->score(req.body)); });
  server.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
}

/// Splits "host:port" (port required). A bare ":port" binds all interfaces.
inline std::pair<std::string, int> parse_bind(const std::string& bind) {
  const auto colon = bind.rfind(':');
  if (colon == std::string::npos) throw Error("bind address must be host:port");
  std::string host = bind.substr(0, colon);
  if (host.empty()) host = "0.0.0.0";
  const auto port = parse_double(bind.substr(colon + 1));
  if (!port || *port < 0 || *port > 65535 || *port != static_cast<int>(*port))
    throw Error("invalid port in bind address '" + bind + "'");
  return {host, static_cast<int>(*port)};
}

}  // namespace riskcard
