#pragma once

// Seeded random search over base-model hyperparameters.

#include <cmath>
#include <cstdint>
#include <vector>

#include "riskcard/dataset.hpp"
#include "riskcard/gbt.hpp"
#include "riskcard/metrics.hpp"

namespace riskcard {

struct SearchSpace {
  int n_estimators_lo = 100, n_estimators_hi = 1000;
  int max_depth_lo = 3, max_depth_hi = 10;
  double learning_rate_lo = 0.01, learning_rate_hi = 0.3;
  double subsample_lo = 0.8, subsample_hi = 1.0;
  double colsample_lo = 0.8, colsample_hi = 1.0;
};

inline Hyperparameters sample_hyperparameters(Rng& rng, const SearchSpace& s = {}, Hyperparameters base = {}) {
  base.n_estimators = s.n_estimators_lo +
                      static_cast<int>(rng.below(static_cast<std::uint64_t>(s.n_estimators_hi - s.n_estimators_lo + 1)));
  base.max_depth =
      s.max_depth_lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(s.max_depth_hi - s.max_depth_lo + 1)));
  // learning rate is drawn log-uniformly
  base.learning_rate = std::exp(rng.uniform(std::log(s.learning_rate_lo), std::log(s.learning_rate_hi)));
  base.learning_rate = std::clamp(base.learning_rate, s.learning_rate_lo, s.learning_rate_hi);
  base.subsample = rng.uniform(s.subsample_lo, s.subsample_hi);
  base.colsample_bytree = rng.uniform(s.colsample_lo, s.colsample_hi);
  return base;
}

/// Held-out quality of base-model margins, oriented so larger is better:
/// ROC AUC, negative MSE, or Harrell's C.
inline double margin_metric(Objective obj, const Dataset& test, std::span<const double> margin) {
  switch (obj) {
    case Objective::binary_logistic:
      return roc_auc(margin, test.target);
    case Objective::squared_error: {
      double s = 0.0;
      for (std::size_t i = 0; i < margin.size(); ++i) s += (margin[i] - test.target[i]) * (margin[i] - test.target[i]);
      return -s / static_cast<double>(margin.size());
    }
    case Objective::cox:
      return c_index(margin, test.target, test.event);
  }
  throw Error("unknown objective");
}

/// Mean held-out metric of the base model over the folds of `plan`. Folds on which
/// the metric is undefined (a single class, no comparable pairs) are skipped.
inline double cv_base_metric(const Dataset& d, Objective obj, const Hyperparameters& h, const FoldPlan& plan,
                             std::uint64_t seed) {
  double sum = 0.0;
  int used = 0;
  for (std::size_t r = 0; r < plan.repeats; ++r)
    for (std::size_t f = 0; f < plan.k; ++f) {
      const auto split = plan.fold(r, f);
      const Dataset train = d.subset(split.train);
      const Dataset test = d.subset(split.test);
      const GbtModel m = fit(train, obj, h, seed);
      const auto margin = predict_margins(m, test);
      try {
        sum += margin_metric(obj, test, margin);
        ++used;
      } catch (const Error&) {
      }
    }
  if (used == 0) throw Error("no fold produced a defined metric");
  return sum / used;
}

/// Returns the sampled configuration with the best mean CV metric; the first one wins ties.
inline Hyperparameters random_search_tune(const Dataset& d, Objective objective, int budget, int folds,
                                          std::uint64_t seed, const Hyperparameters& base = {}) {
  if (budget < 1) throw Error("budget must be at least 1");
  const FoldPlan plan = make_folds(d, static_cast<std::size_t>(folds), 1, Rng::mix(seed, 0x7A9E));
  Rng rng(seed, 0x7A9E);
  Hyperparameters best;
  double best_score = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < budget; ++i) {
    const Hyperparameters h = sample_hyperparameters(rng, {}, base);
    const double s = cv_base_metric(d, objective, h, plan, seed);
    if (i == 0 || s > best_score) {
      best_score = s;
      best = h;
    }
  }
  return best;
}

}  // namespace riskcard
