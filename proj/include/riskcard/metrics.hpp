#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "riskcard/common.hpp"

namespace riskcard {

/// Average (mid) ranks, 1-based.
inline std::vector<double> average_ranks(std::span<const double> v) {
  const std::size_t n = v.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && v[order[j]] == v[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) rank[order[k]] = r;
    i = j;
  }
  return rank;
}

/// Area under the ROC curve via the rank-sum statistic; ties count one half.
inline double roc_auc(std::span<const double> scores, std::span<const double> labels) {
  if (scores.size() != labels.size()) throw Error("scores and labels differ in length");
  const auto rank = average_ranks(scores);
  double n_pos = 0.0, n_neg = 0.0, rank_sum = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] > 0.5) {
      n_pos += 1.0;
      rank_sum += rank[i];
    } else {
      n_neg += 1.0;
    }
  }
  if (n_pos == 0.0 || n_neg == 0.0) throw Error("roc_auc needs both classes");
  return (rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg);
}

/// Average precision: sum over distinct thresholds (descending) of precision x recall increment.
inline double pr_auc(std::span<const double> scores, std::span<const double> labels) {
  if (scores.size() != labels.size()) throw Error("scores and labels differ in length");
  const std::size_t n = scores.size();
  double total_pos = 0.0;
  for (double l : labels) total_pos += l > 0.5 ? 1.0 : 0.0;
  if (total_pos == 0.0) throw Error("pr_auc needs at least one positive");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double tp = 0.0, fp = 0.0, prev_recall = 0.0, ap = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] > 0.5 ? tp : fp) += 1.0;
      ++j;
    }
    const double recall = tp / total_pos;
    ap += (recall - prev_recall) * (tp / (tp + fp));
    prev_recall = recall;
    i = j;
  }
  return ap;
}

/// Harrell's C. A pair (i, j) is comparable when t_i < t_j and i had the event;
/// it is concordant when score_i > score_j, and a score tie counts one half.
inline double c_index(std::span<const double> scores, std::span<const double> times,
                      std::span<const std::uint8_t> events) {
  const std::size_t n = scores.size();
  if (times.size() != n || events.size() != n) throw Error("c_index inputs differ in length");
  // Fenwick tree over score ranks, filled with rows of strictly later time
  std::vector<double> sorted_scores(scores.begin(), scores.end());
  std::sort(sorted_scores.begin(), sorted_scores.end());
  sorted_scores.erase(std::unique(sorted_scores.begin(), sorted_scores.end()), sorted_scores.end());
  const std::size_t m = sorted_scores.size();
  std::vector<double> fenwick(m + 1, 0.0);
  auto add = [&](std::size_t pos) {
    for (++pos; pos <= m; pos += pos & (~pos + 1)) fenwick[pos] += 1.0;
  };
  auto prefix = [&](std::size_t count) {  // number inserted with rank < count
    double s = 0.0;
    for (; count > 0; count -= count & (~count + 1)) s += fenwick[count];
    return s;
  };
  auto rank_of = [&](double s) {
    return static_cast<std::size_t>(std::lower_bound(sorted_scores.begin(), sorted_scores.end(), s) -
                                    sorted_scores.begin());
  };

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return times[a] > times[b]; });
  double comparable = 0.0, concordant = 0.0, inserted = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && times[order[j]] == times[order[i]]) ++j;
    for (std::size_t k = i; k < j; ++k) {
      const std::size_t r = order[k];
      if (!events[r]) continue;
      const std::size_t rk = rank_of(scores[r]);
      const double lower = prefix(rk);
      const double lower_or_equal = prefix(rk + 1);
      comparable += inserted;
      concordant += lower + 0.5 * (lower_or_equal - lower);
    }
    for (std::size_t k = i; k < j; ++k) {
      add(rank_of(scores[order[k]]));
      inserted += 1.0;
    }
    i = j;
  }
  if (comparable == 0.0) throw Error("c_index has no comparable pairs");
  return concordant / comparable;
}

inline double pearson(std::span<const double> a, std::span<const double> b) {
  const std::size_t n = a.size();
  if (n != b.size() || n < 2) throw Error("pearson needs two equal-length vectors of size >= 2");
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / static_cast<double>(n);
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / static_cast<double>(n);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

/// Spearman's rho (Pearson correlation of average ranks).
inline double spearman(std::span<const double> a, std::span<const double> b) {
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  return pearson(ra, rb);
}

inline double mean_of(std::span<const double> v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

/// Sample standard deviation (n - 1 denominator); 0 for fewer than two values.
inline double sample_std(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace riskcard
