#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "kgpm/error.hpp"

namespace kgpm {

// 1-based ranks with ties replaced by their average rank.
inline std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

// Pearson correlation; NaN when either input is constant.
inline double pearson(std::span<const double> x, std::span<const double> y) {
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return std::nan("");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

struct SpearmanResult {
  double rho = std::nan("");
  double p_value = std::nan("");
  std::size_t n = 0;
  bool degenerate = false;  // an input was constant, so ρ is undefined
};

/// Spearman's ρ (Pearson on average ranks) with a two-sided p-value from
/// t = ρ √((n-2)/(1-ρ²)) on n-2 degrees of freedom.
inline SpearmanResult spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ConfigError("spearman inputs differ in length");
  if (x.size() < 3) throw ConfigError("spearman needs at least 3 points");
  for (std::size_t i = 0; i < x.size(); ++i)
    if (!std::isfinite(x[i]) || !std::isfinite(y[i])) throw DataError("spearman input is not finite");
  SpearmanResult r;
  r.n = x.size();
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  r.rho = pearson(rx, ry);
  if (std::isnan(r.rho)) {
    r.degenerate = true;
    return r;
  }
  const double df = static_cast<double>(r.n - 2);
  if (std::abs(r.rho) >= 1.0) {
    r.p_value = 0.0;
    return r;
  }
  const double t = r.rho * std::sqrt(df / (1.0 - r.rho * r.rho));
  const boost::math::students_t dist(df);
  r.p_value = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
  return r;
}

}  // namespace kgpm
