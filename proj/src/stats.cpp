#include "xgml/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "xgml/error.hpp"

namespace xgml::stats {

double mean(std::span<const double> x) {
  if (x.empty()) return std::numeric_limits<double>::quiet_NaN();
  double s = 0.0;
  for (double v : x) s += v;
  return s / static_cast<double>(x.size());
}

double variance(std::span<const double> x) {
  if (x.empty()) return std::numeric_limits<double>::quiet_NaN();
  const double m = mean(x);
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return s / static_cast<double>(x.size());
}

double stddev(std::span<const double> x) { return std::sqrt(variance(x)); }

double quantile_sorted(std::span<const double> sorted, double p) {
  if (sorted.empty()) return std::numeric_limits<double>::quiet_NaN();
  if (sorted.size() == 1) return sorted[0];
  const double pos = p * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

double interquartile_range(std::span<const double> unsorted) {
  std::vector<double> x(unsorted.begin(), unsorted.end());
  std::sort(x.begin(), x.end());
  return quantile_sorted(x, 0.75) - quantile_sorted(x, 0.25);
}

double pearson_r(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.empty()) return std::numeric_limits<double>::quiet_NaN();
  const double ma = mean(a);
  const double mb = mean(b);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma;
    const double db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa <= 0.0 || sbb <= 0.0) return std::numeric_limits<double>::quiet_NaN();
  return sab / std::sqrt(saa * sbb);
}

double trimmed_mean(std::vector<double> values, double trim_fraction) {
  if (values.empty()) raise(Errc::empty_group, "trimmed mean of an empty set");
  if (trim_fraction < 0.0 || trim_fraction >= 0.5)
    raise(Errc::bad_config, "trim fraction must lie in [0, 0.5)");
  std::sort(values.begin(), values.end());
  const auto drop = static_cast<std::size_t>(
      std::floor(trim_fraction * static_cast<double>(values.size())));
  const std::size_t kept = values.size() - 2 * drop;
  double s = 0.0;
  for (std::size_t i = drop; i < drop + kept; ++i) s += values[i];
  return s / static_cast<double>(kept);
}

}  // namespace xgml::stats
