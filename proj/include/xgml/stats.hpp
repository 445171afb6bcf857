#pragma once

#include <span>
#include <vector>

namespace xgml::stats {

double mean(std::span<const double> x);

/// Population variance (divides by n).
double variance(std::span<const double> x);
double stddev(std::span<const double> x);

/// Linearly interpolated quantile of a sorted range, p in [0, 1].
double quantile_sorted(std::span<const double> sorted, double p);

double interquartile_range(std::span<const double> unsorted);

/// Pearson correlation. Returns NaN when either argument has zero variance.
double pearson_r(std::span<const double> a, std::span<const double> b);

/// Mean after dropping floor(trim * n) smallest and largest values.
double trimmed_mean(std::vector<double> values, double trim_fraction);

}  // namespace xgml::stats
