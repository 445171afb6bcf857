#pragma once

#include <span>
#include <string>
#include <vector>

#include "xgml/density.hpp"
#include "xgml/graph.hpp"

namespace xgml::dtw {

enum class LocalCost { absolute_difference, squared_difference };

const char* to_string(LocalCost cost) noexcept;
LocalCost parse_local_cost(const std::string& text);

struct DtwConfig {
  LocalCost local_cost = LocalCost::absolute_difference;
};

/// Alignment distance by the unconstrained warping recursion
/// D(i,j) = d(a_i, b_j) + min(D(i-1,j), D(i,j-1), D(i-1,j-1)) with
/// D(0,0) = 0 and infinite borders, evaluated with a two-row rolling
/// buffer. Symmetric local costs give a bit-exact symmetric result: the
/// transposed table holds identical cell values.
double dtw_distance(std::span<const double> a, std::span<const double> b, DtwConfig cfg = {});

/// Pairwise distances between region density curves (their pdf ordinates).
/// Each of the k(k-1)/2 pairs is evaluated exactly once.
graph::DistanceGraph pairwise_distances(const std::vector<density::DensityCurve>& curves,
                                        DtwConfig cfg = {}, unsigned threads = 0);

}  // namespace xgml::dtw
