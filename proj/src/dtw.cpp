#include "xgml/dtw.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "xgml/error.hpp"
#include "xgml/parallel.hpp"

namespace xgml::dtw {
namespace {

void check_sequence(std::span<const double> s, const char* side) {
  if (s.empty()) raise(Errc::empty_sequence, std::string(side) + " sequence is empty");
  for (double v : s)
    if (!std::isfinite(v))
      raise(Errc::non_finite_value, std::string(side) + " sequence contains a non-finite value");
}

}  // namespace

const char* to_string(LocalCost cost) noexcept {
  return cost == LocalCost::absolute_difference ? "absolute_difference" : "squared_difference";
}

LocalCost parse_local_cost(const std::string& text) {
  if (text == "absolute_difference" || text == "abs") return LocalCost::absolute_difference;
  if (text == "squared_difference" || text == "squared") return LocalCost::squared_difference;
  raise(Errc::bad_config, "unknown local cost '" + text +
                              "' (expected absolute_difference or squared_difference)");
}

double dtw_distance(std::span<const double> a, std::span<const double> b, DtwConfig cfg) {
  check_sequence(a, "first");
  check_sequence(b, "second");
  if (b.size() > a.size()) std::swap(a, b);

  constexpr double inf = std::numeric_limits<double>::infinity();
  std::size_t m = b.size();
  std::vector<double> prev(m + 1, inf), curr(m + 1, inf);
  prev[0] = 0.0;

  bool squared = cfg.local_cost == LocalCost::squared_difference;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    curr[0] = inf;
    double ai = a[i - 1];
    for (std::size_t j = 1; j <= m; ++j) {
      double diff = ai - b[j - 1];
      double d = squared ? diff * diff : std::fabs(diff);
      curr[j] = d + std::min({prev[j], curr[j - 1], prev[j - 1]});
    }
    std::swap(prev, curr);
  }
  return prev[m];
}

graph::DistanceGraph pairwise_distances(const std::vector<density::DensityCurve>& curves,
                                        DtwConfig cfg, unsigned threads) {
  if (curves.empty()) raise(Errc::bad_config, "no density curves given");
  std::size_t k = curves.size();
  auto g = graph::DistanceGraph::zeros(k);
  for (std::size_t i = 0; i < k; ++i) g.region_ids[i] = curves[i].region_id;

  parallel_for(graph::edge_count(k), effective_threads(threads), [&](std::size_t e) {
    auto [i, j] = graph::edge_endpoints(e, k);
    try {
      g.weights[e] = dtw_distance(curves[i].pdf, curves[j].pdf, cfg);
    } catch (const Error& err) {
      raise(err.code(), "regions (" + std::to_string(curves[i].region_id) + ", " +
                            std::to_string(curves[j].region_id) + "): " + err.detail());
    }
  });
  return g;
}

}  // namespace xgml::dtw
