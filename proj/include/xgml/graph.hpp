#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "xgml/matrix.hpp"
#include "xgml/volume.hpp"

namespace xgml::graph {

/// Number of strict-upper-triangle edges of a k-vertex graph.
constexpr std::size_t edge_count(std::size_t k) { return k * (k - 1) / 2; }

/// Row-major position of edge (i, j), i < j, in the flattened upper triangle.
std::size_t edge_index(std::size_t i, std::size_t j, std::size_t k);

/// Inverse of edge_index.
std::pair<std::size_t, std::size_t> edge_endpoints(std::size_t index, std::size_t k);

/// Symmetric non-negative distance matrix with a zero diagonal, stored as
/// its strict upper triangle in row-major order. Symmetry and the zero
/// diagonal hold by construction.
struct DistanceGraph {
  std::size_t k = 0;
  std::vector<int> region_ids;
  std::vector<double> weights;

  static DistanceGraph zeros(std::size_t k);

  double at(std::size_t i, std::size_t j) const;
  void set(std::size_t i, std::size_t j, double value);
  void validate() const;
};

/// The flattened feature vector is the upper triangle in its storage order.
std::vector<double> flatten(const DistanceGraph& g);
DistanceGraph unflatten(std::span<const double> values, std::size_t k);

/// One subject's pipeline state: the distance graph plus outcome scores and
/// the diagnostic group.
struct SubjectRecord {
  std::string id;
  DistanceGraph distances;
  std::array<double, ingest::kOutcomeCount> scores{};
  ingest::GroupLabel group = ingest::GroupLabel::cn;
};

/// Group-level graph: per-edge trimmed mean over subjects, then min-max
/// normalized over the off-diagonal entries. `degenerate` marks the
/// zero-range case where normalization maps every edge to 0.
struct GroupGraph {
  ingest::GroupLabel group = ingest::GroupLabel::cn;
  std::size_t n_subjects = 0;
  double trim_fraction = 0.0;
  std::size_t k = 0;
  std::vector<double> weights;
  bool degenerate = false;
};

GroupGraph group_graph(std::span<const DistanceGraph> graphs, ingest::GroupLabel group,
                       double trim_fraction);

/// Arithmetic mean over the strict upper triangle.
double mean_distance(const GroupGraph& g);

/// Count of strict-upper-triangle entries strictly greater than threshold.
std::size_t count_edges_above(const GroupGraph& g, double threshold);

/// Entry-wise e^(-w) as a dense k x k matrix; the diagonal becomes 1.
Matrix exp_similarity(const DistanceGraph& g);

/// Binary container: magic "XGMLG1", k as uint32 little-endian, then the
/// k(k-1)/2 upper-triangle float64 values in storage order.
void write_graph(const std::filesystem::path& path, const DistanceGraph& g);
DistanceGraph read_graph(const std::filesystem::path& path);

/// Edge list CSV (i, j, region names when a table is given, weight).
void write_edge_csv(const std::filesystem::path& path, const DistanceGraph& g,
                    const ingest::AtlasTable* table = nullptr);

/// JSON report with mean distance and the 0.70/0.75/0.80 threshold counts,
/// plus a CSV of edges above a display threshold.
void write_group_report(const std::filesystem::path& json_path, const GroupGraph& g);
void write_group_edges_csv(const std::filesystem::path& csv_path, const GroupGraph& g,
                           double display_threshold, const ingest::AtlasTable* table = nullptr);

}  // namespace xgml::graph
