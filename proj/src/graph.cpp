#include "xgml/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "xgml/error.hpp"
#include "xgml/text.hpp"

namespace xgml::graph {
namespace {

constexpr char kMagic[6] = {'X', 'G', 'M', 'L', 'G', '1'};

void check_pair(std::size_t i, std::size_t j, std::size_t k) {
  if (i >= k || j >= k || i == j)
    raise(Errc::bad_config, "edge (" + std::to_string(i) + ", " + std::to_string(j) +
                                ") is invalid for k = " + std::to_string(k));
}

}  // namespace

std::size_t edge_index(std::size_t i, std::size_t j, std::size_t k) {
  check_pair(i, j, k);
  if (i > j) std::swap(i, j);
  return i * (2 * k - i - 1) / 2 + (j - i - 1);
}

std::pair<std::size_t, std::size_t> edge_endpoints(std::size_t index, std::size_t k) {
  if (index >= edge_count(k))
    raise(Errc::bad_config, "edge index " + std::to_string(index) + " out of range for k = " +
                                std::to_string(k));
  std::size_t i = 0;
  std::size_t row_len = k - 1;
  while (index >= row_len) {
    index -= row_len;
    --row_len;
    ++i;
  }
  return {i, i + 1 + index};
}

DistanceGraph DistanceGraph::zeros(std::size_t k) {
  DistanceGraph g;
  g.k = k;
  g.region_ids.resize(k);
  std::iota(g.region_ids.begin(), g.region_ids.end(), 1);
  g.weights.assign(edge_count(k), 0.0);
  return g;
}

double DistanceGraph::at(std::size_t i, std::size_t j) const {
  if (i == j) {
    if (i >= k) raise(Errc::bad_config, "vertex " + std::to_string(i) + " out of range");
    return 0.0;
  }
  return weights[edge_index(i, j, k)];
}

void DistanceGraph::set(std::size_t i, std::size_t j, double value) {
  weights[edge_index(i, j, k)] = value;
}

void DistanceGraph::validate() const {
  if (k < 1) raise(Errc::inconsistent_dimensions, "graph needs at least one vertex");
  if (region_ids.size() != k)
    raise(Errc::inconsistent_dimensions, "graph has " + std::to_string(region_ids.size()) +
                                             " region ids for k = " + std::to_string(k));
  if (weights.size() != edge_count(k))
    raise(Errc::inconsistent_dimensions, "graph holds " + std::to_string(weights.size()) +
                                             " edges, k = " + std::to_string(k) + " implies " +
                                             std::to_string(edge_count(k)));
  for (double w : weights)
    if (!std::isfinite(w) || w < 0.0)
      raise(Errc::non_finite_value, "graph weights must be finite and non-negative");
}

std::vector<double> flatten(const DistanceGraph& g) {
  g.validate();
  return g.weights;
}

DistanceGraph unflatten(std::span<const double> values, std::size_t k) {
  if (values.size() != edge_count(k))
    raise(Errc::inconsistent_dimensions, "feature vector of length " + std::to_string(values.size()) +
                                             " does not match k = " + std::to_string(k));
  DistanceGraph g = DistanceGraph::zeros(k);
  g.weights.assign(values.begin(), values.end());
  g.validate();
  return g;
}

GroupGraph group_graph(std::span<const DistanceGraph> graphs, ingest::GroupLabel group,
                       double trim_fraction) {
  if (graphs.empty()) raise(Errc::empty_group, "group has no subjects");
  if (!(trim_fraction >= 0.0) || trim_fraction >= 0.5)
    raise(Errc::bad_config, "trim_fraction must lie in [0, 0.5), got " + format_double(trim_fraction));
  std::size_t k = graphs[0].k;
  for (const auto& g : graphs) {
    g.validate();
    if (g.k != k)
      raise(Errc::inconsistent_dimensions, "group mixes k = " + std::to_string(k) + " and k = " +
                                               std::to_string(g.k));
  }

  std::size_t n = graphs.size();
  std::size_t drop = static_cast<std::size_t>(std::floor(trim_fraction * static_cast<double>(n)));
  std::size_t kept = n - 2 * drop;

  GroupGraph out;
  out.group = group;
  out.n_subjects = n;
  out.trim_fraction = trim_fraction;
  out.k = k;
  out.weights.resize(edge_count(k));

  std::vector<double> column(n);
  for (std::size_t e = 0; e < out.weights.size(); ++e) {
    for (std::size_t s = 0; s < n; ++s) column[s] = graphs[s].weights[e];
    std::sort(column.begin(), column.end());
    double sum = 0.0;
    for (std::size_t s = drop; s < drop + kept; ++s) sum += column[s];
    out.weights[e] = sum / static_cast<double>(kept);
  }

  auto [lo_it, hi_it] = std::minmax_element(out.weights.begin(), out.weights.end());
  double lo = *lo_it;
  double hi = *hi_it;
  if (hi > lo) {
    for (double& w : out.weights) w = (w - lo) / (hi - lo);
  } else {
    std::fill(out.weights.begin(), out.weights.end(), 0.0);
    out.degenerate = true;
  }
  return out;
}

double mean_distance(const GroupGraph& g) {
  if (g.weights.empty()) raise(Errc::empty_group, "group graph has no edges");
  double sum = std::accumulate(g.weights.begin(), g.weights.end(), 0.0);
  return sum / static_cast<double>(g.weights.size());
}

std::size_t count_edges_above(const GroupGraph& g, double threshold) {
  if (!(threshold > 0.0) || !(threshold < 1.0))
    raise(Errc::bad_config, "threshold must lie in (0, 1), got " + format_double(threshold));
  return static_cast<std::size_t>(
      std::count_if(g.weights.begin(), g.weights.end(), [&](double w) { return w > threshold; }));
}

Matrix exp_similarity(const DistanceGraph& g) {
  g.validate();
  Matrix sim(g.k, g.k);
  for (std::size_t i = 0; i < g.k; ++i) {
    sim(i, i) = 1.0;
    for (std::size_t j = i + 1; j < g.k; ++j) {
      double s = std::exp(-g.at(i, j));
      sim(i, j) = s;
      sim(j, i) = s;
    }
  }
  return sim;
}

void write_graph(const std::filesystem::path& path, const DistanceGraph& g) {
  g.validate();
  if (g.k > 0xffffffffull) raise(Errc::bad_config, "k too large for the graph container");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) raise(Errc::io_error, "cannot create " + path.string());
  out.write(kMagic, sizeof kMagic);
  auto k32 = static_cast<std::uint32_t>(g.k);
  out.write(reinterpret_cast<const char*>(&k32), 4);
  out.write(reinterpret_cast<const char*>(g.weights.data()),
            static_cast<std::streamsize>(g.weights.size() * sizeof(double)));
  if (!out) raise(Errc::io_error, "write failed for " + path.string());
}

DistanceGraph read_graph(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(Errc::io_error, "cannot open " + path.string());
  char magic[6];
  if (!in.read(magic, 6) || std::memcmp(magic, kMagic, 6) != 0)
    raise(Errc::not_a_volume, path.string() + ": missing XGMLG1 magic");
  std::uint32_t k32 = 0;
  if (!in.read(reinterpret_cast<char*>(&k32), 4))
    raise(Errc::io_error, path.string() + ": truncated header");
  DistanceGraph g = DistanceGraph::zeros(k32);
  if (!in.read(reinterpret_cast<char*>(g.weights.data()),
               static_cast<std::streamsize>(g.weights.size() * sizeof(double))))
    raise(Errc::dimension_mismatch, path.string() + ": payload shorter than k implies");
  char extra;
  if (in.read(&extra, 1))
    raise(Errc::dimension_mismatch, path.string() + ": payload longer than k implies");
  g.validate();
  return g;
}

namespace {

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) raise(Errc::io_error, "cannot create " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) raise(Errc::io_error, "write failed for " + path.string());
}

std::string region_name_or_id(const ingest::AtlasTable* table, int region_id) {
  if (table) return table->by_label(region_id).region_name;
  return std::to_string(region_id);
}

}  // namespace

void write_edge_csv(const std::filesystem::path& path, const DistanceGraph& g,
                    const ingest::AtlasTable* table) {
  g.validate();
  std::string text = "i,j,region_i,region_j,weight\n";
  for (std::size_t e = 0; e < g.weights.size(); ++e) {
    auto [i, j] = edge_endpoints(e, g.k);
    text += std::to_string(i) + ',' + std::to_string(j) + ',' +
            region_name_or_id(table, g.region_ids[i]) + ',' +
            region_name_or_id(table, g.region_ids[j]) + ',' + format_double(g.weights[e]) + '\n';
  }
  write_text_file(path, text);
}

void write_group_report(const std::filesystem::path& json_path, const GroupGraph& g) {
  nlohmann::json report;
  report["group"] = ingest::to_string(g.group);
  report["n_subjects"] = g.n_subjects;
  report["trim_fraction"] = g.trim_fraction;
  report["k"] = g.k;
  report["degenerate"] = g.degenerate;
  report["mean_distance"] = mean_distance(g);
  report["counts"] = {{"0.70", count_edges_above(g, 0.70)},
                      {"0.75", count_edges_above(g, 0.75)},
                      {"0.80", count_edges_above(g, 0.80)}};
  auto text = report.dump(2);
  text.push_back('\n');
  write_text_file(json_path, text);
}

void write_group_edges_csv(const std::filesystem::path& csv_path, const GroupGraph& g,
                           double display_threshold, const ingest::AtlasTable* table) {
  std::string text = "i,j,region_i,region_j,weight\n";
  for (std::size_t e = 0; e < g.weights.size(); ++e) {
    if (!(g.weights[e] > display_threshold)) continue;
    auto [i, j] = edge_endpoints(e, g.k);
    int id_i = static_cast<int>(i) + 1;
    int id_j = static_cast<int>(j) + 1;
    text += std::to_string(i) + ',' + std::to_string(j) + ',' + region_name_or_id(table, id_i) +
            ',' + region_name_or_id(table, id_j) + ',' + format_double(g.weights[e]) + '\n';
  }
  write_text_file(csv_path, text);
}

}  // namespace xgml::graph
