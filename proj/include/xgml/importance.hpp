#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "xgml/graph.hpp"
#include "xgml/matrix.hpp"
#include "xgml/model.hpp"
#include "xgml/volume.hpp"

namespace xgml::importance {

struct Edge {
  std::size_t i = 0;
  std::size_t j = 0;  // vertex indices, i < j
};

struct EdgeImportance {
  std::size_t edge_index = 0;
  Edge edge;
  std::vector<double> mean_drop;  // per outcome
  std::vector<double> std_drop;   // per outcome
};

struct ImportanceOptions {
  std::size_t repeats = 20;
  std::uint64_t seed = 42;
  unsigned threads = 0;
};

/// Permutation importance on the data the model was fit to: per edge column,
/// the raw column is shuffled `repeats` times and the per-outcome drop in
/// Pearson r (baseline minus permuted) is averaged. Every edge owns an RNG
/// stream derived from seed XOR edge_index, so evaluation order and
/// parallel schedule cannot change results.
std::vector<EdgeImportance> permutation_importance(const model::TrainedMultiSvr& trained,
                                                   const Matrix& raw_features,
                                                   const Matrix& targets,
                                                   const ImportanceOptions& options);

/// Leave-one-out variant: per held-out subject a fold model is trained once,
/// the baseline is the held-out predictions, and permutations shuffle the
/// evaluation queries' column only. Slower, exposed for sensitivity checks.
std::vector<EdgeImportance> holdout_importance(const Matrix& raw_features, const Matrix& targets,
                                               const std::vector<std::string>& subject_ids,
                                               std::span<const model::SvrHyperParams> params,
                                               const ImportanceOptions& options);

struct RankedEdge {
  std::size_t edge_index = 0;
  Edge edge;
  double mean_drop = 0.0;
  double std_drop = 0.0;
};

/// The k edges with the largest mean drop for one outcome, descending;
/// ties prefer the lower edge index.
std::vector<RankedEdge> top_k_edges(const std::vector<EdgeImportance>& importances,
                                    std::size_t outcome, std::size_t k = 10);

/// Per-vertex share of the top edges' total drop mass: each edge's mean
/// drop is credited to both endpoints, then shares are normalized to sum
/// to 1. If the total is not positive every listed vertex gets 0.
std::map<std::size_t, double> region_contributions(std::span<const RankedEdge> top_edges);

/// Endpoint counts per Yeo network (two endpoints per edge), ordered by the
/// fixed seven-network list.
std::array<std::size_t, 7> yeo_distribution(std::span<const RankedEdge> top_edges,
                                            std::span<const int> region_ids,
                                            const ingest::AtlasTable& table);

/// Per top edge, the mean raw edge weight over CN subjects and over AD
/// subjects.
std::vector<std::pair<double, double>> group_edge_means(std::span<const RankedEdge> top_edges,
                                                        std::span<const graph::SubjectRecord> subjects);

struct CrossScoreEntry {
  std::size_t edge_index = 0;
  Edge edge;
  std::vector<bool> present;  // one flag per outcome
  std::size_t count = 0;
};

/// Edges appearing in any top-10 list, ranked by how many outcomes list
/// them (descending), ties by edge index.
std::vector<CrossScoreEntry> cross_score_frequency(
    const std::vector<std::vector<RankedEdge>>& all_top_lists);

struct OutcomeImportance {
  std::string outcome;
  std::vector<RankedEdge> top10;
  std::map<std::size_t, double> region_contrib;
  std::array<std::size_t, 7> yeo_tally{};
  std::vector<std::pair<double, double>> cn_ad_means;
};

struct ImportanceReport {
  std::vector<OutcomeImportance> per_outcome;
  std::vector<CrossScoreEntry> cross_score;
};

ImportanceReport build_report(const std::vector<EdgeImportance>& importances,
                              std::span<const graph::SubjectRecord> subjects,
                              const ingest::AtlasTable& table,
                              const std::vector<std::string>& outcome_names, std::size_t top_k = 10);

/// importance_report.json plus plot CSVs: cross_score.csv (edge rows, 0/1
/// per outcome), edge_means.csv (CN/AD bars), chord.csv (network pairs).
void write_importance_report(const std::filesystem::path& directory,
                             const ImportanceReport& report,
                             std::span<const int> region_ids, const ingest::AtlasTable& table);

}  // namespace xgml::importance
