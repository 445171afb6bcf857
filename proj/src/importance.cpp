#include "xgml/importance.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include <json.hpp>

#include "xgml/error.hpp"
#include "xgml/parallel.hpp"
#include "xgml/rng.hpp"
#include "xgml/stats.hpp"
#include "xgml/text.hpp"

namespace xgml::importance {
namespace {

/// Vertex count whose strict upper triangle has exactly p entries.
std::size_t vertex_count_for(std::size_t p) {
  auto k = static_cast<std::size_t>((1.0 + std::sqrt(1.0 + 8.0 * static_cast<double>(p))) / 2.0);
  for (std::size_t cand = k > 1 ? k - 1 : 1; cand <= k + 1; ++cand)
    if (graph::edge_count(cand) == p) return cand;
  raise(Errc::inconsistent_dimensions,
        std::to_string(p) + " features do not form an upper triangle of any vertex count");
}

double score_or_zero(std::span<const double> observed, std::span<const double> predicted) {
  double r = stats::pearson_r(observed, predicted);
  return std::isnan(r) ? 0.0 : r;
}

std::vector<double> target_column(const Matrix& targets, std::size_t o) {
  std::vector<double> col(targets.rows);
  for (std::size_t r = 0; r < targets.rows; ++r) col[r] = targets(r, o);
  return col;
}

}  // namespace

std::vector<EdgeImportance> permutation_importance(const model::TrainedMultiSvr& trained,
                                                   const Matrix& raw_features,
                                                   const Matrix& targets,
                                                   const ImportanceOptions& options) {
  if (options.repeats < 1) raise(Errc::bad_config, "repeats must be at least 1");
  if (raw_features.rows != targets.rows)
    raise(Errc::bad_config, "features have " + std::to_string(raw_features.rows) +
                                " rows, targets " + std::to_string(targets.rows));
  if (trained.per_outcome.size() != targets.cols)
    raise(Errc::bad_config, "model has " + std::to_string(trained.per_outcome.size()) +
                                " outcomes, targets " + std::to_string(targets.cols));
  std::size_t p = raw_features.cols;
  std::size_t k = vertex_count_for(p);
  std::size_t n = raw_features.rows;
  std::size_t n_outcomes = targets.cols;

  Matrix z = trained.standardizer.apply(raw_features);

  // Baseline scores and, per outcome, the query-to-support squared
  // distances that permutations will adjust incrementally.
  std::vector<double> base_r(n_outcomes);
  std::vector<Matrix> base_d2(n_outcomes);
  std::vector<std::vector<double>> observed(n_outcomes);
  for (std::size_t o = 0; o < n_outcomes; ++o) {
    const auto& svr = trained.per_outcome[o];
    if (svr.support_vectors.cols != p)
      raise(Errc::width_mismatch, "model width " + std::to_string(svr.support_vectors.cols) +
                                      " does not match feature width " + std::to_string(p));
    observed[o] = target_column(targets, o);
    Matrix d2(n, svr.support_vectors.rows);
    std::vector<double> preds(n);
    for (std::size_t q = 0; q < n; ++q) {
      double fx = svr.bias;
      for (std::size_t s = 0; s < svr.support_vectors.rows; ++s) {
        double dist = 0.0;
        auto sv = svr.support_vectors.row(s);
        auto zq = z.row(q);
        for (std::size_t c = 0; c < p; ++c) {
          double diff = zq[c] - sv[c];
          dist += diff * diff;
        }
        d2(q, s) = dist;
        fx += svr.dual_coeffs[s] * std::exp(-svr.params.gamma * dist);
      }
      preds[q] = fx;
    }
    base_r[o] = score_or_zero(observed[o], preds);
    base_d2[o] = std::move(d2);
  }

  std::vector<EdgeImportance> result(p);
  parallel_for(p, effective_threads(options.threads), [&](std::size_t e) {
    Rng rng(Rng::derive(options.seed, e));
    std::vector<double> zcol(n);
    for (std::size_t q = 0; q < n; ++q) zcol[q] = z(q, e);

    std::vector<double> drop_sum(n_outcomes, 0.0), drop_sumsq(n_outcomes, 0.0);
    std::vector<std::size_t> perm(n);
    std::vector<double> zperm(n), preds(n);

    for (std::size_t rep = 0; rep < options.repeats; ++rep) {
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      rng.shuffle(perm);
      for (std::size_t q = 0; q < n; ++q) zperm[q] = zcol[perm[q]];

      for (std::size_t o = 0; o < n_outcomes; ++o) {
        const auto& svr = trained.per_outcome[o];
        const Matrix& d2 = base_d2[o];
        for (std::size_t q = 0; q < n; ++q) {
          double fx = svr.bias;
          for (std::size_t s = 0; s < svr.support_vectors.rows; ++s) {
            double sv_e = svr.support_vectors(s, e);
            double old_diff = zcol[q] - sv_e;
            double new_diff = zperm[q] - sv_e;
            double arg = d2(q, s) + (new_diff * new_diff - old_diff * old_diff);
            fx += svr.dual_coeffs[s] * std::exp(-svr.params.gamma * arg);
          }
          preds[q] = fx;
        }
        double drop = base_r[o] - score_or_zero(observed[o], preds);
        drop_sum[o] += drop;
        drop_sumsq[o] += drop * drop;
      }
    }

    EdgeImportance imp;
    imp.edge_index = e;
    auto [i, j] = graph::edge_endpoints(e, k);
    imp.edge = {i, j};
    imp.mean_drop.resize(n_outcomes);
    imp.std_drop.resize(n_outcomes);
    auto reps = static_cast<double>(options.repeats);
    for (std::size_t o = 0; o < n_outcomes; ++o) {
      double mean = drop_sum[o] / reps;
      double var = drop_sumsq[o] / reps - mean * mean;
      imp.mean_drop[o] = mean;
      imp.std_drop[o] = std::sqrt(std::max(var, 0.0));
    }
    result[e] = std::move(imp);
  });
  return result;
}

std::vector<EdgeImportance> holdout_importance(const Matrix& raw_features, const Matrix& targets,
                                               const std::vector<std::string>& subject_ids,
                                               std::span<const model::SvrHyperParams> params,
                                               const ImportanceOptions& options) {
  if (options.repeats < 1) raise(Errc::bad_config, "repeats must be at least 1");
  if (raw_features.rows != targets.rows || raw_features.rows != subject_ids.size())
    raise(Errc::bad_config, "row counts of features, targets and ids disagree");
  if (params.size() != targets.cols)
    raise(Errc::bad_config, "got " + std::to_string(params.size()) + " parameter sets for " +
                                std::to_string(targets.cols) + " outcomes");
  if (raw_features.rows < 3)
    raise(Errc::too_few_rows, "leave-one-out importance needs at least 3 subjects");

  std::size_t n = raw_features.rows;
  std::size_t p = raw_features.cols;
  std::size_t k = vertex_count_for(p);
  std::size_t n_outcomes = targets.cols;

  // Deterministic fold order: ascending subject id.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return subject_ids[a] < subject_ids[b]; });
  Matrix canon(n, p);
  Matrix canon_targets(n, n_outcomes);
  for (std::size_t r = 0; r < n; ++r) {
    std::copy(raw_features.row(order[r]).begin(), raw_features.row(order[r]).end(),
              canon.row(r).begin());
    for (std::size_t o = 0; o < n_outcomes; ++o) canon_targets(r, o) = targets(order[r], o);
  }

  struct Fold {
    model::Standardizer scaler;
    std::vector<model::TrainedSvr> per_outcome;
    std::vector<double> query_z;                 // standardized held-out row
    std::vector<std::vector<double>> query_d2;   // per outcome, query to SVs
  };
  std::vector<Fold> folds(n);
  Matrix baseline_preds(n, n_outcomes);

  parallel_for(n, effective_threads(options.threads), [&](std::size_t f) {
    std::vector<std::size_t> train_rows;
    train_rows.reserve(n - 1);
    for (std::size_t r = 0; r < n; ++r)
      if (r != f) train_rows.push_back(r);

    Matrix train_raw(n - 1, p);
    for (std::size_t r = 0; r < train_rows.size(); ++r)
      std::copy(canon.row(train_rows[r]).begin(), canon.row(train_rows[r]).end(),
                train_raw.row(r).begin());

    Fold fold;
    fold.scaler = model::Standardizer::fit(train_raw);
    Matrix train_z = fold.scaler.apply(train_raw);
    Matrix query_raw(1, p);
    std::copy(canon.row(f).begin(), canon.row(f).end(), query_raw.row(0).begin());
    Matrix query_z = fold.scaler.apply(query_raw);
    fold.query_z.assign(query_z.row(0).begin(), query_z.row(0).end());

    fold.per_outcome.reserve(n_outcomes);
    fold.query_d2.resize(n_outcomes);
    for (std::size_t o = 0; o < n_outcomes; ++o) {
      std::vector<double> z_train(train_rows.size());
      for (std::size_t r = 0; r < train_rows.size(); ++r)
        z_train[r] = canon_targets(train_rows[r], o);
      auto svr = model::svr_fit(train_z, z_train, params[o]);
      auto& d2 = fold.query_d2[o];
      d2.resize(svr.support_vectors.rows);
      double fx = svr.bias;
      for (std::size_t s = 0; s < svr.support_vectors.rows; ++s) {
        double dist = 0.0;
        auto sv = svr.support_vectors.row(s);
        for (std::size_t c = 0; c < p; ++c) {
          double diff = fold.query_z[c] - sv[c];
          dist += diff * diff;
        }
        d2[s] = dist;
        fx += svr.dual_coeffs[s] * std::exp(-svr.params.gamma * dist);
      }
      baseline_preds(f, o) = fx;
      fold.per_outcome.push_back(std::move(svr));
    }
    folds[f] = std::move(fold);
  });

  std::vector<double> base_r(n_outcomes);
  std::vector<std::vector<double>> observed(n_outcomes);
  for (std::size_t o = 0; o < n_outcomes; ++o) {
    observed[o] = target_column(canon_targets, o);
    std::vector<double> preds(n);
    for (std::size_t f = 0; f < n; ++f) preds[f] = baseline_preds(f, o);
    base_r[o] = score_or_zero(observed[o], preds);
  }

  std::vector<EdgeImportance> result(p);
  parallel_for(p, effective_threads(options.threads), [&](std::size_t e) {
    Rng rng(Rng::derive(options.seed, e));
    std::vector<double> raw_col(n);
    for (std::size_t f = 0; f < n; ++f) raw_col[f] = canon(f, e);

    std::vector<double> drop_sum(n_outcomes, 0.0), drop_sumsq(n_outcomes, 0.0);
    std::vector<std::size_t> perm(n);
    std::vector<double> preds(n);

    for (std::size_t rep = 0; rep < options.repeats; ++rep) {
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      rng.shuffle(perm);

      for (std::size_t o = 0; o < n_outcomes; ++o) {
        for (std::size_t f = 0; f < n; ++f) {
          const Fold& fold = folds[f];
          const auto& svr = fold.per_outcome[o];
          double mean_e = fold.scaler.mean[e];
          double std_e = fold.scaler.std_dev[e];
          double z_old = fold.query_z[e];
          double z_new = (raw_col[perm[f]] - mean_e) / std_e;
          double fx = svr.bias;
          for (std::size_t s = 0; s < svr.support_vectors.rows; ++s) {
            double sv_e = svr.support_vectors(s, e);
            double old_diff = z_old - sv_e;
            double new_diff = z_new - sv_e;
            double arg = fold.query_d2[o][s] + (new_diff * new_diff - old_diff * old_diff);
            fx += svr.dual_coeffs[s] * std::exp(-svr.params.gamma * arg);
          }
          preds[f] = fx;
        }
        double drop = base_r[o] - score_or_zero(observed[o], preds);
        drop_sum[o] += drop;
        drop_sumsq[o] += drop * drop;
      }
    }

    EdgeImportance imp;
    imp.edge_index = e;
    auto [i, j] = graph::edge_endpoints(e, k);
    imp.edge = {i, j};
    imp.mean_drop.resize(n_outcomes);
    imp.std_drop.resize(n_outcomes);
    auto reps = static_cast<double>(options.repeats);
    for (std::size_t o = 0; o < n_outcomes; ++o) {
      double mean = drop_sum[o] / reps;
      double var = drop_sumsq[o] / reps - mean * mean;
      imp.mean_drop[o] = mean;
      imp.std_drop[o] = std::sqrt(std::max(var, 0.0));
    }
    result[e] = std::move(imp);
  });
  return result;
}

std::vector<RankedEdge> top_k_edges(const std::vector<EdgeImportance>& importances,
                                    std::size_t outcome, std::size_t k) {
  std::vector<RankedEdge> ranked;
  for (const auto& imp : importances) {
    if (outcome >= imp.mean_drop.size())
      raise(Errc::bad_config, "outcome index " + std::to_string(outcome) + " out of range");
    if (std::isfinite(imp.mean_drop[outcome]))
      ranked.push_back({imp.edge_index, imp.edge, imp.mean_drop[outcome], imp.std_drop[outcome]});
  }
  if (ranked.size() < k)
    raise(Errc::too_few_edges, "need " + std::to_string(k) + " edges with finite drops, have " +
                                   std::to_string(ranked.size()));
  std::sort(ranked.begin(), ranked.end(), [](const RankedEdge& a, const RankedEdge& b) {
    if (a.mean_drop != b.mean_drop) return a.mean_drop > b.mean_drop;
    return a.edge_index < b.edge_index;
  });
  ranked.resize(k);
  return ranked;
}

std::map<std::size_t, double> region_contributions(std::span<const RankedEdge> top_edges) {
  if (top_edges.empty()) raise(Errc::bad_config, "no top edges given");
  std::map<std::size_t, double> sums;
  for (const auto& edge : top_edges) {
    sums[edge.edge.i] += edge.mean_drop;
    sums[edge.edge.j] += edge.mean_drop;
  }
  double total = 0.0;
  for (const auto& [vertex, sum] : sums) total += sum;
  if (total > 0.0) {
    for (auto& [vertex, sum] : sums) sum /= total;
  } else {
    for (auto& [vertex, sum] : sums) sum = 0.0;
  }
  return sums;
}

std::array<std::size_t, 7> yeo_distribution(std::span<const RankedEdge> top_edges,
                                            std::span<const int> region_ids,
                                            const ingest::AtlasTable& table) {
  std::array<std::size_t, 7> tally{};
  auto network_index = [&](std::size_t vertex) {
    if (vertex >= region_ids.size())
      raise(Errc::unknown_region, "vertex " + std::to_string(vertex) + " has no region id");
    int region = region_ids[vertex];
    if (region < 1 || static_cast<std::size_t>(region) > table.region_count())
      raise(Errc::unknown_region, "region " + std::to_string(region) + " is not in the atlas table");
    const auto& network = table.by_label(region).yeo_network;
    for (std::size_t w = 0; w < ingest::kYeoNetworks.size(); ++w)
      if (network == ingest::kYeoNetworks[w]) return w;
    raise(Errc::unknown_region, "region " + std::to_string(region) + " names unknown network '" +
                                    network + "'");
  };
  for (const auto& edge : top_edges) {
    ++tally[network_index(edge.edge.i)];
    ++tally[network_index(edge.edge.j)];
  }
  return tally;
}

std::vector<std::pair<double, double>> group_edge_means(
    std::span<const RankedEdge> top_edges, std::span<const graph::SubjectRecord> subjects) {
  std::vector<const graph::DistanceGraph*> cn, ad;
  for (const auto& subject : subjects) {
    if (subject.group == ingest::GroupLabel::cn) cn.push_back(&subject.distances);
    if (subject.group == ingest::GroupLabel::ad) ad.push_back(&subject.distances);
  }
  if (cn.empty() || ad.empty())
    raise(Errc::empty_group, "edge comparison needs at least one CN and one AD subject");

  std::vector<std::pair<double, double>> means;
  means.reserve(top_edges.size());
  for (const auto& edge : top_edges) {
    double cn_sum = 0.0, ad_sum = 0.0;
    for (const auto* g : cn) {
      if (edge.edge_index >= g->weights.size())
        raise(Errc::inconsistent_dimensions, "edge index " + std::to_string(edge.edge_index) +
                                                 " out of range for a subject graph");
      cn_sum += g->weights[edge.edge_index];
    }
    for (const auto* g : ad) {
      if (edge.edge_index >= g->weights.size())
        raise(Errc::inconsistent_dimensions, "edge index " + std::to_string(edge.edge_index) +
                                                 " out of range for a subject graph");
      ad_sum += g->weights[edge.edge_index];
    }
    means.emplace_back(cn_sum / static_cast<double>(cn.size()),
                       ad_sum / static_cast<double>(ad.size()));
  }
  return means;
}

std::vector<CrossScoreEntry> cross_score_frequency(
    const std::vector<std::vector<RankedEdge>>& all_top_lists) {
  if (all_top_lists.empty()) raise(Errc::bad_config, "no top-edge lists given");
  std::map<std::size_t, CrossScoreEntry> entries;
  for (std::size_t o = 0; o < all_top_lists.size(); ++o) {
    for (const auto& edge : all_top_lists[o]) {
      auto [it, fresh] = entries.try_emplace(edge.edge_index);
      if (fresh) {
        it->second.edge_index = edge.edge_index;
        it->second.edge = edge.edge;
        it->second.present.assign(all_top_lists.size(), false);
      }
      if (!it->second.present[o]) {
        it->second.present[o] = true;
        ++it->second.count;
      }
    }
  }
  std::vector<CrossScoreEntry> rows;
  rows.reserve(entries.size());
  for (auto& [index, entry] : entries) rows.push_back(std::move(entry));
  std::sort(rows.begin(), rows.end(), [](const CrossScoreEntry& a, const CrossScoreEntry& b) {
    if (a.count != b.count) return a.count > b.count;
    return a.edge_index < b.edge_index;
  });
  return rows;
}

ImportanceReport build_report(const std::vector<EdgeImportance>& importances,
                              std::span<const graph::SubjectRecord> subjects,
                              const ingest::AtlasTable& table,
                              const std::vector<std::string>& outcome_names, std::size_t top_k) {
  if (importances.empty()) raise(Errc::too_few_edges, "no edge importances given");
  if (subjects.empty()) raise(Errc::empty_group, "no subjects given");

  const auto& region_ids = subjects[0].distances.region_ids;
  ImportanceReport report;
  std::vector<std::vector<RankedEdge>> all_lists;
  for (std::size_t o = 0; o < outcome_names.size(); ++o) {
    OutcomeImportance outcome;
    outcome.outcome = outcome_names[o];
    outcome.top10 = top_k_edges(importances, o, top_k);
    outcome.region_contrib = region_contributions(outcome.top10);
    outcome.yeo_tally = yeo_distribution(outcome.top10, region_ids, table);
    try {
      outcome.cn_ad_means = group_edge_means(outcome.top10, subjects);
    } catch (const Error& e) {
      if (e.code() != Errc::empty_group) throw;
      // Cohort lacks one of the groups; the comparison column stays empty.
    }
    all_lists.push_back(outcome.top10);
    report.per_outcome.push_back(std::move(outcome));
  }
  report.cross_score = cross_score_frequency(all_lists);
  return report;
}

namespace {

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) raise(Errc::io_error, "cannot create " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) raise(Errc::io_error, "write failed for " + path.string());
}

std::string region_name(std::span<const int> region_ids, const ingest::AtlasTable& table,
                        std::size_t vertex) {
  return table.by_label(region_ids[vertex]).region_name;
}

}  // namespace

void write_importance_report(const std::filesystem::path& directory,
                             const ImportanceReport& report,
                             std::span<const int> region_ids, const ingest::AtlasTable& table) {
  std::filesystem::create_directories(directory);

  nlohmann::json doc;
  doc["per_outcome"] = nlohmann::json::array();
  for (const auto& outcome : report.per_outcome) {
    nlohmann::json block;
    block["outcome"] = outcome.outcome;
    block["top10"] = nlohmann::json::array();
    for (std::size_t t = 0; t < outcome.top10.size(); ++t) {
      const auto& edge = outcome.top10[t];
      nlohmann::json row;
      row["edge_index"] = edge.edge_index;
      row["i"] = edge.edge.i;
      row["j"] = edge.edge.j;
      row["region_i"] = region_name(region_ids, table, edge.edge.i);
      row["region_j"] = region_name(region_ids, table, edge.edge.j);
      row["mean_drop"] = edge.mean_drop;
      row["std_drop"] = edge.std_drop;
      if (t < outcome.cn_ad_means.size()) {
        row["cn_mean"] = outcome.cn_ad_means[t].first;
        row["ad_mean"] = outcome.cn_ad_means[t].second;
      }
      block["top10"].push_back(std::move(row));
    }
    block["region_contrib"] = nlohmann::json::object();
    for (const auto& [vertex, share] : outcome.region_contrib)
      block["region_contrib"][region_name(region_ids, table, vertex)] = share;
    block["yeo_tally"] = nlohmann::json::object();
    for (std::size_t w = 0; w < ingest::kYeoNetworks.size(); ++w)
      block["yeo_tally"][ingest::kYeoNetworks[w]] = outcome.yeo_tally[w];
    doc["per_outcome"].push_back(std::move(block));
  }
  auto text = doc.dump(2);
  text.push_back('\n');
  write_text_file(directory / "importance_report.json", text);

  // Cross-score incidence table: one row per edge, one 0/1 column per score.
  std::string cross = "edge_index,i,j,region_i,region_j";
  for (const auto& outcome : report.per_outcome) cross += ',' + outcome.outcome;
  cross += ",count\n";
  for (const auto& entry : report.cross_score) {
    cross += std::to_string(entry.edge_index) + ',' + std::to_string(entry.edge.i) + ',' +
             std::to_string(entry.edge.j) + ',' + region_name(region_ids, table, entry.edge.i) +
             ',' + region_name(region_ids, table, entry.edge.j);
    for (bool flag : entry.present) cross += flag ? ",1" : ",0";
    cross += ',' + std::to_string(entry.count) + '\n';
  }
  write_text_file(directory / "cross_score.csv", cross);

  std::string bars = "outcome,edge_index,region_i,region_j,cn_mean,ad_mean\n";
  for (const auto& outcome : report.per_outcome) {
    for (std::size_t t = 0; t < outcome.cn_ad_means.size(); ++t) {
      const auto& edge = outcome.top10[t];
      bars += outcome.outcome + ',' + std::to_string(edge.edge_index) + ',' +
              region_name(region_ids, table, edge.edge.i) + ',' +
              region_name(region_ids, table, edge.edge.j) + ',' +
              format_double(outcome.cn_ad_means[t].first) + ',' +
              format_double(outcome.cn_ad_means[t].second) + '\n';
    }
  }
  write_text_file(directory / "edge_means.csv", bars);

  std::string chord = "outcome,network_i,network_j,mean_drop\n";
  for (const auto& outcome : report.per_outcome) {
    for (const auto& edge : outcome.top10) {
      const auto& net_i = table.by_label(region_ids[edge.edge.i]).yeo_network;
      const auto& net_j = table.by_label(region_ids[edge.edge.j]).yeo_network;
      chord += outcome.outcome + ',' + net_i + ',' + net_j + ',' + format_double(edge.mean_drop) +
               '\n';
    }
  }
  write_text_file(directory / "chord.csv", chord);
}

}  // namespace xgml::importance
