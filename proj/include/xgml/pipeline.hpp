#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "xgml/density.hpp"
#include "xgml/dtw.hpp"
#include "xgml/graph.hpp"
#include "xgml/matrix.hpp"
#include "xgml/volume.hpp"

namespace xgml::pipeline {

inline constexpr const char* kVersion = "0.1.0";

struct SubjectGraph {
  std::string id;
  graph::DistanceGraph distances;
  std::vector<density::RegionBandwidth> bandwidths;
};

/// One subject's scan through the full front half of the pipeline:
/// ROI masking, per-region density curves, pairwise alignment distances.
SubjectGraph build_subject_graph(const std::filesystem::path& scan_path,
                                 const ingest::VoxelVolume& atlas,
                                 const ingest::AtlasTable& table, const std::string& subject_id,
                                 dtw::DtwConfig cfg = {}, unsigned threads = 0);

/// Same front half on already-extracted region samples.
SubjectGraph build_samples_graph(const std::vector<ingest::RoiSamples>& regions,
                                 const std::string& subject_id, dtw::DtwConfig cfg = {},
                                 unsigned threads = 0);

/// Joins each manifest subject's stored graph file with its scores row.
/// Graph files are expected as <graphs_dir>/<subject_id>.xgmlg.
std::vector<graph::SubjectRecord> load_cohort(const ingest::CohortManifest& manifest,
                                              const std::filesystem::path& graphs_dir);

/// Row per subject, column per flattened upper-triangle edge weight.
Matrix features_matrix(std::span<const graph::SubjectRecord> subjects);

/// Row per subject, one column per outcome score.
Matrix targets_matrix(std::span<const graph::SubjectRecord> subjects);

std::vector<std::string> subject_ids(std::span<const graph::SubjectRecord> subjects);

/// FNV-1a 64-bit digest of a file's bytes, as 16 hex digits.
std::string hash_file(const std::filesystem::path& path);

}  // namespace xgml::pipeline
