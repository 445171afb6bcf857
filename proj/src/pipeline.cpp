#include "xgml/pipeline.hpp"

#include <fstream>

#include "xgml/error.hpp"

namespace xgml::pipeline {

SubjectGraph build_subject_graph(const std::filesystem::path& scan_path,
                                 const ingest::VoxelVolume& atlas,
                                 const ingest::AtlasTable& table, const std::string& subject_id,
                                 dtw::DtwConfig cfg, unsigned threads) {
  auto scan = ingest::read_volume(scan_path, ingest::VolumeKind::intensity);
  auto regions = ingest::extract_roi_samples(scan, atlas, table);
  return build_samples_graph(regions, subject_id, cfg, threads);
}

SubjectGraph build_samples_graph(const std::vector<ingest::RoiSamples>& regions,
                                 const std::string& subject_id, dtw::DtwConfig cfg,
                                 unsigned threads) {
  SubjectGraph result;
  result.id = subject_id;
  auto curves = density::region_densities(regions, &result.bandwidths, threads);
  result.distances = dtw::pairwise_distances(curves, cfg, threads);
  return result;
}

std::vector<graph::SubjectRecord> load_cohort(const ingest::CohortManifest& manifest,
                                              const std::filesystem::path& graphs_dir) {
  manifest.validate();
  auto scores = ingest::read_scores(manifest.scores_path);
  std::vector<graph::SubjectRecord> records;
  records.reserve(manifest.subjects.size());
  for (const auto& subject : manifest.subjects) {
    graph::SubjectRecord record;
    record.id = subject.id;
    record.group = subject.group;
    record.distances = graph::read_graph(graphs_dir / (subject.id + ".xgmlg"));
    auto row = scores.find(subject.id);
    if (row == scores.end())
      raise(Errc::missing_outcome, "no scores row for subject '" + subject.id + "'");
    record.scores = row->second;
    if (!records.empty() && records.front().distances.k != record.distances.k)
      raise(Errc::inconsistent_dimensions,
            "subject '" + subject.id + "' graph has " + std::to_string(record.distances.k) +
                " regions, expected " + std::to_string(records.front().distances.k));
    records.push_back(std::move(record));
  }
  return records;
}

Matrix features_matrix(std::span<const graph::SubjectRecord> subjects) {
  if (subjects.empty()) raise(Errc::too_few_rows, "no subjects given");
  std::size_t p = graph::edge_count(subjects[0].distances.k);
  Matrix features(subjects.size(), p);
  for (std::size_t r = 0; r < subjects.size(); ++r) {
    auto flat = graph::flatten(subjects[r].distances);
    std::copy(flat.begin(), flat.end(), features.row(r).begin());
  }
  return features;
}

Matrix targets_matrix(std::span<const graph::SubjectRecord> subjects) {
  if (subjects.empty()) raise(Errc::too_few_rows, "no subjects given");
  Matrix targets(subjects.size(), ingest::kOutcomeCount);
  for (std::size_t r = 0; r < subjects.size(); ++r)
    for (std::size_t o = 0; o < ingest::kOutcomeCount; ++o)
      targets(r, o) = subjects[r].scores[o];
  return targets;
}

std::vector<std::string> subject_ids(std::span<const graph::SubjectRecord> subjects) {
  std::vector<std::string> ids;
  ids.reserve(subjects.size());
  for (const auto& subject : subjects) ids.push_back(subject.id);
  return ids;
}

std::string hash_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(Errc::io_error, "cannot open " + path.string());
  std::uint64_t hash = 14695981039346656037ull;
  char buffer[65536];
  while (in.read(buffer, sizeof buffer) || in.gcount() > 0) {
    auto got = static_cast<std::size_t>(in.gcount());
    for (std::size_t b = 0; b < got; ++b) {
      hash ^= static_cast<unsigned char>(buffer[b]);
      hash *= 1099511628211ull;
    }
  }
  static const char* digits = "0123456789abcdef";
  std::string hex(16, '0');
  for (std::size_t d = 0; d < 16; ++d) hex[15 - d] = digits[(hash >> (4 * d)) & 0xF];
  return hex;
}

}  // namespace xgml::pipeline
