#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "xgml/volume.hpp"

namespace xgml::synth {

/// One engineered edge: a latent per-subject factor couples the widths of
/// the two endpoint regions' intensity distributions (one narrows, the
/// other widens), and the named outcome tracks that factor linearly.
struct PlantedEdge {
  std::size_t i = 0;
  std::size_t j = 0;
  std::size_t outcome = 0;
  double effect = 1.0;
};

struct SynthSpec {
  std::size_t n_cn = 0;
  std::size_t n_mci = 0;
  std::size_t n_ad = 0;
  std::size_t k_regions = 0;
  std::size_t voxels_min = 0;
  std::size_t voxels_max = 0;
  std::vector<PlantedEdge> planted_edges;
  double severity_shift = 0.0;
  double noise_sd = 1.0;
  std::uint64_t seed = 42;

  std::size_t total_subjects() const { return n_cn + n_mci + n_ad; }

  /// Checks field ranges and planted-edge placement; throws InvalidSpec.
  void validate() const;
};

SynthSpec read_spec(const std::filesystem::path& path);
void write_spec(const std::filesystem::path& path, const SynthSpec& spec);

struct SynthSubject {
  std::string id;
  ingest::GroupLabel group = ingest::GroupLabel::cn;
  std::vector<ingest::RoiSamples> regions;
};

struct Cohort {
  SynthSpec spec;
  std::vector<std::size_t> voxel_counts;  // per region, shared across subjects
  ingest::AtlasTable table;
  std::vector<SynthSubject> subjects;
  ingest::ScoreMap scores;
};

/// Draws the cohort. Region r gets a symmetric Gaussian mixture whose
/// location and width follow a ramp over regions; a positive severity_shift
/// blends that ramp toward a two-camp split, at the shift for MCI and at
/// twice the shift for AD, pulling the region distributions into mutually
/// dissimilar camps. That raises the typical pairwise curve distance
/// relative to the group's own span, which yields the CN < MCI < AD
/// normalized mean ordering. Each
/// planted edge gives its endpoints a fixed-mass marker lobe split between
/// the distribution flanks; a per-subject uniform latent unmixes the lobes
/// toward mirrored home flanks, moving that one edge while regions outside
/// the pair see constant lobe mass. The same latent adds 10 * effect to its
/// outcome per unit. Unplanted outcomes are pure Gaussian noise. Subjects
/// are generated in parallel from per-subject substreams of the spec seed.
Cohort generate_cohort(const SynthSpec& spec, unsigned threads = 0);

/// Writes scans (raw volume containers), the atlas volume and table, the
/// scores CSV and the manifest under `directory`. Region r occupies row r
/// of a (voxels_max, k, 1) grid, so sample extraction reproduces the
/// generated draw order exactly. Returns the manifest path.
std::filesystem::path write_cohort(const std::filesystem::path& directory, const Cohort& cohort);

}  // namespace xgml::synth
