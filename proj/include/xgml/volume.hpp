#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace xgml::ingest {

enum class VolumeKind { intensity, label };

const char* to_string(VolumeKind kind) noexcept;

/// 3-D scalar grid stored x-fastest. Intensity volumes hold finite reals;
/// label volumes hold non-negative integers (stored exactly in doubles).
struct VoxelVolume {
  std::array<std::size_t, 3> dims{0, 0, 0};
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  std::vector<double> data;
  VolumeKind kind = VolumeKind::intensity;

  std::size_t voxel_count() const { return dims[0] * dims[1] * dims[2]; }

  /// Checks the type invariants; throws on violation.
  void validate() const;
};

/// Reads a volume from either the raw container (<name>.vol with a
/// <name>.vol.json sidecar) or a single-file NIfTI-1 image (.nii, magic
/// "n+1\0", float32 or int16 payload, scl_slope/scl_inter applied when the
/// slope is non-zero). The format is chosen by sniffing the file.
VoxelVolume read_volume(const std::filesystem::path& path, VolumeKind expected_kind);

/// Writes the raw container form: little-endian float32 payload for
/// intensity volumes, int32 for label volumes, plus the JSON sidecar.
void write_volume(const std::filesystem::path& path, const VoxelVolume& volume);

inline constexpr std::array<const char*, 7> kYeoNetworks = {
    "Visual",          "Somatomotor", "DorsalAttention", "VentralAttention",
    "Limbic",          "Frontoparietal", "DefaultMode"};

inline constexpr std::array<const char*, 8> kOutcomeNames = {
    "CDRSB",           "ADAS11",         "ADAS13",
    "ADASQ4",          "MMSE",           "RAVLT_immediate",
    "RAVLT_learning",  "RAVLT_perc_forgetting"};

inline constexpr std::size_t kOutcomeCount = 8;

struct AtlasEntry {
  int label_id = 0;
  std::string region_name;
  char hemisphere = 'L';
  std::string yeo_network;
};

/// Region lookup table. Labels must be unique and contiguous 1..K.
struct AtlasTable {
  std::vector<AtlasEntry> entries;

  std::size_t region_count() const { return entries.size(); }
  const AtlasEntry& by_label(int label_id) const;
  void validate() const;

  static AtlasTable read_tsv(const std::filesystem::path& path);
  void write_tsv(const std::filesystem::path& path) const;
};

/// Voxel intensities of one region, in ascending flat-index order.
struct RoiSamples {
  int region_id = 0;
  std::vector<double> values;
};

/// Collects per-region intensity samples by masking the scan with the atlas.
/// Background (label 0) voxels are discarded; every table entry must end up
/// with at least one sample.
std::vector<RoiSamples> extract_roi_samples(const VoxelVolume& scan, const VoxelVolume& atlas,
                                            const AtlasTable& table);

using ScoreMap = std::map<std::string, std::array<double, kOutcomeCount>>;

/// Parses the outcome table (CSV, header row naming subject_id plus the
/// eight outcome columns). Any blank or unparsable outcome cell aborts the
/// read with an error naming the subject.
ScoreMap read_scores(const std::filesystem::path& path);

void write_scores_csv(const std::filesystem::path& path, const ScoreMap& scores);

enum class GroupLabel { cn, mci, ad };

const char* to_string(GroupLabel group) noexcept;
GroupLabel parse_group_label(const std::string& text);

struct ManifestSubject {
  std::string id;
  std::filesystem::path scan_path;
  GroupLabel group = GroupLabel::cn;
};

/// Cohort description: subject scans with group labels plus the shared
/// atlas, atlas table, and scores table. Relative paths are resolved against
/// the manifest's directory on read.
struct CohortManifest {
  std::vector<ManifestSubject> subjects;
  std::filesystem::path scores_path;
  std::filesystem::path atlas_path;
  std::filesystem::path atlas_table_path;

  void validate() const;
  static CohortManifest read(const std::filesystem::path& path);
  void write(const std::filesystem::path& path) const;
};

}  // namespace xgml::ingest
