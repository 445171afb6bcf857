#include "xgml/volume.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "xgml/error.hpp"
#include "xgml/text.hpp"

namespace xgml::ingest {
namespace {

using nlohmann::json;

std::vector<unsigned char> load_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(Errc::io_error, "cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (in.bad()) raise(Errc::io_error, "read failed for " + path.string());
  return bytes;
}

void save_file(const std::filesystem::path& path, const void* data, std::size_t size) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) raise(Errc::io_error, "cannot create " + path.string());
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
  if (!out) raise(Errc::io_error, "write failed for " + path.string());
}

std::string load_text(const std::filesystem::path& path) {
  auto bytes = load_file(path);
  return std::string(bytes.begin(), bytes.end());
}

template <typename T>
T decode(const unsigned char* p, bool swap) {
  std::array<unsigned char, sizeof(T)> raw;
  std::memcpy(raw.data(), p, sizeof(T));
  if (swap) std::reverse(raw.begin(), raw.end());
  T value;
  std::memcpy(&value, raw.data(), sizeof(T));
  return value;
}

static_assert(std::endian::native == std::endian::little,
              "file payloads are little-endian and read without swapping");

std::filesystem::path sidecar_path(const std::filesystem::path& path) {
  auto p = path;
  p += ".json";
  return p;
}

VolumeKind parse_kind(const std::string& text, const std::filesystem::path& origin) {
  if (text == "intensity") return VolumeKind::intensity;
  if (text == "label") return VolumeKind::label;
  raise(Errc::not_a_volume, origin.string() + ": unknown kind '" + text + "'");
}

VoxelVolume read_raw(const std::filesystem::path& path, VolumeKind expected_kind) {
  auto meta_path = sidecar_path(path);
  json meta;
  try {
    meta = json::parse(load_text(meta_path));
  } catch (const json::exception& e) {
    raise(Errc::not_a_volume, meta_path.string() + ": sidecar is not valid JSON: " + e.what());
  }
  if (!meta.is_object() || !meta.contains("dims") || !meta.contains("spacing") ||
      !meta.contains("kind"))
    raise(Errc::not_a_volume, meta_path.string() + ": sidecar needs dims, spacing and kind");

  VoxelVolume volume;
  volume.kind = parse_kind(meta.at("kind").get<std::string>(), meta_path);
  if (volume.kind != expected_kind)
    raise(Errc::not_a_volume, path.string() + ": expected a " +
                                  std::string(to_string(expected_kind)) +
                                  " volume but the sidecar says " + std::string(to_string(volume.kind)));
  auto dims = meta.at("dims");
  auto spacing = meta.at("spacing");
  if (!dims.is_array() || dims.size() != 3 || !spacing.is_array() || spacing.size() != 3)
    raise(Errc::not_a_volume, meta_path.string() + ": dims and spacing must have 3 entries");
  for (int axis = 0; axis < 3; ++axis) {
    auto extent = dims[axis].get<long long>();
    if (extent < 1) raise(Errc::dimension_mismatch, meta_path.string() + ": dims must be positive");
    volume.dims[static_cast<std::size_t>(axis)] = static_cast<std::size_t>(extent);
    double step = spacing[axis].get<double>();
    if (!(step > 0.0) || !std::isfinite(step))
      raise(Errc::not_a_volume, meta_path.string() + ": spacing must be positive and finite");
    volume.spacing[static_cast<std::size_t>(axis)] = step;
  }

  auto payload = load_file(path);
  std::size_t n = volume.voxel_count();
  if (payload.size() != n * 4)
    raise(Errc::dimension_mismatch, path.string() + ": payload holds " +
                                        std::to_string(payload.size() / 4) + " voxels, sidecar says " +
                                        std::to_string(n));
  volume.data.resize(n);
  if (volume.kind == VolumeKind::intensity) {
    for (std::size_t i = 0; i < n; ++i)
      volume.data[i] = static_cast<double>(decode<float>(payload.data() + 4 * i, false));
  } else {
    for (std::size_t i = 0; i < n; ++i)
      volume.data[i] = static_cast<double>(decode<std::int32_t>(payload.data() + 4 * i, false));
  }
  volume.validate();
  return volume;
}

constexpr std::size_t kNiftiHeaderSize = 348;

VoxelVolume read_nifti(const std::filesystem::path& path, const std::vector<unsigned char>& bytes,
                       VolumeKind expected_kind) {
  const unsigned char* h = bytes.data();
  auto sizeof_hdr = decode<std::int32_t>(h + 0, false);
  bool swap = false;
  if (sizeof_hdr != 348) {
    if (decode<std::int32_t>(h + 0, true) != 348)
      raise(Errc::not_a_volume, path.string() + ": not a NIfTI-1 header");
    swap = true;
  }
  if (std::memcmp(h + 344, "n+1\0", 4) != 0)
    raise(Errc::not_a_volume, path.string() + ": only single-file NIfTI-1 (magic n+1) is supported");

  std::array<std::int16_t, 8> dim;
  for (int i = 0; i < 8; ++i) dim[static_cast<std::size_t>(i)] = decode<std::int16_t>(h + 40 + 2 * i, swap);
  auto datatype = decode<std::int16_t>(h + 70, swap);
  auto bitpix = decode<std::int16_t>(h + 72, swap);
  std::array<float, 8> pixdim;
  for (int i = 0; i < 8; ++i) pixdim[static_cast<std::size_t>(i)] = decode<float>(h + 76 + 4 * i, swap);
  auto vox_offset = decode<float>(h + 108, swap);
  auto scl_slope = decode<float>(h + 112, swap);
  auto scl_inter = decode<float>(h + 116, swap);

  if (dim[0] < 3 || dim[0] > 7)
    raise(Errc::dimension_mismatch, path.string() + ": dim[0] is " + std::to_string(dim[0]) +
                                        ", need a 3-D image");
  for (int axis = 4; axis <= dim[0]; ++axis)
    if (dim[static_cast<std::size_t>(axis)] > 1)
      raise(Errc::dimension_mismatch,
            path.string() + ": image has more than three non-trivial dimensions");
  for (int axis = 1; axis <= 3; ++axis)
    if (dim[static_cast<std::size_t>(axis)] < 1)
      raise(Errc::dimension_mismatch, path.string() + ": non-positive extent on axis " +
                                          std::to_string(axis));

  std::size_t element_size;
  if (datatype == 16 && bitpix == 32) {
    element_size = 4;
  } else if (datatype == 4 && bitpix == 16) {
    element_size = 2;
  } else {
    raise(Errc::unsupported_datatype, path.string() + ": datatype " + std::to_string(datatype) +
                                          "/bitpix " + std::to_string(bitpix) +
                                          " (supported: float32, int16)");
  }

  VoxelVolume volume;
  volume.kind = expected_kind;
  for (int axis = 0; axis < 3; ++axis) {
    volume.dims[static_cast<std::size_t>(axis)] = static_cast<std::size_t>(dim[static_cast<std::size_t>(axis) + 1]);
    float step = pixdim[static_cast<std::size_t>(axis) + 1];
    volume.spacing[static_cast<std::size_t>(axis)] =
        (std::isfinite(step) && step > 0.0f) ? static_cast<double>(step) : 1.0;
  }

  if (!(vox_offset >= static_cast<float>(kNiftiHeaderSize)))
    raise(Errc::not_a_volume, path.string() + ": vox_offset must be at least 348");
  auto offset = static_cast<std::size_t>(vox_offset);
  std::size_t n = volume.voxel_count();
  if (bytes.size() < offset + n * element_size)
    raise(Errc::dimension_mismatch, path.string() + ": file is truncated (needs " +
                                        std::to_string(offset + n * element_size) + " bytes, has " +
                                        std::to_string(bytes.size()) + ")");

  bool rescale = scl_slope != 0.0f;
  volume.data.resize(n);
  const unsigned char* payload = bytes.data() + offset;
  for (std::size_t i = 0; i < n; ++i) {
    double value = element_size == 4
                       ? static_cast<double>(decode<float>(payload + 4 * i, swap))
                       : static_cast<double>(decode<std::int16_t>(payload + 2 * i, swap));
    if (rescale) value = value * static_cast<double>(scl_slope) + static_cast<double>(scl_inter);
    volume.data[i] = value;
  }
  volume.validate();
  return volume;
}

bool looks_like_nifti(const std::vector<unsigned char>& bytes) {
  if (bytes.size() < kNiftiHeaderSize) return false;
  return std::memcmp(bytes.data() + 344, "n+1\0", 4) == 0;
}

std::string csv_escape_free(const std::string& cell) {
  if (cell.find_first_of(",\"\n\r") != std::string::npos)
    raise(Errc::bad_config, "cell '" + cell + "' needs CSV quoting, which this writer avoids");
  return cell;
}

}  // namespace
}  // namespace xgml::ingest

namespace xgml::ingest {

const char* to_string(VolumeKind kind) noexcept {
  return kind == VolumeKind::intensity ? "intensity" : "label";
}

void VoxelVolume::validate() const {
  if (dims[0] == 0 || dims[1] == 0 || dims[2] == 0)
    raise(Errc::dimension_mismatch, "volume has an empty axis");
  if (data.size() != voxel_count())
    raise(Errc::dimension_mismatch, "volume data holds " + std::to_string(data.size()) +
                                        " values, dims imply " + std::to_string(voxel_count()));
  for (double step : spacing)
    if (!(step > 0.0) || !std::isfinite(step))
      raise(Errc::not_a_volume, "voxel spacing must be positive and finite");
  if (kind == VolumeKind::intensity) {
    for (double v : data)
      if (!std::isfinite(v)) raise(Errc::non_finite_value, "intensity volume contains a non-finite voxel");
  } else {
    for (double v : data)
      if (!(v >= 0.0) || v != std::floor(v))
        raise(Errc::not_a_volume, "label volume contains a negative or non-integer voxel");
  }
}

VoxelVolume read_volume(const std::filesystem::path& path, VolumeKind expected_kind) {
  std::error_code ec;
  if (!std::filesystem::exists(path, ec))
    raise(Errc::io_error, "no such file: " + path.string());
  auto bytes = load_file(path);
  if (looks_like_nifti(bytes)) return read_nifti(path, bytes, expected_kind);
  if (std::filesystem::exists(sidecar_path(path), ec)) return read_raw(path, expected_kind);
  raise(Errc::not_a_volume,
        path.string() + ": neither a NIfTI-1 image nor a raw volume with a JSON sidecar");
}

void write_volume(const std::filesystem::path& path, const VoxelVolume& volume) {
  volume.validate();
  std::size_t n = volume.voxel_count();
  std::vector<unsigned char> payload(n * 4);
  if (volume.kind == VolumeKind::intensity) {
    for (std::size_t i = 0; i < n; ++i) {
      auto v = static_cast<float>(volume.data[i]);
      std::memcpy(payload.data() + 4 * i, &v, 4);
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      auto v = static_cast<std::int32_t>(volume.data[i]);
      std::memcpy(payload.data() + 4 * i, &v, 4);
    }
  }
  save_file(path, payload.data(), payload.size());

  json meta;
  meta["dims"] = {volume.dims[0], volume.dims[1], volume.dims[2]};
  meta["spacing"] = {volume.spacing[0], volume.spacing[1], volume.spacing[2]};
  meta["kind"] = to_string(volume.kind);
  auto text = meta.dump(2);
  text.push_back('\n');
  save_file(sidecar_path(path), text.data(), text.size());
}

const AtlasEntry& AtlasTable::by_label(int label_id) const {
  if (label_id < 1 || static_cast<std::size_t>(label_id) > entries.size())
    raise(Errc::unknown_label, "label " + std::to_string(label_id) + " is not in the atlas table");
  return entries[static_cast<std::size_t>(label_id) - 1];
}

void AtlasTable::validate() const {
  if (entries.empty()) raise(Errc::bad_config, "atlas table is empty");
  std::set<std::string> names;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    if (e.label_id != static_cast<int>(i) + 1)
      raise(Errc::bad_config, "atlas labels must be contiguous from 1; row " + std::to_string(i + 1) +
                                  " has label " + std::to_string(e.label_id));
    if (e.region_name.empty())
      raise(Errc::bad_config, "atlas label " + std::to_string(e.label_id) + " has an empty region name");
    if (!names.insert(e.region_name).second)
      raise(Errc::bad_config, "duplicate region name '" + e.region_name + "'");
    if (e.hemisphere != 'L' && e.hemisphere != 'R')
      raise(Errc::bad_config, "region '" + e.region_name + "' has hemisphere '" +
                                  std::string(1, e.hemisphere) + "', expected L or R");
    if (std::find_if(kYeoNetworks.begin(), kYeoNetworks.end(),
                     [&](const char* name) { return e.yeo_network == name; }) == kYeoNetworks.end())
      raise(Errc::bad_config, "region '" + e.region_name + "' names unknown network '" +
                                  e.yeo_network + "'");
  }
}

AtlasTable AtlasTable::read_tsv(const std::filesystem::path& path) {
  auto text = load_text(path);
  auto lines = split_lines(text);
  if (lines.empty()) raise(Errc::bad_config, path.string() + ": empty atlas table");

  auto header = split(lines[0], '\t');
  auto column = [&](std::string_view name) {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (trim(header[i]) == name) return i;
    raise(Errc::missing_column, path.string() + ": atlas table lacks column '" + std::string(name) + "'");
  };
  std::size_t c_label = column("label_id");
  std::size_t c_name = column("region_name");
  std::size_t c_hemi = column("hemisphere");
  std::size_t c_yeo = column("yeo_network");

  AtlasTable table;
  for (std::size_t row = 1; row < lines.size(); ++row) {
    if (trim(lines[row]).empty()) continue;
    auto cells = split(lines[row], '\t');
    if (cells.size() != header.size())
      raise(Errc::bad_config, path.string() + ": row " + std::to_string(row + 1) + " has " +
                                  std::to_string(cells.size()) + " cells, header has " +
                                  std::to_string(header.size()));
    AtlasEntry entry;
    long long label;
    if (!parse_int(cells[c_label], label))
      raise(Errc::non_numeric_cell, path.string() + ": row " + std::to_string(row + 1) +
                                        " has non-numeric label_id '" + std::string(cells[c_label]) + "'");
    entry.label_id = static_cast<int>(label);
    entry.region_name = std::string(trim(cells[c_name]));
    auto hemi = trim(cells[c_hemi]);
    entry.hemisphere = hemi.size() == 1 ? hemi[0] : '?';
    entry.yeo_network = std::string(trim(cells[c_yeo]));
    table.entries.push_back(std::move(entry));
  }
  table.validate();
  return table;
}

void AtlasTable::write_tsv(const std::filesystem::path& path) const {
  validate();
  std::string text = "label_id\tregion_name\themisphere\tyeo_network\n";
  for (const auto& e : entries) {
    text += std::to_string(e.label_id);
    text += '\t';
    text += e.region_name;
    text += '\t';
    text += e.hemisphere;
    text += '\t';
    text += e.yeo_network;
    text += '\n';
  }
  save_file(path, text.data(), text.size());
}

std::vector<RoiSamples> extract_roi_samples(const VoxelVolume& scan, const VoxelVolume& atlas,
                                            const AtlasTable& table) {
  if (scan.kind != VolumeKind::intensity || atlas.kind != VolumeKind::label)
    raise(Errc::grid_mismatch, "need an intensity scan and a label atlas");
  if (scan.dims != atlas.dims)
    raise(Errc::grid_mismatch, "scan is " + std::to_string(scan.dims[0]) + "x" +
                                   std::to_string(scan.dims[1]) + "x" + std::to_string(scan.dims[2]) +
                                   ", atlas is " + std::to_string(atlas.dims[0]) + "x" +
                                   std::to_string(atlas.dims[1]) + "x" + std::to_string(atlas.dims[2]));

  std::vector<RoiSamples> regions(table.region_count());
  for (std::size_t r = 0; r < regions.size(); ++r) regions[r].region_id = static_cast<int>(r) + 1;

  for (std::size_t i = 0; i < atlas.data.size(); ++i) {
    auto label = static_cast<long long>(atlas.data[i]);
    if (label == 0) continue;
    if (label < 1 || static_cast<std::size_t>(label) > regions.size())
      raise(Errc::unknown_label, "voxel " + std::to_string(i) + " has label " + std::to_string(label) +
                                     ", atlas table ends at " + std::to_string(regions.size()));
    regions[static_cast<std::size_t>(label) - 1].values.push_back(scan.data[i]);
  }

  std::string empty;
  for (const auto& region : regions)
    if (region.values.empty()) {
      if (!empty.empty()) empty += ", ";
      empty += std::to_string(region.region_id);
    }
  if (!empty.empty())
    raise(Errc::empty_region, "no voxels for region id(s) " + empty);
  return regions;
}

ScoreMap read_scores(const std::filesystem::path& path) {
  auto text = load_text(path);
  auto lines = split_lines(text);
  if (lines.empty()) raise(Errc::bad_config, path.string() + ": empty scores table");

  auto header = split(lines[0], ',');
  std::vector<std::string> header_names(header.size());
  for (std::size_t i = 0; i < header.size(); ++i) header_names[i] = std::string(trim(header[i]));

  auto column = [&](std::string_view name) {
    for (std::size_t i = 0; i < header_names.size(); ++i)
      if (header_names[i] == name) return i;
    raise(Errc::missing_column, path.string() + ": scores table lacks column '" + std::string(name) + "'");
  };
  std::size_t c_subject = column("subject_id");
  std::array<std::size_t, kOutcomeCount> c_outcome;
  for (std::size_t k = 0; k < kOutcomeCount; ++k) c_outcome[k] = column(kOutcomeNames[k]);

  ScoreMap scores;
  for (std::size_t row = 1; row < lines.size(); ++row) {
    if (trim(lines[row]).empty()) continue;
    auto cells = split(lines[row], ',');
    if (cells.size() != header.size())
      raise(Errc::bad_config, path.string() + ": row " + std::to_string(row + 1) + " has " +
                                  std::to_string(cells.size()) + " cells, header has " +
                                  std::to_string(header.size()));
    std::string subject(trim(cells[c_subject]));
    if (subject.empty())
      raise(Errc::bad_config, path.string() + ": row " + std::to_string(row + 1) + " has no subject_id");
    std::array<double, kOutcomeCount> values;
    for (std::size_t k = 0; k < kOutcomeCount; ++k) {
      auto cell = trim(cells[c_outcome[k]]);
      if (cell.empty())
        raise(Errc::missing_outcome,
              path.string() + ": subject " + subject + " has no " + kOutcomeNames[k] + " value");
      double v;
      if (!parse_double(cell, v) || !std::isfinite(v))
        raise(Errc::non_numeric_cell, path.string() + ": subject " + subject + ", column " +
                                          kOutcomeNames[k] + ": '" + std::string(cell) + "'");
      values[k] = v;
    }
    if (!scores.emplace(subject, values).second)
      raise(Errc::bad_config, path.string() + ": duplicate subject_id '" + subject + "'");
  }
  if (scores.empty()) raise(Errc::too_few_rows, path.string() + ": scores table has no data rows");
  return scores;
}

void write_scores_csv(const std::filesystem::path& path, const ScoreMap& scores) {
  std::string text = "subject_id";
  for (const char* name : kOutcomeNames) {
    text += ',';
    text += name;
  }
  text += '\n';
  for (const auto& [subject, values] : scores) {
    text += csv_escape_free(subject);
    for (double v : values) {
      text += ',';
      text += format_double(v);
    }
    text += '\n';
  }
  save_file(path, text.data(), text.size());
}

const char* to_string(GroupLabel group) noexcept {
  switch (group) {
    case GroupLabel::cn: return "CN";
    case GroupLabel::mci: return "MCI";
    case GroupLabel::ad: return "AD";
  }
  return "CN";
}

GroupLabel parse_group_label(const std::string& text) {
  if (text == "CN") return GroupLabel::cn;
  if (text == "MCI") return GroupLabel::mci;
  if (text == "AD") return GroupLabel::ad;
  raise(Errc::bad_config, "unknown group label '" + text + "' (expected CN, MCI or AD)");
}

void CohortManifest::validate() const {
  if (subjects.empty()) raise(Errc::bad_config, "manifest lists no subjects");
  std::set<std::string> ids;
  for (const auto& subject : subjects) {
    if (subject.id.empty()) raise(Errc::bad_config, "manifest subject with empty id");
    if (!ids.insert(subject.id).second)
      raise(Errc::bad_config, "duplicate subject id '" + subject.id + "' in manifest");
    if (subject.scan_path.empty())
      raise(Errc::bad_config, "subject '" + subject.id + "' has no scan path");
  }
  if (scores_path.empty() || atlas_path.empty() || atlas_table_path.empty())
    raise(Errc::bad_config, "manifest needs scores, atlas and atlas_table paths");
}

CohortManifest CohortManifest::read(const std::filesystem::path& path) {
  json doc;
  try {
    doc = json::parse(load_text(path));
  } catch (const json::exception& e) {
    raise(Errc::bad_config, path.string() + ": manifest is not valid JSON: " + e.what());
  }
  if (!doc.is_object()) raise(Errc::bad_config, path.string() + ": manifest must be a JSON object");

  auto base = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
  auto resolve = [&](const std::string& raw) {
    std::filesystem::path p(raw);
    return p.is_absolute() ? p : base / p;
  };

  CohortManifest manifest;
  try {
    manifest.scores_path = resolve(doc.at("scores").get<std::string>());
    manifest.atlas_path = resolve(doc.at("atlas").get<std::string>());
    manifest.atlas_table_path = resolve(doc.at("atlas_table").get<std::string>());
    for (const auto& entry : doc.at("subjects")) {
      ManifestSubject subject;
      subject.id = entry.at("id").get<std::string>();
      subject.scan_path = resolve(entry.at("scan").get<std::string>());
      subject.group = parse_group_label(entry.at("group").get<std::string>());
      manifest.subjects.push_back(std::move(subject));
    }
  } catch (const json::exception& e) {
    raise(Errc::bad_config, path.string() + ": malformed manifest: " + e.what());
  }
  manifest.validate();
  return manifest;
}

void CohortManifest::write(const std::filesystem::path& path) const {
  validate();
  json doc;
  doc["scores"] = scores_path.generic_string();
  doc["atlas"] = atlas_path.generic_string();
  doc["atlas_table"] = atlas_table_path.generic_string();
  doc["subjects"] = json::array();
  for (const auto& subject : subjects) {
    json entry;
    entry["id"] = subject.id;
    entry["scan"] = subject.scan_path.generic_string();
    entry["group"] = to_string(subject.group);
    doc["subjects"].push_back(entry);
  }
  auto text = doc.dump(2);
  text.push_back('\n');
  save_file(path, text.data(), text.size());
}

}  // namespace xgml::ingest
