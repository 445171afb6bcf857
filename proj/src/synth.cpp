#include "xgml/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "xgml/error.hpp"
#include "xgml/parallel.hpp"
#include "xgml/rng.hpp"

namespace xgml::synth {
namespace {

constexpr double kMuLow = 1.0;
constexpr double kMuHigh = 3.0;
constexpr double kSigmaBase = 0.25;
constexpr double kSigmaSpread = 1.0;
constexpr double kSigmaJitter = 0.015;
constexpr double kToneScale = 0.35;
constexpr double kMixWeight = 0.8;
constexpr double kMixOffset = 0.8;
constexpr double kMixNarrow = 0.6;
constexpr double kLobeMass = 0.30;
constexpr double kLobeOffset = 1.8;
constexpr double kLobeNarrow = 0.12;
constexpr double kCrossShare = 0.5;
constexpr double kCrossCap = 0.5;
constexpr double kCoupling = 0.18;
constexpr double kOutcomeGain = 10.0;
constexpr std::uint64_t kSubjectStreamBase = 1;

/// MCI sits at the shift, AD at twice the shift, capped below the full
/// two-camp split so the AD blend stays strictly ahead of MCI for every
/// positive shift.
double group_severity(ingest::GroupLabel group, double shift) {
  switch (group) {
    case ingest::GroupLabel::cn: return 0.0;
    case ingest::GroupLabel::mci: return std::min(shift, 0.45);
    case ingest::GroupLabel::ad: return std::min(2.0 * shift, 0.9);
  }
  return 0.0;
}

/// Blends a ramp value in [0, 1] toward its nearer end; the identity at
/// severity 0 and a hard two-camp split at severity 1. The blend is linear,
/// so the group mean of normalized pairwise gaps responds linearly too.
double polarize(double rho, double severity) {
  double lambda = std::clamp(severity, 0.0, 1.0);
  double camp = rho > 0.5 ? 1.0 : 0.0;
  return (1.0 - lambda) * rho + lambda * camp;
}

std::string subject_name(std::size_t index) {
  std::string digits = std::to_string(index + 1);
  return "sub-" + std::string(4 > digits.size() ? 4 - digits.size() : 0, '0') + digits;
}

}  // namespace

void SynthSpec::validate() const {
  if (k_regions < 2) raise(Errc::invalid_spec, "need at least 2 regions");
  if (total_subjects() < 1) raise(Errc::invalid_spec, "need at least 1 subject");
  if (voxels_min < 16 || voxels_min > voxels_max)
    raise(Errc::invalid_spec, "voxels_per_region range must satisfy 16 <= min <= max");
  if (!std::isfinite(severity_shift) || severity_shift < 0.0)
    raise(Errc::invalid_spec, "severity_shift must be finite and non-negative");
  if (!std::isfinite(noise_sd) || noise_sd < 0.0)
    raise(Errc::invalid_spec, "noise_sd must be finite and non-negative");
  for (const auto& edge : planted_edges) {
    if (edge.i >= edge.j || edge.j >= k_regions)
      raise(Errc::invalid_spec, "planted edge (" + std::to_string(edge.i) + ", " +
                                    std::to_string(edge.j) +
                                    ") is not in the upper triangle of " +
                                    std::to_string(k_regions) + " regions");
    if (edge.outcome >= ingest::kOutcomeCount)
      raise(Errc::invalid_spec,
            "planted outcome index " + std::to_string(edge.outcome) + " out of range");
    if (!std::isfinite(edge.effect) || edge.effect < 0.0)
      raise(Errc::invalid_spec, "planted effect must be finite and non-negative");
  }
}

SynthSpec read_spec(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(Errc::io_error, "cannot open " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    raise(Errc::invalid_spec, path.string() + ": " + e.what());
  }
  SynthSpec spec;
  try {
    const auto& groups = doc.at("n_subjects");
    spec.n_cn = groups.at("cn").get<std::size_t>();
    spec.n_mci = groups.at("mci").get<std::size_t>();
    spec.n_ad = groups.at("ad").get<std::size_t>();
    spec.k_regions = doc.at("k_regions").get<std::size_t>();
    const auto& range = doc.at("voxels_per_region");
    spec.voxels_min = range.at(0).get<std::size_t>();
    spec.voxels_max = range.at(1).get<std::size_t>();
    for (const auto& row : doc.at("planted_edges")) {
      PlantedEdge edge;
      edge.i = row.at("i").get<std::size_t>();
      edge.j = row.at("j").get<std::size_t>();
      edge.outcome = row.at("outcome").get<std::size_t>();
      edge.effect = row.at("effect").get<double>();
      spec.planted_edges.push_back(edge);
    }
    spec.severity_shift = doc.at("severity_shift").get<double>();
    spec.noise_sd = doc.at("noise_sd").get<double>();
    spec.seed = doc.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    raise(Errc::invalid_spec, path.string() + ": " + e.what());
  }
  spec.validate();
  return spec;
}

void write_spec(const std::filesystem::path& path, const SynthSpec& spec) {
  nlohmann::json doc;
  doc["n_subjects"] = {{"cn", spec.n_cn}, {"mci", spec.n_mci}, {"ad", spec.n_ad}};
  doc["k_regions"] = spec.k_regions;
  doc["voxels_per_region"] = {spec.voxels_min, spec.voxels_max};
  doc["planted_edges"] = nlohmann::json::array();
  for (const auto& edge : spec.planted_edges)
    doc["planted_edges"].push_back(
        {{"i", edge.i}, {"j", edge.j}, {"outcome", edge.outcome}, {"effect", edge.effect}});
  doc["severity_shift"] = spec.severity_shift;
  doc["noise_sd"] = spec.noise_sd;
  doc["seed"] = spec.seed;
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) raise(Errc::io_error, "cannot create " + path.string());
  out << doc.dump(2) << '\n';
  if (!out) raise(Errc::io_error, "write failed for " + path.string());
}

Cohort generate_cohort(const SynthSpec& spec, unsigned threads) {
  spec.validate();
  Cohort cohort;
  cohort.spec = spec;
  std::size_t k = spec.k_regions;
  std::size_t n = spec.total_subjects();

  // Region voxel counts belong to the shared atlas, drawn once.
  Rng atlas_rng(Rng::derive(spec.seed, 0));
  cohort.voxel_counts.resize(k);
  for (std::size_t r = 0; r < k; ++r)
    cohort.voxel_counts[r] = spec.voxels_min + atlas_rng.below(spec.voxels_max - spec.voxels_min + 1);

  for (std::size_t r = 0; r < k; ++r) {
    ingest::AtlasEntry entry;
    entry.label_id = static_cast<int>(r + 1);
    std::string digits = std::to_string(r + 1);
    entry.region_name =
        "Region_" + std::string(3 > digits.size() ? 3 - digits.size() : 0, '0') + digits;
    entry.hemisphere = r % 2 == 0 ? 'L' : 'R';
    entry.yeo_network = ingest::kYeoNetworks[r % ingest::kYeoNetworks.size()];
    cohort.table.entries.push_back(std::move(entry));
  }
  cohort.table.validate();

  cohort.subjects.resize(n);
  std::vector<std::array<double, ingest::kOutcomeCount>> score_rows(n);
  parallel_for(n, effective_threads(threads), [&](std::size_t s) {
    SynthSubject subject;
    subject.id = subject_name(s);
    subject.group = s < spec.n_cn                ? ingest::GroupLabel::cn
                    : s < spec.n_cn + spec.n_mci ? ingest::GroupLabel::mci
                                                 : ingest::GroupLabel::ad;
    double severity = group_severity(subject.group, spec.severity_shift);
    Rng rng(Rng::derive(spec.seed, kSubjectStreamBase + s));

    std::vector<double> latents(spec.planted_edges.size());
    for (auto& u : latents) u = rng.uniform();
    // Per-subject warp of the spread ramp. A plain amplitude factor would
    // rescale every pairwise distance uniformly and vanish under min-max
    // normalization, so the nuisance enters as an exponent: it reshapes the
    // ramp, moving all edges coherently without carrying outcome information.
    double tone = std::exp(kToneScale * rng.normal());

    subject.regions.reserve(k);
    for (std::size_t r = 0; r < k; ++r) {
      // Curves are compared by their ordinate shape, so pairwise distance
      // tracks the width gap between two regions. Blending the ramp
      // coordinate toward the two ramp ends herds the widths into camps,
      // which moves the bulk of the edges toward the group's own maximum;
      // that survives the min-max normalization a uniform scale-up would
      // cancel.
      double rho = polarize(static_cast<double>(r) / static_cast<double>(k - 1), severity);
      double mu = kMuLow + (kMuHigh - kMuLow) * rho;
      double sigma = kSigmaBase * std::pow(1.0 + kSigmaSpread * rho, tone);
      sigma *= 1.0 + kSigmaJitter * rng.normal();

      // Planted coupling, two layers per endpoint. A mild width multiplier
      // pushes the endpoints apart with the subject latent; it bleeds into
      // every edge incident to them, keeping the kernel responsive while no
      // single bled-into column holds unique information. On top, a narrow
      // marker lobe of fixed total mass is split between the two flanks,
      // home flanks mirrored across the pair; the lobes start fully mixed
      // and the latent unmixes them toward the home flanks, which only the
      // edge between the endpoints can read, since regions outside the pair
      // price the lobe by its mass alone.
      double far_flank_share = -1.0;
      bool home_is_right = false;
      for (std::size_t e = 0; e < spec.planted_edges.size(); ++e) {
        const auto& edge = spec.planted_edges[e];
        if (r != edge.i && r != edge.j) continue;
        far_flank_share =
            std::clamp(kCrossCap - kCrossShare * edge.effect * latents[e], 0.0, kCrossCap);
        home_is_right = r == edge.i;
        double swing = kCoupling * edge.effect * latents[e];
        sigma *= home_is_right ? std::max(1.0 - swing, 0.25) : 1.0 + swing;
      }

      ingest::RoiSamples samples;
      samples.region_id = static_cast<int>(r + 1);
      samples.values.resize(cohort.voxel_counts[r]);
      for (auto& v : samples.values) {
        if (far_flank_share >= 0.0 && rng.uniform() < kLobeMass) {
          bool far = rng.uniform() < far_flank_share;
          double side = home_is_right != far ? 1.0 : -1.0;
          v = mu + side * kLobeOffset * sigma + kLobeNarrow * sigma * rng.normal();
          continue;
        }
        if (rng.uniform() < kMixWeight) {
          v = mu + sigma * rng.normal();
        } else {
          double side = rng.uniform() < 0.5 ? -1.0 : 1.0;
          v = mu + side * kMixOffset * sigma + kMixNarrow * sigma * rng.normal();
        }
      }
      subject.regions.push_back(std::move(samples));
    }

    std::array<double, ingest::kOutcomeCount> scores{};
    for (std::size_t o = 0; o < ingest::kOutcomeCount; ++o) {
      double value = spec.noise_sd * rng.normal();
      for (std::size_t e = 0; e < spec.planted_edges.size(); ++e)
        if (spec.planted_edges[e].outcome == o)
          value += kOutcomeGain * spec.planted_edges[e].effect * latents[e];
      scores[o] = value;
    }
    score_rows[s] = scores;
    cohort.subjects[s] = std::move(subject);
  });

  for (std::size_t s = 0; s < n; ++s) cohort.scores[cohort.subjects[s].id] = score_rows[s];
  return cohort;
}

std::filesystem::path write_cohort(const std::filesystem::path& directory, const Cohort& cohort) {
  namespace fs = std::filesystem;
  fs::create_directories(directory / "scans");
  std::size_t k = cohort.spec.k_regions;
  std::size_t width = cohort.spec.voxels_max;

  ingest::VoxelVolume atlas;
  atlas.dims = {width, k, 1};
  atlas.kind = ingest::VolumeKind::label;
  atlas.data.assign(width * k, 0.0);
  for (std::size_t r = 0; r < k; ++r)
    for (std::size_t x = 0; x < cohort.voxel_counts[r]; ++x)
      atlas.data[r * width + x] = static_cast<double>(r + 1);
  ingest::write_volume(directory / "atlas.vol", atlas);
  cohort.table.write_tsv(directory / "atlas.tsv");

  for (const auto& subject : cohort.subjects) {
    ingest::VoxelVolume scan;
    scan.dims = atlas.dims;
    scan.kind = ingest::VolumeKind::intensity;
    scan.data.assign(width * k, 0.0);
    for (std::size_t r = 0; r < k; ++r) {
      const auto& values = subject.regions[r].values;
      std::copy(values.begin(), values.end(), scan.data.begin() + static_cast<std::ptrdiff_t>(r * width));
    }
    ingest::write_volume(directory / "scans" / (subject.id + ".vol"), scan);
  }

  ingest::write_scores_csv(directory / "scores.csv", cohort.scores);

  ingest::CohortManifest manifest;
  manifest.scores_path = "scores.csv";
  manifest.atlas_path = "atlas.vol";
  manifest.atlas_table_path = "atlas.tsv";
  for (const auto& subject : cohort.subjects) {
    ingest::ManifestSubject entry;
    entry.id = subject.id;
    entry.scan_path = fs::path("scans") / (subject.id + ".vol");
    entry.group = subject.group;
    manifest.subjects.push_back(std::move(entry));
  }
  auto manifest_path = directory / "manifest.json";
  manifest.write(manifest_path);
  return manifest_path;
}

}  // namespace xgml::synth
