#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "xgml/volume.hpp"

namespace xgml::density {

/// Discretized probability density of one region's intensity samples.
struct DensityCurve {
  int region_id = 0;
  std::vector<double> grid;
  std::vector<double> pdf;
  double bandwidth = 0.0;
};

enum class BandwidthMethod { isj, silverman_fallback };

const char* to_string(BandwidthMethod method) noexcept;

struct BandwidthChoice {
  double h = 0.0;
  BandwidthMethod method = BandwidthMethod::isj;
};

/// Curve grid length: the sample count clamped to [64, 4096].
std::size_t grid_length_for(std::size_t n);

/// Silverman's rule h = 0.9 * min(sigma, IQR/1.34) * n^(-1/5).
double silverman_bandwidth(std::span<const double> samples);

/// Fixed-point plug-in bandwidth on a 4096-bin cosine-transformed histogram
/// of the min-max scaled samples, seven smoothing stages, root bracketed in
/// (0, 0.1] and bisected to 1e-12. Falls back to Silverman's rule when the
/// residual has no root in that interval.
double isj_bandwidth(std::span<const double> samples);

/// Residual of the bandwidth fixed-point equation at pilot time t, exposed
/// for diagnostics and independent verification.
double isj_residual(std::span<const double> samples, double t);

/// Picks the bandwidth: the fixed-point selector when the sample has at
/// least 4 distinct values, otherwise Silverman's rule. Records which rule
/// produced the value.
BandwidthChoice select_bandwidth(std::span<const double> samples);

/// Gaussian KDE evaluated at one point: (1/(n h)) * sum K((x - x_i)/h).
double kde_evaluate(std::span<const double> samples, double h, double x);

/// Density curve over [min - 3h, max + 3h] with grid_length_for(n) points.
DensityCurve kde_curve(const ingest::RoiSamples& samples, double h);

struct RegionBandwidth {
  int region_id = 0;
  double h = 0.0;
  BandwidthMethod method = BandwidthMethod::isj;
  std::size_t grid_length = 0;
};

/// One curve per region, bandwidths chosen per region. Optionally reports
/// the per-region bandwidth decisions for provenance.
std::vector<DensityCurve> region_densities(const std::vector<ingest::RoiSamples>& regions,
                                           std::vector<RegionBandwidth>* provenance = nullptr,
                                           unsigned threads = 0);

}  // namespace xgml::density
