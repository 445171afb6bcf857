#include "xgml/density.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <mutex>
#include <numbers>

#include <fftw3.h>

#include "xgml/error.hpp"
#include "xgml/parallel.hpp"
#include "xgml/stats.hpp"
#include "xgml/text.hpp"

namespace xgml::density {
namespace {

constexpr std::size_t kBins = 4096;
constexpr int kStages = 7;
constexpr double kRootCap = 0.1;
constexpr double kRootTol = 1e-12;

/// Unnormalized DCT-II of a kBins-long block, shared plan, thread-safe
/// execution on caller buffers.
void dct2(const double* in, double* out) {
  static fftw_plan plan = nullptr;
  static std::once_flag once;
  std::call_once(once, [] {
    std::vector<double> a(kBins), b(kBins);
    plan = fftw_plan_r2r_1d(static_cast<int>(kBins), a.data(), b.data(), FFTW_REDFT10,
                            FFTW_ESTIMATE | FFTW_UNALIGNED);
  });
  if (!plan) raise(Errc::io_error, "cosine transform plan creation failed");
  fftw_execute_r2r(plan, const_cast<double*>(in), out);
}

struct HistogramTransform {
  double range = 0.0;
  std::size_t distinct = 0;
  std::vector<double> a2;  // ((a_k)/2)^2 for k = 1..kBins-1
};

std::size_t distinct_count(std::span<const double> samples) {
  std::vector<double> sorted(samples.begin(), samples.end());
  std::sort(sorted.begin(), sorted.end());
  return static_cast<std::size_t>(std::unique(sorted.begin(), sorted.end()) - sorted.begin());
}

void check_samples(std::span<const double> samples) {
  if (samples.empty()) raise(Errc::empty_region, "no samples");
  for (double v : samples)
    if (!std::isfinite(v)) raise(Errc::non_finite_value, "sample values must be finite");
}

HistogramTransform histogram_transform(std::span<const double> samples) {
  auto [lo_it, hi_it] = std::minmax_element(samples.begin(), samples.end());
  double lo = *lo_it;
  double hi = *hi_it;

  HistogramTransform ht;
  ht.range = hi - lo;
  ht.distinct = distinct_count(samples);
  if (!(ht.range > 0.0)) return ht;

  std::vector<double> freq(kBins, 0.0);
  double inv = 1.0 / static_cast<double>(samples.size());
  for (double v : samples) {
    auto bin = static_cast<std::size_t>((v - lo) / ht.range * static_cast<double>(kBins));
    if (bin >= kBins) bin = kBins - 1;
    freq[bin] += inv;
  }

  std::vector<double> coeff(kBins);
  dct2(freq.data(), coeff.data());
  ht.a2.resize(kBins - 1);
  for (std::size_t k = 1; k < kBins; ++k) {
    double half = coeff[k] / 2.0;
    ht.a2[k - 1] = half * half;
  }
  return ht;
}

/// Squared-norm sum of the s-th density derivative functional at pilot
/// time `time`: 2 pi^(2s) * sum_k k^(2s) a2_k exp(-k^2 pi^2 time).
double derivative_functional(int s, double time, std::span<const double> a2) {
  constexpr double pi = std::numbers::pi;
  double sum = 0.0;
  for (std::size_t k = 1; k <= a2.size(); ++k) {
    double kk = static_cast<double>(k) * static_cast<double>(k);
    sum += std::pow(kk, s) * a2[k - 1] * std::exp(-kk * pi * pi * time);
  }
  return 2.0 * std::pow(pi, 2 * s) * sum;
}

/// Residual of the pilot-time fixed-point equation. Negative below the
/// root, positive above it.
double fixed_point_residual(double t, double n_distinct, std::span<const double> a2) {
  constexpr double pi = std::numbers::pi;
  double f = derivative_functional(kStages, t, a2);
  for (int s = kStages - 1; s >= 2; --s) {
    double odd_product = 1.0;
    for (int v = 1; v <= 2 * s - 1; v += 2) odd_product *= v;
    double k0 = odd_product / std::sqrt(2.0 * pi);
    double c = (1.0 + std::pow(0.5, s + 0.5)) / 3.0;
    double time = std::pow(2.0 * c * k0 / (n_distinct * f), 2.0 / (3.0 + 2.0 * s));
    f = derivative_functional(s, time, a2);
  }
  return t - std::pow(2.0 * n_distinct * std::sqrt(pi) * f, -0.4);
}

/// Expanding-bracket bisection for the smallest root in (0, kRootCap].
/// Returns NaN when the residual never turns positive on the interval.
double solve_pilot_time(double n_distinct, std::span<const double> a2) {
  double n_eff = std::clamp(n_distinct, 50.0, 1050.0);
  double hi = 1e-12 + 0.01 * (n_eff - 50.0) / 1000.0;
  while (true) {
    double r = fixed_point_residual(hi, n_distinct, a2);
    if (std::isfinite(r) && r >= 0.0) break;
    if (hi >= kRootCap) return std::numeric_limits<double>::quiet_NaN();
    hi = std::min(hi * 2.0, kRootCap);
  }
  double lo = 0.0;
  while (hi - lo > kRootTol) {
    double mid = 0.5 * (lo + hi);
    double r = fixed_point_residual(mid, n_distinct, a2);
    if (std::isfinite(r) && r >= 0.0)
      hi = mid;
    else
      lo = mid;
  }
  return 0.5 * (lo + hi);
}

BandwidthChoice bandwidth_with_method(std::span<const double> samples) {
  check_samples(samples);
  auto ht = histogram_transform(samples);
  if (!(ht.range > 0.0)) raise(Errc::degenerate_samples, "all sample values are identical");
  if (ht.distinct < 4)
    raise(Errc::degenerate_samples, "only " + std::to_string(ht.distinct) +
                                        " distinct values, bandwidth selection needs 4");
  double t = solve_pilot_time(static_cast<double>(ht.distinct), ht.a2);
  if (std::isnan(t) || !(t > 0.0))
    return {silverman_bandwidth(samples), BandwidthMethod::silverman_fallback};
  return {std::sqrt(t) * ht.range, BandwidthMethod::isj};
}

}  // namespace

const char* to_string(BandwidthMethod method) noexcept {
  return method == BandwidthMethod::isj ? "isj" : "silverman_fallback";
}

std::size_t grid_length_for(std::size_t n) { return std::clamp<std::size_t>(n, 64, 4096); }

double silverman_bandwidth(std::span<const double> samples) {
  check_samples(samples);
  double sigma = stats::stddev(samples);
  if (!(sigma > 0.0)) raise(Errc::degenerate_samples, "all sample values are identical");
  double iqr = stats::interquartile_range(samples);
  double spread = iqr > 0.0 ? std::min(sigma, iqr / 1.34) : sigma;
  return 0.9 * spread * std::pow(static_cast<double>(samples.size()), -0.2);
}

double isj_bandwidth(std::span<const double> samples) { return bandwidth_with_method(samples).h; }

double isj_residual(std::span<const double> samples, double t) {
  check_samples(samples);
  auto ht = histogram_transform(samples);
  if (!(ht.range > 0.0)) raise(Errc::degenerate_samples, "all sample values are identical");
  return fixed_point_residual(t, static_cast<double>(ht.distinct), ht.a2);
}

BandwidthChoice select_bandwidth(std::span<const double> samples) {
  check_samples(samples);
  if (distinct_count(samples) < 4)
    return {silverman_bandwidth(samples), BandwidthMethod::silverman_fallback};
  return bandwidth_with_method(samples);
}

double kde_evaluate(std::span<const double> samples, double h, double x) {
  if (samples.empty()) raise(Errc::empty_region, "no samples");
  if (!(h > 0.0) || !std::isfinite(h))
    raise(Errc::non_positive_bandwidth, "bandwidth must be positive, got " + format_double(h));
  double inv_h = 1.0 / h;
  double acc = 0.0;
  for (double xi : samples) {
    double u = (x - xi) * inv_h;
    acc += std::exp(-0.5 * u * u);
  }
  constexpr double inv_sqrt_2pi = 0.3989422804014326779;
  return acc * inv_sqrt_2pi * inv_h / static_cast<double>(samples.size());
}

DensityCurve kde_curve(const ingest::RoiSamples& samples, double h) {
  if (samples.values.empty())
    raise(Errc::empty_region, "region " + std::to_string(samples.region_id) + " has no samples");
  if (!(h > 0.0) || !std::isfinite(h))
    raise(Errc::non_positive_bandwidth, "bandwidth must be positive, got " + format_double(h));
  check_samples(samples.values);

  auto [lo_it, hi_it] = std::minmax_element(samples.values.begin(), samples.values.end());
  double lo = *lo_it - 3.0 * h;
  double hi = *hi_it + 3.0 * h;
  std::size_t m = grid_length_for(samples.values.size());

  DensityCurve curve;
  curve.region_id = samples.region_id;
  curve.bandwidth = h;
  curve.grid.resize(m);
  curve.pdf.resize(m);
  double step = (hi - lo) / static_cast<double>(m - 1);
  for (std::size_t t = 0; t < m; ++t) {
    double x = lo + step * static_cast<double>(t);
    curve.grid[t] = x;
    curve.pdf[t] = kde_evaluate(samples.values, h, x);
  }
  return curve;
}

std::vector<DensityCurve> region_densities(const std::vector<ingest::RoiSamples>& regions,
                                           std::vector<RegionBandwidth>* provenance,
                                           unsigned threads) {
  std::vector<DensityCurve> curves(regions.size());
  std::vector<RegionBandwidth> records(regions.size());
  parallel_for(regions.size(), effective_threads(threads), [&](std::size_t r) {
    try {
      auto choice = select_bandwidth(regions[r].values);
      curves[r] = kde_curve(regions[r], choice.h);
      records[r] = {regions[r].region_id, choice.h, choice.method, curves[r].grid.size()};
    } catch (const Error& e) {
      raise(e.code(), "region " + std::to_string(regions[r].region_id) + ": " + e.detail());
    }
  });
  if (provenance) *provenance = std::move(records);
  return curves;
}

}  // namespace xgml::density
