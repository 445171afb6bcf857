#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "xgml/matrix.hpp"
#include "xgml/volume.hpp"

namespace xgml::model {

struct SvrHyperParams {
  double c = 1.0;
  double gamma = 1.0;
  double epsilon = 0.1;
};

/// Per-column z-score statistics. Standard deviations are floored at 1e-12
/// so constant columns standardize to zero instead of dividing by zero.
struct Standardizer {
  std::vector<double> mean;
  std::vector<double> std_dev;

  static Standardizer fit(const Matrix& features);
  Matrix apply(const Matrix& features) const;
  std::size_t width() const { return mean.size(); }
};

/// Solution of one epsilon-SVR dual: support rows of the standardized
/// training matrix with their coefficients (alpha - alpha*), plus the bias.
struct TrainedSvr {
  SvrHyperParams params;
  Matrix support_vectors;
  std::vector<double> dual_coeffs;
  double bias = 0.0;
  /// Maximization-form dual objective at the returned solution.
  double dual_objective = 0.0;
  std::size_t iterations = 0;
  bool stalled = false;
};

/// Fits the epsilon-insensitive SVR dual with an RBF kernel
/// K(x,z) = exp(-gamma * ||x - z||^2) by two-variable working-set descent;
/// stops when the maximal KKT violation drops below 1e-3 or after 100,000
/// iterations. Hitting the cap with violation above ten times the tolerance
/// marks the model stalled (still returned).
TrainedSvr svr_fit(const Matrix& standardized_features, std::span<const double> targets,
                   SvrHyperParams params);

/// f(x) = sum_i dual_coeff_i * K(sv_i, x) + bias, per query row.
std::vector<double> svr_predict(const TrainedSvr& svr, const Matrix& standardized_features);

/// Search grid: C and epsilon taken literally, gamma values are factors
/// applied to the width heuristic gamma_base(p).
struct HyperGrid {
  std::vector<double> c_values{0.1, 1.0, 10.0, 100.0};
  std::vector<double> gamma_factors{0.1, 1.0, 10.0};
  std::vector<double> epsilon_values{0.01, 0.1, 1.0};
};

/// RBF width heuristic 1/p on standardized features (their mean per-column
/// variance is 1 by construction).
double gamma_base(std::size_t p);

struct TrainedMultiSvr {
  Standardizer standardizer;
  std::vector<TrainedSvr> per_outcome;
  std::vector<std::string> outcome_names;
};

/// Standardizes the raw features (fit on all rows) and trains one SVR per
/// outcome column.
TrainedMultiSvr fit_multi(const Matrix& raw_features, const Matrix& targets,
                          std::span<const SvrHyperParams> params_per_outcome,
                          unsigned threads = 0);

Matrix predict_multi(const TrainedMultiSvr& model, const Matrix& raw_features);

struct GridSearchResult {
  std::vector<SvrHyperParams> per_outcome;
  std::vector<double> cv_score;
  std::uint64_t seed = 0;
};

/// 5-fold cross-validated grid search. Subjects are put in ascending-id
/// order, shuffled once with the seed, and split into five contiguous
/// folds; the standardizer is refit on each fold's training split. Per
/// outcome the grid point with the highest mean validation Pearson r wins;
/// ties prefer smaller C, then smaller gamma, then larger epsilon.
GridSearchResult grid_search_5fold(const Matrix& raw_features, const Matrix& targets,
                                   const std::vector<std::string>& subject_ids,
                                   const HyperGrid& grid, std::uint64_t seed,
                                   unsigned threads = 0);

struct OutcomeEval {
  std::string name;
  double pearson_r = 0.0;
  std::vector<double> observed;
  std::vector<double> predicted;
};

struct EvalReport {
  /// Ascending subject-id order; observed/predicted rows align with this.
  std::vector<std::string> subject_ids;
  std::vector<OutcomeEval> per_outcome;
  double mean_r = 0.0;
  std::vector<std::string> stall_notes;
};

/// Leave-one-out evaluation at fixed per-outcome hyperparameters. Folds are
/// processed in ascending subject-id order, which makes the report exactly
/// independent of the caller's row order.
EvalReport loocv_evaluate(const Matrix& raw_features, const Matrix& targets,
                          const std::vector<std::string>& subject_ids,
                          std::span<const SvrHyperParams> params_per_outcome,
                          unsigned threads = 0);

void write_model_json(const std::filesystem::path& path, const TrainedMultiSvr& model,
                      std::uint64_t seed);
TrainedMultiSvr read_model_json(const std::filesystem::path& path);

/// eval_report.json plus one scatter CSV (subject_id, observed, predicted)
/// per outcome in the same directory.
void write_eval_report(const std::filesystem::path& directory, const EvalReport& report);

}  // namespace xgml::model
