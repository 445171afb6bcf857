#include "xgml/model.hpp"

#include <algorithm>
#include <array>
#include <cassert>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>

#include <json.hpp>

#include "xgml/error.hpp"
#include "xgml/parallel.hpp"
#include "xgml/rng.hpp"
#include "xgml/stats.hpp"
#include "xgml/text.hpp"

namespace xgml::model {
namespace {

constexpr double kStdFloor = 1e-12;
constexpr double kKktTol = 1e-3;
constexpr std::size_t kMaxIterations = 100000;
constexpr double kTau = 1e-12;

void check_params(const SvrHyperParams& params) {
  if (!(params.c > 0.0) || !std::isfinite(params.c))
    raise(Errc::bad_config, "C must be positive, got " + format_double(params.c));
  if (!(params.gamma > 0.0) || !std::isfinite(params.gamma))
    raise(Errc::bad_config, "gamma must be positive, got " + format_double(params.gamma));
  if (!(params.epsilon >= 0.0) || !std::isfinite(params.epsilon))
    raise(Errc::bad_config, "epsilon must be non-negative, got " + format_double(params.epsilon));
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double sum = 0.0;
  for (std::size_t c = 0; c < a.size(); ++c) {
    double diff = a[c] - b[c];
    sum += diff * diff;
  }
  return sum;
}

/// Symmetric matrix of pairwise squared distances between rows.
Matrix squared_distances(const Matrix& z) {
  Matrix d2(z.rows, z.rows);
  for (std::size_t i = 0; i < z.rows; ++i)
    for (std::size_t j = i + 1; j < z.rows; ++j) {
      double d = squared_distance(z.row(i), z.row(j));
      d2(i, j) = d;
      d2(j, i) = d;
    }
  return d2;
}

Matrix kernel_from_d2(const Matrix& d2, double gamma) {
  Matrix k(d2.rows, d2.cols);
  for (std::size_t i = 0; i < d2.a.size(); ++i) k.a[i] = std::exp(-gamma * d2.a[i]);
  return k;
}

struct DualSolution {
  std::vector<double> alpha;  // 2n box variables
  double rho = 0.0;
  double objective_min = 0.0;
  std::size_t iterations = 0;
  bool stalled = false;
};

/// Two-variable descent on the epsilon-SVR dual in its 2n-variable box form:
/// variables t < n carry label +1 and shift p_t = eps - z_t, variables
/// t >= n carry label -1 and p_t = eps + z_{t-n}; Q(s,t) = y_s y_t K(s%n,t%n).
/// Working pairs are chosen by maximal violation plus second-order gain.
DualSolution solve_svr_dual(const Matrix& kernel, std::span<const double> z, double c,
                            double eps_tube) {
  const std::size_t n = z.size();
  const std::size_t nn = 2 * n;
  constexpr double inf = std::numeric_limits<double>::infinity();

  std::vector<double> alpha(nn, 0.0), p(nn), grad(nn);
  std::vector<signed char> y(nn);
  for (std::size_t t = 0; t < n; ++t) {
    p[t] = eps_tube - z[t];
    y[t] = +1;
    p[t + n] = eps_tube + z[t];
    y[t + n] = -1;
  }
  grad = p;

  auto kv = [&](std::size_t s, std::size_t t) { return kernel(s % n, t % n); };
  auto objective = [&] {
    double obj = 0.0;
    for (std::size_t t = 0; t < nn; ++t) obj += alpha[t] * (grad[t] + p[t]);
    return obj / 2.0;
  };

#ifndef NDEBUG
  double prev_obj = objective();
#endif

  std::size_t iter = 0;
  double violation = inf;
  while (iter < kMaxIterations) {
    // First index: the most violating "up" candidate.
    double gmax = -inf, gmax2 = -inf;
    std::ptrdiff_t i = -1, j = -1;
    for (std::size_t t = 0; t < nn; ++t) {
      if (y[t] == +1 && alpha[t] < c && -grad[t] >= gmax) {
        gmax = -grad[t];
        i = static_cast<std::ptrdiff_t>(t);
      } else if (y[t] == -1 && alpha[t] > 0.0 && grad[t] >= gmax) {
        gmax = grad[t];
        i = static_cast<std::ptrdiff_t>(t);
      }
    }

    // Second index: the "down" candidate with the largest second-order gain.
    double best_gain = inf;
    if (i >= 0) {
      auto ui = static_cast<std::size_t>(i);
      double kii = kv(ui, ui);
      for (std::size_t t = 0; t < nn; ++t) {
        double grad_diff, quad;
        if (y[t] == +1 && alpha[t] > 0.0) {
          if (grad[t] >= gmax2) gmax2 = grad[t];
          grad_diff = gmax + grad[t];
          quad = kii + kv(t, t) - 2.0 * y[ui] * y[t] * kv(ui, t);
        } else if (y[t] == -1 && alpha[t] < c) {
          if (-grad[t] >= gmax2) gmax2 = -grad[t];
          grad_diff = gmax - grad[t];
          quad = kii + kv(t, t) + 2.0 * y[ui] * y[t] * kv(ui, t);
        } else {
          continue;
        }
        if (grad_diff > 0.0) {
          if (quad <= 0.0) quad = kTau;
          double gain = -(grad_diff * grad_diff) / quad;
          if (gain <= best_gain) {
            best_gain = gain;
            j = static_cast<std::ptrdiff_t>(t);
          }
        }
      }
    }

    violation = gmax + gmax2;
    if (violation < kKktTol || j < 0) break;

    auto ui = static_cast<std::size_t>(i);
    auto uj = static_cast<std::size_t>(j);
    double qii = kv(ui, ui), qjj = kv(uj, uj);
    double qij = static_cast<double>(y[ui]) * static_cast<double>(y[uj]) * kv(ui, uj);
    double old_i = alpha[ui], old_j = alpha[uj];

    if (y[ui] != y[uj]) {
      double quad = qii + qjj + 2.0 * qij;
      if (quad <= 0.0) quad = kTau;
      double delta = (-grad[ui] - grad[uj]) / quad;
      double diff = alpha[ui] - alpha[uj];
      alpha[ui] += delta;
      alpha[uj] += delta;
      if (diff > 0.0) {
        if (alpha[uj] < 0.0) {
          alpha[uj] = 0.0;
          alpha[ui] = diff;
        }
      } else {
        if (alpha[ui] < 0.0) {
          alpha[ui] = 0.0;
          alpha[uj] = -diff;
        }
      }
      if (diff > 0.0) {
        if (alpha[ui] > c) {
          alpha[ui] = c;
          alpha[uj] = c - diff;
        }
      } else {
        if (alpha[uj] > c) {
          alpha[uj] = c;
          alpha[ui] = c + diff;
        }
      }
    } else {
      double quad = qii + qjj - 2.0 * qij;
      if (quad <= 0.0) quad = kTau;
      double delta = (grad[ui] - grad[uj]) / quad;
      double sum = alpha[ui] + alpha[uj];
      alpha[ui] -= delta;
      alpha[uj] += delta;
      if (sum > c) {
        if (alpha[ui] > c) {
          alpha[ui] = c;
          alpha[uj] = sum - c;
        }
      } else {
        if (alpha[uj] < 0.0) {
          alpha[uj] = 0.0;
          alpha[ui] = sum;
        }
      }
      if (sum > c) {
        if (alpha[uj] > c) {
          alpha[uj] = c;
          alpha[ui] = sum - c;
        }
      } else {
        if (alpha[ui] < 0.0) {
          alpha[ui] = 0.0;
          alpha[uj] = sum;
        }
      }
    }

    double delta_i = alpha[ui] - old_i;
    double delta_j = alpha[uj] - old_j;
    for (std::size_t t = 0; t < nn; ++t) {
      double qit = static_cast<double>(y[ui]) * static_cast<double>(y[t]) * kv(ui, t);
      double qjt = static_cast<double>(y[uj]) * static_cast<double>(y[t]) * kv(uj, t);
      grad[t] += qit * delta_i + qjt * delta_j;
    }
    ++iter;

#ifndef NDEBUG
    double obj_now = objective();
    assert(obj_now <= prev_obj + 1e-9 * (1.0 + std::fabs(prev_obj)));
    prev_obj = obj_now;
#endif
  }

  DualSolution out;
  out.iterations = iter;
  out.stalled = iter >= kMaxIterations && violation > 10.0 * kKktTol;
  out.objective_min = objective();

  // Bias from the KKT conditions: average y*G over free variables, else the
  // midpoint of the bound-derived bracket.
  double upper = inf, lower = -inf, sum_free = 0.0;
  std::size_t n_free = 0;
  for (std::size_t t = 0; t < nn; ++t) {
    double yg = static_cast<double>(y[t]) * grad[t];
    if (alpha[t] >= c) {
      if (y[t] == -1)
        upper = std::min(upper, yg);
      else
        lower = std::max(lower, yg);
    } else if (alpha[t] <= 0.0) {
      if (y[t] == +1)
        upper = std::min(upper, yg);
      else
        lower = std::max(lower, yg);
    } else {
      ++n_free;
      sum_free += yg;
    }
  }
  out.rho = n_free > 0 ? sum_free / static_cast<double>(n_free) : (upper + lower) / 2.0;
  out.alpha = std::move(alpha);
  return out;
}

/// Ascending-id permutation of row indices; ids must be unique.
std::vector<std::size_t> canonical_order(const std::vector<std::string>& ids) {
  std::set<std::string> seen;
  for (const auto& id : ids)
    if (!seen.insert(id).second) raise(Errc::bad_config, "duplicate subject id '" + id + "'");
  std::vector<std::size_t> order(ids.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return ids[a] < ids[b]; });
  return order;
}

Matrix take_rows(const Matrix& m, std::span<const std::size_t> rows) {
  Matrix out(rows.size(), m.cols);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    auto src = m.row(rows[r]);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return out;
}

void check_training_inputs(const Matrix& features, const Matrix& targets) {
  if (features.rows != targets.rows)
    raise(Errc::bad_config, "features have " + std::to_string(features.rows) + " rows, targets " +
                                std::to_string(targets.rows));
  for (double v : features.a)
    if (!std::isfinite(v)) raise(Errc::non_finite_value, "features contain a non-finite value");
  for (double v : targets.a)
    if (!std::isfinite(v)) raise(Errc::non_finite_target, "targets contain a non-finite value");
}

double fold_score(std::span<const double> observed, std::span<const double> predicted) {
  double r = stats::pearson_r(observed, predicted);
  // Constant predictions carry no ranking information; score them 0.
  return std::isnan(r) ? 0.0 : r;
}

}  // namespace

Standardizer Standardizer::fit(const Matrix& features) {
  if (features.rows < 2)
    raise(Errc::too_few_rows, "standardization needs at least 2 rows, got " +
                                  std::to_string(features.rows));
  Standardizer s;
  s.mean.resize(features.cols);
  s.std_dev.resize(features.cols);
  for (std::size_t c = 0; c < features.cols; ++c) {
    double m = 0.0;
    for (std::size_t r = 0; r < features.rows; ++r) m += features(r, c);
    m /= static_cast<double>(features.rows);
    double var = 0.0;
    for (std::size_t r = 0; r < features.rows; ++r) {
      double d = features(r, c) - m;
      var += d * d;
    }
    var /= static_cast<double>(features.rows);
    s.mean[c] = m;
    s.std_dev[c] = std::max(std::sqrt(var), kStdFloor);
  }
  return s;
}

Matrix Standardizer::apply(const Matrix& features) const {
  if (features.cols != width())
    raise(Errc::width_mismatch, "feature width " + std::to_string(features.cols) +
                                    " does not match the standardizer width " +
                                    std::to_string(width()));
  Matrix z(features.rows, features.cols);
  for (std::size_t r = 0; r < features.rows; ++r)
    for (std::size_t c = 0; c < features.cols; ++c)
      z(r, c) = (features(r, c) - mean[c]) / std_dev[c];
  return z;
}

double gamma_base(std::size_t p) {
  if (p == 0) raise(Errc::bad_config, "cannot scale gamma for zero features");
  return 1.0 / static_cast<double>(p);
}

TrainedSvr svr_fit(const Matrix& standardized_features, std::span<const double> targets,
                   SvrHyperParams params) {
  check_params(params);
  if (standardized_features.rows < 2)
    raise(Errc::too_few_rows, "training needs at least 2 rows, got " +
                                  std::to_string(standardized_features.rows));
  if (standardized_features.rows != targets.size())
    raise(Errc::bad_config, "features have " + std::to_string(standardized_features.rows) +
                                " rows, targets " + std::to_string(targets.size()));
  for (double v : targets)
    if (!std::isfinite(v)) raise(Errc::non_finite_target, "targets contain a non-finite value");

  Matrix d2 = squared_distances(standardized_features);
  Matrix kernel = kernel_from_d2(d2, params.gamma);
  DualSolution sol = solve_svr_dual(kernel, targets, params.c, params.epsilon);

  std::size_t n = targets.size();
  std::vector<std::size_t> kept;
  std::vector<double> coeffs;
  for (std::size_t t = 0; t < n; ++t) {
    double coeff = sol.alpha[t] - sol.alpha[t + n];
    if (coeff != 0.0) {
      kept.push_back(t);
      coeffs.push_back(coeff);
    }
  }

  TrainedSvr svr;
  svr.params = params;
  svr.support_vectors = take_rows(standardized_features, kept);
  svr.dual_coeffs = std::move(coeffs);
  svr.bias = -sol.rho;
  svr.dual_objective = -sol.objective_min;
  svr.iterations = sol.iterations;
  svr.stalled = sol.stalled;
  return svr;
}

std::vector<double> svr_predict(const TrainedSvr& svr, const Matrix& standardized_features) {
  if (standardized_features.cols != svr.support_vectors.cols)
    raise(Errc::width_mismatch, "query width " + std::to_string(standardized_features.cols) +
                                    " does not match the model width " +
                                    std::to_string(svr.support_vectors.cols));
  std::vector<double> out(standardized_features.rows);
  for (std::size_t q = 0; q < standardized_features.rows; ++q) {
    double f = svr.bias;
    auto query = standardized_features.row(q);
    for (std::size_t s = 0; s < svr.support_vectors.rows; ++s) {
      double d2 = squared_distance(svr.support_vectors.row(s), query);
      f += svr.dual_coeffs[s] * std::exp(-svr.params.gamma * d2);
    }
    out[q] = f;
  }
  return out;
}

TrainedMultiSvr fit_multi(const Matrix& raw_features, const Matrix& targets,
                          std::span<const SvrHyperParams> params_per_outcome, unsigned threads) {
  check_training_inputs(raw_features, targets);
  if (params_per_outcome.size() != targets.cols)
    raise(Errc::bad_config, "got " + std::to_string(params_per_outcome.size()) +
                                " parameter sets for " + std::to_string(targets.cols) + " outcomes");

  TrainedMultiSvr model;
  model.standardizer = Standardizer::fit(raw_features);
  Matrix z = model.standardizer.apply(raw_features);
  model.per_outcome.resize(targets.cols);

  Matrix d2 = squared_distances(z);
  std::vector<std::vector<double>> columns(targets.cols, std::vector<double>(targets.rows));
  for (std::size_t o = 0; o < targets.cols; ++o)
    for (std::size_t r = 0; r < targets.rows; ++r) columns[o][r] = targets(r, o);

  parallel_for(targets.cols, effective_threads(threads), [&](std::size_t o) {
    check_params(params_per_outcome[o]);
    Matrix kernel = kernel_from_d2(d2, params_per_outcome[o].gamma);
    DualSolution sol =
        solve_svr_dual(kernel, columns[o], params_per_outcome[o].c, params_per_outcome[o].epsilon);
    std::size_t n = targets.rows;
    std::vector<std::size_t> kept;
    std::vector<double> coeffs;
    for (std::size_t t = 0; t < n; ++t) {
      double coeff = sol.alpha[t] - sol.alpha[t + n];
      if (coeff != 0.0) {
        kept.push_back(t);
        coeffs.push_back(coeff);
      }
    }
    TrainedSvr svr;
    svr.params = params_per_outcome[o];
    svr.support_vectors = take_rows(z, kept);
    svr.dual_coeffs = std::move(coeffs);
    svr.bias = -sol.rho;
    svr.dual_objective = -sol.objective_min;
    svr.iterations = sol.iterations;
    svr.stalled = sol.stalled;
    model.per_outcome[o] = std::move(svr);
  });

  for (std::size_t k = 0; k < ingest::kOutcomeCount && k < targets.cols; ++k)
    model.outcome_names.push_back(ingest::kOutcomeNames[k]);
  for (std::size_t k = ingest::kOutcomeCount; k < targets.cols; ++k)
    model.outcome_names.push_back("outcome_" + std::to_string(k));
  return model;
}

Matrix predict_multi(const TrainedMultiSvr& model, const Matrix& raw_features) {
  Matrix z = model.standardizer.apply(raw_features);
  Matrix out(raw_features.rows, model.per_outcome.size());
  for (std::size_t o = 0; o < model.per_outcome.size(); ++o) {
    auto preds = svr_predict(model.per_outcome[o], z);
    for (std::size_t r = 0; r < preds.size(); ++r) out(r, o) = preds[r];
  }
  return out;
}

GridSearchResult grid_search_5fold(const Matrix& raw_features, const Matrix& targets,
                                   const std::vector<std::string>& subject_ids,
                                   const HyperGrid& grid, std::uint64_t seed, unsigned threads) {
  check_training_inputs(raw_features, targets);
  if (subject_ids.size() != raw_features.rows)
    raise(Errc::bad_config, "got " + std::to_string(subject_ids.size()) + " ids for " +
                                std::to_string(raw_features.rows) + " rows");
  if (raw_features.rows < 10)
    raise(Errc::too_few_rows, "5-fold search needs at least 10 subjects, got " +
                                  std::to_string(raw_features.rows));
  if (grid.c_values.empty() || grid.gamma_factors.empty() || grid.epsilon_values.empty())
    raise(Errc::bad_config, "hyperparameter grid is empty");

  // Canonical grid-point order implements the tie-break: smaller C first,
  // then smaller gamma, then larger epsilon.
  std::vector<double> cs = grid.c_values, gf = grid.gamma_factors, es = grid.epsilon_values;
  std::sort(cs.begin(), cs.end());
  std::sort(gf.begin(), gf.end());
  std::sort(es.begin(), es.end(), std::greater<>());

  double g0 = gamma_base(raw_features.cols);
  struct GridPoint {
    SvrHyperParams params;
  };
  std::vector<GridPoint> points;
  for (double c : cs)
    for (double g : gf)
      for (double e : es) points.push_back({{c, g * g0, e}});

  std::size_t n = raw_features.rows;
  std::size_t n_outcomes = targets.cols;
  auto order = canonical_order(subject_ids);
  Rng rng(seed);
  rng.shuffle(order);

  constexpr std::size_t n_folds = 5;
  std::array<std::pair<std::size_t, std::size_t>, n_folds> fold_bounds;
  for (std::size_t f = 0; f < n_folds; ++f)
    fold_bounds[f] = {f * n / n_folds, (f + 1) * n / n_folds};

  // score[fold][point][outcome]; NaN marks a degenerate validation fold.
  std::vector<Matrix> fold_scores(n_folds, Matrix(points.size(), n_outcomes));

  parallel_for(n_folds, effective_threads(threads), [&](std::size_t f) {
    auto [lo, hi] = fold_bounds[f];
    std::vector<std::size_t> val_rows(order.begin() + static_cast<std::ptrdiff_t>(lo),
                                      order.begin() + static_cast<std::ptrdiff_t>(hi));
    std::vector<std::size_t> train_rows;
    train_rows.reserve(n - val_rows.size());
    for (std::size_t t = 0; t < n; ++t)
      if (t < lo || t >= hi) train_rows.push_back(order[t]);

    Matrix train_raw = take_rows(raw_features, train_rows);
    Matrix val_raw = take_rows(raw_features, val_rows);
    Standardizer scaler = Standardizer::fit(train_raw);
    Matrix train_z = scaler.apply(train_raw);
    Matrix val_z = scaler.apply(val_raw);

    Matrix train_d2 = squared_distances(train_z);
    Matrix cross_d2(val_z.rows, train_z.rows);
    for (std::size_t q = 0; q < val_z.rows; ++q)
      for (std::size_t t = 0; t < train_z.rows; ++t)
        cross_d2(q, t) = squared_distance(val_z.row(q), train_z.row(t));

    std::vector<std::vector<double>> train_targets(n_outcomes),
        val_targets(n_outcomes);
    for (std::size_t o = 0; o < n_outcomes; ++o) {
      for (std::size_t t : train_rows) train_targets[o].push_back(targets(t, o));
      for (std::size_t v : val_rows) val_targets[o].push_back(targets(v, o));
    }

    std::vector<bool> degenerate(n_outcomes);
    for (std::size_t o = 0; o < n_outcomes; ++o)
      degenerate[o] = stats::variance(val_targets[o]) == 0.0;

    for (std::size_t pt = 0; pt < points.size(); ++pt) {
      const auto& params = points[pt].params;
      Matrix kernel = kernel_from_d2(train_d2, params.gamma);
      Matrix cross_kernel = kernel_from_d2(cross_d2, params.gamma);
      for (std::size_t o = 0; o < n_outcomes; ++o) {
        if (degenerate[o]) {
          fold_scores[f](pt, o) = std::numeric_limits<double>::quiet_NaN();
          continue;
        }
        DualSolution sol = solve_svr_dual(kernel, train_targets[o], params.c, params.epsilon);
        std::vector<double> preds(val_rows.size());
        for (std::size_t q = 0; q < val_rows.size(); ++q) {
          double fx = -sol.rho;
          for (std::size_t t = 0; t < train_rows.size(); ++t) {
            double coeff = sol.alpha[t] - sol.alpha[t + train_rows.size()];
            if (coeff != 0.0) fx += coeff * cross_kernel(q, t);
          }
          preds[q] = fx;
        }
        fold_scores[f](pt, o) = fold_score(val_targets[o], preds);
      }
    }
  });

  GridSearchResult result;
  result.seed = seed;
  result.per_outcome.resize(n_outcomes);
  result.cv_score.assign(n_outcomes, -std::numeric_limits<double>::infinity());
  for (std::size_t o = 0; o < n_outcomes; ++o) {
    bool any_fold = false;
    for (std::size_t pt = 0; pt < points.size(); ++pt) {
      double sum = 0.0;
      std::size_t used = 0;
      for (std::size_t f = 0; f < n_folds; ++f) {
        double r = fold_scores[f](pt, o);
        if (!std::isnan(r)) {
          sum += r;
          ++used;
        }
      }
      if (used == 0) continue;
      any_fold = true;
      double mean_r = sum / static_cast<double>(used);
      if (mean_r > result.cv_score[o]) {
        result.cv_score[o] = mean_r;
        result.per_outcome[o] = points[pt].params;
      }
    }
    if (!any_fold)
      raise(Errc::degenerate_fold, "every validation fold has zero variance for outcome " +
                                       std::to_string(o));
  }
  return result;
}

EvalReport loocv_evaluate(const Matrix& raw_features, const Matrix& targets,
                          const std::vector<std::string>& subject_ids,
                          std::span<const SvrHyperParams> params_per_outcome, unsigned threads) {
  check_training_inputs(raw_features, targets);
  if (subject_ids.size() != raw_features.rows)
    raise(Errc::bad_config, "got " + std::to_string(subject_ids.size()) + " ids for " +
                                std::to_string(raw_features.rows) + " rows");
  if (raw_features.rows < 3)
    raise(Errc::too_few_rows, "leave-one-out evaluation needs at least 3 subjects, got " +
                                  std::to_string(raw_features.rows));
  if (params_per_outcome.size() != targets.cols)
    raise(Errc::bad_config, "got " + std::to_string(params_per_outcome.size()) +
                                " parameter sets for " + std::to_string(targets.cols) + " outcomes");
  for (const auto& params : params_per_outcome) check_params(params);

  auto order = canonical_order(subject_ids);
  std::size_t n = raw_features.rows;
  std::size_t n_outcomes = targets.cols;

  Matrix canon_features = take_rows(raw_features, order);
  Matrix canon_targets(n, n_outcomes);
  std::vector<std::string> canon_ids(n);
  for (std::size_t r = 0; r < n; ++r) {
    canon_ids[r] = subject_ids[order[r]];
    for (std::size_t o = 0; o < n_outcomes; ++o) canon_targets(r, o) = targets(order[r], o);
  }

  Matrix predictions(n, n_outcomes);
  std::vector<std::vector<std::string>> fold_notes(n);

  parallel_for(n, effective_threads(threads), [&](std::size_t held_out) {
    std::vector<std::size_t> train_rows;
    train_rows.reserve(n - 1);
    for (std::size_t r = 0; r < n; ++r)
      if (r != held_out) train_rows.push_back(r);

    Matrix train_raw = take_rows(canon_features, train_rows);
    Standardizer scaler = Standardizer::fit(train_raw);
    Matrix train_z = scaler.apply(train_raw);
    Matrix query_raw(1, canon_features.cols);
    std::copy(canon_features.row(held_out).begin(), canon_features.row(held_out).end(),
              query_raw.row(0).begin());
    Matrix query_z = scaler.apply(query_raw);

    Matrix train_d2 = squared_distances(train_z);
    std::vector<double> query_d2(train_rows.size());
    for (std::size_t t = 0; t < train_rows.size(); ++t)
      query_d2[t] = squared_distance(query_z.row(0), train_z.row(t));

    for (std::size_t o = 0; o < n_outcomes; ++o) {
      std::vector<double> z_train(train_rows.size());
      for (std::size_t t = 0; t < train_rows.size(); ++t)
        z_train[t] = canon_targets(train_rows[t], o);
      const auto& params = params_per_outcome[o];
      Matrix kernel = kernel_from_d2(train_d2, params.gamma);
      DualSolution sol = solve_svr_dual(kernel, z_train, params.c, params.epsilon);
      double fx = -sol.rho;
      for (std::size_t t = 0; t < train_rows.size(); ++t) {
        double coeff = sol.alpha[t] - sol.alpha[t + train_rows.size()];
        if (coeff != 0.0) fx += coeff * std::exp(-params.gamma * query_d2[t]);
      }
      predictions(held_out, o) = fx;
      if (sol.stalled)
        fold_notes[held_out].push_back("subject " + canon_ids[held_out] + ", outcome " +
                                       std::to_string(o) + ": solver stalled after " +
                                       std::to_string(sol.iterations) + " iterations");
    }
  });

  EvalReport report;
  report.subject_ids = canon_ids;
  report.per_outcome.resize(n_outcomes);
  double r_sum = 0.0;
  for (std::size_t o = 0; o < n_outcomes; ++o) {
    OutcomeEval eval;
    eval.name = o < ingest::kOutcomeCount ? ingest::kOutcomeNames[o]
                                          : "outcome_" + std::to_string(o);
    eval.observed.resize(n);
    eval.predicted.resize(n);
    for (std::size_t r = 0; r < n; ++r) {
      eval.observed[r] = canon_targets(r, o);
      eval.predicted[r] = predictions(r, o);
    }
    double r = stats::pearson_r(eval.observed, eval.predicted);
    eval.pearson_r = std::isnan(r) ? 0.0 : r;
    r_sum += eval.pearson_r;
    report.per_outcome[o] = std::move(eval);
  }
  report.mean_r = r_sum / static_cast<double>(n_outcomes);
  for (auto& notes : fold_notes)
    for (auto& note : notes) report.stall_notes.push_back(std::move(note));
  return report;
}

namespace {

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) raise(Errc::io_error, "cannot create " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) raise(Errc::io_error, "write failed for " + path.string());
}

std::string load_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(Errc::io_error, "cannot open " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) raise(Errc::io_error, "read failed for " + path.string());
  return text;
}

}  // namespace

void write_model_json(const std::filesystem::path& path, const TrainedMultiSvr& model,
                      std::uint64_t seed) {
  nlohmann::json doc;
  doc["format"] = "xgml-svr-1";
  doc["seed"] = seed;
  doc["outcomes"] = model.outcome_names;
  doc["standardizer"] = {{"mean", model.standardizer.mean},
                         {"std", model.standardizer.std_dev}};
  doc["models"] = nlohmann::json::array();
  for (const auto& svr : model.per_outcome) {
    nlohmann::json m;
    m["params"] = {{"c", svr.params.c}, {"gamma", svr.params.gamma},
                   {"epsilon", svr.params.epsilon}};
    m["bias"] = svr.bias;
    m["dual_objective"] = svr.dual_objective;
    m["iterations"] = svr.iterations;
    m["stalled"] = svr.stalled;
    m["dual_coeffs"] = svr.dual_coeffs;
    auto rows = nlohmann::json::array();
    for (std::size_t r = 0; r < svr.support_vectors.rows; ++r) {
      auto row = svr.support_vectors.row(r);
      rows.push_back(std::vector<double>(row.begin(), row.end()));
    }
    m["support_vectors"] = std::move(rows);
    doc["models"].push_back(std::move(m));
  }
  auto text = doc.dump(2);
  text.push_back('\n');
  write_text_file(path, text);
}

TrainedMultiSvr read_model_json(const std::filesystem::path& path) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(load_text(path));
  } catch (const nlohmann::json::exception& e) {
    raise(Errc::bad_config, path.string() + ": model file is not valid JSON: " + e.what());
  }
  TrainedMultiSvr model;
  try {
    if (doc.at("format").get<std::string>() != "xgml-svr-1")
      raise(Errc::bad_config, path.string() + ": unknown model format");
    model.outcome_names = doc.at("outcomes").get<std::vector<std::string>>();
    model.standardizer.mean = doc.at("standardizer").at("mean").get<std::vector<double>>();
    model.standardizer.std_dev = doc.at("standardizer").at("std").get<std::vector<double>>();
    for (const auto& m : doc.at("models")) {
      TrainedSvr svr;
      svr.params.c = m.at("params").at("c").get<double>();
      svr.params.gamma = m.at("params").at("gamma").get<double>();
      svr.params.epsilon = m.at("params").at("epsilon").get<double>();
      svr.bias = m.at("bias").get<double>();
      svr.dual_objective = m.at("dual_objective").get<double>();
      svr.iterations = m.at("iterations").get<std::size_t>();
      svr.stalled = m.at("stalled").get<bool>();
      svr.dual_coeffs = m.at("dual_coeffs").get<std::vector<double>>();
      const auto& rows = m.at("support_vectors");
      svr.support_vectors = Matrix(rows.size(), model.standardizer.mean.size());
      for (std::size_t r = 0; r < rows.size(); ++r) {
        auto row = rows[r].get<std::vector<double>>();
        if (row.size() != svr.support_vectors.cols)
          raise(Errc::width_mismatch, path.string() + ": support vector width mismatch");
        std::copy(row.begin(), row.end(), svr.support_vectors.row(r).begin());
      }
      if (svr.dual_coeffs.size() != svr.support_vectors.rows)
        raise(Errc::bad_config, path.string() + ": coefficient count mismatch");
      model.per_outcome.push_back(std::move(svr));
    }
  } catch (const nlohmann::json::exception& e) {
    raise(Errc::bad_config, path.string() + ": malformed model file: " + e.what());
  }
  if (model.per_outcome.size() != model.outcome_names.size())
    raise(Errc::bad_config, path.string() + ": outcome name/model count mismatch");
  return model;
}

void write_eval_report(const std::filesystem::path& directory, const EvalReport& report) {
  std::filesystem::create_directories(directory);
  nlohmann::json doc;
  doc["subjects"] = report.subject_ids;
  doc["mean_r"] = report.mean_r;
  doc["stalls"] = report.stall_notes;
  doc["per_outcome"] = nlohmann::json::array();
  for (const auto& eval : report.per_outcome)
    doc["per_outcome"].push_back({{"name", eval.name}, {"pearson_r", eval.pearson_r}});
  auto text = doc.dump(2);
  text.push_back('\n');
  write_text_file(directory / "eval_report.json", text);

  for (const auto& eval : report.per_outcome) {
    std::string csv = "subject_id,observed,predicted\n";
    for (std::size_t r = 0; r < report.subject_ids.size(); ++r)
      csv += report.subject_ids[r] + ',' + format_double(eval.observed[r]) + ',' +
             format_double(eval.predicted[r]) + '\n';
    write_text_file(directory / ("scatter_" + eval.name + ".csv"), csv);
  }
}

}  // namespace xgml::model
