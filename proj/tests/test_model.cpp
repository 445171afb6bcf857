#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include <doctest.h>

#include "xgml/error.hpp"
#include "xgml/matrix.hpp"
#include "xgml/model.hpp"
#include "xgml/rng.hpp"
#include "xgml/stats.hpp"

#include "support/ref_qp.hpp"
#include "support/testutil.hpp"

using namespace xgml;
using model::HyperGrid;
using model::Standardizer;
using model::SvrHyperParams;
using model::TrainedSvr;
using testutil::raises;
using testutil::TempDir;

namespace {

Matrix random_matrix(Rng& rng, std::size_t rows, std::size_t cols, double lo = -2.0,
                     double hi = 2.0) {
  Matrix m(rows, cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) m(r, c) = rng.uniform(lo, hi);
  return m;
}

/// The eight-point noiseless line used across several cases: z = 2x + 1,
/// standardized, with a width that lets C = 100 track it closely.
struct LineFit {
  Matrix standardized{0, 0};
  std::vector<double> targets;
  SvrHyperParams params{100.0, 0.5, 0.01};
  TrainedSvr svr;

  LineFit() {
    Matrix x(8, 1);
    targets.resize(8);
    for (std::size_t r = 0; r < 8; ++r) {
      x(r, 0) = static_cast<double>(r);
      targets[r] = 2.0 * x(r, 0) + 1.0;
    }
    standardized = Standardizer::fit(x).apply(x);
    svr = model::svr_fit(standardized, targets, params);
  }
};

}  // namespace

TEST_CASE("standardizer") {
  SUBCASE("two-point column gets mean 2 and population std 1") {
    Matrix m(2, 1);
    m(0, 0) = 1.0;
    m(1, 0) = 3.0;
    auto st = Standardizer::fit(m);
    CHECK(st.mean == std::vector<double>{2.0});
    CHECK(st.std_dev == std::vector<double>{1.0});
    auto z = st.apply(m);
    CHECK(z(0, 0) == -1.0);
    CHECK(z(1, 0) == 1.0);
  }

  SUBCASE("constant columns standardize to zero") {
    Matrix m(5, 2);
    for (std::size_t r = 0; r < 5; ++r) {
      m(r, 0) = 7.25;
      m(r, 1) = static_cast<double>(r);
    }
    auto z = Standardizer::fit(m).apply(m);
    for (std::size_t r = 0; r < 5; ++r) CHECK(z(r, 0) == 0.0);
  }

  SUBCASE("standardized columns have mean 0 and std 1") {
    Rng rng(501);
    auto m = random_matrix(rng, 10, 5, -30.0, 50.0);
    auto z = Standardizer::fit(m).apply(m);
    for (std::size_t c = 0; c < 5; ++c) {
      std::vector<double> column(10);
      for (std::size_t r = 0; r < 10; ++r) column[r] = z(r, c);
      CHECK(std::fabs(stats::mean(column)) <= 1e-12);
      CHECK(stats::stddev(column) == doctest::Approx(1.0).epsilon(1e-9));
    }
  }

  SUBCASE("one row is too few") {
    Matrix m(1, 3);
    CHECK(raises(Errc::too_few_rows, [&] { Standardizer::fit(m); }));
  }
}

TEST_CASE("rbf kernel self-value is one") {
  TrainedSvr svr;
  svr.params = {1.0, 0.7, 0.1};
  svr.support_vectors = Matrix(1, 2);
  svr.support_vectors(0, 0) = 0.4;
  svr.support_vectors(0, 1) = -1.9;
  svr.dual_coeffs = {2.0};
  svr.bias = 0.5;
  auto preds = model::svr_predict(svr, svr.support_vectors);
  REQUIRE(preds.size() == 1);
  CHECK(preds[0] == doctest::Approx(2.5).epsilon(1e-15));
}

TEST_CASE("svr fit") {
  SUBCASE("two identical targets sit inside the tube") {
    Matrix x(2, 1);
    x(0, 0) = -1.0;
    x(1, 0) = 1.0;
    std::vector<double> y{4.0, 4.0};
    auto svr = model::svr_fit(x, y, {1.0, 1.0, 0.5});
    CHECK(svr.dual_coeffs.empty());
    auto preds = model::svr_predict(svr, x);
    for (double p : preds) CHECK(std::fabs(p - 4.0) <= 0.5);
  }

  SUBCASE("zero support vectors predict the constant bias everywhere") {
    Matrix x(3, 1);
    x(0, 0) = -1.0;
    x(1, 0) = 0.0;
    x(2, 0) = 1.0;
    std::vector<double> y{1.0, 1.02, 0.98};
    auto svr = model::svr_fit(x, y, {1.0, 1.0, 0.5});
    REQUIRE(svr.dual_coeffs.empty());
    Rng rng(502);
    auto queries = random_matrix(rng, 6, 1, -5.0, 5.0);
    auto preds = model::svr_predict(svr, queries);
    for (double p : preds) CHECK(p == svr.bias);
  }

  SUBCASE("noiseless line is tracked within 0.05") {
    LineFit fit;
    CHECK_FALSE(fit.svr.stalled);
    auto preds = model::svr_predict(fit.svr, fit.standardized);
    for (std::size_t r = 0; r < 8; ++r) {
      CHECK(std::fabs(preds[r] - fit.targets[r]) <= 0.05);
      // Support vectors stay within the tube plus the fit slack.
      CHECK(std::fabs(preds[r] - fit.targets[r]) <= fit.params.epsilon + 0.05);
    }
  }

  SUBCASE("noiseless line solves the same dual as the dense reference") {
    // The stop rule leaves the working-set solver a bounded distance from
    // the exact optimum; the bounds here are calibrated to that rule.
    LineFit fit;
    auto ref = refqp::solve(fit.standardized, fit.targets, fit.params.c, fit.params.gamma,
                            fit.params.epsilon);
    CHECK(std::fabs(fit.svr.dual_objective - (-ref.objective_min)) < 1e-4);
    auto mine = model::svr_predict(fit.svr, fit.standardized);
    auto theirs = refqp::predict(ref, fit.standardized, fit.standardized, fit.params.gamma);
    for (std::size_t r = 0; r < 8; ++r) CHECK(std::fabs(mine[r] - theirs[r]) < 5e-3);
  }

  SUBCASE("box-dominated instances match the dense reference tightly") {
    // Small C pushes the dual onto box vertices, where the exact pairwise
    // updates land on the optimum instead of stopping short of it.
    std::mt19937_64 eng(7919);
    std::uniform_real_distribution<double> ud(0.0, 1.0);
    std::normal_distribution<double> nd(0.0, 1.0);
    for (int instance = 0; instance < 10; ++instance) {
      std::size_t n = 4 + static_cast<std::size_t>(ud(eng) * 9.0);
      n = std::min<std::size_t>(n, 12);
      std::size_t p = 1 + static_cast<std::size_t>(ud(eng) * 4.0);
      p = std::min<std::size_t>(p, 4);
      Matrix x(n, p);
      std::vector<double> z(n);
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < p; ++c) x(r, c) = nd(eng);
        double noise = nd(eng);
        z[r] = std::sin(1.3 * x(r, 0)) + 0.5 * x(r, p - 1) + 0.1 * noise;
      }
      SvrHyperParams params;
      params.gamma = 0.3 + ud(eng) * 1.2;
      params.c = 0.02 + ud(eng) * 0.04;
      params.epsilon = 0.05 + ud(eng) * 0.10;
      auto st = Standardizer::fit(x);
      Matrix xs = st.apply(x);
      auto mine = model::svr_fit(xs, z, params);
      auto ref = refqp::solve(xs, z, params.c, params.gamma, params.epsilon);
      CHECK(std::fabs(mine.dual_objective - (-ref.objective_min)) < 1e-6);
      Matrix queries(5, p);
      for (std::size_t r = 0; r < 5; ++r)
        for (std::size_t c = 0; c < p; ++c) queries(r, c) = nd(eng);
      Matrix qs = st.apply(queries);
      auto mine_preds = model::svr_predict(mine, qs);
      auto ref_preds = refqp::predict(ref, xs, qs, params.gamma);
      for (std::size_t r = 0; r < 5; ++r)
        CHECK(std::fabs(mine_preds[r] - ref_preds[r]) < 1e-4);
    }
  }

  SUBCASE("box and equality constraints hold on random instances") {
    Rng rng(503);
    for (int instance = 0; instance < 20; ++instance) {
      std::size_t n = 4 + rng.below(9);
      std::size_t p = 1 + rng.below(4);
      auto x = random_matrix(rng, n, p);
      std::vector<double> y(n);
      for (auto& v : y) v = rng.uniform(-3.0, 3.0);
      SvrHyperParams params{rng.uniform(0.1, 10.0), rng.uniform(0.3, 1.5),
                            rng.uniform(0.02, 0.15)};
      auto xs = Standardizer::fit(x).apply(x);
      auto svr = model::svr_fit(xs, y, params);
      double sum = 0.0;
      for (double coef : svr.dual_coeffs) {
        CHECK(std::fabs(coef) <= params.c + 1e-12);
        sum += coef;
      }
      CHECK(std::fabs(sum) <= 1e-6 * params.c * static_cast<double>(n));
      CHECK(std::isfinite(svr.bias));
      CHECK(std::isfinite(svr.dual_objective));
    }
  }

  SUBCASE("input validation") {
    Matrix x(2, 1);
    x(0, 0) = 0.0;
    x(1, 0) = 1.0;
    std::vector<double> nan_target{0.0, std::numeric_limits<double>::quiet_NaN()};
    CHECK(raises(Errc::non_finite_target, [&] { model::svr_fit(x, nan_target, {1, 1, 0.1}); }));
    Matrix single(1, 1);
    std::vector<double> one{1.0};
    CHECK(raises(Errc::too_few_rows, [&] { model::svr_fit(single, one, {1, 1, 0.1}); }));
    std::vector<double> two{1.0, 2.0};
    CHECK(raises(Errc::bad_config, [&] { model::svr_fit(x, two, {-1.0, 1, 0.1}); }));
  }
}

TEST_CASE("svr predict") {
  LineFit fit;

  SUBCASE("duplicate queries get identical predictions") {
    Matrix queries(4, 1);
    queries(0, 0) = 0.37;
    queries(1, 0) = -1.2;
    queries(2, 0) = 0.37;
    queries(3, 0) = 0.37;
    auto preds = model::svr_predict(fit.svr, queries);
    CHECK(preds[0] == preds[2]);
    CHECK(preds[0] == preds[3]);
  }

  SUBCASE("width mismatch is rejected") {
    Matrix wide(2, 3);
    CHECK(raises(Errc::width_mismatch, [&] { model::svr_predict(fit.svr, wide); }));
  }
}

TEST_CASE("gamma heuristic is the reciprocal feature count") {
  CHECK(model::gamma_base(1) == 1.0);
  CHECK(model::gamma_base(4) == 0.25);
  CHECK(model::gamma_base(19900) == doctest::Approx(1.0 / 19900.0).epsilon(1e-15));
}

TEST_CASE("pearson correlation conventions") {
  Rng rng(504);
  std::vector<double> a(30), b(30);
  for (std::size_t i = 0; i < 30; ++i) {
    a[i] = rng.normal();
    b[i] = 0.6 * a[i] + 0.4 * rng.normal();
  }

  SUBCASE("a vector correlates perfectly with itself") {
    CHECK(stats::pearson_r(a, a) == doctest::Approx(1.0).epsilon(1e-12));
  }

  SUBCASE("positive-slope affine maps leave r unchanged") {
    double r = stats::pearson_r(a, b);
    auto scaled = a;
    for (auto& v : scaled) v = 2.5 * v + 3.0;
    CHECK(stats::pearson_r(scaled, b) == doctest::Approx(r).epsilon(1e-12));
    auto shifted = b;
    for (auto& v : shifted) v = 0.1 * v - 42.0;
    CHECK(stats::pearson_r(a, shifted) == doctest::Approx(r).epsilon(1e-12));
  }

  SUBCASE("constant input yields NaN") {
    std::vector<double> flat(30, 1.0);
    CHECK(std::isnan(stats::pearson_r(flat, b)));
  }
}

TEST_CASE("grid search") {
  Rng rng(505);
  const std::size_t n = 15;
  auto features = random_matrix(rng, n, 3);
  Matrix targets(n, 2);
  for (std::size_t r = 0; r < n; ++r) {
    targets(r, 0) = 1.5 * features(r, 0) + 0.2 * rng.normal();
    targets(r, 1) = rng.normal();
  }
  std::vector<std::string> ids;
  for (std::size_t r = 0; r < n; ++r)
    ids.push_back("s" + std::string(r < 10 ? "0" : "") + std::to_string(r));

  SUBCASE("a single grid point is returned as-is") {
    HyperGrid grid;
    grid.c_values = {2.0};
    grid.gamma_factors = {0.5};
    grid.epsilon_values = {0.05};
    auto result = model::grid_search_5fold(features, targets, ids, grid, 42);
    REQUIRE(result.per_outcome.size() == 2);
    for (const auto& params : result.per_outcome) {
      CHECK(params.c == 2.0);
      CHECK(params.gamma == doctest::Approx(0.5 * model::gamma_base(3)).epsilon(1e-15));
      CHECK(params.epsilon == 0.05);
    }
    CHECK(result.seed == 42);
  }

  SUBCASE("an all-way tie picks smaller c, smaller gamma, larger epsilon") {
    // Tube half-widths beyond the target range make every model constant,
    // so every grid point scores zero on every fold.
    HyperGrid grid;
    grid.c_values = {0.5, 2.0};
    grid.gamma_factors = {1.0, 4.0};
    grid.epsilon_values = {50.0, 100.0};
    auto result = model::grid_search_5fold(features, targets, ids, grid, 42);
    for (std::size_t o = 0; o < 2; ++o) {
      CHECK(result.cv_score[o] == 0.0);
      CHECK(result.per_outcome[o].c == 0.5);
      CHECK(result.per_outcome[o].gamma == doctest::Approx(model::gamma_base(3)).epsilon(1e-15));
      CHECK(result.per_outcome[o].epsilon == 100.0);
    }
  }

  SUBCASE("constant targets make every fold degenerate") {
    Matrix flat(n, 1);
    for (std::size_t r = 0; r < n; ++r) flat(r, 0) = 3.0;
    HyperGrid grid;
    grid.c_values = {1.0};
    grid.gamma_factors = {1.0};
    grid.epsilon_values = {0.1};
    CHECK(raises(Errc::degenerate_fold,
                 [&] { model::grid_search_5fold(features, flat, ids, grid, 42); }));
  }

  SUBCASE("fewer than ten subjects are rejected") {
    Matrix small = random_matrix(rng, 8, 2);
    Matrix small_targets(8, 1);
    std::vector<std::string> small_ids;
    for (std::size_t r = 0; r < 8; ++r) {
      small_targets(r, 0) = static_cast<double>(r);
      small_ids.push_back("s" + std::to_string(r));
    }
    CHECK(raises(Errc::too_few_rows, [&] {
      model::grid_search_5fold(small, small_targets, small_ids, HyperGrid{}, 42);
    }));
  }
}

TEST_CASE("leave-one-out evaluation") {
  Rng rng(506);
  const std::size_t n = 12;
  auto features = random_matrix(rng, n, 3);
  Matrix targets(n, 2);
  for (std::size_t r = 0; r < n; ++r) {
    targets(r, 0) = 2.0 * features(r, 1) - features(r, 2) + 0.1 * rng.normal();
    targets(r, 1) = rng.normal();
  }
  std::vector<std::string> ids;
  for (std::size_t r = 0; r < n; ++r)
    ids.push_back("s" + std::string(r < 10 ? "0" : "") + std::to_string(r));
  std::vector<SvrHyperParams> params(2, SvrHyperParams{1.0, model::gamma_base(3), 0.1});

  auto report = model::loocv_evaluate(features, targets, ids, params);

  SUBCASE("report shape and bookkeeping") {
    REQUIRE(report.per_outcome.size() == 2);
    CHECK(report.per_outcome[0].name == "CDRSB");
    CHECK(report.per_outcome[1].name == "ADAS11");
    CHECK(report.subject_ids.size() == n);
    CHECK(std::is_sorted(report.subject_ids.begin(), report.subject_ids.end()));
    double mean = (report.per_outcome[0].pearson_r + report.per_outcome[1].pearson_r) / 2.0;
    CHECK(report.mean_r == doctest::Approx(mean).epsilon(1e-15));
    for (const auto& outcome : report.per_outcome) {
      CHECK(outcome.observed.size() == n);
      CHECK(outcome.predicted.size() == n);
      CHECK(outcome.pearson_r >= -1.0);
      CHECK(outcome.pearson_r <= 1.0);
    }
  }

  SUBCASE("caller row order does not matter") {
    std::vector<std::size_t> order(n);
    for (std::size_t r = 0; r < n; ++r) order[r] = (r * 5 + 3) % n;
    Matrix shuffled_features(n, 3);
    Matrix shuffled_targets(n, 2);
    std::vector<std::string> shuffled_ids(n);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < 3; ++c) shuffled_features(r, c) = features(order[r], c);
      for (std::size_t c = 0; c < 2; ++c) shuffled_targets(r, c) = targets(order[r], c);
      shuffled_ids[r] = ids[order[r]];
    }
    auto again = model::loocv_evaluate(shuffled_features, shuffled_targets, shuffled_ids, params);
    CHECK(again.subject_ids == report.subject_ids);
    for (std::size_t o = 0; o < 2; ++o) {
      CHECK(again.per_outcome[o].pearson_r == report.per_outcome[o].pearson_r);
      CHECK(again.per_outcome[o].predicted == report.per_outcome[o].predicted);
      CHECK(again.per_outcome[o].observed == report.per_outcome[o].observed);
    }
  }

  SUBCASE("two subjects are too few") {
    Matrix tiny = random_matrix(rng, 2, 2);
    Matrix tiny_targets(2, 1);
    std::vector<std::string> tiny_ids{"a", "b"};
    std::vector<SvrHyperParams> one_param(1, SvrHyperParams{1.0, 0.5, 0.1});
    CHECK(raises(Errc::too_few_rows,
                 [&] { model::loocv_evaluate(tiny, tiny_targets, tiny_ids, one_param); }));
  }
}

TEST_CASE("multi-output wrapper and model file round trip") {
  Rng rng(507);
  const std::size_t n = 10;
  auto features = random_matrix(rng, n, 4);
  Matrix targets(n, 3);
  for (std::size_t r = 0; r < n; ++r) {
    targets(r, 0) = features(r, 0);
    targets(r, 1) = -features(r, 1);
    targets(r, 2) = rng.normal();
  }
  std::vector<SvrHyperParams> params(3, SvrHyperParams{2.0, model::gamma_base(4), 0.05});
  auto trained = model::fit_multi(features, targets, params);

  REQUIRE(trained.per_outcome.size() == 3);
  CHECK(trained.outcome_names == std::vector<std::string>{"CDRSB", "ADAS11", "ADAS13"});
  CHECK(trained.standardizer.width() == 4);

  auto queries = random_matrix(rng, 5, 4);
  auto preds = model::predict_multi(trained, queries);
  CHECK(preds.rows == 5);
  CHECK(preds.cols == 3);

  SUBCASE("per-outcome predictions agree with the single-model path") {
    auto z = trained.standardizer.apply(queries);
    for (std::size_t o = 0; o < 3; ++o) {
      auto alone = model::svr_predict(trained.per_outcome[o], z);
      for (std::size_t r = 0; r < 5; ++r) CHECK(preds(r, o) == alone[r]);
    }
  }

  SUBCASE("the JSON model file reproduces predictions exactly") {
    TempDir dir("xgml-model");
    model::write_model_json(dir.file("model.json"), trained, 42);
    auto back = model::read_model_json(dir.file("model.json"));
    CHECK(back.outcome_names == trained.outcome_names);
    auto preds_back = model::predict_multi(back, queries);
    for (std::size_t r = 0; r < 5; ++r)
      for (std::size_t o = 0; o < 3; ++o) CHECK(preds_back(r, o) == preds(r, o));
  }
}
