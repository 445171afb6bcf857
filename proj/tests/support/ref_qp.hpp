#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "xgml/model.hpp"

/// Dense reference solver for the box-and-hyperplane dual that the support
/// vector trainer minimizes. Used only by tests. It runs accelerated
/// projected gradient over the full doubled vector, then solves the KKT
/// system of the identified face exactly, so it shares no algorithmic
/// structure with the pairwise working-set solver in the library.
namespace refqp {

struct Solution {
  std::vector<double> alpha;   // doubled box variables, length 2n
  std::vector<double> coeffs;  // alpha[t] - alpha[t + n], length n
  double objective_min = 0.0;  // value of the minimized dual
  double bias = 0.0;
};

namespace detail {

inline double row_distance2(const xgml::Matrix& m, std::size_t r, std::size_t s) {
  double d2 = 0.0;
  for (std::size_t c = 0; c < m.cols; ++c) {
    double d = m(r, c) - m(s, c);
    d2 += d * d;
  }
  return d2;
}

inline std::vector<double> kernel_matrix(const xgml::Matrix& x, double gamma) {
  std::size_t n = x.rows;
  std::vector<double> k(n * n);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t s = 0; s < n; ++s) k[r * n + s] = std::exp(-gamma * row_distance2(x, r, s));
  return k;
}

/// out = Q v with Q(s, t) = y_s y_t K(s mod n, t mod n).
inline void qmul(std::span<const double> kernel, std::size_t n, std::span<const double> v,
                 std::span<double> out) {
  for (std::size_t t = 0; t < 2 * n; ++t) {
    double sum = 0.0;
    const double* krow = kernel.data() + (t % n) * n;
    for (std::size_t s = 0; s < n; ++s) sum += krow[s] * (v[s] - v[s + n]);
    out[t] = t < n ? sum : -sum;
  }
}

inline double objective(std::span<const double> kernel, std::size_t n, std::span<const double> p,
                        std::span<const double> v, std::span<double> scratch) {
  qmul(kernel, n, v, scratch);
  double obj = 0.0;
  for (std::size_t t = 0; t < 2 * n; ++t) obj += v[t] * (0.5 * scratch[t] + p[t]);
  return obj;
}

/// Euclidean projection onto {0 <= x <= c, sum_t y_t x_t = 0} by bisecting
/// the shift multiplier; the constraint sum is nonincreasing in the shift.
inline void project(std::span<double> v, std::size_t n, double c) {
  double vmax = 0.0;
  for (double t : v) vmax = std::max(vmax, std::fabs(t));
  double lo = -(vmax + c + 1.0), hi = vmax + c + 1.0;
  auto shifted_sum = [&](double lambda) {
    double sum = 0.0;
    for (std::size_t t = 0; t < v.size(); ++t) {
      double y = t < n ? 1.0 : -1.0;
      sum += y * std::clamp(v[t] - lambda * y, 0.0, c);
    }
    return sum;
  };
  for (int it = 0; it < 200 && hi - lo > 0.0; ++it) {
    double mid = 0.5 * (lo + hi);
    (shifted_sum(mid) >= 0.0 ? lo : hi) = mid;
  }
  double lambda = 0.5 * (lo + hi);
  for (std::size_t t = 0; t < v.size(); ++t) {
    double y = t < n ? 1.0 : -1.0;
    v[t] = std::clamp(v[t] - lambda * y, 0.0, c);
  }
}

/// Gaussian elimination with partial pivoting; returns false on a pivot too
/// small to trust.
inline bool solve_dense(std::vector<double>& a, std::vector<double>& b, std::size_t m) {
  for (std::size_t col = 0; col < m; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < m; ++r)
      if (std::fabs(a[r * m + col]) > std::fabs(a[piv * m + col])) piv = r;
    if (std::fabs(a[piv * m + col]) < 1e-12) return false;
    if (piv != col) {
      for (std::size_t c2 = 0; c2 < m; ++c2) std::swap(a[piv * m + c2], a[col * m + c2]);
      std::swap(b[piv], b[col]);
    }
    for (std::size_t r = col + 1; r < m; ++r) {
      double f = a[r * m + col] / a[col * m + col];
      if (f == 0.0) continue;
      for (std::size_t c2 = col; c2 < m; ++c2) a[r * m + c2] -= f * a[col * m + c2];
      b[r] -= f * b[col];
    }
  }
  for (std::size_t r = m; r-- > 0;) {
    double s = b[r];
    for (std::size_t c2 = r + 1; c2 < m; ++c2) s -= a[r * m + c2] * b[c2];
    b[r] = s / a[r * m + r];
  }
  return true;
}

/// Exact equality-constrained solve on the face where every variable within
/// `tol` of a bound is frozen there. Returns the polished point through
/// `alpha` only when it stays feasible; the caller keeps whichever of the
/// two points scores lower.
inline bool polish_face(std::span<const double> kernel, std::size_t n, std::span<const double> p,
                        double c, double tol, std::vector<double>& alpha) {
  std::size_t dim = 2 * n;
  std::vector<std::size_t> free;
  std::vector<double> fixed(dim);
  for (std::size_t t = 0; t < dim; ++t) {
    if (alpha[t] <= tol)
      fixed[t] = 0.0;
    else if (alpha[t] >= c - tol)
      fixed[t] = c;
    else {
      fixed[t] = std::numeric_limits<double>::quiet_NaN();
      free.push_back(t);
    }
  }
  auto y_of = [n](std::size_t t) { return t < n ? 1.0 : -1.0; };
  auto q_at = [&](std::size_t s, std::size_t t) {
    return y_of(s) * y_of(t) * kernel[(s % n) * n + (t % n)];
  };

  std::size_t m = free.size() + 1;
  std::vector<double> mat(m * m, 0.0), rhs(m, 0.0);
  for (std::size_t a = 0; a < free.size(); ++a) {
    for (std::size_t b = 0; b < free.size(); ++b) mat[a * m + b] = q_at(free[a], free[b]);
    mat[a * m + free.size()] = y_of(free[a]);
    mat[free.size() * m + a] = y_of(free[a]);
    double r = -p[free[a]];
    for (std::size_t t = 0; t < dim; ++t)
      if (!std::isnan(fixed[t]) && fixed[t] != 0.0) r -= q_at(free[a], t) * fixed[t];
    rhs[a] = r;
  }
  double bound_sum = 0.0;
  for (std::size_t t = 0; t < dim; ++t)
    if (!std::isnan(fixed[t])) bound_sum += y_of(t) * fixed[t];
  rhs[free.size()] = -bound_sum;

  if (!solve_dense(mat, rhs, m)) return false;
  std::vector<double> candidate(dim);
  for (std::size_t t = 0; t < dim; ++t) candidate[t] = std::isnan(fixed[t]) ? 0.0 : fixed[t];
  for (std::size_t a = 0; a < free.size(); ++a) {
    if (rhs[a] < -1e-9 || rhs[a] > c + 1e-9) return false;
    candidate[free[a]] = std::clamp(rhs[a], 0.0, c);
  }
  alpha = std::move(candidate);
  return true;
}

}  // namespace detail

/// Minimizes 0.5 a^T Q a + p^T a over the doubled box with the balance
/// constraint, for the epsilon-insensitive loss: p = [eps - z; eps + z].
/// `standardized` must already be column-standardized when the result is
/// compared with the library trainer.
inline Solution solve(const xgml::Matrix& standardized, std::span<const double> z, double c,
                      double gamma, double epsilon) {
  std::size_t n = standardized.rows;
  std::size_t dim = 2 * n;
  auto kernel = detail::kernel_matrix(standardized, gamma);

  std::vector<double> p(dim);
  for (std::size_t t = 0; t < n; ++t) {
    p[t] = epsilon - z[t];
    p[t + n] = epsilon + z[t];
  }

  double lips = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    double row = 0.0;
    for (std::size_t s = 0; s < n; ++s) row += kernel[r * n + s];
    lips = std::max(lips, 2.0 * row);
  }
  double step = 1.0 / lips;

  std::vector<double> x(dim, 0.0), x_prev(dim, 0.0), v(dim, 0.0), grad(dim), scratch(dim);
  double theta = 1.0;
  double best = detail::objective(kernel, n, p, x, scratch);
  std::vector<double> best_x = x;
  std::size_t since_improvement = 0;

  for (std::size_t it = 0; it < 400000 && since_improvement < 2000; ++it) {
    detail::qmul(kernel, n, v, grad);
    x_prev = x;
    for (std::size_t t = 0; t < dim; ++t) x[t] = v[t] - step * (grad[t] + p[t]);
    detail::project(x, n, c);

    double obj = detail::objective(kernel, n, p, x, scratch);
    if (obj < best - 1e-14 * (1.0 + std::fabs(best))) {
      best = obj;
      best_x = x;
      since_improvement = 0;
    } else {
      ++since_improvement;
    }

    double theta_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * theta * theta));
    double momentum = (theta - 1.0) / theta_next;
    bool rising = obj > detail::objective(kernel, n, p, x_prev, scratch);
    for (std::size_t t = 0; t < dim; ++t)
      v[t] = rising ? x[t] : x[t] + momentum * (x[t] - x_prev[t]);
    theta = rising ? 1.0 : theta_next;
  }

  std::vector<double> polished = best_x;
  if (detail::polish_face(kernel, n, p, c, 1e-6 * std::max(1.0, c), polished)) {
    double obj = detail::objective(kernel, n, p, polished, scratch);
    if (obj <= best) {
      best = obj;
      best_x = std::move(polished);
    }
  }

  Solution out;
  out.alpha = std::move(best_x);
  out.objective_min = best;
  out.coeffs.resize(n);
  for (std::size_t t = 0; t < n; ++t) out.coeffs[t] = out.alpha[t] - out.alpha[t + n];

  detail::qmul(kernel, n, out.alpha, grad);
  for (std::size_t t = 0; t < dim; ++t) grad[t] += p[t];
  double sum_free = 0.0, upper = std::numeric_limits<double>::infinity(),
         lower = -std::numeric_limits<double>::infinity();
  std::size_t n_free = 0;
  double tol = 1e-9 * std::max(1.0, c);
  for (std::size_t t = 0; t < dim; ++t) {
    double y = t < n ? 1.0 : -1.0;
    double yg = y * grad[t];
    if (out.alpha[t] > tol && out.alpha[t] < c - tol) {
      sum_free += yg;
      ++n_free;
    } else if (out.alpha[t] >= c - tol) {
      (y < 0.0 ? upper : lower) = y < 0.0 ? std::min(upper, yg) : std::max(lower, yg);
    } else {
      (y > 0.0 ? upper : lower) = y > 0.0 ? std::min(upper, yg) : std::max(lower, yg);
    }
  }
  double rho = n_free > 0 ? sum_free / static_cast<double>(n_free) : 0.5 * (upper + lower);
  out.bias = -rho;
  return out;
}

/// Decision values for query rows, matching the trainer's expansion.
inline std::vector<double> predict(const Solution& sol, const xgml::Matrix& train,
                                   const xgml::Matrix& query, double gamma) {
  std::vector<double> out(query.rows);
  for (std::size_t q = 0; q < query.rows; ++q) {
    double f = sol.bias;
    for (std::size_t s = 0; s < train.rows; ++s) {
      double d2 = 0.0;
      for (std::size_t c2 = 0; c2 < train.cols; ++c2) {
        double d = train(s, c2) - query(q, c2);
        d2 += d * d;
      }
      f += sol.coeffs[s] * std::exp(-gamma * d2);
    }
    out[q] = f;
  }
  return out;
}

}  // namespace refqp
