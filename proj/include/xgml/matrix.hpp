#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace xgml {

/// Dense row-major matrix of doubles. Deliberately minimal: the library only
/// needs storage, row views, and element access.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> a;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), a(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return a[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return a[r * cols + c]; }

  std::span<double> row(std::size_t r) { return {a.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {a.data() + r * cols, cols}; }
};

}  // namespace xgml
