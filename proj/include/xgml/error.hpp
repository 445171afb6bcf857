#pragma once

#include <stdexcept>
#include <string>

namespace xgml {

enum class Errc {
  // volume / table parsing
  unsupported_datatype,
  dimension_mismatch,
  not_a_volume,
  grid_mismatch,
  empty_region,
  unknown_label,
  missing_column,
  non_numeric_cell,
  missing_outcome,
  // density estimation
  degenerate_samples,
  non_positive_bandwidth,
  // sequence distances
  empty_sequence,
  non_finite_value,
  // graph aggregation
  empty_group,
  inconsistent_dimensions,
  // regression
  too_few_rows,
  non_finite_target,
  width_mismatch,
  degenerate_fold,
  // importance
  too_few_edges,
  unknown_region,
  // generator / configuration
  invalid_spec,
  bad_config,
  io_error,
};

const char* errc_name(Errc code) noexcept;

/// Exception carrying a stable error code plus a human-readable message.
class Error : public std::runtime_error {
public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(std::string(errc_name(code)) + ": " + message),
        code_(code),
        detail_(message) {}

  Errc code() const noexcept { return code_; }

  /// The message without the code prefix, for rethrowing with added context.
  const std::string& detail() const noexcept { return detail_; }

private:
  Errc code_;
  std::string detail_;
};

[[noreturn]] inline void raise(Errc code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace xgml
