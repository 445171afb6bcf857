#include "xgml/error.hpp"

namespace xgml {

const char* errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::unsupported_datatype: return "UnsupportedDatatype";
    case Errc::dimension_mismatch: return "DimensionMismatch";
    case Errc::not_a_volume: return "NotAVolume";
    case Errc::grid_mismatch: return "GridMismatch";
    case Errc::empty_region: return "EmptyRegion";
    case Errc::unknown_label: return "UnknownLabel";
    case Errc::missing_column: return "MissingColumn";
    case Errc::non_numeric_cell: return "NonNumericCell";
    case Errc::missing_outcome: return "MissingOutcome";
    case Errc::degenerate_samples: return "DegenerateSamples";
    case Errc::non_positive_bandwidth: return "NonPositiveBandwidth";
    case Errc::empty_sequence: return "EmptySequence";
    case Errc::non_finite_value: return "NonFiniteValue";
    case Errc::empty_group: return "EmptyGroup";
    case Errc::inconsistent_dimensions: return "InconsistentDimensions";
    case Errc::too_few_rows: return "TooFewRows";
    case Errc::non_finite_target: return "NonFiniteTarget";
    case Errc::width_mismatch: return "WidthMismatch";
    case Errc::degenerate_fold: return "DegenerateFold";
    case Errc::too_few_edges: return "TooFewEdges";
    case Errc::unknown_region: return "UnknownRegion";
    case Errc::invalid_spec: return "InvalidSpec";
    case Errc::bad_config: return "BadConfig";
    case Errc::io_error: return "IoError";
  }
  return "UnknownError";
}

}  // namespace xgml
