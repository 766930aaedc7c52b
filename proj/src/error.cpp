#include "irnet/error.hpp"

namespace irnet {

const char* errc_name(Errc code) {
  switch (code) {
    case Errc::unknown_road_in_edge: return "UnknownRoadInEdge";
    case Errc::self_loop: return "SelfLoop";
    case Errc::sentinel_id_used: return "SentinelIdUsed";
    case Errc::ordering_not_permutation: return "OrderingNotPermutation";
    case Errc::unknown_road: return "UnknownRoad";
    case Errc::empty_sequence: return "EmptySequence";
    case Errc::invalid_q: return "InvalidQ";
    case Errc::missing_feature: return "MissingFeature";
    case Errc::length_mismatch: return "LengthMismatch";
    case Errc::malformed_row: return "MalformedRow";
    case Errc::non_positive_speed: return "NonPositiveSpeed";
    case Errc::missing_timestamp: return "MissingTimestamp";
    case Errc::window_out_of_range: return "WindowOutOfRange";
    case Errc::range_too_short: return "RangeTooShort";
    case Errc::bad_fractions: return "BadFractions";
    case Errc::degenerate_range: return "DegenerateRange";
    case Errc::bad_spec: return "BadSpec";
    case Errc::shape_mismatch: return "ShapeMismatch";
    case Errc::rows_not_divisible: return "RowsNotDivisible";
    case Errc::non_finite_result: return "NonFiniteResult";
    case Errc::not_scalar_loss: return "NotScalarLoss";
    case Errc::non_deterministic_function: return "NonDeterministicFunction";
    case Errc::bad_config: return "BadConfig";
    case Errc::io_error: return "IoError";
    case Errc::version_mismatch: return "VersionMismatch";
    case Errc::corrupt_checksum: return "CorruptChecksum";
    case Errc::zero_true_value: return "ZeroTrueValue";
    case Errc::empty_dataset: return "EmptyDataset";
    case Errc::config_mismatch: return "ConfigMismatch";
    case Errc::empty_fine_tune_set: return "EmptyFineTuneSet";
  }
  return "UnknownError";
}

Error::Error(Errc code, const std::string& message)
    : std::runtime_error(std::string(errc_name(code)) + ": " + message), code_(code) {}

void raise(Errc code, const std::string& message) { throw Error(code, message); }

}  // namespace irnet
