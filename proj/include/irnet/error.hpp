#pragma once

#include <stdexcept>
#include <string>

namespace irnet {

/// Error codes for every failure the library reports. Each maps 1:1 to a
/// documented error condition of the operation that raises it.
enum class Errc {
  unknown_road_in_edge,
  self_loop,
  sentinel_id_used,
  ordering_not_permutation,
  unknown_road,
  empty_sequence,
  invalid_q,
  missing_feature,
  length_mismatch,
  malformed_row,
  non_positive_speed,
  missing_timestamp,
  window_out_of_range,
  range_too_short,
  bad_fractions,
  degenerate_range,
  bad_spec,
  shape_mismatch,
  rows_not_divisible,
  non_finite_result,
  not_scalar_loss,
  non_deterministic_function,
  bad_config,
  io_error,
  version_mismatch,
  corrupt_checksum,
  zero_true_value,
  empty_dataset,
  config_mismatch,
  empty_fine_tune_set,
};

const char* errc_name(Errc code);

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message);
  Errc code() const { return code_; }

 private:
  Errc code_;
};

[[noreturn]] void raise(Errc code, const std::string& message);

}  // namespace irnet
