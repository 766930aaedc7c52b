#pragma once

#include <Eigen/Core>

#include "irnet/error.hpp"

namespace irnet {

/// Elastic distance between two speed sequences under the q-norm warping
/// recursion
///
///   DTW(A_i, B_j) = (|a_i - b_j|^q + min{DTW(A_{i-1}, B_{j-1}),
///                                        DTW(A_i,     B_{j-1}),
///                                        DTW(A_{i-1}, B_j)}^q)^(1/q)
///
/// with first-row/first-column boundary accumulation and
/// DTW(A_1, B_1) = |a_1 - b_1|. Accumulation composes q-th powers under a
/// single root, so the result is the minimal q-norm of the pointwise
/// distances along any monotone warping path. No warping window is applied.
///
/// Pure function, O(|a|*|b|) time, O(min) memory; safe to call concurrently.
/// Errors: EmptySequence, InvalidQ (q must be >= 1; default in this project
/// is q = 2).
double dtw_distance(const Eigen::VectorXd& a, const Eigen::VectorXd& b, int q = 2);

}  // namespace irnet
