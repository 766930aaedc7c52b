#include "irnet/warp.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace irnet {

namespace {
double power_q(double x, int q) {
  if (q == 1) return x;
  if (q == 2) return x * x;
  return std::pow(x, q);
}
}  // namespace

double dtw_distance(const Eigen::VectorXd& a, const Eigen::VectorXd& b, int q) {
  if (a.size() == 0 || b.size() == 0) {
    raise(Errc::empty_sequence, "dtw_distance requires non-empty sequences");
  }
  if (q < 1) {
    raise(Errc::invalid_q, "q must be a positive integer");
  }
  const Eigen::Index n = a.size();
  const Eigen::Index m = b.size();

  // DP over q-th powers; x -> x^(1/q) is monotone, so minimising the power
  // sum minimises the q-norm. Two rolling rows.
  std::vector<double> prev(static_cast<std::size_t>(m));
  std::vector<double> curr(static_cast<std::size_t>(m));
  for (Eigen::Index j = 0; j < m; ++j) {
    const double cost = power_q(std::abs(a[0] - b[j]), q);
    prev[j] = cost + (j > 0 ? prev[j - 1] : 0.0);
  }
  for (Eigen::Index i = 1; i < n; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) {
      const double cost = power_q(std::abs(a[i] - b[j]), q);
      double best = prev[j];
      if (j > 0) best = std::min({prev[j - 1], curr[j - 1], best});
      curr[j] = cost + best;
    }
    std::swap(prev, curr);
  }
  const double total = prev[static_cast<std::size_t>(m - 1)];
  return q == 1 ? total : (q == 2 ? std::sqrt(total) : std::pow(total, 1.0 / q));
}

}  // namespace irnet
