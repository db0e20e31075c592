#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

namespace postrisk {

/// 1-based nearest rank ceil(p/100 * n), clamped to [1, n].
inline std::size_t nearest_rank_index(double percentile, std::size_t n) {
  if (n == 0) throw std::invalid_argument("percentile of an empty sample");
  if (!(percentile > 0.0 && percentile <= 100.0)) {
    throw std::invalid_argument("percentile must lie in (0, 100]");
  }
  // p*n is exact for integral p and moderate n; the slack absorbs rounding in p/100.
  const double rank = std::ceil(percentile * static_cast<double>(n) / 100.0 - 1e-9);
  return std::clamp<std::size_t>(static_cast<std::size_t>(rank), 1, n);
}

/// Nearest-rank percentile: the ceil(p/100 * n)-th order statistic.
template <typename T>
T nearest_rank(std::span<const T> sample, double percentile) {
  const std::size_t rank = nearest_rank_index(percentile, sample.size());
  std::vector<T> sorted(sample.begin(), sample.end());
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(rank - 1), sorted.end());
  return sorted[rank - 1];
}

template <typename T>
T nearest_rank(const std::vector<T>& sample, double percentile) {
  return nearest_rank(std::span<const T>(sample), percentile);
}

}  // namespace postrisk
