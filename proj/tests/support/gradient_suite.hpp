#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace gradcheck {

struct CheckResult {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
  // Coordinates whose +-h probe flipped a ReLU or a pooling argmax; the
  // derivative is undefined there, so they are left out of max_rel_error.
  std::size_t skipped_at_kinks = 0;
};

/// Central-difference checks (h = 1e-5, double) of every layer's backward pass
/// and of the full network, one round per seed.
std::vector<CheckResult> run_suite(std::size_t seeds, std::uint64_t base_seed = 1);

}  // namespace gradcheck
