#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "mhad/gradcheck.hpp"

namespace mhad {

struct GradCheckSuiteOptions {
  std::size_t dim = 4;
  std::size_t hidden = 3;
  std::size_t max_len = 5;
  std::size_t heads = 3;
  std::size_t batch = 2;
  std::size_t vocab = 12;
  std::size_t points_per_primitive = 10;
  std::size_t points_per_model = 2;
  std::uint64_t seed = 1;
  double step = 1e-5;
  double tolerance = 1e-4;
  /// Negative control: swaps `square` for a variant with a wrong backward rule.
  bool inject_fault = false;
};

/// Finite-difference checks of every primitive, every loss and the full
/// single-model and joint objectives. One report per component, carrying the
/// worst relative error over all sampled points.
std::vector<GradCheckReport> run_gradcheck_suite(const GradCheckSuiteOptions& options);

/// x -> x*x with a deliberately wrong derivative (3x). Test fixture only.
ad::Var<double> faulty_square(const ad::Var<double>& x);

}  // namespace mhad
