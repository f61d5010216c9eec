#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mhad/autodiff.hpp"

namespace mhad {

/// Scalar-valued composite of tape primitives. Must be deterministic: any
/// dropout mask has to be fixed inside the closure.
using ScalarFn = std::function<ad::Var<double>(ad::Tape<double>&, std::span<const ad::Var<double>>)>;

struct GradCheckReport {
  std::string name;
  double tolerance = 0.0;
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
  std::size_t failures = 0;
  std::size_t worst_input = 0;  // which input tensor held the worst coordinate
  std::size_t worst_index = 0;  // flat index within that tensor
  [[nodiscard]] bool passed() const { return failures == 0; }
};

/// |a - n| / max(|a|, |n|, 1e-6).
double relative_error(double analytic, double numeric);

/// Compares backward() against central differences (f(x+h) - f(x-h)) / 2h
/// over every coordinate of every input.
GradCheckReport grad_check(std::string name, const ScalarFn& fn, std::vector<Tensor<double>> point,
                           double h = 1e-5, double tol = 1e-4);

}  // namespace mhad
