#include "mhad/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace mhad {

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / denom;
}

namespace {

double evaluate(const ScalarFn& fn, const std::vector<Tensor<double>>& point) {
  ad::Tape<double> tape;
  std::vector<ad::Var<double>> inputs;
  inputs.reserve(point.size());
  for (const auto& t : point) inputs.push_back(tape.constant(t));
  return fn(tape, inputs).value().item();
}

}  // namespace

GradCheckReport grad_check(std::string name, const ScalarFn& fn, std::vector<Tensor<double>> point, double h,
                           double tol) {
  GradCheckReport report;
  report.name = std::move(name);
  report.tolerance = tol;

  std::vector<Tensor<double>> analytic;
  {
    ad::Tape<double> tape;
    std::vector<ad::Var<double>> inputs;
    for (const auto& t : point) inputs.push_back(tape.leaf(t, true));
    const auto root = fn(tape, inputs);
    const auto grads = tape.backward(root);
    for (const auto& v : inputs) analytic.push_back(grads.of(v));
  }

  for (std::size_t k = 0; k < point.size(); ++k) {
    for (std::size_t i = 0; i < point[k].size(); ++i) {
      const double saved = point[k][i];
      point[k][i] = saved + h;
      const double plus = evaluate(fn, point);
      point[k][i] = saved - h;
      const double minus = evaluate(fn, point);
      point[k][i] = saved;

      const double numeric = (plus - minus) / (2.0 * h);
      const double err = relative_error(analytic[k][i], numeric);
      ++report.coordinates;
      if (err > tol) ++report.failures;
      if (err > report.max_rel_error || report.coordinates == 1) {
        report.max_rel_error = std::max(report.max_rel_error, err);
        report.worst_input = k;
        report.worst_index = i;
      }
    }
  }
  return report;
}

}  // namespace mhad
