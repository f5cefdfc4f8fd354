#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "seunet/autograd.hpp"

namespace seunet {

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-6;
  /// 0 checks every coordinate; otherwise at most this many, sampled uniformly.
  Index max_coordinates = 0;
  std::uint64_t seed = 0;
  /// When set, each coordinate is also differenced with step/2. If the two estimates
  /// disagree by more than the tolerance, a non-differentiable point (ReLU or max-pool
  /// switch) lies within the step: the coordinate is skipped and another one is drawn.
  bool kink_guard = false;
  /// With kink_guard, the check fails if more than this fraction of drawn coordinates
  /// had to be skipped.
  double max_skipped_fraction = 0.25;
};

struct GradCheckReport {
  bool passed = false;
  double max_rel_error = 0.0;
  Index coordinates_checked = 0;
  Index coordinates_skipped = 0;
  std::string worst_location;  // "input[i]:offset" or "param-name:offset"
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

/// |a - n| / max(|a|, |n|, 1e-8), a analytic, n central difference.
double gradcheck_relative_error(double analytic, double numeric);

using ScalarFunction = std::function<Var<double>(std::span<const Var<double>>)>;

/// Compares the tape's gradient of a scalar-valued `f` at `points` against central differences.
GradCheckReport gradcheck(const ScalarFunction& f, const std::vector<Tensor<double>>& points,
                          const GradCheckOptions& options);

GradCheckReport finite_diff_gradcheck(const std::function<Var<double>(const Var<double>&)>& f,
                                      const Tensor<double>& point, const GradCheckOptions& options);

/// Same check against Parameters that `f` closes over; values are perturbed in place and restored.
GradCheckReport gradcheck_parameters(const std::function<Var<double>()>& f, std::span<Parameter<double>* const> params,
                                     const GradCheckOptions& options);

}  // namespace seunet
