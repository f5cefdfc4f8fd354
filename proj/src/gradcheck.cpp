#include "seunet/gradcheck.hpp"

#include <algorithm>
#include <limits>
#include <cmath>
#include <numeric>
#include <tuple>

#include "seunet/random.hpp"

namespace seunet {

namespace {

struct Coordinate {
  std::size_t tensor;
  Index offset;
};

// Every coordinate, in a seeded random order when sampling is requested.
std::vector<Coordinate> candidate_coordinates(const std::vector<Index>& sizes, const GradCheckOptions& options) {
  std::vector<Coordinate> all;
  for (std::size_t t = 0; t < sizes.size(); ++t) {
    for (Index i = 0; i < sizes[t]; ++i) all.push_back({t, i});
  }
  if (options.max_coordinates <= 0 || static_cast<Index>(all.size()) <= options.max_coordinates) return all;
  Rng rng(options.seed ^ 0x9e3779b97f4a7c15ULL);
  rng.shuffle(all);
  return all;
}

void require_scalar(const Var<double>& y) {
  if (!y.defined() || y.numel() != 1) {
    throw AutogradError("gradcheck: function must reduce to a scalar, got shape " +
                        (y.defined() ? shape_to_string(y.shape()) : std::string("<undefined>")));
  }
}

void note(GradCheckReport& report, double analytic, double numeric, const std::string& where) {
  const double err = gradcheck_relative_error(analytic, numeric);
  ++report.coordinates_checked;
  if (report.coordinates_checked == 1 || err > report.max_rel_error) {
    report.max_rel_error = err;
    report.worst_location = where;
    report.worst_analytic = analytic;
    report.worst_numeric = numeric;
  }
}

// `probe(c, delta)` evaluates f with coordinate c displaced by delta.
template <typename Probe, typename Label>
GradCheckReport compare(const std::vector<Tensor<double>>& analytic, const std::vector<Index>& sizes,
                        const GradCheckOptions& options, Probe&& probe, Label&& label) {
  GradCheckReport report;
  const Index wanted = options.max_coordinates > 0 ? options.max_coordinates : std::numeric_limits<Index>::max();
  auto central = [&](const Coordinate& c, double h) { return (probe(c, h) - probe(c, -h)) / (2.0 * h); };
  for (const Coordinate& c : candidate_coordinates(sizes, options)) {
    if (report.coordinates_checked >= wanted) break;
    const double numeric = central(c, options.step);
    if (options.kink_guard) {
      const double half = central(c, 0.5 * options.step);
      if (gradcheck_relative_error(numeric, half) > options.tolerance) {
        ++report.coordinates_skipped;
        continue;
      }
    }
    note(report, analytic[c.tensor][c.offset], numeric, label(c));
  }
  const Index drawn = report.coordinates_checked + report.coordinates_skipped;
  const bool too_many_skipped =
      drawn > 0 && static_cast<double>(report.coordinates_skipped) > options.max_skipped_fraction * drawn;
  report.passed = report.coordinates_checked > 0 && report.max_rel_error <= options.tolerance && !too_many_skipped;
  return report;
}

}  // namespace

double gradcheck_relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport gradcheck(const ScalarFunction& f, const std::vector<Tensor<double>>& points,
                          const GradCheckOptions& options) {
  std::vector<Var<double>> inputs;
  inputs.reserve(points.size());
  for (const auto& p : points) inputs.emplace_back(p, true);

  std::vector<Tensor<double>> analytic;
  {
    Tape<double> tape;
    TapeScope<double> scope(tape);
    const Var<double> y = f(inputs);
    require_scalar(y);
    tape.backward(y);
    for (const auto& in : inputs) {
      analytic.push_back(in.node()->has_grad() ? in.grad() : Tensor<double>(in.shape()));
    }
  }

  std::vector<Index> sizes;
  for (const auto& p : points) sizes.push_back(p.numel());
  std::vector<Tensor<double>> probe = points;
  auto evaluate = [&](const Coordinate& c, double delta) {
    double& slot = probe[c.tensor][c.offset];
    const double original = slot;
    slot = original + delta;
    std::vector<Var<double>> constants;
    constants.reserve(probe.size());
    for (const auto& p : probe) constants.emplace_back(p, false);
    const Var<double> y = f(constants);
    slot = original;
    require_scalar(y);
    return y.value()[0];
  };
  return compare(analytic, sizes, options, evaluate, [](const Coordinate& c) {
    return "input[" + std::to_string(c.tensor) + "]:" + std::to_string(c.offset);
  });
}

GradCheckReport finite_diff_gradcheck(const std::function<Var<double>(const Var<double>&)>& f,
                                      const Tensor<double>& point, const GradCheckOptions& options) {
  return gradcheck([&f](std::span<const Var<double>> in) { return f(in[0]); }, {point}, options);
}

GradCheckReport gradcheck_parameters(const std::function<Var<double>()>& f, std::span<Parameter<double>* const> params,
                                     const GradCheckOptions& options) {
  for (Parameter<double>* p : params) p->zero_grad();
  {
    Tape<double> tape;
    TapeScope<double> scope(tape);
    const Var<double> y = f();
    require_scalar(y);
    tape.backward(y);
  }
  std::vector<Tensor<double>> analytic;
  std::vector<Index> sizes;
  for (Parameter<double>* p : params) {
    analytic.push_back(p->grad());
    sizes.push_back(p->value().numel());
    p->zero_grad();
  }

  auto evaluate = [&](const Coordinate& c, double delta) {
    double& slot = params[c.tensor]->value()[c.offset];
    const double original = slot;
    slot = original + delta;
    const Var<double> y = f();
    slot = original;
    require_scalar(y);
    return y.value()[0];
  };
  return compare(analytic, sizes, options, evaluate,
                 [&](const Coordinate& c) { return params[c.tensor]->name() + ":" + std::to_string(c.offset); });
}

}  // namespace seunet
