#include "seunet/gradcheck_suite.hpp"

#include <cmath>
#include <cstdio>
#include <functional>

#include "seunet/layers.hpp"
#include "seunet/loss.hpp"
#include "seunet/model.hpp"
#include "seunet/ops.hpp"
#include "seunet/random.hpp"

namespace seunet {

namespace {

using D = double;
using VarD = Var<D>;
using Inputs = std::span<const VarD>;

// sum(w ⊙ y) with fixed random weights keeps every gradient entry O(1).
VarD weighted(const VarD& y, Rng& rng) {
  return ops::sum(ops::mul(y, VarD(rng.uniform_tensor<D>(y.shape(), -1.0, 1.0))));
}

Tensor<D> rand(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  return rng.uniform_tensor<D>(std::move(shape), lo, hi);
}

using CheckFn = std::function<GradCheckReport(std::uint64_t seed, const GradCheckOptions&)>;

struct Check {
  std::string name;
  CheckCategory category;
  CheckFn run;
};

// Checks a function of freshly sampled input tensors.
Check input_check(std::string name, CheckCategory cat, std::function<std::vector<Tensor<D>>(Rng&)> make,
                  std::function<VarD(Inputs)> f) {
  return Check{std::move(name), cat, [make, f](std::uint64_t seed, const GradCheckOptions& o) {
                 Rng rng(seed);
                 std::vector<Tensor<D>> points = make(rng);
                 const std::uint64_t wseed = rng.next();
                 return gradcheck(
                     [&](Inputs in) {
                       Rng wr(wseed);
                       return weighted(f(in), wr);
                     },
                     points, o);
               }};
}

// Checks a module's parameters together with its input (wrapped as a parameter).
template <typename Module>
Check module_check(std::string name, CheckCategory cat, std::function<Module(Rng&)> build, Shape input_shape,
                   std::function<VarD(Module&, const VarD&)> forward) {
  return Check{std::move(name), cat, [build, input_shape, forward](std::uint64_t seed, const GradCheckOptions& o) {
                 Rng rng(seed);
                 Module m = build(rng);
                 Parameter<D> x("input", rand(rng, input_shape));
                 StateRefs<D> refs;
                 m.collect(refs);
                 refs.params.push_back(&x);
                 const std::uint64_t wseed = rng.next();
                 return gradcheck_parameters(
                     [&]() {
                       Rng wr(wseed);
                       return weighted(forward(m, x.var()), wr);
                     },
                     refs.params, o);
               }};
}

std::vector<Check> build_checks() {
  using C = CheckCategory;
  std::vector<Check> c;

  c.push_back(input_check("add", C::kSmooth, [](Rng& r) { return std::vector{rand(r, {3, 4}), rand(r, {3, 4})}; },
                          [](Inputs in) { return ops::add(in[0], in[1]); }));
  c.push_back(input_check("mul", C::kSmooth, [](Rng& r) { return std::vector{rand(r, {3, 4}), rand(r, {3, 4})}; },
                          [](Inputs in) { return ops::mul(in[0], in[1]); }));
  c.push_back(input_check("scale_mean", C::kSmooth, [](Rng& r) { return std::vector{rand(r, {2, 5})}; },
                          [](Inputs in) { return ops::mean(ops::mul(ops::scale(in[0], 1.7), in[0])); }));
  c.push_back(input_check("reshape_permute", C::kSmooth, [](Rng& r) { return std::vector{rand(r, {2, 3, 4})}; },
                          [](Inputs in) {
                            return ops::transpose_last(ops::permute(ops::reshape(in[0], {2, 4, 3}), {1, 0, 2}));
                          }));
  c.push_back(input_check("matmul", C::kSmooth, [](Rng& r) { return std::vector{rand(r, {2, 3, 4}), rand(r, {4, 5})}; },
                          [](Inputs in) { return ops::matmul(in[0], in[1]); }));
  c.push_back(input_check("linear", C::kSmooth,
                          [](Rng& r) { return std::vector{rand(r, {2, 3, 4}), rand(r, {4, 5}), rand(r, {5})}; },
                          [](Inputs in) { return ops::linear(in[0], in[1], in[2]); }));
  c.push_back(input_check("gelu", C::kSmooth, [](Rng& r) { return std::vector{rand(r, {4, 5}, -3.0, 3.0)}; },
                          [](Inputs in) { return ops::gelu(in[0]); }));
  c.push_back(input_check("sigmoid", C::kSmooth, [](Rng& r) { return std::vector{rand(r, {4, 5}, -4.0, 4.0)}; },
                          [](Inputs in) { return ops::sigmoid(in[0]); }));
  c.push_back(input_check("softmax", C::kSmooth, [](Rng& r) { return std::vector{rand(r, {3, 6}, -2.0, 2.0)}; },
                          [](Inputs in) { return ops::softmax_lastdim(in[0]); }));
  c.push_back(input_check("layernorm", C::kSmooth,
                          [](Rng& r) { return std::vector{rand(r, {2, 3, 6}), rand(r, {6}, 0.5, 1.5), rand(r, {6})}; },
                          [](Inputs in) { return ops::layernorm(in[0], in[1], in[2]); }));
  c.push_back(input_check("bilinear_resize", C::kSmooth, [](Rng& r) { return std::vector{rand(r, {1, 2, 3, 4})}; },
                          [](Inputs in) { return ops::bilinear_resize(in[0], 3); }));
  c.push_back(input_check("concat_channels", C::kSmooth,
                          [](Rng& r) { return std::vector{rand(r, {2, 2, 3, 3}), rand(r, {2, 3, 3, 3})}; },
                          [](Inputs in) { return ops::concat_channels(in[0], in[1]); }));
  c.push_back(input_check("attention", C::kSmooth,
                          [](Rng& r) { return std::vector{rand(r, {2, 5, 4}), rand(r, {2, 3, 4}), rand(r, {2, 3, 4})}; },
                          [](Inputs in) { return ops::scaled_dot_product_attention(in[0], in[1], in[2]); }));
  c.push_back(input_check("bce_with_logits", C::kSmooth,
                          [](Rng& r) { return std::vector{rand(r, {2, 1, 3, 3}, -4.0, 4.0)}; },
                          [](Inputs in) {
                            Tensor<D> y(in[0].shape());
                            for (Index i = 0; i < y.numel(); ++i) y[i] = static_cast<D>(i % 3 == 0);
                            return bce_with_logits(in[0], y);
                          }));

  c.push_back(input_check("relu", C::kPiecewise, [](Rng& r) { return std::vector{rand(r, {4, 5})}; },
                          [](Inputs in) { return ops::relu(in[0]); }));
  c.push_back(input_check("conv2d", C::kPiecewise,
                          [](Rng& r) { return std::vector{rand(r, {2, 2, 5, 5}), rand(r, {3, 2, 3, 3}), rand(r, {3})}; },
                          [](Inputs in) { return ops::conv2d(in[0], ConvSpec{2, 3, 3, 1, 1, true}, in[1], in[2]); }));
  c.push_back(input_check("conv2d_strided", C::kPiecewise,
                          [](Rng& r) { return std::vector{rand(r, {1, 2, 7, 6}), rand(r, {2, 2, 3, 3}), rand(r, {2})}; },
                          [](Inputs in) { return ops::conv2d(in[0], ConvSpec{2, 2, 3, 2, 1, true}, in[1], in[2]); }));
  c.push_back(input_check("conv_transpose2d", C::kPiecewise,
                          [](Rng& r) { return std::vector{rand(r, {2, 3, 3, 3}), rand(r, {3, 2, 2, 2}), rand(r, {2})}; },
                          [](Inputs in) {
                            return ops::conv_transpose2d(in[0], ConvSpec{3, 2, 2, 2, 0, true}, in[1], in[2]);
                          }));
  c.push_back(input_check("maxpool2d", C::kPiecewise, [](Rng& r) { return std::vector{rand(r, {2, 2, 4, 6})}; },
                          [](Inputs in) { return ops::maxpool2d(in[0]); }));
  c.push_back(input_check("batchnorm2d_train", C::kPiecewise,
                          [](Rng& r) { return std::vector{rand(r, {2, 3, 3, 3}), rand(r, {3}, 0.5, 1.5), rand(r, {3})}; },
                          [](Inputs in) {
                            NormState<D> state(3);
                            return ops::batchnorm2d(in[0], in[1], in[2], state, Mode::kTrain);
                          }));
  c.push_back(input_check("batchnorm2d_eval", C::kPiecewise,
                          [](Rng& r) { return std::vector{rand(r, {2, 3, 3, 3}), rand(r, {3}, 0.5, 1.5), rand(r, {3})}; },
                          [](Inputs in) {
                            NormState<D> state(3);
                            state.running_mean = Tensor<D>(Shape{3}, {0.1, -0.2, 0.3});
                            state.running_var = Tensor<D>(Shape{3}, {0.5, 1.5, 2.0});
                            return ops::batchnorm2d(in[0], in[1], in[2], state, Mode::kEval);
                          }));

  c.push_back(module_check<UNetBlock<D>>(
      "unet_block", C::kPiecewise, [](Rng& r) { return UNetBlock<D>("block", UNetBlockConfig{2, 3, 2}, r); },
      {2, 2, 6, 6}, [](UNetBlock<D>& m, const VarD& x) { return m.forward(x, Mode::kTrain); }));
  c.push_back(module_check<SpatialReductionAttention<D>>(
      "sr_attention", C::kPiecewise,
      [](Rng& r) { return SpatialReductionAttention<D>("attn", 8, 2, 2, r); }, {2, 6, 8},
      [](SpatialReductionAttention<D>& m, const VarD& x) { return m.forward(x); }));
  c.push_back(module_check<TransformerBlock<D>>(
      "transformer_block", C::kPiecewise,
      [](Rng& r) {
        VariantSpec spec = thin_gradcheck_spec();
        return TransformerBlock<D>("block", spec, r);
      },
      {2, 4, 8}, [](TransformerBlock<D>& m, const VarD& x) { return m.forward(x); }));
  return c;
}

GradCheckReport end_to_end(std::uint64_t seed, const GradCheckOptions& options) {
  GradCheckOptions o = options;
  // A smaller step keeps most ReLU switches outside the differencing interval.
  o.step = 1e-6;
  o.kink_guard = true;
  Rng rng(seed);
  SeUNetTrans<D> model(thin_gradcheck_spec(), rng.next());
  const Tensor<D> x = rand(rng, {2, 3, 32, 32}, 0.0, 1.0);
  Tensor<D> y(Shape{2, 1, 32, 32});
  for (Index i = 0; i < y.numel(); ++i) y[i] = rng.uniform() < 0.4 ? 1.0 : 0.0;
  std::vector<Parameter<D>*> params = model.parameters();
  return gradcheck_parameters(
      [&]() { return bce_with_logits(model.forward_logits(VarD(x), Mode::kTrain), y); }, params, o);
}

}  // namespace

double default_tolerance(CheckCategory category) {
  switch (category) {
    case CheckCategory::kSmooth:
      return 1e-6;
    case CheckCategory::kPiecewise:
      return 1e-4;
    case CheckCategory::kEndToEnd:
      return 1e-3;
  }
  return 0.0;
}

std::vector<std::string> gradcheck_suite_names() {
  std::vector<std::string> names;
  for (const auto& c : build_checks()) names.push_back(c.name);
  names.push_back("end_to_end_thin_model");
  return names;
}

std::vector<SuiteResult> run_gradcheck_suite(const SuiteOptions& options) {
  if (options.seeds < 1) throw std::invalid_argument("gradcheck suite: need at least one seed");
  std::vector<Check> checks = build_checks();
  if (options.include_end_to_end) checks.push_back(Check{"end_to_end_thin_model", CheckCategory::kEndToEnd, end_to_end});

  std::vector<SuiteResult> results;
  for (std::size_t k = 0; k < checks.size(); ++k) {
    const Check& check = checks[k];
    SuiteResult r;
    r.name = check.name;
    r.category = check.category;
    r.seeds = options.seeds;
    if (check.category == CheckCategory::kEndToEnd) {
      r.tolerance = options.end_to_end_tolerance;
    } else {
      r.tolerance = options.operator_tolerance.value_or(default_tolerance(check.category));
    }
    r.passed = true;
    for (int s = 0; s < options.seeds; ++s) {
      GradCheckOptions o;
      o.tolerance = r.tolerance;
      o.max_coordinates = options.max_coordinates;
      o.seed = options.base_seed + 1000003ULL * k + static_cast<std::uint64_t>(s);
      const GradCheckReport rep = check.run(o.seed, o);
      if (!rep.passed) r.passed = false;
      if (s == 0 || rep.max_rel_error > r.max_rel_error) {
        r.max_rel_error = rep.max_rel_error;
        r.worst = "seed " + std::to_string(o.seed) + " " + rep.worst_location;
      }
    }
    results.push_back(r);
  }
  return results;
}

std::string format_suite_result(const SuiteResult& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%-4s %-22s tol=%.0e seeds=%d max_rel_err=%.3e (%s)", r.passed ? "ok" : "FAIL",
                r.name.c_str(), r.tolerance, r.seeds, r.max_rel_error, r.worst.c_str());
  return buf;
}

}  // namespace seunet
