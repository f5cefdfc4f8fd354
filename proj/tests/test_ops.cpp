#include <cmath>
#include <numbers>

#include "seunet/ops.hpp"
#include "test_helpers.hpp"

namespace seunet {
namespace {

using testing::random_tensor;
using VarD = Var<double>;

ConvSpec conv_spec(Index cin, Index cout, Index k, Index s, Index p, bool bias = false) {
  ConvSpec spec;
  spec.in_channels = cin;
  spec.out_channels = cout;
  spec.kernel = k;
  spec.stride = s;
  spec.padding = p;
  spec.has_bias = bias;
  return spec;
}

double dot(const Tensor<double>& a, const Tensor<double>& b) {
  double acc = 0.0;
  for (Index i = 0; i < a.numel(); ++i) acc += a[i] * b[i];
  return acc;
}

TEST(Conv2d, AllOnesThreeByThree) {
  const auto out = ops::conv2d(VarD(Tensor<double>::ones({1, 1, 3, 3})), conv_spec(1, 1, 3, 1, 1),
                               VarD(Tensor<double>::ones({1, 1, 3, 3})), VarD());
  EXPECT_EQ(out.value(), Tensor<double>::from({1, 1, 3, 3}, {4, 6, 4, 6, 9, 6, 4, 6, 4}));
}

TEST(Conv2d, UnitOneByOneKernelIsIdentity) {
  Rng rng(1);
  const auto x = random_tensor(rng, {2, 1, 5, 5});
  const auto out = ops::conv2d(VarD(x), conv_spec(1, 1, 1, 1, 0, true), VarD(Tensor<double>::ones({1, 1, 1, 1})),
                               VarD(Tensor<double>::zeros({1})));
  EXPECT_EQ(out.value(), x);
}

TEST(Conv2d, OutputExtentUsesFloor) {
  EXPECT_EQ(conv_spec(1, 1, 3, 4, 1).conv_output_extent(256), 64);
  EXPECT_EQ(conv_spec(1, 1, 3, 2, 1).conv_output_extent(256), 128);
  EXPECT_EQ(conv_spec(1, 1, 3, 8, 1).conv_output_extent(256), 32);
  const auto out = ops::conv2d(VarD(Tensor<double>({1, 2, 256, 256})), conv_spec(2, 3, 3, 4, 1),
                               VarD(Tensor<double>({3, 2, 3, 3})), VarD());
  EXPECT_EQ(out.shape(), (Shape{1, 3, 64, 64}));
}

TEST(Conv2d, Errors) {
  EXPECT_THROW(ops::conv2d(VarD(Tensor<double>({1, 1, 2, 2})), conv_spec(1, 1, 5, 1, 0),
                           VarD(Tensor<double>({1, 1, 5, 5})), VarD()),
               ShapeError);
  EXPECT_THROW(ops::conv2d(VarD(Tensor<double>({1, 2, 4, 4})), conv_spec(1, 1, 3, 1, 1),
                           VarD(Tensor<double>({1, 1, 3, 3})), VarD()),
               ShapeError);
}

TEST(ConvTranspose2d, ScatterOfSinglePixel) {
  const auto out = ops::conv_transpose2d(VarD(Tensor<double>::from({1, 1, 1, 1}, {2.5})), conv_spec(1, 1, 2, 2, 0),
                                         VarD(Tensor<double>::ones({1, 1, 2, 2})), VarD());
  EXPECT_EQ(out.value(), Tensor<double>({1, 1, 2, 2}, 2.5));
}

TEST(ConvTranspose2d, DoublesExtentsWithKernelTwoStrideTwo) {
  EXPECT_EQ(conv_spec(1, 1, 2, 2, 0).transposed_output_extent(7), 14);
  const auto out = ops::conv_transpose2d(VarD(Tensor<double>({2, 4, 8, 6})), conv_spec(4, 3, 2, 2, 0, true),
                                         VarD(Tensor<double>({4, 3, 2, 2})), VarD(Tensor<double>({3})));
  EXPECT_EQ(out.shape(), (Shape{2, 3, 16, 12}));
}

// Column j of the explicit matrix of a linear map is the image of the j-th basis vector.
template <typename F>
std::vector<std::vector<double>> explicit_matrix(F f, const Shape& in_shape) {
  const Index n = shape_numel(in_shape);
  std::vector<std::vector<double>> cols;
  for (Index j = 0; j < n; ++j) {
    Tensor<double> e(in_shape);
    e[j] = 1.0;
    const Tensor<double> y = f(e);
    cols.emplace_back(y.values().begin(), y.values().end());
  }
  return cols;
}

struct AdjointCase {
  Index kernel, stride, padding;
};

class ConvAdjoint : public ::testing::TestWithParam<AdjointCase> {};

TEST_P(ConvAdjoint, TransposeIsTheMatrixTranspose) {
  const AdjointCase c = GetParam();
  Rng rng(static_cast<std::uint64_t>(17 + c.kernel * 7 + c.stride));
  const ConvSpec spec = conv_spec(1, 1, c.kernel, c.stride, c.padding);
  const auto w = random_tensor(rng, {1, 1, c.kernel, c.kernel});
  const Index out_extent = spec.conv_output_extent(4);
  auto fwd = [&](const Tensor<double>& x) { return ops::conv2d(VarD(x), spec, VarD(w), VarD()).value(); };
  auto adj = [&](const Tensor<double>& y) { return ops::conv_transpose2d(VarD(y), spec, VarD(w), VarD()).value(); };
  const auto A = explicit_matrix(fwd, {1, 1, 4, 4});                   // A[j][i]: input j -> output i
  const auto At = explicit_matrix(adj, {1, 1, out_extent, out_extent});  // At[i][j]
  ASSERT_EQ(At.size(), A[0].size());
  ASSERT_EQ(At[0].size(), A.size());
  for (std::size_t j = 0; j < A.size(); ++j) {
    for (std::size_t i = 0; i < A[j].size(); ++i) EXPECT_EQ(A[j][i], At[i][j]);
  }
  for (int trial = 0; trial < 5; ++trial) {
    const auto x = random_tensor(rng, {1, 1, 4, 4});
    const auto y = random_tensor(rng, {1, 1, out_extent, out_extent});
    EXPECT_NEAR(dot(fwd(x), y), dot(x, adj(y)), 1e-10);
  }
}

INSTANTIATE_TEST_SUITE_P(Geometries, ConvAdjoint,
                         ::testing::Values(AdjointCase{3, 1, 1}, AdjointCase{2, 2, 0}, AdjointCase{1, 1, 0},
                                           AdjointCase{3, 1, 0}));

TEST(MaxPool2d, ForwardCases) {
  EXPECT_EQ(ops::maxpool2d(VarD(Tensor<double>::from({1, 1, 2, 2}, {1, 2, 3, 4}))).value(),
            Tensor<double>::from({1, 1, 1, 1}, {4}));
  EXPECT_EQ(ops::maxpool2d(VarD(Tensor<double>({2, 3, 8, 6}, 1.5))).value(), Tensor<double>({2, 3, 4, 3}, 1.5));
  EXPECT_THROW(ops::maxpool2d(VarD(Tensor<double>({1, 1, 3, 4}))), ShapeError);
}

TEST(MaxPool2d, GradientGoesToFirstArgmax) {
  Tape<double> tape;
  TapeScope<double> scope(tape);
  Parameter<double> x("x", Tensor<double>::from({1, 1, 2, 4}, {1, 5, 7, 7, 2, 3, 0, 1}));
  tape.backward(ops::sum(ops::maxpool2d(x.var())));
  EXPECT_EQ(x.grad(), Tensor<double>::from({1, 1, 2, 4}, {0, 1, 1, 0, 0, 0, 0, 0}));
}

TEST(MaxPool2d, GradientMatchesFiniteDifferences) {
  Rng rng(8);
  const auto x0 = random_tensor(rng, {1, 2, 4, 4});
  Tape<double> tape;
  TapeScope<double> scope(tape);
  Parameter<double> x("x", x0);
  tape.backward(ops::sum(ops::maxpool2d(x.var())));
  for (Index i = 0; i < x0.numel(); ++i) {
    Tensor<double> up = x0, down = x0;
    up[i] += 1e-6;
    down[i] -= 1e-6;
    const double fd = (ops::sum(ops::maxpool2d(VarD(up))).value().item() -
                       ops::sum(ops::maxpool2d(VarD(down))).value().item()) /
                      2e-6;
    EXPECT_NEAR(x.grad()[i], fd, 1e-8);
  }
}

TEST(BatchNorm2d, TrainModeStandardises) {
  Rng rng(9);
  NormState<double> state(3);
  const auto x = random_tensor(rng, {4, 3, 5, 5}, -2.0, 6.0);
  const auto y = ops::batchnorm2d(VarD(x), VarD(Tensor<double>::ones({3})), VarD(Tensor<double>::zeros({3})), state,
                                  Mode::kTrain)
                     .value();
  for (Index c = 0; c < 3; ++c) {
    double s = 0, ss = 0;
    int n = 0;
    for (Index b = 0; b < 4; ++b) {
      for (Index i = 0; i < 25; ++i) {
        const double v = y[(b * 3 + c) * 25 + i];
        s += v;
        ss += v * v;
        ++n;
      }
    }
    EXPECT_NEAR(s / n, 0.0, 1e-12);
    EXPECT_NEAR(ss / n, 1.0, 1e-4);
  }
  for (Index c = 0; c < 3; ++c) EXPECT_GE(state.running_var[c], 0.0);
}

TEST(BatchNorm2d, ConstantChannelGivesZero) {
  NormState<double> state(1);
  const auto y = ops::batchnorm2d(VarD(Tensor<double>({2, 1, 3, 3}, 7.0)), VarD(Tensor<double>::ones({1})),
                                  VarD(Tensor<double>::zeros({1})), state, Mode::kTrain);
  for (Index i = 0; i < y.numel(); ++i) EXPECT_EQ(y.value()[i], 0.0);
}

TEST(BatchNorm2d, RunningStatisticsUpdate) {
  NormState<double> state(1);
  const auto x = Tensor<double>::from({1, 1, 2, 2}, {1, 2, 3, 6});  // mean 3, unbiased var 14/3
  ops::batchnorm2d(VarD(x), VarD(Tensor<double>::ones({1})), VarD(Tensor<double>::zeros({1})), state, Mode::kTrain);
  EXPECT_NEAR(state.running_mean[0], 0.1 * 3.0, 1e-15);
  EXPECT_NEAR(state.running_var[0], 0.9 + 0.1 * 14.0 / 3.0, 1e-15);
}

TEST(BatchNorm2d, EvalModeHandCase) {
  NormState<double> state(1);
  state.running_mean[0] = 2.0;
  state.running_var[0] = 4.0;
  state.epsilon = 0.0;
  const auto y = ops::batchnorm2d(VarD(Tensor<double>::from({1, 1, 1, 1}, {4.0})), VarD(Tensor<double>::ones({1})),
                                  VarD(Tensor<double>::zeros({1})), state, Mode::kEval);
  EXPECT_DOUBLE_EQ(y.value()[0], 1.0);
}

TEST(BatchNorm2d, EvalModeIsTheClosedFormAffineMap) {
  Rng rng(10);
  NormState<double> state(2);
  state.running_mean = Tensor<double>::from({2}, {0.5, -1.0});
  state.running_var = Tensor<double>::from({2}, {2.0, 0.25});
  const auto gamma = Tensor<double>::from({2}, {1.5, -0.5});
  const auto beta = Tensor<double>::from({2}, {0.1, 0.2});
  auto f = [&](const Tensor<double>& x) {
    return ops::batchnorm2d(VarD(x), VarD(gamma), VarD(beta), state, Mode::kEval).value();
  };
  const auto x = random_tensor(rng, {3, 2, 2, 2});
  const auto z = random_tensor(rng, {3, 2, 2, 2});
  const double alpha = 0.3;
  Tensor<double> mix(x.shape());
  for (Index i = 0; i < x.numel(); ++i) mix[i] = alpha * x[i] + (1 - alpha) * z[i];
  const auto fx = f(x), fz = f(z), fm = f(mix);
  for (Index i = 0; i < x.numel(); ++i) {
    const Index c = (i / 4) % 2;
    const double closed = gamma[c] * (x[i] - state.running_mean[c]) / std::sqrt(state.running_var[c] + 1e-5) + beta[c];
    EXPECT_NEAR(fx[i], closed, 1e-12);
    EXPECT_NEAR(fm[i], alpha * fx[i] + (1 - alpha) * fz[i], 1e-12);
  }
  EXPECT_EQ(state.running_mean, Tensor<double>::from({2}, {0.5, -1.0}));
}

TEST(BatchNorm2d, SingleValuePerChannelIsAnError) {
  NormState<double> state(1);
  EXPECT_THROW(ops::batchnorm2d(VarD(Tensor<double>({1, 1, 1, 1})), VarD(Tensor<double>::ones({1})),
                                VarD(Tensor<double>::zeros({1})), state, Mode::kTrain),
               ShapeError);
}

TEST(LayerNorm, Cases) {
  const auto g = VarD(Tensor<double>::ones({2}));
  const auto b = VarD(Tensor<double>::zeros({2}));
  const auto y = ops::layernorm(VarD(Tensor<double>::from({1, 2}, {1, 3})), g, b, 1e-12).value();
  EXPECT_NEAR(y[0], -1.0, 1e-9);
  EXPECT_NEAR(y[1], 1.0, 1e-9);
  const auto c = ops::layernorm(VarD(Tensor<double>({1, 2}, 4.0)), g, b).value();
  EXPECT_EQ(c[0], 0.0);
  EXPECT_EQ(c[1], 0.0);

  Rng rng(12);
  const auto x = random_tensor(rng, {3, 5, 16}, -3, 3);
  const auto z = ops::layernorm(VarD(x), VarD(Tensor<double>::ones({16})), VarD(Tensor<double>::zeros({16}))).value();
  for (Index t = 0; t < 15; ++t) {
    double s = 0, ss = 0;
    for (Index k = 0; k < 16; ++k) s += z[t * 16 + k];
    for (Index k = 0; k < 16; ++k) ss += z[t * 16 + k] * z[t * 16 + k];
    EXPECT_NEAR(s / 16, 0.0, 1e-12);
    EXPECT_NEAR(ss / 16, 1.0, 1e-4);
  }
}

TEST(Activation, DefinitionalPoints) {
  auto at = [](Activation kind, double v) {
    return ops::activation(VarD(Tensor<double>::scalar(v)), kind).value().item();
  };
  EXPECT_EQ(at(Activation::kRelu, -2.0), 0.0);
  EXPECT_EQ(at(Activation::kRelu, 3.0), 3.0);
  EXPECT_EQ(at(Activation::kGelu, 0.0), 0.0);
  EXPECT_EQ(at(Activation::kSigmoid, 0.0), 0.5);
  // x·Φ(x) at 1 with Φ from the complementary error function
  EXPECT_NEAR(at(Activation::kGelu, 1.0), 0.5 * std::erfc(-1.0 / std::numbers::sqrt2), 1e-15);
  EXPECT_NEAR(at(Activation::kGelu, 1.0), 0.841345, 1e-6);
}

TEST(Activation, SigmoidSymmetry) {
  Rng rng(13);
  const auto x = random_tensor(rng, {64}, -20, 20);
  Tensor<double> neg(x.shape());
  for (Index i = 0; i < x.numel(); ++i) neg[i] = -x[i];
  const auto a = ops::sigmoid(VarD(x)).value();
  const auto b = ops::sigmoid(VarD(neg)).value();
  for (Index i = 0; i < x.numel(); ++i) EXPECT_NEAR(a[i] + b[i], 1.0, 1e-15);
}

TEST(Softmax, Cases) {
  EXPECT_EQ(ops::softmax_lastdim(VarD(Tensor<double>({1, 4}))).value(), Tensor<double>({1, 4}, 0.25));
  const auto p = ops::softmax_lastdim(VarD(Tensor<double>::from({2}, {0.0, std::log(3.0)}))).value();
  EXPECT_NEAR(p[0], 0.25, 1e-15);
  EXPECT_NEAR(p[1], 0.75, 1e-15);
}

TEST(Softmax, ShiftInvariantRowStochasticPositive) {
  Rng rng(14);
  const auto x = random_tensor(rng, {6, 9}, -50, 50);
  Tensor<double> shifted = x;
  for (Index i = 0; i < x.numel(); ++i) shifted[i] += 123.0;
  const auto a = ops::softmax_lastdim(VarD(x)).value();
  const auto b = ops::softmax_lastdim(VarD(shifted)).value();
  for (Index r = 0; r < 6; ++r) {
    double s = 0;
    for (Index c = 0; c < 9; ++c) {
      EXPECT_GT(a[r * 9 + c], 0.0);
      EXPECT_NEAR(a[r * 9 + c], b[r * 9 + c], 1e-12);
      s += a[r * 9 + c];
    }
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
  const auto big = ops::softmax_lastdim(VarD(Tensor<double>::from({2}, {1000.0, 0.0}))).value();
  EXPECT_TRUE(big.all_finite());
}

TEST(BilinearResize, Cases) {
  const auto c = ops::bilinear_resize(VarD(Tensor<double>({1, 2, 3, 5}, 0.7)), 4).value();
  EXPECT_EQ(c.shape(), (Shape{1, 2, 12, 20}));
  for (Index i = 0; i < c.numel(); ++i) EXPECT_NEAR(c[i], 0.7, 1e-15);
  EXPECT_EQ(ops::bilinear_resize(VarD(Tensor<double>({1, 1, 64, 64})), 4).shape(), (Shape{1, 1, 256, 256}));
  const auto row = ops::bilinear_resize(VarD(Tensor<double>::from({1, 1, 1, 2}, {0, 1})), 2).value();
  EXPECT_EQ(row, Tensor<double>::from({1, 1, 2, 4}, {0, 0.25, 0.75, 1, 0, 0.25, 0.75, 1}));
  EXPECT_THROW(ops::bilinear_resize(VarD(Tensor<double>({1, 1, 2, 2})), 0), std::invalid_argument);
}

TEST(ConcatChannels, Cases) {
  Rng rng(15);
  const auto a = random_tensor(rng, {1, 2, 8, 8});
  const auto b = random_tensor(rng, {1, 3, 8, 8});
  const auto y = ops::concat_channels(VarD(a), VarD(b)).value();
  EXPECT_EQ(y.shape(), (Shape{1, 5, 8, 8}));
  for (Index i = 0; i < 64; ++i) {
    EXPECT_EQ(y[i], a[i]);
    EXPECT_EQ(y[2 * 64 + i], b[i]);
  }
  try {
    ops::concat_channels(VarD(a), VarD(Tensor<double>({1, 2, 4, 4})));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[1,2,8,8]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[1,2,4,4]"), std::string::npos) << msg;
  }
}

TEST(Linear, Cases) {
  const auto x = Tensor<double>::from({1, 1, 2}, {1, 2});
  const auto eye = Tensor<double>::from({2, 2}, {1, 0, 0, 1});
  EXPECT_EQ(ops::linear(VarD(x), VarD(eye), VarD(Tensor<double>::zeros({2}))).value(), x);
  EXPECT_EQ(ops::linear(VarD(x), VarD(Tensor<double>::from({2, 2}, {1, 0, 1, 1})),
                        VarD(Tensor<double>::from({2}, {0.5, 0.5})))
                .value(),
            Tensor<double>::from({1, 1, 2}, {3.5, 2.5}));
  EXPECT_EQ(ops::linear(VarD(x), VarD(Tensor<double>({2, 3})), VarD(Tensor<double>::from({3}, {1, 2, 3}))).value(),
            Tensor<double>::from({1, 1, 3}, {1, 2, 3}));
  EXPECT_THROW(ops::linear(VarD(x), VarD(Tensor<double>({3, 2})), VarD()), ShapeError);
}

TEST(Attention, FusedMatchesReference) {
  Rng rng(16);
  const auto q = random_tensor(rng, {2, 3, 7, 4});
  const auto k = random_tensor(rng, {2, 3, 5, 4});
  const auto v = random_tensor(rng, {2, 3, 5, 6});
  const auto a = ops::scaled_dot_product_attention(VarD(q), VarD(k), VarD(v)).value();
  const auto b = ops::attention_reference(VarD(q), VarD(k), VarD(v)).value();
  EXPECT_EQ(a.shape(), (Shape{2, 3, 7, 6}));
  EXPECT_LE(max_abs_diff(a, b), 1e-14);
  const auto p = ops::attention_probabilities(q, k);
  for (Index r = 0; r < 2 * 3 * 7; ++r) {
    double s = 0;
    for (Index c = 0; c < 5; ++c) s += p[r * 5 + c];
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(Attention, TwoTokenHandCase) {
  const double l3 = std::log(3.0);
  const auto q = Tensor<double>::from({2, 1}, {0, l3});
  const auto v = Tensor<double>::from({2, 1}, {0, 1});
  const auto y = ops::scaled_dot_product_attention(VarD(q), VarD(q), VarD(v)).value();
  // row 0 scores [0, 0] -> 0.5; row 1 scores [0, (ln 3)^2]
  EXPECT_NEAR(y[0], 0.5, 1e-15);
  const double e = std::exp(l3 * l3);
  EXPECT_NEAR(y[1], e / (1.0 + e), 1e-15);
}

}  // namespace
}  // namespace seunet
