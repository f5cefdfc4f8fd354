#include <algorithm>
#include <cmath>

#include "seunet/gemm.hpp"
#include "seunet/ops.hpp"

namespace seunet {

void ConvSpec::validate() const {
  if (in_channels < 1 || out_channels < 1) throw ShapeError("conv: channel counts must be positive");
  if (kernel < 1) throw ShapeError("conv: kernel must be >= 1");
  if (stride < 1) throw ShapeError("conv: stride must be >= 1");
  if (padding < 0) throw ShapeError("conv: padding must be >= 0");
}

Index ConvSpec::conv_output_extent(Index extent) const {
  const Index span = extent + 2 * padding - kernel;
  if (span < 0) {
    throw ShapeError("conv: kernel " + std::to_string(kernel) + " larger than padded input extent " +
                     std::to_string(extent + 2 * padding));
  }
  return span / stride + 1;
}

Index ConvSpec::transposed_output_extent(Index extent) const {
  const Index out = (extent - 1) * stride - 2 * padding + kernel;
  if (extent < 1 || out < 1) {
    throw ShapeError("conv_transpose: input extent " + std::to_string(extent) + " yields empty output");
  }
  return out;
}

namespace kernels {
namespace {

struct Geometry {
  Index channels, height, width;  // image side
  Index kernel, stride, padding;
  Index out_h, out_w;  // column side
  Index col_rows() const { return channels * kernel * kernel; }
  Index col_cols() const { return out_h * out_w; }
};

template <typename T>
void im2col(const Geometry& g, const T* img, T* col) {
  for (Index c = 0; c < g.channels; ++c) {
    for (Index ki = 0; ki < g.kernel; ++ki) {
      for (Index kj = 0; kj < g.kernel; ++kj) {
        T* row = col + ((c * g.kernel + ki) * g.kernel + kj) * g.col_cols();
        for (Index oh = 0; oh < g.out_h; ++oh) {
          const Index ih = oh * g.stride - g.padding + ki;
          T* dst = row + oh * g.out_w;
          if (ih < 0 || ih >= g.height) {
            std::fill(dst, dst + g.out_w, T(0));
            continue;
          }
          const T* src = img + (c * g.height + ih) * g.width;
          for (Index ow = 0; ow < g.out_w; ++ow) {
            const Index iw = ow * g.stride - g.padding + kj;
            dst[ow] = (iw >= 0 && iw < g.width) ? src[iw] : T(0);
          }
        }
      }
    }
  }
}

// Scatter-add of columns back onto the image (adjoint of im2col).
template <typename T>
void col2im(const Geometry& g, const T* col, T* img) {
  for (Index c = 0; c < g.channels; ++c) {
    for (Index ki = 0; ki < g.kernel; ++ki) {
      for (Index kj = 0; kj < g.kernel; ++kj) {
        const T* row = col + ((c * g.kernel + ki) * g.kernel + kj) * g.col_cols();
        for (Index oh = 0; oh < g.out_h; ++oh) {
          const Index ih = oh * g.stride - g.padding + ki;
          if (ih < 0 || ih >= g.height) continue;
          T* dst = img + (c * g.height + ih) * g.width;
          const T* src = row + oh * g.out_w;
          for (Index ow = 0; ow < g.out_w; ++ow) {
            const Index iw = ow * g.stride - g.padding + kj;
            if (iw >= 0 && iw < g.width) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

bool is_pointwise(const Geometry& g) { return g.kernel == 1 && g.stride == 1 && g.padding == 0; }

}  // namespace
}  // namespace kernels

namespace ops {

namespace {

using kernels::Trans;

void check_feature_map(const char* op, const Shape& s) {
  if (s.size() != 4) throw ShapeError(std::string(op) + ": expected (B,C,H,W), got " + shape_to_string(s));
}

template <typename T>
void check_bias(const char* op, const Var<T>& bias, Index channels) {
  if (bias.defined() && bias.shape() != Shape{channels}) {
    throw ShapeError(std::string(op) + ": bias shape " + shape_to_string(bias.shape()) + " expected [" +
                     std::to_string(channels) + "]");
  }
}

template <typename T>
void add_channel_bias(Tensor<T>& y, const Tensor<T>& bias) {
  const Index b = y.dim(0), c = y.dim(1), hw = y.dim(2) * y.dim(3);
  for (Index n = 0; n < b; ++n) {
    for (Index ch = 0; ch < c; ++ch) {
      T* p = y.data() + (n * c + ch) * hw;
      const T v = bias[ch];
      for (Index i = 0; i < hw; ++i) p[i] += v;
    }
  }
}

template <typename T>
void accumulate_channel_bias_grad(const Tensor<T>& g, Tensor<T>& gb) {
  const Index b = g.dim(0), c = g.dim(1), hw = g.dim(2) * g.dim(3);
  for (Index n = 0; n < b; ++n) {
    for (Index ch = 0; ch < c; ++ch) {
      const T* p = g.data() + (n * c + ch) * hw;
      T acc = 0;
      for (Index i = 0; i < hw; ++i) acc += p[i];
      gb[ch] += acc;
    }
  }
}

}  // namespace

template <typename T>
Var<T> conv2d(const Var<T>& x, const ConvSpec& spec, const Var<T>& weight, const Var<T>& bias) {
  spec.validate();
  const Shape& xs = x.shape();
  check_feature_map("conv2d", xs);
  if (xs[1] != spec.in_channels) {
    throw ShapeError("conv2d: input " + shape_to_string(xs) + " has " + std::to_string(xs[1]) +
                     " channels, spec expects " + std::to_string(spec.in_channels));
  }
  const Shape wshape{spec.out_channels, spec.in_channels, spec.kernel, spec.kernel};
  if (weight.shape() != wshape) {
    throw ShapeError("conv2d: weight " + shape_to_string(weight.shape()) + " expected " + shape_to_string(wshape));
  }
  check_bias("conv2d", bias, spec.out_channels);

  const kernels::Geometry geo{xs[1],        xs[2],        xs[3],
                              spec.kernel,  spec.stride,  spec.padding,
                              spec.conv_output_extent(xs[2]), spec.conv_output_extent(xs[3])};
  const Index batch = xs[0];
  const Index in_stride = xs[1] * xs[2] * xs[3];
  const Index out_stride = spec.out_channels * geo.col_cols();
  const bool pointwise = kernels::is_pointwise(geo);

  Tensor<T> y(Shape{batch, spec.out_channels, geo.out_h, geo.out_w});
  std::vector<T> cols(pointwise ? 0 : static_cast<std::size_t>(geo.col_rows() * geo.col_cols()));
  for (Index n = 0; n < batch; ++n) {
    const T* img = x.value().data() + n * in_stride;
    if (!pointwise) kernels::im2col(geo, img, cols.data());
    kernels::gemm<T>(Trans::kNo, Trans::kNo, spec.out_channels, geo.col_cols(), geo.col_rows(),
                     weight.value().data(), pointwise ? img : cols.data(), y.data() + n * out_stride, false);
  }
  if (bias.defined()) add_channel_bias(y, bias.value());

  if (!needs_grad<T>(x, weight, bias)) return Var<T>(std::move(y));
  return record_op<T>(std::move(y), [x, weight, bias, spec, geo, batch, in_stride, out_stride,
                                     pointwise](const Tensor<T>& g) {
    std::vector<T> cols(pointwise ? 0 : static_cast<std::size_t>(geo.col_rows() * geo.col_cols()));
    std::vector<T> gcols(static_cast<std::size_t>(geo.col_rows() * geo.col_cols()));
    for (Index n = 0; n < batch; ++n) {
      const T* gn = g.data() + n * out_stride;
      if (weight.requires_grad()) {
        const T* img = x.value().data() + n * in_stride;
        if (!pointwise) kernels::im2col(geo, img, cols.data());
        kernels::gemm<T>(Trans::kNo, Trans::kYes, spec.out_channels, geo.col_rows(), geo.col_cols(), gn,
                         pointwise ? img : cols.data(), weight.node()->grad_buffer().data(), true);
      }
      if (x.requires_grad()) {
        T* gx = x.node()->grad_buffer().data() + n * in_stride;
        if (pointwise) {
          kernels::gemm<T>(Trans::kYes, Trans::kNo, geo.col_rows(), geo.col_cols(), spec.out_channels,
                           weight.value().data(), gn, gx, true);
        } else {
          kernels::gemm<T>(Trans::kYes, Trans::kNo, geo.col_rows(), geo.col_cols(), spec.out_channels,
                           weight.value().data(), gn, gcols.data(), false);
          kernels::col2im(geo, gcols.data(), gx);
        }
      }
    }
    if (bias.requires_grad()) accumulate_channel_bias_grad(g, bias.node()->grad_buffer());
  });
}

template <typename T>
Var<T> conv_transpose2d(const Var<T>& x, const ConvSpec& spec, const Var<T>& weight, const Var<T>& bias) {
  spec.validate();
  const Shape& xs = x.shape();
  check_feature_map("conv_transpose2d", xs);
  if (xs[1] != spec.in_channels) {
    throw ShapeError("conv_transpose2d: input " + shape_to_string(xs) + " has " + std::to_string(xs[1]) +
                     " channels, spec expects " + std::to_string(spec.in_channels));
  }
  const Shape wshape{spec.in_channels, spec.out_channels, spec.kernel, spec.kernel};
  if (weight.shape() != wshape) {
    throw ShapeError("conv_transpose2d: weight " + shape_to_string(weight.shape()) + " expected " +
                     shape_to_string(wshape));
  }
  check_bias("conv_transpose2d", bias, spec.out_channels);

  const Index out_h = spec.transposed_output_extent(xs[2]);
  const Index out_w = spec.transposed_output_extent(xs[3]);
  // The output plays the image role and the input plays the column role.
  const kernels::Geometry geo{spec.out_channels, out_h,        out_w, spec.kernel,
                              spec.stride,       spec.padding, xs[2], xs[3]};
  const Index batch = xs[0];
  const Index in_stride = xs[1] * xs[2] * xs[3];
  const Index out_stride = spec.out_channels * out_h * out_w;

  Tensor<T> y(Shape{batch, spec.out_channels, out_h, out_w});
  std::vector<T> cols(static_cast<std::size_t>(geo.col_rows() * geo.col_cols()));
  for (Index n = 0; n < batch; ++n) {
    kernels::gemm<T>(Trans::kYes, Trans::kNo, geo.col_rows(), geo.col_cols(), spec.in_channels,
                     weight.value().data(), x.value().data() + n * in_stride, cols.data(), false);
    kernels::col2im(geo, cols.data(), y.data() + n * out_stride);
  }
  if (bias.defined()) add_channel_bias(y, bias.value());

  if (!needs_grad<T>(x, weight, bias)) return Var<T>(std::move(y));
  return record_op<T>(std::move(y), [x, weight, bias, spec, geo, batch, in_stride, out_stride](const Tensor<T>& g) {
    std::vector<T> gcols(static_cast<std::size_t>(geo.col_rows() * geo.col_cols()));
    for (Index n = 0; n < batch; ++n) {
      kernels::im2col(geo, g.data() + n * out_stride, gcols.data());
      if (x.requires_grad()) {
        kernels::gemm<T>(Trans::kNo, Trans::kNo, spec.in_channels, geo.col_cols(), geo.col_rows(),
                         weight.value().data(), gcols.data(), x.node()->grad_buffer().data() + n * in_stride, true);
      }
      if (weight.requires_grad()) {
        kernels::gemm<T>(Trans::kNo, Trans::kYes, spec.in_channels, geo.col_rows(), geo.col_cols(),
                         x.value().data() + n * in_stride, gcols.data(), weight.node()->grad_buffer().data(), true);
      }
    }
    if (bias.requires_grad()) accumulate_channel_bias_grad(g, bias.node()->grad_buffer());
  });
}

template <typename T>
Var<T> maxpool2d(const Var<T>& x) {
  const Shape& xs = x.shape();
  check_feature_map("maxpool2d", xs);
  if (xs[2] % 2 != 0 || xs[3] % 2 != 0) {
    throw ShapeError("maxpool2d: spatial extents must be even, got " + shape_to_string(xs));
  }
  const Index planes = xs[0] * xs[1];
  const Index h = xs[2], w = xs[3], oh = h / 2, ow = w / 2;
  Tensor<T> y(Shape{xs[0], xs[1], oh, ow});
  auto argmax = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(y.numel()));
  const T* xv = x.value().data();
  for (Index p = 0; p < planes; ++p) {
    for (Index i = 0; i < oh; ++i) {
      for (Index j = 0; j < ow; ++j) {
        Index best = p * h * w + (2 * i) * w + 2 * j;
        // Window scan order (0,0),(0,1),(1,0),(1,1); strict > keeps the first maximum.
        for (Index di = 0; di < 2; ++di) {
          for (Index dj = 0; dj < 2; ++dj) {
            const Index idx = p * h * w + (2 * i + di) * w + 2 * j + dj;
            if (xv[idx] > xv[best]) best = idx;
          }
        }
        const Index o = (p * oh + i) * ow + j;
        y[o] = xv[best];
        (*argmax)[static_cast<std::size_t>(o)] = best;
      }
    }
  }
  if (!needs_grad<T>(x)) return Var<T>(std::move(y));
  return record_op<T>(std::move(y), [x, argmax](const Tensor<T>& g) {
    Tensor<T>& gx = x.node()->grad_buffer();
    for (Index o = 0; o < g.numel(); ++o) gx[(*argmax)[static_cast<std::size_t>(o)]] += g[o];
  });
}

template <typename T>
Var<T> batchnorm2d(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, NormState<T>& state, Mode mode) {
  const Shape& xs = x.shape();
  check_feature_map("batchnorm2d", xs);
  const Index batch = xs[0], channels = xs[1], hw = xs[2] * xs[3];
  if (gamma.shape() != Shape{channels} || beta.shape() != Shape{channels} ||
      state.running_mean.shape() != Shape{channels} || state.running_var.shape() != Shape{channels}) {
    throw ShapeError("batchnorm2d: parameter shapes do not match " + std::to_string(channels) + " channels");
  }
  const Index count = batch * hw;
  if (mode == Mode::kTrain && count < 2) {
    throw ShapeError("batchnorm2d: train mode needs at least 2 values per channel, input " + shape_to_string(xs));
  }

  const Tensor<T>& xv = x.value();
  auto xhat = std::make_shared<Tensor<T>>(xs);
  auto rstd = std::make_shared<std::vector<T>>(static_cast<std::size_t>(channels));
  Tensor<T> y(xs);
  for (Index c = 0; c < channels; ++c) {
    T mu, var;
    if (mode == Mode::kTrain) {
      T acc = 0;
      for (Index n = 0; n < batch; ++n) {
        const T* p = xv.data() + (n * channels + c) * hw;
        for (Index i = 0; i < hw; ++i) acc += p[i];
      }
      mu = acc / static_cast<T>(count);
      T sq = 0;
      for (Index n = 0; n < batch; ++n) {
        const T* p = xv.data() + (n * channels + c) * hw;
        for (Index i = 0; i < hw; ++i) sq += (p[i] - mu) * (p[i] - mu);
      }
      var = sq / static_cast<T>(count);
      const T unbiased = sq / static_cast<T>(count - 1);
      state.running_mean[c] = (T(1) - state.momentum) * state.running_mean[c] + state.momentum * mu;
      state.running_var[c] = (T(1) - state.momentum) * state.running_var[c] + state.momentum * unbiased;
    } else {
      mu = state.running_mean[c];
      var = std::max(state.running_var[c], T(0));
    }
    const T rs = T(1) / std::sqrt(var + state.epsilon);
    (*rstd)[static_cast<std::size_t>(c)] = rs;
    const T gm = gamma.value()[c];
    const T bt = beta.value()[c];
    for (Index n = 0; n < batch; ++n) {
      const Index off = (n * channels + c) * hw;
      for (Index i = 0; i < hw; ++i) {
        const T h = (xv[off + i] - mu) * rs;
        (*xhat)[off + i] = h;
        y[off + i] = gm * h + bt;
      }
    }
  }

  if (!needs_grad<T>(x, gamma, beta)) return Var<T>(std::move(y));
  return record_op<T>(std::move(y), [x, gamma, beta, xhat, rstd, mode, batch, channels, hw,
                                     count](const Tensor<T>& g) {
    for (Index c = 0; c < channels; ++c) {
      T sum_g = 0, sum_gh = 0;
      for (Index n = 0; n < batch; ++n) {
        const Index off = (n * channels + c) * hw;
        for (Index i = 0; i < hw; ++i) {
          sum_g += g[off + i];
          sum_gh += g[off + i] * (*xhat)[off + i];
        }
      }
      if (gamma.requires_grad()) gamma.node()->grad_buffer()[c] += sum_gh;
      if (beta.requires_grad()) beta.node()->grad_buffer()[c] += sum_g;
      if (!x.requires_grad()) continue;
      Tensor<T>& gx = x.node()->grad_buffer();
      const T k = gamma.value()[c] * (*rstd)[static_cast<std::size_t>(c)];
      if (mode == Mode::kEval) {
        for (Index n = 0; n < batch; ++n) {
          const Index off = (n * channels + c) * hw;
          for (Index i = 0; i < hw; ++i) gx[off + i] += k * g[off + i];
        }
        continue;
      }
      const T inv_n = T(1) / static_cast<T>(count);
      const T mean_g = sum_g * inv_n;
      const T mean_gh = sum_gh * inv_n;
      for (Index n = 0; n < batch; ++n) {
        const Index off = (n * channels + c) * hw;
        for (Index i = 0; i < hw; ++i) gx[off + i] += k * (g[off + i] - mean_g - (*xhat)[off + i] * mean_gh);
      }
    }
  });
}

template <typename T>
Var<T> bilinear_resize(const Var<T>& x, Index factor) {
  const Shape& xs = x.shape();
  check_feature_map("bilinear_resize", xs);
  if (factor < 1) throw std::invalid_argument("bilinear_resize: factor must be a positive integer");
  const Index h = xs[2], w = xs[3], oh = h * factor, ow = w * factor;
  const auto ys = std::make_shared<std::vector<kernels::AxisSample>>(kernels::bilinear_axis(h, oh));
  const auto xs_ = std::make_shared<std::vector<kernels::AxisSample>>(kernels::bilinear_axis(w, ow));
  const Index planes = xs[0] * xs[1];
  Tensor<T> y(Shape{xs[0], xs[1], oh, ow});
  const T* xv = x.value().data();
  for (Index p = 0; p < planes; ++p) {
    const T* src = xv + p * h * w;
    T* dst = y.data() + p * oh * ow;
    for (Index i = 0; i < oh; ++i) {
      const auto& sy = (*ys)[static_cast<std::size_t>(i)];
      const T fy = static_cast<T>(sy.frac);
      for (Index j = 0; j < ow; ++j) {
        const auto& sx = (*xs_)[static_cast<std::size_t>(j)];
        const T fx = static_cast<T>(sx.frac);
        const T top = (T(1) - fx) * src[sy.lo * w + sx.lo] + fx * src[sy.lo * w + sx.hi];
        const T bot = (T(1) - fx) * src[sy.hi * w + sx.lo] + fx * src[sy.hi * w + sx.hi];
        dst[i * ow + j] = (T(1) - fy) * top + fy * bot;
      }
    }
  }
  if (!needs_grad<T>(x)) return Var<T>(std::move(y));
  return record_op<T>(std::move(y), [x, ys, xs_, planes, h, w, oh, ow](const Tensor<T>& g) {
    Tensor<T>& gx = x.node()->grad_buffer();
    for (Index p = 0; p < planes; ++p) {
      T* dst = gx.data() + p * h * w;
      const T* src = g.data() + p * oh * ow;
      for (Index i = 0; i < oh; ++i) {
        const auto& sy = (*ys)[static_cast<std::size_t>(i)];
        const T fy = static_cast<T>(sy.frac);
        for (Index j = 0; j < ow; ++j) {
          const auto& sx = (*xs_)[static_cast<std::size_t>(j)];
          const T fx = static_cast<T>(sx.frac);
          const T gv = src[i * ow + j];
          dst[sy.lo * w + sx.lo] += (T(1) - fy) * (T(1) - fx) * gv;
          dst[sy.lo * w + sx.hi] += (T(1) - fy) * fx * gv;
          dst[sy.hi * w + sx.lo] += fy * (T(1) - fx) * gv;
          dst[sy.hi * w + sx.hi] += fy * fx * gv;
        }
      }
    }
  });
}

template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  check_feature_map("concat_channels", as);
  check_feature_map("concat_channels", bs);
  if (as[0] != bs[0] || as[2] != bs[2] || as[3] != bs[3]) {
    throw ShapeError("concat_channels: batch/spatial mismatch " + shape_to_string(as) + " vs " + shape_to_string(bs));
  }
  const Index batch = as[0], ca = as[1], cb = bs[1], hw = as[2] * as[3];
  Tensor<T> y(Shape{batch, ca + cb, as[2], as[3]});
  for (Index n = 0; n < batch; ++n) {
    std::copy_n(a.value().data() + n * ca * hw, ca * hw, y.data() + n * (ca + cb) * hw);
    std::copy_n(b.value().data() + n * cb * hw, cb * hw, y.data() + (n * (ca + cb) + ca) * hw);
  }
  if (!needs_grad<T>(a, b)) return Var<T>(std::move(y));
  return record_op<T>(std::move(y), [a, b, batch, ca, cb, hw](const Tensor<T>& g) {
    for (Index n = 0; n < batch; ++n) {
      const T* src = g.data() + n * (ca + cb) * hw;
      if (a.requires_grad()) {
        T* dst = a.node()->grad_buffer().data() + n * ca * hw;
        for (Index i = 0; i < ca * hw; ++i) dst[i] += src[i];
      }
      if (b.requires_grad()) {
        T* dst = b.node()->grad_buffer().data() + n * cb * hw;
        for (Index i = 0; i < cb * hw; ++i) dst[i] += src[ca * hw + i];
      }
    }
  });
}

#define SEUNET_INSTANTIATE_CONV(T)                                                                 \
  template Var<T> conv2d(const Var<T>&, const ConvSpec&, const Var<T>&, const Var<T>&);            \
  template Var<T> conv_transpose2d(const Var<T>&, const ConvSpec&, const Var<T>&, const Var<T>&);  \
  template Var<T> maxpool2d(const Var<T>&);                                                        \
  template Var<T> batchnorm2d(const Var<T>&, const Var<T>&, const Var<T>&, NormState<T>&, Mode);   \
  template Var<T> bilinear_resize(const Var<T>&, Index);                                           \
  template Var<T> concat_channels(const Var<T>&, const Var<T>&);

SEUNET_INSTANTIATE_CONV(float)
SEUNET_INSTANTIATE_CONV(double)

#undef SEUNET_INSTANTIATE_CONV

}  // namespace ops

namespace kernels {

std::vector<AxisSample> bilinear_axis(Index in, Index out) {
  if (in < 1 || out < 1) throw ShapeError("bilinear_axis: extents must be positive");
  std::vector<AxisSample> samples(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (Index o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    Index lo = static_cast<Index>(std::floor(src));
    if (lo > in - 1) lo = in - 1;
    const Index hi = std::min(lo + 1, in - 1);
    samples[static_cast<std::size_t>(o)] = AxisSample{lo, hi, hi == lo ? 0.0 : src - static_cast<double>(lo)};
  }
  return samples;
}

namespace {

Index plane_count(const Shape& s, const char* op) {
  if (s.size() == 3) return s[0];
  if (s.size() == 4) return s[0] * s[1];
  throw ShapeError(std::string(op) + ": expected (C,H,W) or (B,C,H,W), got " + shape_to_string(s));
}

Shape resized_shape(Shape s, Index out_h, Index out_w) {
  s[s.size() - 2] = out_h;
  s[s.size() - 1] = out_w;
  return s;
}

}  // namespace

template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& x, Index out_h, Index out_w) {
  const Index planes = plane_count(x.shape(), "resize_bilinear");
  const Index h = x.dim(-2), w = x.dim(-1);
  const auto ys = bilinear_axis(h, out_h);
  const auto xs = bilinear_axis(w, out_w);
  Tensor<T> y(resized_shape(x.shape(), out_h, out_w));
  for (Index p = 0; p < planes; ++p) {
    const T* src = x.data() + p * h * w;
    T* dst = y.data() + p * out_h * out_w;
    for (Index i = 0; i < out_h; ++i) {
      const auto& sy = ys[static_cast<std::size_t>(i)];
      for (Index j = 0; j < out_w; ++j) {
        const auto& sx = xs[static_cast<std::size_t>(j)];
        const double top = (1 - sx.frac) * src[sy.lo * w + sx.lo] + sx.frac * src[sy.lo * w + sx.hi];
        const double bot = (1 - sx.frac) * src[sy.hi * w + sx.lo] + sx.frac * src[sy.hi * w + sx.hi];
        dst[i * out_w + j] = static_cast<T>((1 - sy.frac) * top + sy.frac * bot);
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> resize_nearest(const Tensor<T>& x, Index out_h, Index out_w) {
  const Index planes = plane_count(x.shape(), "resize_nearest");
  const Index h = x.dim(-2), w = x.dim(-1);
  if (out_h < 1 || out_w < 1) throw ShapeError("resize_nearest: extents must be positive");
  Tensor<T> y(resized_shape(x.shape(), out_h, out_w));
  for (Index p = 0; p < planes; ++p) {
    const T* src = x.data() + p * h * w;
    T* dst = y.data() + p * out_h * out_w;
    for (Index i = 0; i < out_h; ++i) {
      const Index si = std::min(h - 1, static_cast<Index>(std::floor((i + 0.5) * h / static_cast<double>(out_h))));
      for (Index j = 0; j < out_w; ++j) {
        const Index sj =
            std::min(w - 1, static_cast<Index>(std::floor((j + 0.5) * w / static_cast<double>(out_w))));
        dst[i * out_w + j] = src[si * w + sj];
      }
    }
  }
  return y;
}

template Tensor<float> resize_bilinear(const Tensor<float>&, Index, Index);
template Tensor<double> resize_bilinear(const Tensor<double>&, Index, Index);
template Tensor<float> resize_nearest(const Tensor<float>&, Index, Index);
template Tensor<double> resize_nearest(const Tensor<double>&, Index, Index);

}  // namespace kernels
}  // namespace seunet
