#include <algorithm>
#include <cmath>
#include <numbers>

#include "seunet/gemm.hpp"
#include "seunet/ops.hpp"

namespace seunet {

namespace kernels {

template <typename T>
void softmax_rows(const T* in, T* out, Index rows, Index cols) {
  for (Index r = 0; r < rows; ++r) {
    const T* x = in + r * cols;
    T* y = out + r * cols;
    T mx = x[0];
    for (Index c = 1; c < cols; ++c) mx = std::max(mx, x[c]);
    // The normaliser is accumulated in double so float rows still sum to 1 within a few ulp.
    double total = 0;
    for (Index c = 0; c < cols; ++c) {
      y[c] = std::exp(x[c] - mx);
      total += static_cast<double>(y[c]);
    }
    const double inv = 1.0 / total;
    for (Index c = 0; c < cols; ++c) y[c] = static_cast<T>(static_cast<double>(y[c]) * inv);
  }
}

template void softmax_rows<float>(const float*, float*, Index, Index);
template void softmax_rows<double>(const double*, double*, Index, Index);

}  // namespace kernels

namespace ops {

namespace {

void require_same_shape(const char* op, const Shape& a, const Shape& b) {
  if (a != b) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_to_string(a) + " vs " + shape_to_string(b));
  }
}

template <typename T, typename Fwd, typename Deriv>
Var<T> unary(const Var<T>& x, Fwd fwd, Deriv deriv) {
  const Tensor<T>& xv = x.value();
  Tensor<T> y(xv.shape());
  for (Index i = 0; i < xv.numel(); ++i) y[i] = fwd(xv[i]);
  if (!needs_grad<T>(x)) return Var<T>(std::move(y));
  return record_op<T>(std::move(y), [x, deriv](const Tensor<T>& g) {
    const Tensor<T>& xv = x.value();
    Tensor<T>& gx = x.node()->grad_buffer();
    for (Index i = 0; i < xv.numel(); ++i) gx[i] += g[i] * deriv(xv[i]);
  });
}

template <typename T>
T stable_sigmoid(T z) {
  if (z >= T(0)) return T(1) / (T(1) + std::exp(-z));
  const T e = std::exp(z);
  return e / (T(1) + e);
}

}  // namespace

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape("add", a.shape(), b.shape());
  Tensor<T> y = a.value();
  y.add_(b.value());
  if (!needs_grad<T>(a, b)) return Var<T>(std::move(y));
  return record_op<T>(std::move(y), [a, b](const Tensor<T>& g) {
    accumulate_grad(a, g);
    accumulate_grad(b, g);
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same_shape("mul", a.shape(), b.shape());
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  Tensor<T> y(av.shape());
  for (Index i = 0; i < y.numel(); ++i) y[i] = av[i] * bv[i];
  if (!needs_grad<T>(a, b)) return Var<T>(std::move(y));
  return record_op<T>(std::move(y), [a, b](const Tensor<T>& g) {
    const Tensor<T>& av = a.value();
    const Tensor<T>& bv = b.value();
    if (a.requires_grad()) {
      Tensor<T>& ga = a.node()->grad_buffer();
      for (Index i = 0; i < g.numel(); ++i) ga[i] += g[i] * bv[i];
    }
    if (b.requires_grad()) {
      Tensor<T>& gb = b.node()->grad_buffer();
      for (Index i = 0; i < g.numel(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T factor) {
  const Tensor<T>& av = a.value();
  Tensor<T> y(av.shape());
  for (Index i = 0; i < y.numel(); ++i) y[i] = av[i] * factor;
  if (!needs_grad<T>(a)) return Var<T>(std::move(y));
  return record_op<T>(std::move(y), [a, factor](const Tensor<T>& g) {
    Tensor<T>& ga = a.node()->grad_buffer();
    for (Index i = 0; i < g.numel(); ++i) ga[i] += g[i] * factor;
  });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  const Tensor<T>& av = a.value();
  T total = 0;
  for (Index i = 0; i < av.numel(); ++i) total += av[i];
  Tensor<T> y = Tensor<T>::scalar(total);
  if (!needs_grad<T>(a)) return Var<T>(std::move(y));
  return record_op<T>(std::move(y), [a](const Tensor<T>& g) {
    Tensor<T>& ga = a.node()->grad_buffer();
    const T g0 = g[0];
    for (Index i = 0; i < ga.numel(); ++i) ga[i] += g0;
  });
}

template <typename T>
Var<T> mean(const Var<T>& a) {
  if (a.numel() == 0) throw ShapeError("mean of an empty tensor");
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  Tensor<T> y = a.value().reshaped(std::move(shape));
  if (!needs_grad<T>(a)) return Var<T>(std::move(y));
  return record_op<T>(std::move(y), [a](const Tensor<T>& g) {
    Tensor<T>& ga = a.node()->grad_buffer();
    for (Index i = 0; i < g.numel(); ++i) ga[i] += g[i];
  });
}

namespace {

// Maps every output offset of a permutation to its source offset.
std::vector<Index> permutation_sources(const Shape& in_shape, const std::vector<Index>& order, Shape& out_shape) {
  const std::size_t rank = in_shape.size();
  if (order.size() != rank) {
    throw ShapeError("permute: order has " + std::to_string(order.size()) + " axes for shape " +
                     shape_to_string(in_shape));
  }
  std::vector<bool> seen(rank, false);
  out_shape.assign(rank, 0);
  for (std::size_t i = 0; i < rank; ++i) {
    const Index ax = order[i];
    if (ax < 0 || ax >= static_cast<Index>(rank) || seen[static_cast<std::size_t>(ax)]) {
      throw ShapeError("permute: invalid axis order for shape " + shape_to_string(in_shape));
    }
    seen[static_cast<std::size_t>(ax)] = true;
    out_shape[i] = in_shape[static_cast<std::size_t>(ax)];
  }
  std::vector<Index> in_strides(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_strides[i - 1] = in_strides[i] * in_shape[i];

  const Index n = shape_numel(in_shape);
  std::vector<Index> src(static_cast<std::size_t>(n));
  std::vector<Index> idx(rank, 0);
  for (Index o = 0; o < n; ++o) {
    Index off = 0;
    for (std::size_t i = 0; i < rank; ++i) off += idx[i] * in_strides[static_cast<std::size_t>(order[i])];
    src[static_cast<std::size_t>(o)] = off;
    for (std::size_t i = rank; i-- > 0;) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }
  return src;
}

}  // namespace

template <typename T>
Var<T> permute(const Var<T>& a, const std::vector<Index>& order) {
  Shape out_shape;
  auto src = std::make_shared<std::vector<Index>>(permutation_sources(a.shape(), order, out_shape));
  const Tensor<T>& av = a.value();
  Tensor<T> y(out_shape);
  for (Index o = 0; o < y.numel(); ++o) y[o] = av[(*src)[static_cast<std::size_t>(o)]];
  if (!needs_grad<T>(a)) return Var<T>(std::move(y));
  return record_op<T>(std::move(y), [a, src](const Tensor<T>& g) {
    Tensor<T>& ga = a.node()->grad_buffer();
    for (Index o = 0; o < g.numel(); ++o) ga[(*src)[static_cast<std::size_t>(o)]] += g[o];
  });
}

template <typename T>
Var<T> transpose_last(const Var<T>& a) {
  const Index rank = static_cast<Index>(a.shape().size());
  if (rank < 2) throw ShapeError("transpose_last needs rank >= 2, got " + shape_to_string(a.shape()));
  std::vector<Index> order(static_cast<std::size_t>(rank));
  for (Index i = 0; i < rank; ++i) order[static_cast<std::size_t>(i)] = i;
  std::swap(order[static_cast<std::size_t>(rank - 1)], order[static_cast<std::size_t>(rank - 2)]);
  return permute(a, order);
}

namespace {

struct MatmulPlan {
  Index m = 0, k = 0, n = 0;
  Shape out_shape;
  std::vector<Index> a_offsets;  // per output batch slice, element offset into a
  std::vector<Index> b_offsets;
};

MatmulPlan plan_matmul(const Shape& as, const Shape& bs) {
  if (as.size() < 2 || bs.size() < 2) {
    throw ShapeError("matmul needs rank >= 2 operands, got " + shape_to_string(as) + " and " + shape_to_string(bs));
  }
  MatmulPlan p;
  p.m = as[as.size() - 2];
  p.k = as[as.size() - 1];
  p.n = bs[bs.size() - 1];
  if (bs[bs.size() - 2] != p.k) {
    throw ShapeError("matmul: inner extents differ for " + shape_to_string(as) + " and " + shape_to_string(bs));
  }
  const std::size_t abatch = as.size() - 2;
  const std::size_t bbatch = bs.size() - 2;
  const std::size_t rank = std::max(abatch, bbatch);
  Shape batch(rank, 1), astr(rank, 0), bstr(rank, 0);
  Index as_stride = p.m * p.k;
  Index bs_stride = p.k * p.n;
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t ri = rank - 1 - i;  // right-aligned position
    const Index ae = i < abatch ? as[abatch - 1 - i] : 1;
    const Index be = i < bbatch ? bs[bbatch - 1 - i] : 1;
    if (ae != be && ae != 1 && be != 1) {
      throw ShapeError("matmul: batch extents do not broadcast for " + shape_to_string(as) + " and " +
                       shape_to_string(bs));
    }
    batch[ri] = std::max(ae, be);
    astr[ri] = ae == 1 ? 0 : as_stride;
    bstr[ri] = be == 1 ? 0 : bs_stride;
    as_stride *= ae;
    bs_stride *= be;
  }
  p.out_shape = batch;
  p.out_shape.push_back(p.m);
  p.out_shape.push_back(p.n);
  const Index count = shape_numel(batch);
  p.a_offsets.resize(static_cast<std::size_t>(count));
  p.b_offsets.resize(static_cast<std::size_t>(count));
  std::vector<Index> idx(rank, 0);
  for (Index s = 0; s < count; ++s) {
    Index ao = 0, bo = 0;
    for (std::size_t i = 0; i < rank; ++i) {
      ao += idx[i] * astr[i];
      bo += idx[i] * bstr[i];
    }
    p.a_offsets[static_cast<std::size_t>(s)] = ao;
    p.b_offsets[static_cast<std::size_t>(s)] = bo;
    for (std::size_t i = rank; i-- > 0;) {
      if (++idx[i] < batch[i]) break;
      idx[i] = 0;
    }
  }
  return p;
}

}  // namespace

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  auto plan = std::make_shared<MatmulPlan>(plan_matmul(a.shape(), b.shape()));
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  Tensor<T> y(plan->out_shape);
  const Index out_stride = plan->m * plan->n;
  for (std::size_t s = 0; s < plan->a_offsets.size(); ++s) {
    kernels::gemm<T>(kernels::Trans::kNo, kernels::Trans::kNo, plan->m, plan->n, plan->k,
                     av.data() + plan->a_offsets[s], bv.data() + plan->b_offsets[s],
                     y.data() + static_cast<Index>(s) * out_stride, false);
  }
  if (!needs_grad<T>(a, b)) return Var<T>(std::move(y));
  return record_op<T>(std::move(y), [a, b, plan](const Tensor<T>& g) {
    const Index out_stride = plan->m * plan->n;
    for (std::size_t s = 0; s < plan->a_offsets.size(); ++s) {
      const T* gs = g.data() + static_cast<Index>(s) * out_stride;
      if (a.requires_grad()) {
        kernels::gemm<T>(kernels::Trans::kNo, kernels::Trans::kYes, plan->m, plan->k, plan->n, gs,
                         b.value().data() + plan->b_offsets[s],
                         a.node()->grad_buffer().data() + plan->a_offsets[s], true);
      }
      if (b.requires_grad()) {
        kernels::gemm<T>(kernels::Trans::kYes, kernels::Trans::kNo, plan->k, plan->n, plan->m,
                         a.value().data() + plan->a_offsets[s], gs,
                         b.node()->grad_buffer().data() + plan->b_offsets[s], true);
      }
    }
  });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  return unary<T>(
      x, [](T v) { return v > T(0) ? v : T(0); }, [](T v) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> gelu(const Var<T>& x) {
  constexpr T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  constexpr T inv_sqrt2pi = std::numbers::inv_sqrtpi_v<T> * inv_sqrt2;
  return unary<T>(
      x, [](T v) { return T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2)); },
      [](T v) {
        const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
        const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * v * v);
        return cdf + v * pdf;
      });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  return unary<T>(
      x, [](T v) { return stable_sigmoid(v); },
      [](T v) {
        const T s = stable_sigmoid(v);
        return s * (T(1) - s);
      });
}

template <typename T>
Var<T> activation(const Var<T>& x, Activation kind) {
  switch (kind) {
    case Activation::kRelu:
      return relu(x);
    case Activation::kGelu:
      return gelu(x);
    case Activation::kSigmoid:
      return sigmoid(x);
  }
  throw std::invalid_argument("unknown activation");
}

template <typename T>
Var<T> softmax_lastdim(const Var<T>& x) {
  const Tensor<T>& xv = x.value();
  if (xv.rank() < 1) throw ShapeError("softmax_lastdim needs rank >= 1");
  const Index cols = xv.dim(-1);
  const Index rows = cols == 0 ? 0 : xv.numel() / cols;
  Tensor<T> y(xv.shape());
  kernels::softmax_rows(xv.data(), y.data(), rows, cols);
  if (!needs_grad<T>(x)) return Var<T>(std::move(y));
  auto yv = std::make_shared<Tensor<T>>(y);
  return record_op<T>(std::move(y), [x, yv, rows, cols](const Tensor<T>& g) {
    Tensor<T>& gx = x.node()->grad_buffer();
    for (Index r = 0; r < rows; ++r) {
      const T* yr = yv->data() + r * cols;
      const T* gr = g.data() + r * cols;
      T dot = 0;
      for (Index c = 0; c < cols; ++c) dot += gr[c] * yr[c];
      T* out = gx.data() + r * cols;
      for (Index c = 0; c < cols; ++c) out[c] += yr[c] * (gr[c] - dot);
    }
  });
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  if (xs.empty() || ws.size() != 2 || xs.back() != ws[0]) {
    throw ShapeError("linear: input " + shape_to_string(xs) + " incompatible with weight " + shape_to_string(ws));
  }
  const Index din = ws[0];
  const Index dout = ws[1];
  if (bias.defined() && (bias.shape().size() != 1 || bias.shape()[0] != dout)) {
    throw ShapeError("linear: bias " + shape_to_string(bias.shape()) + " does not match weight " +
                     shape_to_string(ws));
  }
  const Index rows = din == 0 ? 0 : x.numel() / din;
  Shape ys = xs;
  ys.back() = dout;
  Tensor<T> y(ys);
  kernels::gemm<T>(kernels::Trans::kNo, kernels::Trans::kNo, rows, dout, din, x.value().data(),
                   weight.value().data(), y.data(), false);
  if (bias.defined()) {
    const T* b = bias.value().data();
    for (Index r = 0; r < rows; ++r) {
      T* yr = y.data() + r * dout;
      for (Index c = 0; c < dout; ++c) yr[c] += b[c];
    }
  }
  if (!needs_grad<T>(x, weight, bias)) return Var<T>(std::move(y));
  return record_op<T>(std::move(y), [x, weight, bias, rows, din, dout](const Tensor<T>& g) {
    if (x.requires_grad()) {
      kernels::gemm<T>(kernels::Trans::kNo, kernels::Trans::kYes, rows, din, dout, g.data(),
                       weight.value().data(), x.node()->grad_buffer().data(), true);
    }
    if (weight.requires_grad()) {
      kernels::gemm<T>(kernels::Trans::kYes, kernels::Trans::kNo, din, dout, rows, x.value().data(), g.data(),
                       weight.node()->grad_buffer().data(), true);
    }
    if (bias.requires_grad()) {
      T* gb = bias.node()->grad_buffer().data();
      for (Index r = 0; r < rows; ++r) {
        const T* gr = g.data() + r * dout;
        for (Index c = 0; c < dout; ++c) gb[c] += gr[c];
      }
    }
  });
}

template <typename T>
Var<T> layernorm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T epsilon) {
  const Shape& xs = x.shape();
  if (xs.empty()) throw ShapeError("layernorm needs rank >= 1");
  const Index d = xs.back();
  if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) {
    throw ShapeError("layernorm: gamma/beta must have shape [" + std::to_string(d) + "], got " +
                     shape_to_string(gamma.shape()) + " and " + shape_to_string(beta.shape()));
  }
  const Index rows = d == 0 ? 0 : x.numel() / d;
  const Tensor<T>& xv = x.value();
  const T* gm = gamma.value().data();
  const T* bt = beta.value().data();
  auto xhat = std::make_shared<Tensor<T>>(xs);
  auto rstd = std::make_shared<std::vector<T>>(static_cast<std::size_t>(rows));
  Tensor<T> y(xs);
  for (Index r = 0; r < rows; ++r) {
    const T* xr = xv.data() + r * d;
    T mu = 0;
    for (Index c = 0; c < d; ++c) mu += xr[c];
    mu /= static_cast<T>(d);
    T var = 0;
    for (Index c = 0; c < d; ++c) var += (xr[c] - mu) * (xr[c] - mu);
    var /= static_cast<T>(d);
    const T rs = T(1) / std::sqrt(var + epsilon);
    (*rstd)[static_cast<std::size_t>(r)] = rs;
    T* hr = xhat->data() + r * d;
    T* yr = y.data() + r * d;
    for (Index c = 0; c < d; ++c) {
      hr[c] = (xr[c] - mu) * rs;
      yr[c] = hr[c] * gm[c] + bt[c];
    }
  }
  if (!needs_grad<T>(x, gamma, beta)) return Var<T>(std::move(y));
  return record_op<T>(std::move(y), [x, gamma, beta, xhat, rstd, rows, d](const Tensor<T>& g) {
    const T* gm = gamma.value().data();
    T* gg = gamma.requires_grad() ? gamma.node()->grad_buffer().data() : nullptr;
    T* gbt = beta.requires_grad() ? beta.node()->grad_buffer().data() : nullptr;
    T* gx = x.requires_grad() ? x.node()->grad_buffer().data() : nullptr;
    std::vector<T> gh(static_cast<std::size_t>(d));
    for (Index r = 0; r < rows; ++r) {
      const T* gr = g.data() + r * d;
      const T* hr = xhat->data() + r * d;
      for (Index c = 0; c < d; ++c) {
        if (gg) gg[c] += gr[c] * hr[c];
        if (gbt) gbt[c] += gr[c];
      }
      if (!gx) continue;
      T mean_gh = 0, mean_ghh = 0;
      for (Index c = 0; c < d; ++c) {
        gh[static_cast<std::size_t>(c)] = gr[c] * gm[c];
        mean_gh += gh[static_cast<std::size_t>(c)];
        mean_ghh += gh[static_cast<std::size_t>(c)] * hr[c];
      }
      mean_gh /= static_cast<T>(d);
      mean_ghh /= static_cast<T>(d);
      const T rs = (*rstd)[static_cast<std::size_t>(r)];
      T* gxr = gx + r * d;
      for (Index c = 0; c < d; ++c) gxr[c] += rs * (gh[static_cast<std::size_t>(c)] - mean_gh - hr[c] * mean_ghh);
    }
  });
}

#define SEUNET_INSTANTIATE_BASIC(T)                                                     \
  template Var<T> add(const Var<T>&, const Var<T>&);                                    \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                    \
  template Var<T> scale(const Var<T>&, T);                                              \
  template Var<T> sum(const Var<T>&);                                                   \
  template Var<T> mean(const Var<T>&);                                                  \
  template Var<T> reshape(const Var<T>&, Shape);                                        \
  template Var<T> permute(const Var<T>&, const std::vector<Index>&);                    \
  template Var<T> transpose_last(const Var<T>&);                                        \
  template Var<T> matmul(const Var<T>&, const Var<T>&);                                 \
  template Var<T> relu(const Var<T>&);                                                  \
  template Var<T> gelu(const Var<T>&);                                                  \
  template Var<T> sigmoid(const Var<T>&);                                               \
  template Var<T> activation(const Var<T>&, Activation);                                \
  template Var<T> softmax_lastdim(const Var<T>&);                                       \
  template Var<T> linear(const Var<T>&, const Var<T>&, const Var<T>&);                  \
  template Var<T> layernorm(const Var<T>&, const Var<T>&, const Var<T>&, T);

SEUNET_INSTANTIATE_BASIC(float)
SEUNET_INSTANTIATE_BASIC(double)

#undef SEUNET_INSTANTIATE_BASIC

}  // namespace ops
}  // namespace seunet
