#include <algorithm>
#include <cmath>

#include "seunet/gemm.hpp"
#include "seunet/ops.hpp"

namespace seunet {

namespace {
thread_local AttentionStats g_attention_stats;

// Upper bound on score-matrix entries held at once; longer sequences are split into row blocks.
constexpr Index kMaxScoreBlock = Index{1} << 22;
}  // namespace

AttentionStats& attention_stats() { return g_attention_stats; }
void reset_attention_stats() { g_attention_stats = AttentionStats{}; }

namespace ops {

namespace {

using kernels::Trans;

struct AttentionDims {
  Index slices, n, m, d, dv;
};

AttentionDims check_attention(const Shape& qs, const Shape& ks, const Shape& vs) {
  if (qs.size() < 2 || ks.size() != qs.size() || vs.size() != qs.size()) {
    throw ShapeError("attention: q/k/v ranks differ or are < 2: " + shape_to_string(qs) + ", " +
                     shape_to_string(ks) + ", " + shape_to_string(vs));
  }
  const std::size_t r = qs.size();
  if (!std::equal(qs.begin(), qs.end() - 2, ks.begin()) || !std::equal(qs.begin(), qs.end() - 2, vs.begin())) {
    throw ShapeError("attention: leading extents differ: " + shape_to_string(qs) + ", " + shape_to_string(ks) +
                     ", " + shape_to_string(vs));
  }
  if (qs[r - 1] != ks[r - 1] || ks[r - 2] != vs[r - 2]) {
    throw ShapeError("attention: incompatible q/k/v " + shape_to_string(qs) + ", " + shape_to_string(ks) + ", " +
                     shape_to_string(vs));
  }
  Index slices = 1;
  for (std::size_t i = 0; i + 2 < r; ++i) slices *= qs[i];
  return AttentionDims{slices, qs[r - 2], ks[r - 2], qs[r - 1], vs[r - 1]};
}

template <typename T>
T attention_scale(Index d) {
  return T(1) / std::sqrt(static_cast<T>(d));
}

Index block_rows(const AttentionDims& a) {
  if (a.m == 0) return std::max<Index>(a.n, 1);
  return std::clamp<Index>(kMaxScoreBlock / a.m, 1, std::max<Index>(a.n, 1));
}

// probs(rows×m) = softmax(q_rows · kᵀ · scale) with kt already transposed (d×m).
template <typename T>
void score_block(const T* q_rows, const T* kt, Index rows, const AttentionDims& a, T scale, T* probs) {
  kernels::gemm<T>(Trans::kNo, Trans::kNo, rows, a.m, a.d, q_rows, kt, probs, false);
  const Index count = rows * a.m;
  for (Index i = 0; i < count; ++i) probs[i] = probs[i] * scale;
  kernels::softmax_rows(probs, probs, rows, a.m);
}

}  // namespace

template <typename T>
Var<T> scaled_dot_product_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v) {
  const AttentionDims a = check_attention(q.shape(), k.shape(), v.shape());
  const T scale = attention_scale<T>(a.d);
  const Index rows_per_block = block_rows(a);
  Shape out_shape = q.shape();
  out_shape.back() = a.dv;
  Tensor<T> y(out_shape);
  std::vector<T> kt(static_cast<std::size_t>(a.d * a.m));
  std::vector<T> probs(static_cast<std::size_t>(rows_per_block * a.m));
  for (Index s = 0; s < a.slices; ++s) {
    const T* qs = q.value().data() + s * a.n * a.d;
    kernels::transpose(a.m, a.d, k.value().data() + s * a.m * a.d, kt.data());
    const T* vs = v.value().data() + s * a.m * a.dv;
    for (Index r0 = 0; r0 < a.n; r0 += rows_per_block) {
      const Index rows = std::min(rows_per_block, a.n - r0);
      score_block(qs + r0 * a.d, kt.data(), rows, a, scale, probs.data());
      kernels::gemm<T>(Trans::kNo, Trans::kNo, rows, a.dv, a.m, probs.data(), vs,
                       y.data() + (s * a.n + r0) * a.dv, false);
    }
    g_attention_stats.score_entries += a.n * a.m;
    g_attention_stats.head_evaluations += 1;
  }
  if (!needs_grad<T>(q, k, v)) return Var<T>(std::move(y));
  return record_op<T>(std::move(y), [q, k, v, a, scale, rows_per_block](const Tensor<T>& g) {
    std::vector<T> kt(static_cast<std::size_t>(a.d * a.m));
    std::vector<T> probs(static_cast<std::size_t>(rows_per_block * a.m));
    std::vector<T> dprobs(probs.size());
    for (Index s = 0; s < a.slices; ++s) {
      const T* qs = q.value().data() + s * a.n * a.d;
      const T* ks = k.value().data() + s * a.m * a.d;
      const T* vs = v.value().data() + s * a.m * a.dv;
      kernels::transpose(a.m, a.d, ks, kt.data());
      for (Index r0 = 0; r0 < a.n; r0 += rows_per_block) {
        const Index rows = std::min(rows_per_block, a.n - r0);
        const T* g_rows = g.data() + (s * a.n + r0) * a.dv;
        score_block(qs + r0 * a.d, kt.data(), rows, a, scale, probs.data());
        if (v.requires_grad()) {
          kernels::gemm<T>(Trans::kYes, Trans::kNo, a.m, a.dv, rows, probs.data(), g_rows,
                           v.node()->grad_buffer().data() + s * a.m * a.dv, true);
        }
        if (!q.requires_grad() && !k.requires_grad()) continue;
        kernels::gemm<T>(Trans::kNo, Trans::kYes, rows, a.m, a.dv, g_rows, vs, dprobs.data(), false);
        // Softmax VJP, then the 1/sqrt(d) factor: dS = scale * P ⊙ (dP - rowsum(dP ⊙ P)).
        for (Index r = 0; r < rows; ++r) {
          const T* pr = probs.data() + r * a.m;
          T* dr = dprobs.data() + r * a.m;
          T dot = 0;
          for (Index c = 0; c < a.m; ++c) dot += dr[c] * pr[c];
          for (Index c = 0; c < a.m; ++c) dr[c] = scale * pr[c] * (dr[c] - dot);
        }
        if (q.requires_grad()) {
          kernels::gemm<T>(Trans::kNo, Trans::kNo, rows, a.d, a.m, dprobs.data(), ks,
                           q.node()->grad_buffer().data() + (s * a.n + r0) * a.d, true);
        }
        if (k.requires_grad()) {
          kernels::gemm<T>(Trans::kYes, Trans::kNo, a.m, a.d, rows, dprobs.data(), qs + r0 * a.d,
                           k.node()->grad_buffer().data() + s * a.m * a.d, true);
        }
      }
    }
  });
}

template <typename T>
Var<T> attention_reference(const Var<T>& q, const Var<T>& k, const Var<T>& v) {
  const AttentionDims a = check_attention(q.shape(), k.shape(), v.shape());
  const Var<T> scores = scale(matmul(q, transpose_last(k)), attention_scale<T>(a.d));
  return matmul(softmax_lastdim(scores), v);
}

template <typename T>
Tensor<T> attention_probabilities(const Tensor<T>& q, const Tensor<T>& k) {
  Shape vshape = k.shape();
  const AttentionDims a = check_attention(q.shape(), k.shape(), vshape);
  Shape out = q.shape();
  out.back() = a.m;
  Tensor<T> p(out);
  std::vector<T> kt(static_cast<std::size_t>(a.d * a.m));
  for (Index s = 0; s < a.slices; ++s) {
    kernels::transpose(a.m, a.d, k.data() + s * a.m * a.d, kt.data());
    score_block(q.data() + s * a.n * a.d, kt.data(), a.n, a, attention_scale<T>(a.d), p.data() + s * a.n * a.m);
  }
  return p;
}

template Var<float> scaled_dot_product_attention(const Var<float>&, const Var<float>&, const Var<float>&);
template Var<double> scaled_dot_product_attention(const Var<double>&, const Var<double>&, const Var<double>&);
template Var<float> attention_reference(const Var<float>&, const Var<float>&, const Var<float>&);
template Var<double> attention_reference(const Var<double>&, const Var<double>&, const Var<double>&);
template Tensor<float> attention_probabilities(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> attention_probabilities(const Tensor<double>&, const Tensor<double>&);

}  // namespace ops
}  // namespace seunet
