#include "seunet/gemm.hpp"

#include <Eigen/Core>

namespace seunet::kernels {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T, typename LhsExpr, typename RhsExpr>
void product_into(Eigen::Map<RowMat<T>>& out, const LhsExpr& lhs, const RhsExpr& rhs, bool accumulate) {
  if (accumulate) {
    out.noalias() += lhs * rhs;
  } else {
    out.noalias() = lhs * rhs;
  }
}

}  // namespace

template <typename T>
void gemm(Trans ta, Trans tb, Index m, Index n, Index k, const T* a, const T* b, T* c, bool accumulate) {
  Eigen::Map<RowMat<T>> out(c, m, n);
  if (m == 0 || n == 0) return;
  if (k == 0) {
    if (!accumulate) out.setZero();
    return;
  }
  // A stored as m×k (kNo) or k×m (kYes); likewise B as k×n or n×k.
  if (ta == Trans::kNo && tb == Trans::kNo) {
    Eigen::Map<const RowMat<T>> lhs(a, m, k);
    Eigen::Map<const RowMat<T>> rhs(b, k, n);
    product_into<T>(out, lhs, rhs, accumulate);
  } else if (ta == Trans::kNo) {
    Eigen::Map<const RowMat<T>> lhs(a, m, k);
    Eigen::Map<const RowMat<T>> rhs(b, n, k);
    product_into<T>(out, lhs, rhs.transpose(), accumulate);
  } else if (tb == Trans::kNo) {
    Eigen::Map<const RowMat<T>> lhs(a, k, m);
    Eigen::Map<const RowMat<T>> rhs(b, k, n);
    product_into<T>(out, lhs.transpose(), rhs, accumulate);
  } else {
    Eigen::Map<const RowMat<T>> lhs(a, k, m);
    Eigen::Map<const RowMat<T>> rhs(b, n, k);
    product_into<T>(out, lhs.transpose(), rhs.transpose(), accumulate);
  }
}

template <typename T>
void transpose(Index rows, Index cols, const T* src, T* dst) {
  for (Index r = 0; r < rows; ++r) {
    for (Index c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
  }
}

template void gemm<float>(Trans, Trans, Index, Index, Index, const float*, const float*, float*, bool);
template void gemm<double>(Trans, Trans, Index, Index, Index, const double*, const double*, double*, bool);
template void transpose<float>(Index, Index, const float*, float*);
template void transpose<double>(Index, Index, const double*, double*);

}  // namespace seunet::kernels
