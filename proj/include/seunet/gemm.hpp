#pragma once

#include "seunet/tensor.hpp"

namespace seunet::kernels {

enum class Trans { kNo, kYes };

/// C(m,n) = op(A)·op(B) (+ C when accumulate). All operands row-major and contiguous;
/// op(A) is m×k and op(B) is k×n. Single-threaded, so results are reproducible run to run.
template <typename T>
void gemm(Trans ta, Trans tb, Index m, Index n, Index k, const T* a, const T* b, T* c, bool accumulate);

/// Out-of-place transpose of a rows×cols row-major block.
template <typename T>
void transpose(Index rows, Index cols, const T* src, T* dst);

}  // namespace seunet::kernels
