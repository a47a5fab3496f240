// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major kernels behind the tensor ops. Each kernel has a serial
// reference and an OpenMP version that splits work over output rows only, so
// every output element sees the same sequence of floating point operations in
// both. The two are bitwise identical; tests rely on that.
#pragma once

#include <cstddef>
#include <span>

namespace normalign::kernels {

namespace serial {

// c[m×n] += a[m×k] · b[k×n]
void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n);
// c[m×k] += g[m×n] · bᵀ, b is [k×n]
void gemm_nt(std::span<const double> g, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n);
// c[k×n] += aᵀ · g, a is [m×k], g is [m×n]
void gemm_tn(std::span<const double> a, std::span<const double> g, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n);

// out[i] = sqrt(sum_j x[i,j]^2 + eps)
void row_l2_norms(std::span<const double> x, std::span<double> out, std::size_t n,
                  std::size_t d, double eps);
void softmax_rows(std::span<const double> x, std::span<double> out, std::size_t n,
                  std::size_t c);
void log_softmax_rows(std::span<const double> x, std::span<double> out, std::size_t n,
                      std::size_t c);

}  // namespace serial

namespace parallel {

void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n);
void gemm_nt(std::span<const double> g, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n);
void gemm_tn(std::span<const double> a, std::span<const double> g, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n);
void row_l2_norms(std::span<const double> x, std::span<double> out, std::size_t n,
                  std::size_t d, double eps);
void softmax_rows(std::span<const double> x, std::span<double> out, std::size_t n,
                  std::size_t c);
void log_softmax_rows(std::span<const double> x, std::span<double> out, std::size_t n,
                      std::size_t c);

}  // namespace parallel

/// Work (multiply-adds) above which the dispatching entry points switch to the
/// OpenMP kernels.
inline constexpr std::size_t kParallelThreshold = 1u << 16;

void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n);
void gemm_nt(std::span<const double> g, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n);
void gemm_tn(std::span<const double> a, std::span<const double> g, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n);
void row_l2_norms(std::span<const double> x, std::span<double> out, std::size_t n,
                  std::size_t d, double eps);
void softmax_rows(std::span<const double> x, std::span<double> out, std::size_t n,
                  std::size_t c);
void log_softmax_rows(std::span<const double> x, std::span<double> out, std::size_t n,
                      std::size_t c);

}  // namespace normalign::kernels
