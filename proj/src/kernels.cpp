// SPDX-License-Identifier: Apache-2.0
#include "normalign/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>

namespace normalign::kernels {

namespace {

// Row kernels shared by both variants. Each computes one output row with a
// fixed left-to-right summation order.

inline void gemm_nn_row(const double* a, const double* b, double* c, std::size_t i,
                        std::size_t k, std::size_t n) {
  const double* arow = a + i * k;
  double* crow = c + i * n;
  for (std::size_t p = 0; p < k; ++p) {
    const double av = arow[p];
    const double* brow = b + p * n;
    for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
  }
}

inline void gemm_nt_row(const double* g, const double* b, double* c, std::size_t i,
                        std::size_t k, std::size_t n) {
  const double* grow = g + i * n;
  double* crow = c + i * k;
  for (std::size_t p = 0; p < k; ++p) {
    const double* brow = b + p * n;
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
    crow[p] += acc;
  }
}

inline void gemm_tn_row(const double* a, const double* g, double* c, std::size_t p,
                        std::size_t m, std::size_t k, std::size_t n) {
  double* crow = c + p * n;
  for (std::size_t i = 0; i < m; ++i) {
    const double av = a[i * k + p];
    const double* grow = g + i * n;
    for (std::size_t j = 0; j < n; ++j) crow[j] += av * grow[j];
  }
}

inline void l2_row(const double* x, double* out, std::size_t i, std::size_t d, double eps) {
  const double* row = x + i * d;
  double acc = 0.0;
  for (std::size_t j = 0; j < d; ++j) acc += row[j] * row[j];
  out[i] = std::sqrt(acc + eps);
}

inline void softmax_row(const double* x, double* out, std::size_t i, std::size_t c) {
  const double* row = x + i * c;
  double* orow = out + i * c;
  const double mx = *std::max_element(row, row + c);
  double sum = 0.0;
  for (std::size_t j = 0; j < c; ++j) {
    orow[j] = std::exp(row[j] - mx);
    sum += orow[j];
  }
  for (std::size_t j = 0; j < c; ++j) orow[j] /= sum;
}

inline void log_softmax_row(const double* x, double* out, std::size_t i, std::size_t c) {
  const double* row = x + i * c;
  double* orow = out + i * c;
  const double mx = *std::max_element(row, row + c);
  double sum = 0.0;
  for (std::size_t j = 0; j < c; ++j) sum += std::exp(row[j] - mx);
  const double lse = mx + std::log(sum);
  for (std::size_t j = 0; j < c; ++j) orow[j] = row[j] - lse;
}

}  // namespace

namespace serial {

void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) gemm_nn_row(a.data(), b.data(), c.data(), i, k, n);
}

void gemm_nt(std::span<const double> g, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) gemm_nt_row(g.data(), b.data(), c.data(), i, k, n);
}

void gemm_tn(std::span<const double> a, std::span<const double> g, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) gemm_tn_row(a.data(), g.data(), c.data(), p, m, k, n);
}

void row_l2_norms(std::span<const double> x, std::span<double> out, std::size_t n,
                  std::size_t d, double eps) {
  for (std::size_t i = 0; i < n; ++i) l2_row(x.data(), out.data(), i, d, eps);
}

void softmax_rows(std::span<const double> x, std::span<double> out, std::size_t n,
                  std::size_t c) {
  for (std::size_t i = 0; i < n; ++i) softmax_row(x.data(), out.data(), i, c);
}

void log_softmax_rows(std::span<const double> x, std::span<double> out, std::size_t n,
                      std::size_t c) {
  for (std::size_t i = 0; i < n; ++i) log_softmax_row(x.data(), out.data(), i, c);
}

}  // namespace serial

namespace parallel {

void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n) {
  const auto rows = static_cast<std::int64_t>(m);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < rows; ++i)
    gemm_nn_row(a.data(), b.data(), c.data(), static_cast<std::size_t>(i), k, n);
}

void gemm_nt(std::span<const double> g, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n) {
  const auto rows = static_cast<std::int64_t>(m);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < rows; ++i)
    gemm_nt_row(g.data(), b.data(), c.data(), static_cast<std::size_t>(i), k, n);
}

void gemm_tn(std::span<const double> a, std::span<const double> g, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n) {
  const auto rows = static_cast<std::int64_t>(k);
#pragma omp parallel for schedule(static)
  for (std::int64_t p = 0; p < rows; ++p)
    gemm_tn_row(a.data(), g.data(), c.data(), static_cast<std::size_t>(p), m, k, n);
}

void row_l2_norms(std::span<const double> x, std::span<double> out, std::size_t n,
                  std::size_t d, double eps) {
  const auto rows = static_cast<std::int64_t>(n);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < rows; ++i)
    l2_row(x.data(), out.data(), static_cast<std::size_t>(i), d, eps);
}

void softmax_rows(std::span<const double> x, std::span<double> out, std::size_t n,
                  std::size_t c) {
  const auto rows = static_cast<std::int64_t>(n);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < rows; ++i)
    softmax_row(x.data(), out.data(), static_cast<std::size_t>(i), c);
}

void log_softmax_rows(std::span<const double> x, std::span<double> out, std::size_t n,
                      std::size_t c) {
  const auto rows = static_cast<std::int64_t>(n);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < rows; ++i)
    log_softmax_row(x.data(), out.data(), static_cast<std::size_t>(i), c);
}

}  // namespace parallel

namespace {
bool use_parallel(std::size_t work) { return work >= kParallelThreshold; }
}  // namespace

void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n) {
  if (use_parallel(m * k * n))
    parallel::gemm_nn(a, b, c, m, k, n);
  else
    serial::gemm_nn(a, b, c, m, k, n);
}

void gemm_nt(std::span<const double> g, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n) {
  if (use_parallel(m * k * n))
    parallel::gemm_nt(g, b, c, m, k, n);
  else
    serial::gemm_nt(g, b, c, m, k, n);
}

void gemm_tn(std::span<const double> a, std::span<const double> g, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n) {
  if (use_parallel(m * k * n))
    parallel::gemm_tn(a, g, c, m, k, n);
  else
    serial::gemm_tn(a, g, c, m, k, n);
}

void row_l2_norms(std::span<const double> x, std::span<double> out, std::size_t n,
                  std::size_t d, double eps) {
  if (use_parallel(n * d))
    parallel::row_l2_norms(x, out, n, d, eps);
  else
    serial::row_l2_norms(x, out, n, d, eps);
}

void softmax_rows(std::span<const double> x, std::span<double> out, std::size_t n,
                  std::size_t c) {
  if (use_parallel(n * c * 8))
    parallel::softmax_rows(x, out, n, c);
  else
    serial::softmax_rows(x, out, n, c);
}

void log_softmax_rows(std::span<const double> x, std::span<double> out, std::size_t n,
                      std::size_t c) {
  if (use_parallel(n * c * 8))
    parallel::log_softmax_rows(x, out, n, c);
  else
    serial::log_softmax_rows(x, out, n, c);
}

}  // namespace normalign::kernels
