#include "depo/kernels.hpp"

#include <cassert>

namespace depo::kernels {
namespace {

inline void nn_row(const double* a, const double* b, double* c, int i, int k, int m, bool accumulate) {
  double* crow = c + static_cast<std::ptrdiff_t>(i) * m;
  if (!accumulate) {
    for (int j = 0; j < m; ++j) crow[j] = 0.0;
  }
  const double* arow = a + static_cast<std::ptrdiff_t>(i) * k;
  for (int p = 0; p < k; ++p) {
    const double av = arow[p];
    const double* brow = b + static_cast<std::ptrdiff_t>(p) * m;
    for (int j = 0; j < m; ++j) crow[j] += av * brow[j];
  }
}

inline void nt_row(const double* a, const double* b, double* c, int i, int k, int m, bool accumulate) {
  const double* arow = a + static_cast<std::ptrdiff_t>(i) * k;
  double* crow = c + static_cast<std::ptrdiff_t>(i) * m;
  for (int j = 0; j < m; ++j) {
    const double* brow = b + static_cast<std::ptrdiff_t>(j) * k;
    double s = 0.0;
    for (int p = 0; p < k; ++p) s += arow[p] * brow[p];
    crow[j] = accumulate ? crow[j] + s : s;
  }
}

inline void tn_row(const double* a, const double* b, double* c, int i, int k, int n, int m) {
  double* crow = c + static_cast<std::ptrdiff_t>(i) * m;
  for (int r = 0; r < k; ++r) {
    const double av = a[static_cast<std::ptrdiff_t>(r) * n + i];
    if (av == 0.0) continue;
    const double* brow = b + static_cast<std::ptrdiff_t>(r) * m;
    for (int j = 0; j < m; ++j) crow[j] += av * brow[j];
  }
}

}  // namespace

namespace serial {

void gemm_nn(const double* a, const double* b, double* c, int n, int k, int m, bool accumulate) {
  for (int i = 0; i < n; ++i) nn_row(a, b, c, i, k, m, accumulate);
}

void gemm_nt(const double* a, const double* b, double* c, int n, int k, int m, bool accumulate) {
  for (int i = 0; i < n; ++i) nt_row(a, b, c, i, k, m, accumulate);
}

void gemm_tn_acc(const double* a, const double* b, double* c, int k, int n, int m) {
  for (int i = 0; i < n; ++i) tn_row(a, b, c, i, k, n, m);
}

}  // namespace serial

namespace omp {

void gemm_nn(const double* a, const double* b, double* c, int n, int k, int m, bool accumulate) {
#pragma omp parallel for schedule(static) if (n * k * m > 32768)
  for (int i = 0; i < n; ++i) nn_row(a, b, c, i, k, m, accumulate);
}

void gemm_nt(const double* a, const double* b, double* c, int n, int k, int m, bool accumulate) {
#pragma omp parallel for schedule(static) if (n * k * m > 32768)
  for (int i = 0; i < n; ++i) nt_row(a, b, c, i, k, m, accumulate);
}

void gemm_tn_acc(const double* a, const double* b, double* c, int k, int n, int m) {
#pragma omp parallel for schedule(static) if (n * k * m > 32768)
  for (int i = 0; i < n; ++i) tn_row(a, b, c, i, k, n, m);
}

}  // namespace omp

void gemm_nn(Exec exec, std::span<const double> a, std::span<const double> b, std::span<double> c, int n, int k,
             int m, bool accumulate) {
  assert(a.size() >= static_cast<std::size_t>(n) * k && b.size() >= static_cast<std::size_t>(k) * m &&
         c.size() >= static_cast<std::size_t>(n) * m);
  if (exec == Exec::Parallel) {
    omp::gemm_nn(a.data(), b.data(), c.data(), n, k, m, accumulate);
  } else {
    serial::gemm_nn(a.data(), b.data(), c.data(), n, k, m, accumulate);
  }
}

void gemm_nt(Exec exec, std::span<const double> a, std::span<const double> b, std::span<double> c, int n, int k,
             int m, bool accumulate) {
  assert(a.size() >= static_cast<std::size_t>(n) * k && b.size() >= static_cast<std::size_t>(m) * k &&
         c.size() >= static_cast<std::size_t>(n) * m);
  if (exec == Exec::Parallel) {
    omp::gemm_nt(a.data(), b.data(), c.data(), n, k, m, accumulate);
  } else {
    serial::gemm_nt(a.data(), b.data(), c.data(), n, k, m, accumulate);
  }
}

void gemm_tn_acc(Exec exec, std::span<const double> a, std::span<const double> b, std::span<double> c, int k, int n,
                 int m) {
  assert(a.size() >= static_cast<std::size_t>(k) * n && b.size() >= static_cast<std::size_t>(k) * m &&
         c.size() >= static_cast<std::size_t>(n) * m);
  if (exec == Exec::Parallel) {
    omp::gemm_tn_acc(a.data(), b.data(), c.data(), k, n, m);
  } else {
    serial::gemm_tn_acc(a.data(), b.data(), c.data(), k, n, m);
  }
}

void column_sum_acc(std::span<const double> a, std::span<double> out, int rows, int m) {
  for (int r = 0; r < rows; ++r) {
    const double* row = a.data() + static_cast<std::ptrdiff_t>(r) * m;
    for (int j = 0; j < m; ++j) out[static_cast<std::size_t>(j)] += row[j];
  }
}

}  // namespace depo::kernels
