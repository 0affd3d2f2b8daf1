#pragma once

// Dense row-major matrix kernels. Every kernel has a serial reference and an
// OpenMP version; both compute each output element with the same operation
// order, so their results are bit-identical and independent of thread count
// and of how many rows are processed in one call.

#include <span>

namespace depo::kernels {

enum class Exec { Serial, Parallel };

// C[n x m] = A[n x k] * B[k x m]  (+= when accumulate)
void gemm_nn(Exec exec, std::span<const double> a, std::span<const double> b, std::span<double> c, int n, int k,
             int m, bool accumulate = false);

// C[n x m] = A[n x k] * B[m x k]^T  (+= when accumulate)
void gemm_nt(Exec exec, std::span<const double> a, std::span<const double> b, std::span<double> c, int n, int k,
             int m, bool accumulate = false);

// C[n x m] += A[k x n]^T * B[k x m]
void gemm_tn_acc(Exec exec, std::span<const double> a, std::span<const double> b, std::span<double> c, int k, int n,
                 int m);

// out[j] += sum_r a[r x m][j]
void column_sum_acc(std::span<const double> a, std::span<double> out, int rows, int m);

namespace serial {
void gemm_nn(const double* a, const double* b, double* c, int n, int k, int m, bool accumulate);
void gemm_nt(const double* a, const double* b, double* c, int n, int k, int m, bool accumulate);
void gemm_tn_acc(const double* a, const double* b, double* c, int k, int n, int m);
}  // namespace serial

namespace omp {
void gemm_nn(const double* a, const double* b, double* c, int n, int k, int m, bool accumulate);
void gemm_nt(const double* a, const double* b, double* c, int n, int k, int m, bool accumulate);
void gemm_tn_acc(const double* a, const double* b, double* c, int k, int n, int m);
}  // namespace omp

}  // namespace depo::kernels
