#pragma once

#include <cstddef>

// Data-parallel compute kernels behind the solver and network hot loops.
//
// Every parallel kernel assigns each output element to exactly one thread, so
// results are independent of the thread count and bitwise reproducible from
// run to run of the same binary. SIMD reductions reassociate sums inside an
// element, so agreement with the plain-loop pml::kernels::serial reference is
// to rounding, not bitwise; tests compare the two at tight tolerance and the
// bench_kernels target times them against each other.

namespace pml::kernels {

namespace serial {

// C (m x n) = A (m x k) * B (n x k)^T
void gemm_nt(const double* A, const double* B, double* C, std::size_t m, std::size_t n,
             std::size_t k);

// C (m x n) = A (m x k) * B (k x n)
void gemm_nn(const double* A, const double* B, double* C, std::size_t m, std::size_t n,
             std::size_t k);

// C (k x n) += A (m x k)^T * B (m x n)
void gemm_tn_acc(const double* A, const double* B, double* C, std::size_t m, std::size_t n,
                 std::size_t k);

// y (rows) = A x for A in CSR form (row_ptr has rows+1 entries)
void csr_matvec(const std::size_t* row_ptr, const std::size_t* col, const double* val,
                const double* x, double* y, std::size_t rows);

// z_a = u_a * sum_b W_ab x_b, the row-scaled sparse product of the velocity
// layer, for a batch of column vectors stored sample-major (batch x n).
void scaled_csr_batch(const std::size_t* row_ptr, const std::size_t* col, const double* val,
                      const double* u, const double* x, double* z, std::size_t n,
                      std::size_t batch);

}  // namespace serial

void gemm_nt(const double* A, const double* B, double* C, std::size_t m, std::size_t n,
             std::size_t k);
void gemm_nn(const double* A, const double* B, double* C, std::size_t m, std::size_t n,
             std::size_t k);
void gemm_tn_acc(const double* A, const double* B, double* C, std::size_t m, std::size_t n,
                 std::size_t k);
void csr_matvec(const std::size_t* row_ptr, const std::size_t* col, const double* val,
                const double* x, double* y, std::size_t rows);
void scaled_csr_batch(const std::size_t* row_ptr, const std::size_t* col, const double* val,
                      const double* u, const double* x, double* z, std::size_t n,
                      std::size_t batch);

}  // namespace pml::kernels
