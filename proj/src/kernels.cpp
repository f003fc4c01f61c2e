#include "pml/kernels.hpp"

namespace pml::kernels {

namespace serial {

void gemm_nt(const double* A, const double* B, double* C, std::size_t m, std::size_t n,
             std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* a = A + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* b = B + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a[p] * b[p];
      C[i * n + j] = acc;
    }
  }
}

void gemm_nn(const double* A, const double* B, double* C, std::size_t m, std::size_t n,
             std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    double* c = C + i * n;
    for (std::size_t j = 0; j < n; ++j) c[j] = 0.0;
    for (std::size_t p = 0; p < k; ++p) {
      const double a = A[i * k + p];
      const double* b = B + p * n;
      for (std::size_t j = 0; j < n; ++j) c[j] += a * b[j];
    }
  }
}

void gemm_tn_acc(const double* A, const double* B, double* C, std::size_t m, std::size_t n,
                 std::size_t k) {
  for (std::size_t i = 0; i < k; ++i) {
    double* c = C + i * n;
    for (std::size_t s = 0; s < m; ++s) {
      const double a = A[s * k + i];
      const double* b = B + s * n;
      for (std::size_t j = 0; j < n; ++j) c[j] += a * b[j];
    }
  }
}

void csr_matvec(const std::size_t* row_ptr, const std::size_t* col, const double* val,
                const double* x, double* y, std::size_t rows) {
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t p = row_ptr[r]; p < row_ptr[r + 1]; ++p) acc += val[p] * x[col[p]];
    y[r] = acc;
  }
}

void scaled_csr_batch(const std::size_t* row_ptr, const std::size_t* col, const double* val,
                      const double* u, const double* x, double* z, std::size_t n,
                      std::size_t batch) {
  for (std::size_t s = 0; s < batch; ++s) {
    const double* xs = x + s * n;
    double* zs = z + s * n;
    for (std::size_t r = 0; r < n; ++r) {
      double acc = 0.0;
      for (std::size_t p = row_ptr[r]; p < row_ptr[r + 1]; ++p) acc += val[p] * xs[col[p]];
      zs[r] = u[r] * acc;
    }
  }
}

}  // namespace serial

// Parallel variants below keep the serial per-element reduction order; the
// j-loop in gemm_nt is unrolled by 4 over rows of A to reuse each B row.

void gemm_nt(const double* A, const double* B, double* C, std::size_t m, std::size_t n,
             std::size_t k) {
  const std::size_t m4 = m - m % 4;
#pragma omp parallel for schedule(static)
  for (std::size_t j = 0; j < n; ++j) {
    const double* b = B + j * k;
    for (std::size_t i = 0; i < m4; i += 4) {
      const double* a0 = A + i * k;
      const double* a1 = a0 + k;
      const double* a2 = a1 + k;
      const double* a3 = a2 + k;
      double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
#pragma omp simd reduction(+ : s0, s1, s2, s3)
      for (std::size_t p = 0; p < k; ++p) {
        const double bp = b[p];
        s0 += a0[p] * bp;
        s1 += a1[p] * bp;
        s2 += a2[p] * bp;
        s3 += a3[p] * bp;
      }
      C[(i + 0) * n + j] = s0;
      C[(i + 1) * n + j] = s1;
      C[(i + 2) * n + j] = s2;
      C[(i + 3) * n + j] = s3;
    }
    for (std::size_t i = m4; i < m; ++i) {
      const double* a = A + i * k;
      double acc = 0.0;
#pragma omp simd reduction(+ : acc)
      for (std::size_t p = 0; p < k; ++p) acc += a[p] * b[p];
      C[i * n + j] = acc;
    }
  }
}

void gemm_nn(const double* A, const double* B, double* C, std::size_t m, std::size_t n,
             std::size_t k) {
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < m; ++i) {
    double* c = C + i * n;
#pragma omp simd
    for (std::size_t j = 0; j < n; ++j) c[j] = 0.0;
    for (std::size_t p = 0; p < k; ++p) {
      const double a = A[i * k + p];
      const double* b = B + p * n;
#pragma omp simd
      for (std::size_t j = 0; j < n; ++j) c[j] += a * b[j];
    }
  }
}

void gemm_tn_acc(const double* A, const double* B, double* C, std::size_t m, std::size_t n,
                 std::size_t k) {
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < k; ++i) {
    double* c = C + i * n;
    for (std::size_t s = 0; s < m; ++s) {
      const double a = A[s * k + i];
      const double* b = B + s * n;
#pragma omp simd
      for (std::size_t j = 0; j < n; ++j) c[j] += a * b[j];
    }
  }
}

void csr_matvec(const std::size_t* row_ptr, const std::size_t* col, const double* val,
                const double* x, double* y, std::size_t rows) {
#pragma omp parallel for schedule(static)
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t p = row_ptr[r]; p < row_ptr[r + 1]; ++p) acc += val[p] * x[col[p]];
    y[r] = acc;
  }
}

void scaled_csr_batch(const std::size_t* row_ptr, const std::size_t* col, const double* val,
                      const double* u, const double* x, double* z, std::size_t n,
                      std::size_t batch) {
#pragma omp parallel for schedule(static)
  for (std::size_t s = 0; s < batch; ++s) {
    const double* xs = x + s * n;
    double* zs = z + s * n;
    for (std::size_t r = 0; r < n; ++r) {
      double acc = 0.0;
      for (std::size_t p = row_ptr[r]; p < row_ptr[r + 1]; ++p) acc += val[p] * xs[col[p]];
      zs[r] = u[r] * acc;
    }
  }
}

}  // namespace pml::kernels
