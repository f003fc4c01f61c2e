// Times the OpenMP kernels against the serial references on the shapes the
// solver and training loops actually hit, and checks the two paths agree.
// Usage: bench_kernels [reps]   (default 7, medians reported)

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <random>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "pml/kernels.hpp"
#include "pml/nn.hpp"
#include "pml/rng.hpp"

using namespace pml;

namespace {

double now_s() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

std::vector<double> randn(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::vector<double> v(n);
  for (double& x : v) x = rng::normal(gen);
  return v;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

// Medians the wall time of fn over reps runs after one warmup.
template <class F>
double time_median(int reps, F&& fn) {
  fn();
  std::vector<double> t(reps);
  for (int r = 0; r < reps; ++r) {
    const double t0 = now_s();
    fn();
    t[r] = now_s() - t0;
  }
  std::sort(t.begin(), t.end());
  return t[t.size() / 2];
}

void report(const char* name, const char* shape, double serial_s, double parallel_s,
            double diff) {
  std::printf("%-16s %-22s %10.3f %10.3f %7.2fx   %.2e\n", name, shape, serial_s * 1e3,
              parallel_s * 1e3, serial_s / parallel_s, diff);
}

}  // namespace

int main(int argc, char** argv) {
  const int reps = argc > 1 ? std::atoi(argv[1]) : 7;
#ifdef _OPENMP
  std::printf("threads: %d, reps: %d (medians)\n\n", omp_get_max_threads(), reps);
#else
  std::printf("threads: 1 (no OpenMP), reps: %d (medians)\n\n", reps);
#endif
  std::printf("%-16s %-22s %10s %10s %8s   %s\n", "kernel", "shape", "serial ms", "openmp ms",
              "speedup", "max |diff|");

  // Dense forward: batch 100 through the widest single-phase layer.
  {
    const std::size_t m = 100, n = 2500, k = 2500;
    const std::vector<double> A = randn(m * k, 1), B = randn(n * k, 2);
    std::vector<double> Cs(m * n), Cp(m * n);
    const double ts = time_median(reps, [&] { kernels::serial::gemm_nt(A.data(), B.data(), Cs.data(), m, n, k); });
    const double tp = time_median(reps, [&] { kernels::gemm_nt(A.data(), B.data(), Cp.data(), m, n, k); });
    report("gemm_nt", "100 x 2500 . 2500", ts, tp, max_abs_diff(Cs, Cp));
  }

  // Backward data term: batch 100 through the velocity decoder.
  {
    const std::size_t m = 100, n = 4900, k = 180;
    const std::vector<double> A = randn(m * k, 3), B = randn(k * n, 4);
    std::vector<double> Cs(m * n), Cp(m * n);
    const double ts = time_median(reps, [&] { kernels::serial::gemm_nn(A.data(), B.data(), Cs.data(), m, n, k); });
    const double tp = time_median(reps, [&] { kernels::gemm_nn(A.data(), B.data(), Cp.data(), m, n, k); });
    report("gemm_nn", "100 x 4900 . 180", ts, tp, max_abs_diff(Cs, Cp));
  }

  // Weight-gradient accumulation of the same dense layer.
  {
    const std::size_t m = 100, n = 2500, k = 2500;
    const std::vector<double> A = randn(m * k, 5), B = randn(m * n, 6);
    std::vector<double> Cs(k * n, 0.0), Cp(k * n, 0.0);
    const double ts = time_median(reps, [&] { kernels::serial::gemm_tn_acc(A.data(), B.data(), Cs.data(), m, n, k); });
    const double tp = time_median(reps, [&] { kernels::gemm_tn_acc(A.data(), B.data(), Cp.data(), m, n, k); });
    // The accumulators grow by reps+1 identical contributions on both sides.
    report("gemm_tn_acc", "100^T x 100 . 2500^2", ts, tp, max_abs_diff(Cs, Cp));
  }

  // Pentadiagonal matvec at the production grid size, the Jacobian hot loop.
  {
    const nn::SparsePattern pat = nn::pentadiagonal_pattern(50, 50);
    const std::size_t n = 2500;
    const std::vector<double> val = randn(pat.nnz(), 7), x = randn(n, 8);
    std::vector<double> ys(n), yp(n);
    const double ts = time_median(reps, [&] {
      for (int it = 0; it < 200; ++it)
        kernels::serial::csr_matvec(pat.row_ptr.data(), pat.col.data(), val.data(), x.data(),
                                    ys.data(), n);
    });
    const double tp = time_median(reps, [&] {
      for (int it = 0; it < 200; ++it)
        kernels::csr_matvec(pat.row_ptr.data(), pat.col.data(), val.data(), x.data(), yp.data(),
                            n);
    });
    report("csr_matvec", "2500 penta, x200", ts, tp, max_abs_diff(ys, yp));
  }

  // Velocity-scaled sparse batch product, the saturation-net hot loop.
  {
    const nn::SparsePattern pat = nn::pentadiagonal_pattern(50, 50);
    const std::size_t n = 2500, batch = 100;
    const std::vector<double> val = randn(pat.nnz(), 9), u = randn(n, 10),
                              x = randn(batch * n, 11);
    std::vector<double> zs(batch * n), zp(batch * n);
    const double ts = time_median(reps, [&] {
      kernels::serial::scaled_csr_batch(pat.row_ptr.data(), pat.col.data(), val.data(), u.data(),
                                        x.data(), zs.data(), n, batch);
    });
    const double tp = time_median(reps, [&] {
      kernels::scaled_csr_batch(pat.row_ptr.data(), pat.col.data(), val.data(), u.data(),
                                x.data(), zp.data(), n, batch);
    });
    report("scaled_csr_batch", "2500 penta, batch 100", ts, tp, max_abs_diff(zs, zp));
  }

  return 0;
}
