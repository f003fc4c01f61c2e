#include "pml/flow.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "pml/errors.hpp"

namespace pml {

namespace {

// Lower-band storage for a symmetric positive definite matrix: band[d*n + j] holds
// A[j+d][j] for diagonals d = 0..bw.
struct BandChol {
  std::size_t n = 0, bw = 0;
  std::vector<double> band;

  void factor() {
    for (std::size_t j = 0; j < n; ++j) {
      const std::size_t k0 = j > bw ? j - bw : 0;
      for (std::size_t k = k0; k < j; ++k) {
        const double ljk = band[(j - k) * n + k];
        if (ljk == 0.0) continue;
        const std::size_t imax = std::min(k + bw, n - 1);
        for (std::size_t i = j; i <= imax; ++i) band[(i - j) * n + j] -= band[(i - k) * n + k] * ljk;
      }
      double d = band[j];
      if (!(d > 0.0)) throw numeric_error("banded Cholesky: non-positive pivot at row " +
                                          std::to_string(j));
      d = std::sqrt(d);
      band[j] = d;
      const std::size_t dmax = std::min(bw, n - 1 - j);
      for (std::size_t dd = 1; dd <= dmax; ++dd) band[dd * n + j] /= d;
    }
  }

  void solve(std::vector<double>& x) const {
    for (std::size_t j = 0; j < n; ++j) {  // L y = b
      x[j] /= band[j];
      const std::size_t dmax = std::min(bw, n - 1 - j);
      for (std::size_t d = 1; d <= dmax; ++d) x[j + d] -= band[d * n + j] * x[j];
    }
    for (std::size_t jj = n; jj-- > 0;) {  // L^T x = y
      const std::size_t dmax = std::min(bw, n - 1 - jj);
      double acc = x[jj];
      for (std::size_t d = 1; d <= dmax; ++d) acc -= band[d * n + jj] * x[jj + d];
      x[jj] = acc / band[jj];
    }
  }
};

// Applies L = B diag(T) B^T through the same flux arithmetic used to report u, so
// the refinement loop controls exactly the conservation residual that is returned.
void apply_laplacian(const Grid& grid, const Transmissibility& T, const std::vector<double>& p,
                     std::vector<double>& out) {
  EdgeFlux u;
  u.values.resize(grid.n_edges);
  for (std::size_t k = 0; k < grid.ny; ++k)
    for (std::size_t h = 0; h + 1 < grid.nx; ++h) {
      const std::size_t e = grid.vertical_edge(k, h);
      u.values[e] = T.T[e] * (p[grid.cell_id(k, h)] - p[grid.cell_id(k, h + 1)]);
    }
  for (std::size_t k = 0; k + 1 < grid.ny; ++k)
    for (std::size_t h = 0; h < grid.nx; ++h) {
      const std::size_t e = grid.horizontal_edge(k, h);
      u.values[e] = T.T[e] * (p[grid.cell_id(k, h)] - p[grid.cell_id(k + 1, h)]);
    }
  out = divergence(grid, u);
}

FlowSolution solve_pcg(const Grid& grid, const Transmissibility& T, const std::vector<double>& F);

}  // namespace

Transmissibility assemble_transmissibility(const Grid& grid, const std::vector<double>& kappa_eff) {
  if (kappa_eff.size() != grid.n_cells)
    throw inconsistency_error("assemble_transmissibility: kappa size mismatch");
  for (std::size_t i = 0; i < kappa_eff.size(); ++i)
    if (!(kappa_eff[i] > 0.0))
      throw domain_error("assemble_transmissibility: kappa_eff[" + std::to_string(i) +
                         "] must be > 0");
  Transmissibility t;
  t.T.resize(grid.n_edges);
  const double dx = 0.5 * grid.hx, dy = 0.5 * grid.hy;
  for (std::size_t k = 0; k < grid.ny; ++k)
    for (std::size_t h = 0; h + 1 < grid.nx; ++h)
      t.T[grid.vertical_edge(k, h)] =
          grid.hy / (dx / kappa_eff[grid.cell_id(k, h)] + dx / kappa_eff[grid.cell_id(k, h + 1)]);
  for (std::size_t k = 0; k + 1 < grid.ny; ++k)
    for (std::size_t h = 0; h < grid.nx; ++h)
      t.T[grid.horizontal_edge(k, h)] =
          grid.hx / (dy / kappa_eff[grid.cell_id(k, h)] + dy / kappa_eff[grid.cell_id(k + 1, h)]);
  return t;
}

std::vector<double> divergence(const Grid& grid, const EdgeFlux& u) {
  if (u.values.size() != grid.n_edges)
    throw inconsistency_error("divergence: flux length mismatch");
  std::vector<double> div(grid.n_cells, 0.0);
  for (std::size_t k = 0; k < grid.ny; ++k)
    for (std::size_t h = 0; h + 1 < grid.nx; ++h) {
      const double q = u.values[grid.vertical_edge(k, h)];
      div[grid.cell_id(k, h)] += q;
      div[grid.cell_id(k, h + 1)] -= q;
    }
  for (std::size_t k = 0; k + 1 < grid.ny; ++k)
    for (std::size_t h = 0; h < grid.nx; ++h) {
      const double q = u.values[grid.horizontal_edge(k, h)];
      div[grid.cell_id(k, h)] += q;
      div[grid.cell_id(k + 1, h)] -= q;
    }
  return div;
}

FlowSolution solve_darcy(const Grid& grid, const Transmissibility& T, const SourceField& f) {
  if (T.T.size() != grid.n_edges || f.r.size() != grid.n_cells)
    throw inconsistency_error("solve_darcy: shape mismatch");
  const std::size_t n = grid.n_cells;
  std::vector<double> F(n);
  double fsum = 0.0, fmax = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    F[i] = f.r[i] * grid.cell_volume;
    fsum += F[i];
    fmax = std::max(fmax, std::fabs(F[i]));
  }
  if (std::fabs(fsum) > 1e-12 * std::max(1.0, fmax))
    throw inconsistency_error("solve_darcy: incompatible source, sum F = " + std::to_string(fsum));
  // Remove the rounding-level drift along the null space.
  const double shift = fsum / static_cast<double>(n);
  for (double& v : F) v -= shift;

  if (n > 10000) return solve_pcg(grid, T, F);

  FlowSolution sol;
  sol.p.assign(n, 0.0);
  if (n == 1) {
    sol.u.values.assign(grid.n_edges, 0.0);
    sol.residual_mass = std::fabs(F[0]);
    return sol;
  }

  // Ground cell 0: factor the trailing principal submatrix (indices 1..n-1). Row 0
  // is then satisfied automatically because the column sums of L vanish and F sums
  // to zero.
  const std::size_t m = n - 1;
  const std::size_t bw = std::min(grid.ny > 1 ? grid.nx : 1, m - 1 > 0 ? m - 1 : 0);
  BandChol chol;
  chol.n = m;
  chol.bw = bw;
  chol.band.assign((bw + 1) * m, 0.0);
  auto add_entry = [&](std::size_t i, std::size_t j, double v) {
    if (i == 0 || j == 0) return;  // grounded row/column
    const std::size_t gi = i - 1, gj = j - 1;
    if (gi >= gj) chol.band[(gi - gj) * m + gj] += v;
  };
  for (std::size_t k = 0; k < grid.ny; ++k)
    for (std::size_t h = 0; h + 1 < grid.nx; ++h) {
      const double t = T.T[grid.vertical_edge(k, h)];
      const std::size_t c1 = grid.cell_id(k, h), c2 = grid.cell_id(k, h + 1);
      add_entry(c1, c1, t);
      add_entry(c2, c2, t);
      add_entry(c2, c1, -t);
      add_entry(c1, c2, -t);
    }
  for (std::size_t k = 0; k + 1 < grid.ny; ++k)
    for (std::size_t h = 0; h < grid.nx; ++h) {
      const double t = T.T[grid.horizontal_edge(k, h)];
      const std::size_t c1 = grid.cell_id(k, h), c2 = grid.cell_id(k + 1, h);
      add_entry(c1, c1, t);
      add_entry(c2, c2, t);
      add_entry(c2, c1, -t);
      add_entry(c1, c2, -t);
    }
  chol.factor();

  std::vector<double> rhs(m), resid(n), corr(n, 0.0);
  for (std::size_t i = 0; i < m; ++i) rhs[i] = F[i + 1];
  chol.solve(rhs);
  for (std::size_t i = 0; i < m; ++i) sol.p[i + 1] = rhs[i];

  // Iterative refinement against the exact flux-divergence residual.
  const double target = 1e-13 * std::max(1.0, fmax);
  for (int round = 0; round < 6; ++round) {
    apply_laplacian(grid, T, sol.p, resid);
    double rmax = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      resid[i] = F[i] - resid[i];
      rmax = std::max(rmax, std::fabs(resid[i]));
    }
    if (rmax <= target) break;
    for (std::size_t i = 0; i < m; ++i) rhs[i] = resid[i + 1];
    chol.solve(rhs);
    for (std::size_t i = 0; i < m; ++i) sol.p[i + 1] += rhs[i];
  }

  double pmean = 0.0;
  for (double v : sol.p) pmean += v;
  pmean /= static_cast<double>(n);
  for (double& v : sol.p) v -= pmean;

  sol.u.values.resize(grid.n_edges);
  for (std::size_t k = 0; k < grid.ny; ++k)
    for (std::size_t h = 0; h + 1 < grid.nx; ++h) {
      const std::size_t e = grid.vertical_edge(k, h);
      sol.u.values[e] = T.T[e] * (sol.p[grid.cell_id(k, h)] - sol.p[grid.cell_id(k, h + 1)]);
    }
  for (std::size_t k = 0; k + 1 < grid.ny; ++k)
    for (std::size_t h = 0; h < grid.nx; ++h) {
      const std::size_t e = grid.horizontal_edge(k, h);
      sol.u.values[e] = T.T[e] * (sol.p[grid.cell_id(k, h)] - sol.p[grid.cell_id(k + 1, h)]);
    }
  const std::vector<double> div = divergence(grid, sol.u);
  double rmax = 0.0;
  for (std::size_t i = 0; i < n; ++i) rmax = std::max(rmax, std::fabs(div[i] - F[i]));
  sol.residual_mass = rmax;
  return sol;
}

namespace {

FlowSolution solve_pcg(const Grid& grid, const Transmissibility& T, const std::vector<double>& F) {
  const std::size_t n = grid.n_cells;
  std::vector<double> diag(n, 0.0);
  for (std::size_t k = 0; k < grid.ny; ++k)
    for (std::size_t h = 0; h + 1 < grid.nx; ++h) {
      const double t = T.T[grid.vertical_edge(k, h)];
      diag[grid.cell_id(k, h)] += t;
      diag[grid.cell_id(k, h + 1)] += t;
    }
  for (std::size_t k = 0; k + 1 < grid.ny; ++k)
    for (std::size_t h = 0; h < grid.nx; ++h) {
      const double t = T.T[grid.horizontal_edge(k, h)];
      diag[grid.cell_id(k, h)] += t;
      diag[grid.cell_id(k + 1, h)] += t;
    }

  auto deflate = [n](std::vector<double>& v) {
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(n);
    for (double& x : v) x -= mean;
  };

  FlowSolution sol;
  sol.p.assign(n, 0.0);
  std::vector<double> r = F, z(n), q(n), d;
  double bnorm = 0.0;
  for (double v : F) bnorm += v * v;
  bnorm = std::sqrt(bnorm);
  const double tol = 1e-12 * bnorm;
  double rho = 0.0;
  const std::size_t max_iter = 10 * n;
  bool converged = bnorm == 0.0;
  for (std::size_t it = 0; it < max_iter && !converged; ++it) {
    for (std::size_t i = 0; i < n; ++i) z[i] = r[i] / diag[i];
    deflate(z);
    double rho_new = 0.0;
    for (std::size_t i = 0; i < n; ++i) rho_new += r[i] * z[i];
    if (it == 0)
      d = z;
    else {
      const double beta = rho_new / rho;
      for (std::size_t i = 0; i < n; ++i) d[i] = z[i] + beta * d[i];
    }
    rho = rho_new;
    apply_laplacian(grid, T, d, q);
    double dq = 0.0;
    for (std::size_t i = 0; i < n; ++i) dq += d[i] * q[i];
    const double alpha = rho / dq;
    double rnorm = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      sol.p[i] += alpha * d[i];
      r[i] -= alpha * q[i];
      rnorm += r[i] * r[i];
    }
    converged = std::sqrt(rnorm) <= tol;
  }
  if (!converged) throw numeric_error("solve_darcy: CG did not reach tolerance");
  deflate(sol.p);

  sol.u.values.resize(grid.n_edges);
  for (std::size_t k = 0; k < grid.ny; ++k)
    for (std::size_t h = 0; h + 1 < grid.nx; ++h) {
      const std::size_t e = grid.vertical_edge(k, h);
      sol.u.values[e] = T.T[e] * (sol.p[grid.cell_id(k, h)] - sol.p[grid.cell_id(k, h + 1)]);
    }
  for (std::size_t k = 0; k + 1 < grid.ny; ++k)
    for (std::size_t h = 0; h < grid.nx; ++h) {
      const std::size_t e = grid.horizontal_edge(k, h);
      sol.u.values[e] = T.T[e] * (sol.p[grid.cell_id(k, h)] - sol.p[grid.cell_id(k + 1, h)]);
    }
  const std::vector<double> div = divergence(grid, sol.u);
  double rmax = 0.0;
  for (std::size_t i = 0; i < n; ++i) rmax = std::max(rmax, std::fabs(div[i] - F[i]));
  sol.residual_mass = rmax;
  return sol;
}

}  // namespace

MassResidual local_mass_residual(const Grid& grid, const EdgeFlux& u, const SourceField& f) {
  if (f.r.size() != grid.n_cells) throw inconsistency_error("local_mass_residual: shape mismatch");
  MassResidual res;
  res.residual = divergence(grid, u);
  for (std::size_t i = 0; i < grid.n_cells; ++i) {
    res.residual[i] -= f.r[i] * grid.cell_volume;
    const double a = std::fabs(res.residual[i]);
    res.mean_abs += a;
    res.max_abs = std::max(res.max_abs, a);
  }
  res.mean_abs /= static_cast<double>(grid.n_cells);
  return res;
}

double weighted_velocity_norm(const Grid& grid, const EdgeFlux& u, const std::vector<double>& kappa) {
  if (u.values.size() != grid.n_edges || kappa.size() != grid.n_cells)
    throw inconsistency_error("weighted_velocity_norm: shape mismatch");
  for (double k : kappa)
    if (!(k > 0.0)) throw domain_error("weighted_velocity_norm: kappa must be > 0");
  double acc = 0.0;
  const double dx = 0.5 * grid.hx, dy = 0.5 * grid.hy;
  for (std::size_t k = 0; k < grid.ny; ++k)
    for (std::size_t h = 0; h + 1 < grid.nx; ++h) {
      const double k1 = kappa[grid.cell_id(k, h)], k2 = kappa[grid.cell_id(k, h + 1)];
      const double ke = (dx + dx) / (dx / k1 + dx / k2);
      const double v = u.values[grid.vertical_edge(k, h)] / grid.hy;
      acc += v * v / ke * (dx + dx) * grid.hy;
    }
  for (std::size_t k = 0; k + 1 < grid.ny; ++k)
    for (std::size_t h = 0; h < grid.nx; ++h) {
      const double k1 = kappa[grid.cell_id(k, h)], k2 = kappa[grid.cell_id(k + 1, h)];
      const double ke = (dy + dy) / (dy / k1 + dy / k2);
      const double v = u.values[grid.horizontal_edge(k, h)] / grid.hx;
      acc += v * v / ke * (dy + dy) * grid.hx;
    }
  return std::sqrt(acc);
}

double velocity_norm(const Grid& grid, const EdgeFlux& u) {
  return weighted_velocity_norm(grid, u, std::vector<double>(grid.n_cells, 1.0));
}

}  // namespace pml
