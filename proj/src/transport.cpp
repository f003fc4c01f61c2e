#include "pml/transport.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace pml {

namespace {

// Neighbor cell per direction (1: k-1, 2: k+1, 3: h-1, 4: h+1); the boundary flux
// entries are zero, so the returned index is only read when the edge exists.
inline bool neighbor(const Grid& g, std::size_t c, int dir, std::size_t& nbr) {
  const std::size_t k = g.cell_row(c), h = g.cell_col(c);
  switch (dir) {
    case 1: if (k == 0) return false; nbr = c - g.nx; return true;
    case 2: if (k + 1 >= g.ny) return false; nbr = c + g.nx; return true;
    case 3: if (h == 0) return false; nbr = c - 1; return true;
    default: if (h + 1 >= g.nx) return false; nbr = c + 1; return true;
  }
}

inline const double* dir_array(const CellDirectionalFlux& d, int dir) {
  switch (dir) {
    case 1: return d.u1.data();
    case 2: return d.u2.data();
    case 3: return d.u3.data();
    default: return d.u4.data();
  }
}

void check_shapes(const Grid& grid, const std::vector<double>& S, const CellDirectionalFlux& d,
                  const SourceField& r, const char* where) {
  if (S.size() != grid.n_cells || r.r.size() != grid.n_cells || d.u1.size() != grid.n_cells ||
      d.u2.size() != grid.n_cells || d.u3.size() != grid.n_cells || d.u4.size() != grid.n_cells)
    throw inconsistency_error(std::string(where) + ": shape mismatch");
}

// General banded LU without pivoting; row i holds columns i-bw .. i+bw.
struct BandLU {
  std::size_t n = 0, bw = 0, stride = 0;
  std::vector<double> a;

  void init(std::size_t n_, std::size_t bw_) {
    n = n_;
    bw = bw_;
    stride = 2 * bw + 1;
    a.assign(n * stride, 0.0);
  }
  double& at(std::size_t i, std::size_t j) { return a[i * stride + (j + bw - i)]; }

  void factor() {
    for (std::size_t i = 1; i < n; ++i) {
      const std::size_t k0 = i > bw ? i - bw : 0;
      for (std::size_t k = k0; k < i; ++k) {
        double& lik = at(i, k);
        if (lik == 0.0) continue;
        const double l = lik / at(k, k);
        lik = l;
        const std::size_t jmax = std::min(k + bw, n - 1);
        for (std::size_t j = k + 1; j <= jmax; ++j) at(i, j) -= l * at(k, j);
      }
    }
  }

  void solve(std::vector<double>& b) {
    for (std::size_t i = 1; i < n; ++i) {
      const std::size_t k0 = i > bw ? i - bw : 0;
      double acc = b[i];
      for (std::size_t k = k0; k < i; ++k) acc -= at(i, k) * b[k];
      b[i] = acc;
    }
    for (std::size_t ii = n; ii-- > 0;) {
      const std::size_t jmax = std::min(ii + bw, n - 1);
      double acc = b[ii];
      for (std::size_t j = ii + 1; j <= jmax; ++j) acc -= at(ii, j) * b[j];
      b[ii] = acc / at(ii, ii);
    }
  }
};

}  // namespace

std::vector<double> explicit_step(const Grid& grid, const std::vector<double>& S,
                                  const CellDirectionalFlux& d, const SourceField& r, double dt) {
  check_shapes(grid, S, d, r, "explicit_step");
  const double vol = grid.cell_volume;
  double dt_ok = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < grid.n_cells; ++c) {
    double out = 0.0;
    for (int dir = 1; dir <= 4; ++dir) out += std::max(dir_array(d, dir)[c], 0.0);
    if (out > 0.0) dt_ok = std::min(dt_ok, vol / out);
  }
  if (dt > dt_ok * (1.0 + 1e-12))
    throw cfl_error("explicit_step: CFL violated, max admissible dt = " + std::to_string(dt_ok),
                    dt_ok);

  std::vector<double> next(grid.n_cells);
#pragma omp parallel for schedule(static)
  for (std::size_t c = 0; c < grid.n_cells; ++c) {
    double flux = 0.0;
    for (int dir = 1; dir <= 4; ++dir) {
      const double u = dir_array(d, dir)[c];
      std::size_t nbr;
      if (u > 0.0)
        flux += u * S[c];
      else if (u < 0.0 && neighbor(grid, c, dir, nbr))
        flux += u * S[nbr];
    }
    next[c] = S[c] - dt / vol * flux + dt * r.r[c];
  }
  return next;
}

double max_stable_dt(const Grid& grid, const CellDirectionalFlux& d) {
  double dt_ok = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < grid.n_cells; ++c) {
    double out = 0.0;
    for (int dir = 1; dir <= 4; ++dir) out += std::max(dir_array(d, dir)[c], 0.0);
    if (out > 0.0) dt_ok = std::min(dt_ok, grid.cell_volume / out);
  }
  return dt_ok;
}

std::vector<double> implicit_residual(const Grid& grid, const FluidModel& fluid,
                                      const std::vector<double>& S_trial,
                                      const std::vector<double>& S_n,
                                      const CellDirectionalFlux& d, const SourceField& r,
                                      double dt) {
  check_shapes(grid, S_trial, d, r, "implicit_residual");
  if (S_n.size() != grid.n_cells) throw inconsistency_error("implicit_residual: shape mismatch");
  const double vol = grid.cell_volume;
  std::vector<double> fw(grid.n_cells);
  for (std::size_t c = 0; c < grid.n_cells; ++c) fw[c] = fractional_flow(fluid, S_trial[c]);

  std::vector<double> R(grid.n_cells);
#pragma omp parallel for schedule(static)
  for (std::size_t c = 0; c < grid.n_cells; ++c) {
    double flux = 0.0;
    for (int dir = 1; dir <= 4; ++dir) {
      const double u = dir_array(d, dir)[c];
      std::size_t nbr;
      if (u > 0.0)
        flux += u * fw[c];
      else if (u < 0.0 && neighbor(grid, c, dir, nbr))
        flux += u * fw[nbr];
    }
    const double rm = std::min(0.0, r.r[c]);
    const double rp = std::max(0.0, r.r[c]);
    R[c] = S_trial[c] - S_n[c] + dt / vol * flux - dt * (fw[c] * rm + rp);
  }
  return R;
}

namespace {

// Emits every Jacobian entry of the implicit residual once, given the clamped
// f_w' values; shared by the Newton band assembly and implicit_jacobian so the
// two can never drift apart.
template <typename Emit>
void jacobian_entries(const Grid& grid, const std::vector<double>& dfw,
                      const CellDirectionalFlux& d, const SourceField& r, double dt, Emit emit) {
  const double vol = grid.cell_volume;
  for (std::size_t c = 0; c < grid.n_cells; ++c) {
    double diag = 1.0 - dt * dfw[c] * std::min(0.0, r.r[c]);
    for (int dir = 1; dir <= 4; ++dir) {
      const double u = dir_array(d, dir)[c];
      std::size_t nbr;
      if (u > 0.0)
        diag += dt / vol * u * dfw[c];
      else if (u < 0.0 && neighbor(grid, c, dir, nbr))
        emit(c, nbr, dt / vol * u * dfw[nbr]);
    }
    emit(c, c, diag);
  }
}

std::vector<double> clamped_fw_deriv(const FluidModel& fluid, const std::vector<double>& S) {
  std::vector<double> dfw(S.size());
  for (std::size_t c = 0; c < S.size(); ++c)
    dfw[c] = (S[c] < 0.0 || S[c] > 1.0) ? 0.0 : fractional_flow_deriv(fluid, S[c]);
  return dfw;
}

}  // namespace

SparseMatrix implicit_jacobian(const Grid& grid, const FluidModel& fluid,
                               const std::vector<double>& S_trial, const CellDirectionalFlux& d,
                               const SourceField& r, double dt) {
  check_shapes(grid, S_trial, d, r, "implicit_jacobian");
  const std::vector<double> dfw = clamped_fw_deriv(fluid, S_trial);
  SparseMatrix J;
  J.rows = J.cols = grid.n_cells;
  jacobian_entries(grid, dfw, d, r, dt,
                   [&](std::size_t i, std::size_t j, double v) { J.add(i, j, v); });
  J.build_csr();
  return J;
}

namespace {

NewtonResult newton_recurse(const Grid& grid, const FluidModel& fluid,
                            const std::vector<double>& S_n, const CellDirectionalFlux& d,
                            const SourceField& r, double dt, const NewtonConfig& cfg, int depth) {
  const std::size_t n = grid.n_cells;
  const double vol = grid.cell_volume;
  const std::size_t bw = grid.ny > 1 ? grid.nx : 1;

  NewtonResult res;
  res.S = S_n;
  std::vector<double> fw(n), dfw(n), R(n);
  BandLU lu;
  for (int iter = 1; iter <= cfg.max_iter; ++iter) {
    for (std::size_t c = 0; c < n; ++c) fw[c] = fractional_flow(fluid, res.S[c]);
    // Derivative of f_w(clamp(S)): zero where the clamp is active.
    dfw = clamped_fw_deriv(fluid, res.S);
    double rnorm = 0.0;
#pragma omp parallel for schedule(static) reduction(max : rnorm)
    for (std::size_t c = 0; c < n; ++c) {
      double flux = 0.0;
      for (int dir = 1; dir <= 4; ++dir) {
        const double u = dir_array(d, dir)[c];
        std::size_t nbr;
        if (u > 0.0)
          flux += u * fw[c];
        else if (u < 0.0 && neighbor(grid, c, dir, nbr))
          flux += u * fw[nbr];
      }
      const double rm = std::min(0.0, r.r[c]);
      const double rp = std::max(0.0, r.r[c]);
      R[c] = res.S[c] - S_n[c] + dt / vol * flux - dt * (fw[c] * rm + rp);
      rnorm = std::max(rnorm, std::fabs(R[c]));
    }
    res.iterations += 1;
    if (rnorm < cfg.tol) {
      for (std::size_t c = 0; c < n; ++c) {
        const double clamped = std::clamp(res.S[c], 0.0, 1.0);
        if (std::fabs(clamped - res.S[c]) > 1e-8)
          throw numeric_error("newton_implicit_step: converged state " +
                              std::to_string(res.S[c]) + " needs more than 1e-8 clamping");
        res.S[c] = clamped;
      }
      return res;
    }

    lu.init(n, bw);
    jacobian_entries(grid, dfw, d, r, dt,
                     [&](std::size_t i, std::size_t j, double v) { lu.at(i, j) += v; });
    lu.factor();
    for (std::size_t c = 0; c < n; ++c) R[c] = -R[c];
    lu.solve(R);
    for (std::size_t c = 0; c < n; ++c) res.S[c] = std::clamp(res.S[c] + R[c], -0.1, 1.1);
  }

  if (depth >= cfg.max_backoffs)
    throw numeric_error("newton_implicit_step: no convergence after " +
                        std::to_string(cfg.max_backoffs) + " dt backoffs");
  // Halve the step and compose two sub-steps.
  const double half = dt * cfg.dt_backoff_factor;
  NewtonResult first = newton_recurse(grid, fluid, S_n, d, r, half, cfg, depth + 1);
  NewtonResult second = newton_recurse(grid, fluid, first.S, d, r, dt - half, cfg, depth + 1);
  second.iterations += res.iterations + first.iterations;
  second.backoffs = std::max(first.backoffs, second.backoffs) + 1;
  return second;
}

}  // namespace

NewtonResult newton_implicit_step(const Grid& grid, const FluidModel& fluid,
                                  const std::vector<double>& S_n, const CellDirectionalFlux& d,
                                  const SourceField& r, double dt, const NewtonConfig& cfg) {
  check_shapes(grid, S_n, d, r, "newton_implicit_step");
  return newton_recurse(grid, fluid, S_n, d, r, dt, cfg, 0);
}

SinglePhaseRun run_single_phase(const Grid& grid, const PermField& kappa, const SourceField& f,
                                const std::vector<double>& S0, double dt, std::size_t n_steps) {
  SinglePhaseRun run;
  const Transmissibility T = assemble_transmissibility(grid, kappa.kappa);
  run.flow = solve_darcy(grid, T, f);
  run.dirs = edge_to_directional(grid, run.flow.u);
  run.states.reserve(n_steps);
  std::vector<double> S = S0;
  for (std::size_t n = 0; n < n_steps; ++n) {
    S = explicit_step(grid, S, run.dirs, f, dt);
    run.states.push_back(S);
  }
  return run;
}

TwoPhaseRun run_two_phase(const Grid& grid, const PermField& kappa, const FluidModel& fluid,
                          const RateSchedule& schedule, const std::vector<double>& S0, double dt,
                          std::size_t n_steps, const NewtonConfig& cfg) {
  TwoPhaseRun run;
  run.states.reserve(n_steps);
  run.fluxes.reserve(n_steps);
  run.rates.reserve(n_steps);
  std::vector<double> S = S0;
  std::vector<double> keff(grid.n_cells);
  for (std::size_t n = 1; n <= n_steps; ++n) {
    const double Q = schedule.rate_at(n);
    const SourceField f = two_well_source(grid, Q);
    const std::vector<double> lam = mobility(fluid, S);
    for (std::size_t c = 0; c < grid.n_cells; ++c) keff[c] = kappa.kappa[c] * lam[c];
    const Transmissibility T = assemble_transmissibility(grid, keff);
    const FlowSolution flow = solve_darcy(grid, T, f);
    const CellDirectionalFlux d = edge_to_directional(grid, flow.u);
    NewtonResult step = newton_implicit_step(grid, fluid, S, d, f, dt, cfg);
    S = std::move(step.S);
    run.max_newton_iters = std::max(run.max_newton_iters, step.iterations);
    run.states.push_back(S);
    run.fluxes.push_back(flow.u);
    run.rates.push_back(Q);
  }
  return run;
}

double water_cut(const FluidModel& fluid, const std::vector<double>& S,
                 std::size_t production_cell) {
  if (production_cell >= S.size())
    throw domain_error("water_cut: production cell " + std::to_string(production_cell) +
                       " out of range");
  return fractional_flow(fluid, S[production_cell]);
}

}  // namespace pml
