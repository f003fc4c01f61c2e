#pragma once

// Saturation dynamics: explicit upwind stepping under CFL, implicit Newton-Raphson
// two-phase stepping, and the sequentially coupled classical simulator that
// produces all reference trajectories.

#include <cstddef>
#include <vector>

#include "pml/errors.hpp"
#include "pml/fields.hpp"
#include "pml/flow.hpp"
#include "pml/grid.hpp"

namespace pml {

struct SatState {
  std::vector<double> S;
  double t = 0.0;
  std::size_t n = 0;
};

struct NewtonConfig {
  double tol = 1e-10;
  int max_iter = 20;
  double dt_backoff_factor = 0.5;
  int max_backoffs = 8;
};

// CFL violation; carries the largest admissible step for the offending flux field.
struct cfl_error : domain_error {
  double max_dt;
  cfl_error(const std::string& msg, double dt_ok) : domain_error(msg), max_dt(dt_ok) {}
};

// Conservative upwind update
//   S_i' = S_i - (dt/|K_i|) sum_f F_if + dt r_i,
//   F_if = max(u_if,0) S_i + min(u_if,0) S_nbr.
// Requires dt * outflow_i / |K_i| <= 1 per cell.
std::vector<double> explicit_step(const Grid& grid, const std::vector<double>& S,
                                  const CellDirectionalFlux& d, const SourceField& r, double dt);

// min_i |K_i| / (sum of outward fluxes of i); +inf when every outflow is zero.
double max_stable_dt(const Grid& grid, const CellDirectionalFlux& d);

// Implicit two-phase residual
//   R_i = St_i - Sn_i - (dt/|K_i|)[ -sum_f F_if(St) + f_w(St_i) r_i^- |K_i| + r_i^+ |K_i| ],
//   F_if = max(u_if,0) f_w(St_i) + min(u_if,0) f_w(St_nbr),
// with f_w arguments clamped to [0,1]; trial iterates may sit in [-0.1, 1.1].
std::vector<double> implicit_residual(const Grid& grid, const FluidModel& fluid,
                                      const std::vector<double>& S_trial,
                                      const std::vector<double>& S_n,
                                      const CellDirectionalFlux& d, const SourceField& r,
                                      double dt);

// Analytic Jacobian of implicit_residual in S_trial: the pentadiagonal matrix
// (diagonal plus upwind-neighbor entries through f_w') that the Newton step
// factors.
SparseMatrix implicit_jacobian(const Grid& grid, const FluidModel& fluid,
                               const std::vector<double>& S_trial, const CellDirectionalFlux& d,
                               const SourceField& r, double dt);

struct NewtonResult {
  std::vector<double> S;
  int iterations = 0;  // residual evaluations across all sub-steps
  int backoffs = 0;    // deepest dt halving used
};

// Newton with the analytic pentadiagonal Jacobian (banded LU, no pivoting: the
// Jacobian is column diagonally dominant). On non-convergence the step is halved
// and composed, up to cfg.max_backoffs levels.
NewtonResult newton_implicit_step(const Grid& grid, const FluidModel& fluid,
                                  const std::vector<double>& S_n, const CellDirectionalFlux& d,
                                  const SourceField& r, double dt, const NewtonConfig& cfg);

struct SinglePhaseRun {
  std::vector<std::vector<double>> states;  // S^1 .. S^{n_steps}
  FlowSolution flow;                        // the single steady Darcy solve
  CellDirectionalFlux dirs;
};

// One Darcy solve on kappa, then n_steps explicit transport steps with source f.
SinglePhaseRun run_single_phase(const Grid& grid, const PermField& kappa, const SourceField& f,
                                const std::vector<double>& S0, double dt, std::size_t n_steps);

struct TwoPhaseRun {
  std::vector<std::vector<double>> states;  // S^1 .. S^{n_steps}
  std::vector<EdgeFlux> fluxes;             // u^1 .. u^{n_steps} (u^n advances into S^n)
  std::vector<double> rates;                // integrated injection rate per step
  int max_newton_iters = 0;
};

// Sequential coupling: per step, lambda(S) -> assemble kappa*lambda -> Darcy ->
// implicit Newton transport. The schedule's rate at step n is the integrated
// injection rate of the two-well source advancing S^{n-1} to S^n.
TwoPhaseRun run_two_phase(const Grid& grid, const PermField& kappa, const FluidModel& fluid,
                          const RateSchedule& schedule, const std::vector<double>& S0, double dt,
                          std::size_t n_steps, const NewtonConfig& cfg = {});

double water_cut(const FluidModel& fluid, const std::vector<double>& S, std::size_t production_cell);

}  // namespace pml
