#pragma once

// Locally conservative Darcy solves on the edge-flux/cell-pressure pair: two-point
// transmissibilities (lumped lowest-order mixed elements), the pressure Schur
// complement L = B diag(T) B^T, and the velocity norms used by metrics and losses.

#include <vector>

#include "pml/fields.hpp"
#include "pml/grid.hpp"

namespace pml {

struct Transmissibility {
  std::vector<double> T;  // per interior edge, > 0
};

struct FlowSolution {
  EdgeFlux u;
  std::vector<double> p;  // zero mean
  double residual_mass = 0.0;  // max_i |(B u)_i - F_i|
};

struct MassResidual {
  std::vector<double> residual;  // (B u)_i - F_i per cell
  double mean_abs = 0.0;
  double max_abs = 0.0;
};

// Harmonic two-point coefficient per interior edge: T_e = |e| / (d1/k1 + d2/k2)
// with d the half cell width normal to the edge. kappa_eff is kappa (single-phase)
// or kappa*lambda(S) (two-phase).
Transmissibility assemble_transmissibility(const Grid& grid, const std::vector<double>& kappa_eff);

// Solves L p = F (F_i = r_i |K_i|) with the constant null space grounded at cell 0,
// then recovers u_e = T_e (p_donor - p_receiver) and shifts p to zero mean.
// Direct banded Cholesky plus iterative refinement up to n_cells <= 10^4, Jacobi
// preconditioned CG above (tolerance 1e-12 relative, at most 10 n_cells iterations).
FlowSolution solve_darcy(const Grid& grid, const Transmissibility& T, const SourceField& f);

// Signed divergence (B u)_i per cell.
std::vector<double> divergence(const Grid& grid, const EdgeFlux& u);

MassResidual local_mass_residual(const Grid& grid, const EdgeFlux& u, const SourceField& f);

// sqrt( sum_e (u_e/|e|)^2 w_e / kappa_e ), kappa_e the distance-weighted harmonic
// neighbor mean, w_e = (d1+d2)|e| the edge-centered volume.
double weighted_velocity_norm(const Grid& grid, const EdgeFlux& u, const std::vector<double>& kappa);

// Same quadrature with kappa = 1.
double velocity_norm(const Grid& grid, const EdgeFlux& u);

}  // namespace pml
