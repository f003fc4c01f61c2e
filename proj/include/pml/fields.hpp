#pragma once

// Permeability ingestion and synthesis, well/source generators, and the two-phase
// fluid model (relative permeability, mobility, fractional flow).

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "pml/grid.hpp"

namespace pml {

struct PermField {
  std::vector<double> kappa;  // per cell, > 0
  std::string provenance;     // "file:<path>" or "synthetic(seed,sigma,corr_len)"
};

// Per-cell rate density r (1/time). Wells carry the integrated rates r*|K| that
// generated the field; sum of r_i*|K_i| is zero (pure-Neumann compatibility).
struct SourceField {
  std::vector<double> r;
  std::vector<std::pair<std::size_t, double>> wells;  // (cell, integrated rate)
};

// Piecewise-constant injection schedule. rates[j] applies to steps n with
// breakpoints[j-1] <= n < breakpoints[j] (rates has one more entry than breakpoints).
struct RateSchedule {
  std::vector<std::size_t> breakpoints;  // strictly increasing, inside (1, n_steps)
  std::vector<double> rates;

  double rate_at(std::size_t step) const {
    std::size_t j = 0;
    while (j < breakpoints.size() && step >= breakpoints[j]) ++j;
    return rates[j];
  }
};

struct FluidModel {
  double mu_w = 1.0;
  double mu_o = 5.0;
  double a = 2.0;  // k_rw = S^a
  double b = 2.0;  // k_ro = (1-S)^b
};

PermField load_permeability(const std::string& path, const Grid& grid);
void write_permeability(const std::string& path, const Grid& grid, const PermField& perm);

// kappa = exp(G), G = moving-average smoothed white noise rescaled to sample
// standard deviation sigma. Deterministic in the seed; corr_len is in cells.
PermField generate_lognormal_permeability(const Grid& grid, std::uint64_t seed, double sigma,
                                          double corr_len);

// Four corner injectors with the given integrated rates, one producer at the center
// cell balancing them exactly. Requires nx, ny >= 3.
SourceField five_spot_source(const Grid& grid, const std::array<double, 4>& rates);
std::array<double, 4> sample_five_spot_rates(std::uint64_t seed, double lo, double hi);

// Injector (+Q) at the top-left cell (ny-1)*nx, producer (-Q) at the bottom-right
// cell nx-1; Q is an integrated rate.
SourceField two_well_source(const Grid& grid, double Q);

// n_breaks distinct breakpoints uniform in (1, n_steps), n_breaks+1 rates uniform
// in [lo, hi].
RateSchedule sample_rate_schedule(std::uint64_t seed, std::size_t n_steps, std::size_t n_breaks,
                                  double lo, double hi);

// Total mobility lambda(S) = S^a/mu_w + (1-S)^b/mu_o, elementwise.
std::vector<double> mobility(const FluidModel& fluid, const std::vector<double>& S);

double fractional_flow(const FluidModel& fluid, double S);
double fractional_flow_deriv(const FluidModel& fluid, double S);
void fractional_flow(const FluidModel& fluid, const std::vector<double>& S,
                     std::vector<double>& fw, std::vector<double>& dfw);

}  // namespace pml
