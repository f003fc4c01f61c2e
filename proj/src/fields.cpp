#include "pml/fields.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "pml/errors.hpp"
#include "pml/rng.hpp"

namespace pml {

namespace {

constexpr char kPermMagic[8] = {'P', 'M', 'L', 'K', 'A', 'P', '0', '1'};

void validate_positive(const std::vector<double>& kappa, const std::string& origin) {
  for (std::size_t i = 0; i < kappa.size(); ++i)
    if (!(kappa[i] > 0.0) || !std::isfinite(kappa[i]))
      throw domain_error("permeability from " + origin + ": entry " + std::to_string(i) +
                         " = " + std::to_string(kappa[i]) + " is not positive and finite");
}

void validate_saturation(const std::vector<double>& S) {
  for (std::size_t i = 0; i < S.size(); ++i)
    if (!(S[i] >= -1e-10 && S[i] <= 1.0 + 1e-10))
      throw domain_error("saturation out of [0,1]: S[" + std::to_string(i) + "] = " +
                         std::to_string(S[i]));
}

}  // namespace

PermField load_permeability(const std::string& path, const Grid& grid) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open permeability file " + path);
  char head[8] = {};
  in.read(head, 8);
  PermField perm;
  perm.provenance = "file:" + path;
  if (in.gcount() == 8 && std::memcmp(head, kPermMagic, 8) == 0) {
    std::uint32_t nx = 0, ny = 0;
    in.read(reinterpret_cast<char*>(&nx), 4);
    in.read(reinterpret_cast<char*>(&ny), 4);
    if (!in || nx != grid.nx || ny != grid.ny)
      throw io_error("permeability file " + path + " is " + std::to_string(nx) + "x" +
                     std::to_string(ny) + ", expected " + std::to_string(grid.nx) + "x" +
                     std::to_string(grid.ny));
    perm.kappa.resize(grid.n_cells);
    in.read(reinterpret_cast<char*>(perm.kappa.data()),
            static_cast<std::streamsize>(grid.n_cells * sizeof(double)));
    if (static_cast<std::size_t>(in.gcount()) != grid.n_cells * sizeof(double))
      throw io_error("permeability file " + path + " truncated");
  } else {
    in.clear();
    in.seekg(0);
    std::string line;
    while (std::getline(in, line)) {
      std::size_t pos = line.find_first_not_of(" \t\r");
      if (pos == std::string::npos || line[pos] == '#') continue;
      std::istringstream ls(line);
      double v;
      if (!(ls >> v)) throw io_error("permeability file " + path + ": cannot parse '" + line + "'");
      perm.kappa.push_back(v);
    }
    if (perm.kappa.size() != grid.n_cells)
      throw io_error("permeability file " + path + " has " + std::to_string(perm.kappa.size()) +
                     " entries, expected " + std::to_string(grid.n_cells));
  }
  validate_positive(perm.kappa, path);
  return perm;
}

void write_permeability(const std::string& path, const Grid& grid, const PermField& perm) {
  if (perm.kappa.size() != grid.n_cells)
    throw inconsistency_error("write_permeability: field size mismatch");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw io_error("cannot write permeability file " + path);
  out.write(kPermMagic, 8);
  const std::uint32_t nx = static_cast<std::uint32_t>(grid.nx);
  const std::uint32_t ny = static_cast<std::uint32_t>(grid.ny);
  out.write(reinterpret_cast<const char*>(&nx), 4);
  out.write(reinterpret_cast<const char*>(&ny), 4);
  out.write(reinterpret_cast<const char*>(perm.kappa.data()),
            static_cast<std::streamsize>(perm.kappa.size() * sizeof(double)));
  if (!out) throw io_error("write failed on " + path);
}

PermField generate_lognormal_permeability(const Grid& grid, std::uint64_t seed, double sigma,
                                          double corr_len) {
  if (!(sigma >= 0.0)) throw config_error("generate_lognormal_permeability: sigma must be >= 0");
  PermField perm;
  perm.provenance = "synthetic(" + std::to_string(seed) + "," + std::to_string(sigma) + "," +
                    std::to_string(corr_len) + ")";
  perm.kappa.assign(grid.n_cells, 1.0);
  if (sigma == 0.0 || grid.n_cells < 2) return perm;

  std::mt19937_64 gen(seed);
  std::vector<double> g(grid.n_cells);
  for (double& v : g) v = rng::normal(gen);

  if (corr_len > 0.0) {
    // Separable truncated-Gaussian moving average; weights renormalized at the
    // domain boundary (no wrap-around).
    const std::ptrdiff_t radius = static_cast<std::ptrdiff_t>(std::ceil(3.0 * corr_len));
    std::vector<double> w(static_cast<std::size_t>(radius) + 1);
    for (std::ptrdiff_t j = 0; j <= radius; ++j)
      w[static_cast<std::size_t>(j)] =
          std::exp(-0.5 * (static_cast<double>(j) / corr_len) * (static_cast<double>(j) / corr_len));
    const std::ptrdiff_t nx = static_cast<std::ptrdiff_t>(grid.nx);
    const std::ptrdiff_t ny = static_cast<std::ptrdiff_t>(grid.ny);
    std::vector<double> tmp(grid.n_cells);
    for (std::ptrdiff_t k = 0; k < ny; ++k)
      for (std::ptrdiff_t h = 0; h < nx; ++h) {
        double acc = 0.0, wsum = 0.0;
        for (std::ptrdiff_t j = -radius; j <= radius; ++j) {
          const std::ptrdiff_t hh = h + j;
          if (hh < 0 || hh >= nx) continue;
          const double wj = w[static_cast<std::size_t>(j < 0 ? -j : j)];
          acc += wj * g[static_cast<std::size_t>(k * nx + hh)];
          wsum += wj;
        }
        tmp[static_cast<std::size_t>(k * nx + h)] = acc / wsum;
      }
    for (std::ptrdiff_t k = 0; k < ny; ++k)
      for (std::ptrdiff_t h = 0; h < nx; ++h) {
        double acc = 0.0, wsum = 0.0;
        for (std::ptrdiff_t j = -radius; j <= radius; ++j) {
          const std::ptrdiff_t kk = k + j;
          if (kk < 0 || kk >= ny) continue;
          const double wj = w[static_cast<std::size_t>(j < 0 ? -j : j)];
          acc += wj * tmp[static_cast<std::size_t>(kk * nx + h)];
          wsum += wj;
        }
        g[static_cast<std::size_t>(k * nx + h)] = acc / wsum;
      }
  }

  // Rescale to sample mean 0, sample standard deviation sigma.
  double mean = 0.0;
  for (double v : g) mean += v;
  mean /= static_cast<double>(g.size());
  double var = 0.0;
  for (double v : g) var += (v - mean) * (v - mean);
  var /= static_cast<double>(g.size());
  const double scale = var > 0.0 ? sigma / std::sqrt(var) : 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) perm.kappa[i] = std::exp((g[i] - mean) * scale);
  return perm;
}

SourceField five_spot_source(const Grid& grid, const std::array<double, 4>& rates) {
  if (grid.nx < 3 || grid.ny < 3)
    throw config_error("five_spot_source: grid must be at least 3x3 for distinct wells");
  for (double q : rates)
    if (!(q > 0.0)) throw config_error("five_spot_source: injection rates must be > 0");
  SourceField f;
  f.r.assign(grid.n_cells, 0.0);
  const std::size_t corners[4] = {grid.cell_id(0, 0), grid.cell_id(0, grid.nx - 1),
                                  grid.cell_id(grid.ny - 1, 0),
                                  grid.cell_id(grid.ny - 1, grid.nx - 1)};
  double total = 0.0;
  for (int i = 0; i < 4; ++i) {
    f.r[corners[i]] = rates[static_cast<std::size_t>(i)] / grid.cell_volume;
    f.wells.emplace_back(corners[i], rates[static_cast<std::size_t>(i)]);
    total += rates[static_cast<std::size_t>(i)];
  }
  const std::size_t center = grid.cell_id(grid.ny / 2, grid.nx / 2);
  f.r[center] = -total / grid.cell_volume;
  f.wells.emplace_back(center, -total);
  return f;
}

std::array<double, 4> sample_five_spot_rates(std::uint64_t seed, double lo, double hi) {
  std::mt19937_64 gen(seed);
  std::array<double, 4> rates;
  for (double& q : rates) q = rng::uniform(gen, lo, hi);
  return rates;
}

SourceField two_well_source(const Grid& grid, double Q) {
  if (!(Q >= 0.0)) throw config_error("two_well_source: Q must be >= 0");
  SourceField f;
  f.r.assign(grid.n_cells, 0.0);
  const std::size_t inj = grid.cell_id(grid.ny - 1, 0);
  const std::size_t prod = grid.cell_id(0, grid.nx - 1);
  f.r[inj] += Q / grid.cell_volume;
  f.r[prod] -= Q / grid.cell_volume;
  f.wells.emplace_back(inj, Q);
  f.wells.emplace_back(prod, -Q);
  return f;
}

RateSchedule sample_rate_schedule(std::uint64_t seed, std::size_t n_steps, std::size_t n_breaks,
                                  double lo, double hi) {
  if (n_breaks >= n_steps)
    throw config_error("sample_rate_schedule: n_breaks must be < n_steps");
  if (n_steps >= 2 && n_breaks > n_steps - 2)
    throw config_error("sample_rate_schedule: not enough interior steps for distinct breakpoints");
  std::mt19937_64 gen(seed);
  RateSchedule sched;
  // Breakpoints are distinct integers in (1, n_steps), sampled by rejection.
  while (sched.breakpoints.size() < n_breaks) {
    const std::size_t b = 2 + static_cast<std::size_t>(rng::uniform_below(gen, n_steps - 2));
    if (std::find(sched.breakpoints.begin(), sched.breakpoints.end(), b) ==
        sched.breakpoints.end())
      sched.breakpoints.push_back(b);
  }
  std::sort(sched.breakpoints.begin(), sched.breakpoints.end());
  sched.rates.resize(n_breaks + 1);
  for (double& v : sched.rates) v = rng::uniform(gen, lo, hi);
  return sched;
}

namespace {

// Corey exponents are small integers in practice; keep std::pow as the
// general path but avoid it for the common cases (it dominates the per-step
// cost of mobility and fractional flow otherwise).
inline double corey_pow(double x, double e) {
  if (e == 2.0) return x * x;
  if (e == 1.0) return x;
  if (e == 3.0) return x * x * x;
  if (e == 4.0) {
    const double q = x * x;
    return q * q;
  }
  return std::pow(x, e);
}

}  // namespace

std::vector<double> mobility(const FluidModel& fluid, const std::vector<double>& S) {
  validate_saturation(S);
  std::vector<double> lam(S.size());
  for (std::size_t i = 0; i < S.size(); ++i) {
    const double s = std::clamp(S[i], 0.0, 1.0);
    lam[i] = corey_pow(s, fluid.a) / fluid.mu_w + corey_pow(1.0 - s, fluid.b) / fluid.mu_o;
  }
  return lam;
}

double fractional_flow(const FluidModel& fluid, double S) {
  const double s = std::clamp(S, 0.0, 1.0);
  const double w = corey_pow(s, fluid.a) / fluid.mu_w;
  const double o = corey_pow(1.0 - s, fluid.b) / fluid.mu_o;
  return w / (w + o);
}

double fractional_flow_deriv(const FluidModel& fluid, double S) {
  const double s = std::clamp(S, 0.0, 1.0);
  const double w = corey_pow(s, fluid.a) / fluid.mu_w;
  const double o = corey_pow(1.0 - s, fluid.b) / fluid.mu_o;
  const double dw = fluid.a * corey_pow(s, fluid.a - 1.0) / fluid.mu_w;
  const double dom = -fluid.b * corey_pow(1.0 - s, fluid.b - 1.0) / fluid.mu_o;
  const double tot = w + o;
  return (dw * o - w * dom) / (tot * tot);
}

void fractional_flow(const FluidModel& fluid, const std::vector<double>& S,
                     std::vector<double>& fw, std::vector<double>& dfw) {
  validate_saturation(S);
  fw.resize(S.size());
  dfw.resize(S.size());
  for (std::size_t i = 0; i < S.size(); ++i) {
    fw[i] = fractional_flow(fluid, S[i]);
    dfw[i] = fractional_flow_deriv(fluid, S[i]);
  }
}

}  // namespace pml
