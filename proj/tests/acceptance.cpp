// Acceptance gate: ten end-to-end criteria, one pass/fail line each, exit code
// equal to the number of failures. Arguments select criteria by number; no
// arguments runs all ten.
//
// The trained-network criteria (5..9) take the bulk of the runtime. Setting
// PML_ACCEPT_CACHE=<dir> stores every trained model there and reuses it on the
// next run; the sidecar .seconds file keeps the original wall time so cached
// reruns still report the honest training cost. PML_ACCEPT_OUT picks the
// directory for emitted artifacts (water-cut curves), default
// "acceptance_artifacts".

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "pml/cli.hpp"
#include "pml/errors.hpp"
#include "pml/fields.hpp"
#include "pml/flow.hpp"
#include "pml/grid.hpp"
#include "pml/nn.hpp"
#include "pml/rng.hpp"
#include "pml/surrogate.hpp"
#include "pml/transport.hpp"

using namespace pml;

namespace {

double now_s() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

std::string fmt(const char* f, ...) {
  char buf[768];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

std::string cache_dir() {
  const char* e = std::getenv("PML_ACCEPT_CACHE");
  return e ? e : "";
}

std::string artifact_dir() {
  const char* e = std::getenv("PML_ACCEPT_OUT");
  return e ? e : "acceptance_artifacts";
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f.good()) throw io_error("acceptance: cannot open " + path);
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

// Swallows std::cout while a CLI entry point runs inside a criterion.
struct Quiet {
  std::ostringstream sink;
  std::streambuf* old;
  Quiet() : old(std::cout.rdbuf(sink.rdbuf())) {}
  ~Quiet() { std::cout.rdbuf(old); }
};

// ---------------------------------------------------------------- training

struct Trained {
  std::unique_ptr<nn::Network> net;
  double seconds = 0.0;
};

std::map<std::string, std::shared_ptr<Trained>>& model_pool() {
  static std::map<std::string, std::shared_ptr<Trained>> pool;
  return pool;
}

bool model_available(const std::string& tag) {
  if (model_pool().count(tag)) return true;
  const std::string dir = cache_dir();
  if (dir.empty()) return false;
  std::ifstream f(dir + "/" + tag + ".pmlnet", std::ios::binary);
  return f.good();
}

// Returns the model for tag, training it only when neither the in-process pool
// nor the on-disk cache has it. The builder is invoked on a miss only.
std::shared_ptr<Trained> train_cached(const std::string& tag,
                                      const std::function<std::unique_ptr<nn::Network>()>& build,
                                      const std::vector<double>& X, const std::vector<double>& Y,
                                      std::size_t n, const surrogate::TrainConfig& tc,
                                      const SparseMatrix* B) {
  auto& pool = model_pool();
  if (auto it = pool.find(tag); it != pool.end()) return it->second;

  auto t = std::make_shared<Trained>();
  const std::string dir = cache_dir();
  const std::string path = dir.empty() ? "" : dir + "/" + tag + ".pmlnet";
  if (!path.empty() && std::ifstream(path, std::ios::binary).good()) {
    t->net = nn::load_model(path).net;
    std::ifstream sec(dir + "/" + tag + ".seconds");
    sec >> t->seconds;
  } else {
    t->net = build();
    const double t0 = now_s();
    surrogate::train(*t->net, X, Y, n, tc, B);
    t->seconds = now_s() - t0;
    if (!path.empty()) {
      std::filesystem::create_directories(dir);
      nn::save_model(*t->net, path);
      std::ofstream sec(dir + "/" + tag + ".seconds");
      sec << t->seconds << "\n";
    }
  }
  pool[tag] = t;
  return t;
}

// ------------------------------------------------------------ shared fixtures

const Grid& grid50() {
  static const Grid g = build_grid(50, 50, 1.0, 1.0);
  return g;
}

const PermField& perm50() {
  static const PermField p = generate_lognormal_permeability(grid50(), 7, 1.0, 4.0);
  return p;
}

const SparseMatrix& div50() {
  static const SparseMatrix B = build_divergence(grid50());
  return B;
}

// Single-phase reference trajectory shared by criteria 4 and 7: one Darcy solve
// on the seed-7 field, then 1200 explicit steps at dt = 1 from the dry state.
struct SingleRef {
  SourceField f;
  SinglePhaseRun run;
  double dt = 1.0;
};

const SingleRef& single_ref() {
  static const SingleRef ctx = [] {
    SingleRef c;
    std::array<double, 4> rates = sample_five_spot_rates(cli::mix_seed(1, 0), 0.5, 1.5);
    for (double& q : rates) q *= 2e-4;
    c.f = five_spot_source(grid50(), rates);
    c.run = run_single_phase(grid50(), perm50(), c.f, std::vector<double>(grid50().n_cells, 0.0),
                             c.dt, 1200);
    return c;
  }();
  return ctx;
}

// Five-spot flow dataset shared by criteria 5 and 6: fixed permeability, rates
// resampled per record, leading 1000 rows train and trailing 250 test.
struct FlowData {
  std::vector<double> X, Y;
  std::size_t n = 1250, n_test = 250;
  std::size_t n_train() const { return n - n_test; }
};

const FlowData& flow_data() {
  static const FlowData d = [] {
    FlowData fd;
    const Grid& g = grid50();
    const Transmissibility T = assemble_transmissibility(g, perm50().kappa);
    fd.X.resize(fd.n * g.n_cells);
    fd.Y.resize(fd.n * g.n_edges);
    for (std::size_t i = 0; i < fd.n; ++i) {
      std::array<double, 4> rates = sample_five_spot_rates(cli::mix_seed(1, i), 0.5, 1.5);
      for (double& q : rates) q *= 2e-4;
      const SourceField f = five_spot_source(g, rates);
      const FlowSolution sol = solve_darcy(g, T, f);
      std::copy(f.r.begin(), f.r.end(), fd.X.begin() + i * g.n_cells);
      std::copy(sol.u.values.begin(), sol.u.values.end(), fd.Y.begin() + i * g.n_edges);
    }
    return fd;
  }();
  return d;
}

surrogate::TrainConfig flow_train_config(std::uint64_t seed, surrogate::LossKind loss) {
  surrogate::TrainConfig tc;
  tc.lr = 0.008;
  tc.batch_size = 100;
  tc.epochs = 250;
  tc.seed = seed;
  tc.val_fraction = 0.2;
  tc.loss = loss;
  tc.beta_mode = surrogate::BetaMode::fixed;
  tc.beta_factor = 1e-3;
  return tc;
}

double test_rel_l2(nn::Network& net, const FlowData& fd) {
  const Grid& g = grid50();
  const std::size_t off = fd.n_train();
  const double* yp = net.forward(fd.X.data() + off * g.n_cells, fd.n_test, false);
  return surrogate::rel_l2_percent(yp, fd.Y.data() + off * g.n_edges, fd.n_test, g.n_edges);
}

double test_mass_mean(nn::Network& net, const FlowData& fd) {
  const Grid& g = grid50();
  const std::size_t off = fd.n_train();
  const double* yp = net.forward(fd.X.data() + off * g.n_cells, fd.n_test, false);
  return surrogate::local_mass_mean(div50(), yp, fd.Y.data() + off * g.n_edges, fd.n_test);
}

// Two-phase fixtures shared by criteria 8 and 9: five training schedules
// (streams 0..4), the held-out schedule (stream 5), its reference run, and the
// trained coupled surrogate.
struct TwoPhaseCtx {
  FluidModel fluid;  // defaults: mu_w 1, mu_o 5, quadratic Corey
  double dt = 0.2;
  std::size_t n_steps = 1000;
  RateSchedule heldout;
  TwoPhaseRun ref;
  std::shared_ptr<Trained> flow, sat;
  nn::SatTwoPhaseNet* sat_net = nullptr;
};

RateSchedule two_phase_schedule(std::size_t stream, std::size_t n_steps) {
  RateSchedule s =
      sample_rate_schedule(cli::mix_seed(1, cli::kHoldoutStream + stream), n_steps, 4, 1.0, 5.0);
  for (double& r : s.rates) r *= 1e-3;
  return s;
}

const TwoPhaseCtx& two_phase_ctx() {
  static const TwoPhaseCtx ctx = [] {
    TwoPhaseCtx c;
    const Grid& g = grid50();
    const std::size_t n_sched = 5;
    const std::vector<double> S0(g.n_cells, 0.0);
    c.heldout = two_phase_schedule(n_sched, c.n_steps);
    c.ref = run_two_phase(g, perm50(), c.fluid, c.heldout, S0, c.dt, c.n_steps);

    // Training data: simulate the five training schedules and lay the records
    // out exactly as the CLI generator does (flow input interleaves mobility
    // and source per cell; saturation input concatenates S, the four
    // directional fluxes, and the source).
    std::vector<double> fX, fY, sX, sY;
    const std::size_t n = n_sched * c.n_steps;
    const bool need_data = !(model_available("c8_flow") && model_available("c8_sat"));
    if (need_data) {
      fX.resize(n * 2 * g.n_cells);
      fY.resize(n * g.n_edges);
      sX.resize(n * 6 * g.n_cells);
      sY.resize(n * g.n_cells);
      for (std::size_t sch = 0; sch < n_sched; ++sch) {
        const RateSchedule schedule = two_phase_schedule(sch, c.n_steps);
        const TwoPhaseRun run = run_two_phase(g, perm50(), c.fluid, schedule, S0, c.dt, c.n_steps);
        for (std::size_t step = 1; step <= c.n_steps; ++step) {
          const std::size_t i = sch * c.n_steps + (step - 1);
          const std::vector<double>& Sprev = step == 1 ? S0 : run.states[step - 2];
          const SourceField src = two_well_source(g, run.rates[step - 1]);
          const std::vector<double> lambda = mobility(c.fluid, Sprev);
          const CellDirectionalFlux dirs = edge_to_directional(g, run.fluxes[step - 1]);
          double* fx = fX.data() + i * 2 * g.n_cells;
          for (std::size_t cell = 0; cell < g.n_cells; ++cell) {
            fx[2 * cell] = lambda[cell];
            fx[2 * cell + 1] = src.r[cell];
          }
          std::copy(run.fluxes[step - 1].values.begin(), run.fluxes[step - 1].values.end(),
                    fY.begin() + i * g.n_edges);
          double* sx = sX.data() + i * 6 * g.n_cells;
          std::copy(Sprev.begin(), Sprev.end(), sx);
          std::copy(dirs.u1.begin(), dirs.u1.end(), sx + g.n_cells);
          std::copy(dirs.u2.begin(), dirs.u2.end(), sx + 2 * g.n_cells);
          std::copy(dirs.u3.begin(), dirs.u3.end(), sx + 3 * g.n_cells);
          std::copy(dirs.u4.begin(), dirs.u4.end(), sx + 4 * g.n_cells);
          std::copy(src.r.begin(), src.r.end(), sx + 5 * g.n_cells);
          std::copy(run.states[step - 1].begin(), run.states[step - 1].end(),
                    sY.begin() + i * g.n_cells);
        }
      }
    }

    surrogate::FlowNetConfig fc;  // defaults give the 50x50 production geometry
    fc.channels = 2;
    fc.n_pre_conv = 2;
    surrogate::TrainConfig ftc = flow_train_config(1, surrogate::LossKind::constrained);
    ftc.epochs = 150;  // 5x the single-phase sample count; fewer passes suffice
    c.flow = train_cached(
        "c8_flow", [&] { return surrogate::build_flow_net_two_phase(fc, 1); }, fX, fY, n, ftc,
        &div50());
    fX.clear();
    fX.shrink_to_fit();
    fY.clear();
    fY.shrink_to_fit();

    surrogate::SatNetConfig sc;
    sc.n_cells = g.n_cells;
    sc.hidden = 64;  // bottleneck correction; the sparse velocity sum carries the physics
    surrogate::TrainConfig stc;
    stc.lr = 0.008;
    stc.batch_size = 100;
    stc.epochs = 100;
    stc.seed = 1;
    stc.val_fraction = 0.2;
    stc.loss = surrogate::LossKind::mse;
    c.sat = train_cached(
        "c8_sat", [&] { return surrogate::build_sat_net_two_phase(sc, g, c.dt, 1); }, sX, sY, n,
        stc, nullptr);
    c.sat_net = dynamic_cast<nn::SatTwoPhaseNet*>(c.sat->net.get());
    if (!c.sat_net) throw inconsistency_error("acceptance: cached c8_sat is not a two-phase net");
    return c;
  }();
  return ctx;
}

struct CritResult {
  bool pass = false;
  std::string detail;
};

// --------------------------------------------------------------- criterion 1
// Conservation: 20 random log-normal fields on 50x50, local mass residual of
// every Darcy solve below 1e-10 * max |F|, each solve under a second.

CritResult criterion_1() {
  const Grid& g = grid50();
  double worst_ratio = 0.0, worst_time = 0.0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const PermField perm = generate_lognormal_permeability(g, seed, 1.0, 4.0);
    std::array<double, 4> rates = sample_five_spot_rates(seed, 0.5, 1.5);
    for (double& q : rates) q *= 2e-4;
    const SourceField f = five_spot_source(g, rates);
    const Transmissibility T = assemble_transmissibility(g, perm.kappa);
    const double t0 = now_s();
    const FlowSolution sol = solve_darcy(g, T, f);
    worst_time = std::max(worst_time, now_s() - t0);
    double max_F = 0.0;
    for (double r : f.r) max_F = std::max(max_F, std::fabs(r * g.cell_volume));
    const MassResidual mr = local_mass_residual(g, sol.u, f);
    worst_ratio = std::max(worst_ratio, mr.max_abs / (1e-10 * max_F));
  }
  const bool pass = worst_ratio < 1.0 && worst_time < 1.0;
  return {pass, fmt("worst residual at %.3g of the 1e-10*max|F| bound, slowest solve %.3g s",
                    worst_ratio, worst_time)};
}

// --------------------------------------------------------------- criterion 2
// Explicit CFL steps preserve [0,1] and per-step mass to 1e-13 over 1000
// randomized divergence-free cases; the default two-phase run converges in at
// most 20 Newton iterations per step; the implicit Jacobian matches central
// differences to 1e-6.

EdgeFlux random_solenoidal_flux(const Grid& g, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  EdgeFlux u;
  u.values.assign(g.n_edges, 0.0);
  for (std::size_t vy = 1; vy < g.ny; ++vy)
    for (std::size_t vx = 1; vx < g.nx; ++vx) {
      const double psi = rng::normal(gen);
      u.values[g.vertical_edge(vy - 1, vx - 1)] += psi;
      u.values[g.horizontal_edge(vy - 1, vx)] += psi;
      u.values[g.vertical_edge(vy, vx - 1)] -= psi;
      u.values[g.horizontal_edge(vy - 1, vx - 1)] -= psi;
    }
  return u;
}

CritResult criterion_2() {
  // Part a: explicit property cases. Divergence-free flux with no source is
  // the setting where the maximum principle is a theorem; mass telescopes.
  double worst_bound = 0.0, worst_mass = 0.0;
  std::mt19937_64 gen(2024);
  for (int c = 0; c < 1000; ++c) {
    const std::size_t nx = 3 + static_cast<std::size_t>(rng::uniform01(gen) * 10);
    const std::size_t ny = 3 + static_cast<std::size_t>(rng::uniform01(gen) * 10);
    const Grid g = build_grid(nx, ny, 1.0, 1.0);
    const EdgeFlux u = random_solenoidal_flux(g, 1000 + static_cast<std::uint64_t>(c));
    const CellDirectionalFlux d = edge_to_directional(g, u);
    SourceField zero;
    zero.r.assign(g.n_cells, 0.0);
    std::vector<double> S(g.n_cells);
    for (double& s : S) s = rng::uniform01(gen);
    const double dt_max = max_stable_dt(g, d);
    const double dt = (std::isfinite(dt_max) ? dt_max : 1.0) * 0.95 * rng::uniform01(gen);
    const std::vector<double> next = explicit_step(g, S, d, zero, dt);
    double m0 = 0.0, m1 = 0.0;
    for (std::size_t i = 0; i < g.n_cells; ++i) {
      m0 += g.cell_volume * S[i];
      m1 += g.cell_volume * next[i];
      worst_bound = std::max(worst_bound, std::max(-next[i], next[i] - 1.0));
    }
    worst_mass = std::max(worst_mass, std::fabs(m1 - m0) / std::max(1.0, std::fabs(m0)));
  }
  const bool pass_a = worst_bound <= 1e-12 && worst_mass <= 1e-13;

  // Part b: the default two-phase run, 1000 implicit steps at dt 0.2. Every
  // Newton solve must converge within the 20-iteration budget at tol 1e-10;
  // the dry-start step may compose halved sub-steps (each again <= 20), which
  // is the solver's documented response to the initial rate shock.
  const Grid& g50 = grid50();
  const FluidModel fluid;
  const RateSchedule sched = two_phase_schedule(0, 1000);
  std::vector<double> S(g50.n_cells, 0.0);
  int max_plain_iters = 0, backoff_steps = 0;
  for (std::size_t step = 1; step <= 1000; ++step) {
    const SourceField src = two_well_source(g50, sched.rate_at(step));
    const std::vector<double> lambda = mobility(fluid, S);
    std::vector<double> keff(g50.n_cells);
    for (std::size_t i = 0; i < g50.n_cells; ++i) keff[i] = perm50().kappa[i] * lambda[i];
    const FlowSolution sol = solve_darcy(g50, assemble_transmissibility(g50, keff), src);
    const NewtonResult nr =
        newton_implicit_step(g50, fluid, S, edge_to_directional(g50, sol.u), src, 0.2, {});
    if (nr.backoffs > 0)
      ++backoff_steps;
    else
      max_plain_iters = std::max(max_plain_iters, nr.iterations);
    S = nr.S;
  }
  const bool pass_b = max_plain_iters <= 20 && backoff_steps <= 1;

  // Part c: analytic Jacobian against central differences, 20 trial states.
  const Grid g = build_grid(10, 8, 1.0, 1.0);
  const PermField perm = generate_lognormal_permeability(g, 3, 0.8, 2.0);
  const SourceField src = two_well_source(g, 1.5e-3);
  const Transmissibility T = assemble_transmissibility(g, perm.kappa);
  const FlowSolution sol = solve_darcy(g, T, src);
  const CellDirectionalFlux d = edge_to_directional(g, sol.u);
  const double dt = 0.15, h = 1e-7;
  double worst_jac = 0.0;
  std::mt19937_64 jgen(77);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> Sn(g.n_cells), St(g.n_cells);
    for (double& s : Sn) s = rng::uniform01(jgen);
    for (double& s : St) s = 0.02 + 0.96 * rng::uniform01(jgen);
    SparseMatrix J = implicit_jacobian(g, fluid, St, d, src, dt);
    std::vector<double> dense(g.n_cells * g.n_cells, 0.0);
    for (std::size_t k = 0; k < J.nnz(); ++k)
      dense[J.row_idx[k] * g.n_cells + J.col_idx[k]] += J.values[k];
    double scale = 0.0;
    std::vector<double> fd(g.n_cells * g.n_cells, 0.0);
    for (std::size_t j = 0; j < g.n_cells; ++j) {
      std::vector<double> Sp = St, Sm = St;
      Sp[j] += h;
      Sm[j] -= h;
      const std::vector<double> Rp = implicit_residual(g, fluid, Sp, Sn, d, src, dt);
      const std::vector<double> Rm = implicit_residual(g, fluid, Sm, Sn, d, src, dt);
      for (std::size_t i = 0; i < g.n_cells; ++i) {
        fd[i * g.n_cells + j] = (Rp[i] - Rm[i]) / (2 * h);
        scale = std::max(scale, std::fabs(fd[i * g.n_cells + j]));
      }
    }
    for (std::size_t e = 0; e < dense.size(); ++e)
      worst_jac = std::max(worst_jac, std::fabs(dense[e] - fd[e]) / scale);
  }
  const bool pass_c = worst_jac < 1e-6;

  return {pass_a && pass_b && pass_c,
          fmt("bound overshoot %.2g, mass drift %.2g, max newton iters %d (%d step(s) composed "
              "sub-steps), jacobian err %.2g",
              worst_bound, worst_mass, max_plain_iters, backoff_steps, worst_jac)};
}

// --------------------------------------------------------------- criterion 3
// Gradient checks below 1e-6 relative at 20 random coordinates for every layer
// family and for the constrained loss.

std::vector<double> random_vec(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::vector<double> v(n);
  for (double& x : v) x = rng::normal(gen);
  return v;
}

auto mse_against(const std::vector<double>& target, std::size_t n) {
  return [&target, n](const double* y, std::size_t batch, double* gy) {
    return nn::loss_mse(y, target.data(), batch, n, gy);
  };
}

CritResult criterion_3() {
  using namespace nn;
  const std::size_t batch = 2;
  double worst = 0.0;
  auto run = [&](SequentialNet& net, std::uint64_t seed) {
    net.init_params(seed);
    const std::vector<double> x = random_vec(batch * net.input_size(), seed + 100);
    const std::vector<double> tgt = random_vec(batch * net.output_size(), seed + 200);
    worst = std::max(worst, grad_check(net, mse_against(tgt, net.output_size()), x.data(), batch,
                                       20, 1e-6, seed + 300));
  };

  SequentialNet dense;
  dense.add(std::make_unique<DenseLayer>(5, 4, Act::tanh));
  dense.add(std::make_unique<DenseLayer>(4, 3, Act::sigmoid));
  run(dense, 1);

  SequentialNet conv;
  conv.add(std::make_unique<Conv2DLayer>(5, 5, 2, 3, 3, 1, Pad::same, Act::tanh));
  conv.add(std::make_unique<Conv2DLayer>(5, 5, 3, 2, 3, 2, Pad::same, Act::relu));
  run(conv, 2);

  SequentialNet pool;
  pool.add(std::make_unique<AvgPoolLayer>(4, 4, 2, 2, 2));
  pool.add(std::make_unique<DenseLayer>(8, 5, Act::sigmoid));
  run(pool, 3);

  SequentialNet local;
  local.add(std::make_unique<LocallyConnected2DLayer>(5, 5, 2, 3, 2, Act::tanh));
  run(local, 4);

  // Sparse velocity layer inside the single-phase residual net.
  const std::size_t nx = 4, ny = 3, n = nx * ny;
  SatSingleNet single(nx, ny, Act::relu);
  std::vector<double> u4[4];
  std::mt19937_64 gen(55);
  for (auto& u : u4) {
    u.resize(n);
    for (double& v : u) v = 0.3 * rng::normal(gen);
  }
  std::vector<double> bias(n);
  for (double& v : bias) v = 0.05 * rng::normal(gen);
  single.set_context(u4, bias);
  single.init_params(8);
  const std::vector<double> xs = random_vec(2 * n, 66);
  const std::vector<double> ts = random_vec(2 * n, 67);
  worst = std::max(worst, grad_check(single, mse_against(ts, n), xs.data(), 2, 20, 1e-6, 9));

  // Constrained loss gradient against central differences at 20 coordinates.
  const Grid g6 = build_grid(3, 2, 1.0, 1.0);
  const SparseMatrix B6 = build_divergence(g6);
  const std::size_t ne = g6.n_edges, lb = 3;
  std::vector<double> up = random_vec(lb * ne, 91), ut = random_vec(lb * ne, 92);
  std::vector<double> grad(lb * ne);
  loss_constrained(up.data(), ut.data(), lb, ne, B6, 0.7, grad.data());
  std::mt19937_64 cgen(93);
  const double h = 1e-7;
  for (int k = 0; k < 20; ++k) {
    const std::size_t i = static_cast<std::size_t>(rng::uniform01(cgen) * lb * ne);
    std::vector<double> upp = up, upm = up;
    upp[i] += h;
    upm[i] -= h;
    const double fd = (loss_constrained(upp.data(), ut.data(), lb, ne, B6, 0.7, nullptr) -
                       loss_constrained(upm.data(), ut.data(), lb, ne, B6, 0.7, nullptr)) /
                      (2 * h);
    worst = std::max(worst, std::fabs(grad[i] - fd) / std::max(1e-12, std::fabs(fd)));
  }

  return {worst < 1e-6, fmt("worst relative gradient error %.3g", worst)};
}

// --------------------------------------------------------------- criterion 4
// Oracle-set sparse velocity weights reproduce the reference explicit step to
// 1e-12 and track the 199-step trajectory to 1e-10.

void set_oracle_weights(nn::SatSingleNet& net, const Grid& g, const CellDirectionalFlux& dirs) {
  const nn::SparsePattern pat = nn::pentadiagonal_pattern(g.nx, g.ny);
  const std::vector<double>* du[4] = {&dirs.u1, &dirs.u2, &dirs.u3, &dirs.u4};
  const std::ptrdiff_t off[4] = {-static_cast<std::ptrdiff_t>(g.nx),
                                 static_cast<std::ptrdiff_t>(g.nx), -1, 1};
  for (int i = 0; i < 4; ++i) {
    nn::SparseVelocity& svl = net.svl_[i];
    std::fill(svl.V.begin(), svl.V.end(), 0.0);
    for (std::size_t a = 0; a < g.n_cells; ++a) {
      const double ua = (*du[i])[a];
      if (ua == 0.0) continue;
      const std::size_t want =
          ua > 0.0 ? a : static_cast<std::size_t>(static_cast<std::ptrdiff_t>(a) + off[i]);
      for (std::size_t p = pat.row_ptr[a]; p < pat.row_ptr[a + 1]; ++p)
        if (pat.col[p] == want) svl.V[p] = -1.0;
    }
  }
}

CritResult criterion_4() {
  const Grid& g = grid50();
  const SingleRef& ctx = single_ref();
  surrogate::SatNetConfig sc;
  sc.n_cells = g.n_cells;
  auto net = surrogate::build_sat_net_single(sc, g, ctx.run.dirs, ctx.f, ctx.dt, 11);
  set_oracle_weights(*net, g, ctx.run.dirs);

  // Single step from a generic state.
  std::mt19937_64 gen(13);
  std::vector<double> S(g.n_cells);
  for (double& s : S) s = rng::uniform01(gen);
  const std::vector<double> stepped = explicit_step(g, S, ctx.run.dirs, ctx.f, ctx.dt);
  const double* y = net->forward(S.data(), 1, false);
  double step_err = 0.0;
  for (std::size_t c = 0; c < g.n_cells; ++c)
    step_err = std::max(step_err, std::fabs(y[c] - stepped[c]));

  // 199 iterated steps from the dry state against the stored trajectory.
  const surrogate::SatRollout roll =
      surrogate::rollout_sat_single(*net, std::vector<double>(g.n_cells, 0.0), 199);
  double roll_err = 0.0;
  for (std::size_t k = 1; k <= 199; ++k)
    for (std::size_t c = 0; c < g.n_cells; ++c)
      roll_err = std::max(roll_err, std::fabs(roll.states[k][c] - ctx.run.states[k - 1][c]));

  return {step_err < 1e-12 && roll_err < 1e-10,
          fmt("single step err %.3g, 199-step trajectory err %.3g", step_err, roll_err)};
}

// --------------------------------------------------------------- criterion 5
// Trained flow net on the five-spot dataset: every locally connected run under
// 5% test error, locally connected beats the convolutional baseline on at
// least 2 of 3 seeds, every training run under 10 minutes.

CritResult criterion_5() {
  const FlowData& fd = flow_data();
  double lcn_err[3], cnn_err[3], worst_secs = 0.0;
  int wins = 0;
  for (std::uint64_t s = 1; s <= 3; ++s) {
    const surrogate::TrainConfig tc = flow_train_config(s, surrogate::LossKind::constrained);
    auto lcn = train_cached(
        "c5_lcn_s" + std::to_string(s),
        [&] {
          surrogate::FlowNetConfig fc;
          return surrogate::build_flow_net(fc, s);
        },
        fd.X, fd.Y, fd.n, tc, &div50());
    auto cnn = train_cached(
        "c5_cnn_s" + std::to_string(s),
        [&] {
          surrogate::FlowNetConfig fc;
          return surrogate::build_baseline(surrogate::Baseline::cnn, fc, s);
        },
        fd.X, fd.Y, fd.n, tc, &div50());
    lcn_err[s - 1] = test_rel_l2(*lcn->net, fd);
    cnn_err[s - 1] = test_rel_l2(*cnn->net, fd);
    if (lcn_err[s - 1] <= cnn_err[s - 1]) ++wins;
    worst_secs = std::max({worst_secs, lcn->seconds, cnn->seconds});
  }
  const bool under_5 = lcn_err[0] < 5.0 && lcn_err[1] < 5.0 && lcn_err[2] < 5.0;
  const bool pass = under_5 && wins >= 2 && worst_secs < 600.0;
  return {pass,
          fmt("lcn %.2f/%.2f/%.2f%%, cnn %.2f/%.2f/%.2f%%, lcn wins %d/3, slowest run %.0f s",
              lcn_err[0], lcn_err[1], lcn_err[2], cnn_err[0], cnn_err[1], cnn_err[2], wins,
              worst_secs)};
}

// --------------------------------------------------------------- criterion 6
// With identical data and seed, constrained-loss training cuts the mean local
// mass error to at most half of the standard-loss run.

CritResult criterion_6() {
  const FlowData& fd = flow_data();
  auto constrained = train_cached(
      "c5_lcn_s1",
      [&] {
        surrogate::FlowNetConfig fc;
        return surrogate::build_flow_net(fc, 1);
      },
      fd.X, fd.Y, fd.n, flow_train_config(1, surrogate::LossKind::constrained), &div50());
  auto standard = train_cached(
      "c6_std_s1",
      [&] {
        surrogate::FlowNetConfig fc;
        return surrogate::build_flow_net(fc, 1);
      },
      fd.X, fd.Y, fd.n, flow_train_config(1, surrogate::LossKind::standard), &div50());
  const double mass_c = test_mass_mean(*constrained->net, fd);
  const double mass_s = test_mass_mean(*standard->net, fd);
  return {mass_c <= 0.5 * mass_s,
          fmt("constrained %.3g vs standard %.3g, ratio %.3g (need <= 0.5)", mass_c, mass_s,
              mass_s > 0 ? mass_c / mass_s : 0.0)};
}

// --------------------------------------------------------------- criterion 7
// Trained single-phase saturation net: E_s(1) < 0.1%, E_s(199) < 10%; the dense
// baseline with the same training budget is worse after 100 steps or diverges.

CritResult criterion_7() {
  const Grid& g = grid50();
  const SingleRef& ctx = single_ref();
  const std::size_t n = 1200;

  std::vector<double> X(n * g.n_cells, 0.0), Y(n * g.n_cells);
  for (std::size_t i = 0; i < n; ++i) {
    if (i > 0)
      std::copy(ctx.run.states[i - 1].begin(), ctx.run.states[i - 1].end(),
                X.begin() + i * g.n_cells);
    std::copy(ctx.run.states[i].begin(), ctx.run.states[i].end(), Y.begin() + i * g.n_cells);
  }

  surrogate::TrainConfig tc;
  tc.lr = 0.008;
  tc.batch_size = 100;
  tc.epochs = 250;
  tc.seed = 1;
  tc.val_fraction = 0.2;
  tc.loss = surrogate::LossKind::mse;

  auto svl = train_cached(
      "c7_svl",
      [&] {
        surrogate::SatNetConfig sc;
        sc.n_cells = g.n_cells;
        return surrogate::build_sat_net_single(sc, g, ctx.run.dirs, ctx.f, ctx.dt, 1);
      },
      X, Y, n, tc, nullptr);

  const std::vector<double> S0(g.n_cells, 0.0);
  const surrogate::SatRollout roll = surrogate::rollout_sat_single(*svl->net, S0, 199);
  const double e1 = surrogate::e_s_percent(roll.states[1], ctx.run.states[0]);
  const double e100 = surrogate::e_s_percent(roll.states[100], ctx.run.states[99]);
  const double e199 = surrogate::e_s_percent(roll.states[199], ctx.run.states[198]);

  // Dense baseline: two n_cells-wide layers, identical data and train config.
  // A divergence is cached as a marker file so iterating with the model cache
  // does not repeat the doomed run; the fresh ctest path always retrains.
  bool diverged = false;
  double dense_e100 = 0.0;
  const std::string marker = cache_dir().empty() ? "" : cache_dir() + "/c7_dense.diverged";
  if (!marker.empty() && std::ifstream(marker).good()) {
    diverged = true;
  } else {
    try {
      auto dense = train_cached(
          "c7_dense",
          [&] {
            auto net = std::make_unique<nn::SequentialNet>();
            net->add(std::make_unique<nn::DenseLayer>(g.n_cells, g.n_cells, nn::Act::relu));
            net->add(std::make_unique<nn::DenseLayer>(g.n_cells, g.n_cells, nn::Act::linear));
            net->init_params(1);
            return net;
          },
          X, Y, n, tc, nullptr);
      const surrogate::SatRollout droll = surrogate::rollout_sat_single(*dense->net, S0, 100);
      dense_e100 = surrogate::e_s_percent(droll.states[100], ctx.run.states[99]);
    } catch (const numeric_error&) {
      diverged = true;
      if (!marker.empty()) std::ofstream(marker) << "numeric_error during training\n";
    }
  }
  const bool dense_worse = diverged || !std::isfinite(dense_e100) || dense_e100 > e100;

  const bool pass = e1 < 0.1 && e199 < 10.0 && dense_worse;
  return {pass, fmt("E_s(1) %.4f%%, E_s(199) %.2f%%, dense at 100 steps %s (svl %.2f%%)", e1,
                    e199, diverged ? "diverged" : fmt("%.2f%%", dense_e100).c_str(), e100)};
}

// --------------------------------------------------------------- criterion 8
// Coupled two-phase rollout over the held-out schedule: E_s(1000) < 15%, with
// reference and surrogate water-cut curves written out.

CritResult criterion_8() {
  const TwoPhaseCtx& c = two_phase_ctx();
  const Grid& g = grid50();
  const std::vector<double> S0(g.n_cells, 0.0);
  const surrogate::CoupledRollout roll = surrogate::rollout_coupled(
      *c.flow->net, *c.sat_net, g, c.fluid, c.heldout, S0, c.n_steps);
  const double e1000 =
      surrogate::e_s_percent(roll.states[c.n_steps - 1], c.ref.states[c.n_steps - 1]);

  std::filesystem::create_directories(artifact_dir());
  const std::string path = artifact_dir() + "/water_cut_two_phase.csv";
  std::ofstream csv(path);
  csv << "step,rate,reference,surrogate\n";
  const std::size_t producer = g.nx - 1;
  for (std::size_t k = 0; k < c.n_steps; ++k) {
    const double wc_ref = water_cut(c.fluid, c.ref.states[k], producer);
    csv << fmt("%zu,%.17g,%.17g,%.17g\n", k + 1, c.heldout.rate_at(k + 1), wc_ref,
               roll.water_cut[k]);
  }

  const bool pass = e1000 < 15.0 && !roll.unstable;
  return {pass, fmt("E_s(1000) %.2f%%, %s, water cut written to %s", e1000,
                    roll.unstable ? "unstable" : "stable", path.c_str())};
}

// --------------------------------------------------------------- criterion 9
// Speed: coupled surrogate rollout at least 10x faster than the reference
// simulator (999 steps, medians of 5), and a single flow prediction at least
// 10x faster than a single Darcy solve (medians of 15).

CritResult criterion_9() {
  const TwoPhaseCtx& c = two_phase_ctx();
  const Grid& g = grid50();
  const std::vector<double> S0(g.n_cells, 0.0);
  const std::size_t m = 999;

  std::vector<double> t_classical, t_surrogate;
  for (int rep = 0; rep < 5; ++rep) {
    double t0 = now_s();
    const TwoPhaseRun run = run_two_phase(g, perm50(), c.fluid, c.heldout, S0, c.dt, m);
    t_classical.push_back(now_s() - t0);
    t0 = now_s();
    const surrogate::CoupledRollout roll =
        surrogate::rollout_coupled(*c.flow->net, *c.sat_net, g, c.fluid, c.heldout, S0, m);
    t_surrogate.push_back(now_s() - t0);
    if (run.states.empty() || roll.states.empty())
      throw inconsistency_error("acceptance: empty timing run");
  }
  const double roll_classical = median(t_classical), roll_surrogate = median(t_surrogate);

  // Single step: assembling kappa*lambda(S) and solving, against interleaving
  // the same inputs and one network forward. Mid-trajectory state, rate of its
  // step.
  const std::vector<double>& Smid = c.ref.states[499];
  const SourceField src = two_well_source(g, c.heldout.rate_at(500));
  std::vector<double> t_solve, t_predict;
  std::vector<double> img(2 * g.n_cells);
  double sink = 0.0;  // keeps the timed work observable
  for (int rep = 0; rep < 15; ++rep) {
    double t0 = now_s();
    const std::vector<double> lambda = mobility(c.fluid, Smid);
    std::vector<double> keff(g.n_cells);
    for (std::size_t i = 0; i < g.n_cells; ++i) keff[i] = perm50().kappa[i] * lambda[i];
    const Transmissibility T = assemble_transmissibility(g, keff);
    const FlowSolution sol = solve_darcy(g, T, src);
    sink += sol.u.values[0];
    t_solve.push_back(now_s() - t0);

    t0 = now_s();
    const std::vector<double> lambda2 = mobility(c.fluid, Smid);
    for (std::size_t i = 0; i < g.n_cells; ++i) {
      img[2 * i] = lambda2[i];
      img[2 * i + 1] = src.r[i];
    }
    const double* u = c.flow->net->forward(img.data(), 1, false);
    sink += u[0];
    t_predict.push_back(now_s() - t0);
  }
  const double solve_t = median(t_solve), predict_t = median(t_predict);
  const double roll_speedup = roll_classical / roll_surrogate;
  const double predict_speedup = solve_t / predict_t;

  const bool pass = roll_speedup >= 10.0 && predict_speedup >= 10.0 && std::isfinite(sink);
  return {pass,
          fmt("rollout %.2f s vs %.2f s (%.1fx), single solve %.3g s vs predict %.3g s (%.1fx), "
              "need >= 10x both",
              roll_classical, roll_surrogate, roll_speedup, solve_t, predict_t, predict_speedup)};
}

// -------------------------------------------------------------- criterion 10
// Reproducibility: generation and training byte-identical across re-runs with
// the same seed; model save/load round trips bitwise.

CritResult criterion_10() {
  namespace fs = std::filesystem;
  const fs::path root = fs::temp_directory_path() / "pml_acceptance_repro";
  fs::remove_all(root);
  fs::create_directories(root);

  cli::RunConfig cfg = cli::parse_config(R"({
    "grid": {"nx": 8, "ny": 8},
    "permeability": {"seed": 4, "sigma": 0.8, "corr_len": 2.0},
    "experiment": "two-phase",
    "dt": 0.2, "n_steps": 30, "n_schedules": 2,
    "schedule": {"n_breaks": 2, "lo": 1.0, "hi": 4.0, "base": 1e-3},
    "seed": 11,
    "train": {"epochs": 3, "batch_size": 12, "lr": 1e-3}
  })",
                                         "acceptance");

  auto gen_into = [&](const std::string& sub) {
    cli::RunConfig c = cfg;
    c.out_dir = (root / sub).string();
    Quiet q;
    cli::cmd_gen_data(c);
    return c.out_dir;
  };
  const std::string dir_a = gen_into("a"), dir_b = gen_into("b");
  const bool gen_same = slurp(dir_a + "/flow_two.pmldat") == slurp(dir_b + "/flow_two.pmldat") &&
                        slurp(dir_a + "/sat_two.pmldat") == slurp(dir_b + "/sat_two.pmldat");

  auto train_into = [&](const std::string& name) {
    const std::string model = (root / name).string();
    Quiet q;
    cli::cmd_train(cfg, dir_a + "/sat_two.pmldat", model);
    return model;
  };
  const std::string model_a = train_into("m_a.pmlnet"), model_b = train_into("m_b.pmlnet");
  const bool train_same = slurp(model_a) == slurp(model_b) &&
                          slurp(model_a + ".loss.csv") == slurp(model_b + ".loss.csv");

  // Save/load round trip on the trained model.
  const nn::LoadedModel loaded = nn::load_model(model_a);
  const std::string resaved = (root / "m_resaved.pmlnet").string();
  nn::save_model(*loaded.net, resaved);
  const bool roundtrip_same = slurp(model_a) == slurp(resaved);

  fs::remove_all(root);
  return {gen_same && train_same && roundtrip_same,
          fmt("gen-data %s, train %s, save/load %s", gen_same ? "identical" : "differs",
              train_same ? "identical" : "differs", roundtrip_same ? "bitwise" : "differs")};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  const std::vector<std::pair<int, CritResult (*)()>> criteria = {
      {1, criterion_1}, {2, criterion_2}, {3, criterion_3}, {4, criterion_4},
      {5, criterion_5}, {6, criterion_6}, {7, criterion_7}, {8, criterion_8},
      {9, criterion_9}, {10, criterion_10},
  };

  if (!cache_dir().empty())
    std::fprintf(stderr, "model cache: %s\n", cache_dir().c_str());

  int failures = 0, ran = 0;
  for (const auto& [id, fn] : criteria) {
    if (!selected.empty() && !selected.count(id)) continue;
    ++ran;
    CritResult r;
    const double t0 = now_s();
    try {
      r = fn();
    } catch (const std::exception& e) {
      r = {false, fmt("exception: %s", e.what())};
    }
    if (!r.pass) ++failures;
    std::printf("criterion %2d: %s  %s  [%.1f s]\n", id, r.pass ? "PASS" : "FAIL",
                r.detail.c_str(), now_s() - t0);
    std::fflush(stdout);
  }
  std::printf("acceptance: %d of %d criteria passed\n", ran - failures, ran);
  return failures;
}
