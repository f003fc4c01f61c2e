#include "pml/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "pml/errors.hpp"
#include "pml/flow.hpp"
#include "pml/nn.hpp"
#include "pml/rng.hpp"
#include "pml/transport.hpp"

namespace pml::cli {

using nlohmann::json;

namespace {

double now_seconds() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void check_keys(const json& j, const std::string& where,
                std::initializer_list<const char*> allowed) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed)
      if (it.key() == k) {
        ok = true;
        break;
      }
    if (!ok) throw config_error(where + ": unknown key \"" + it.key() + "\"");
  }
}

surrogate::LossKind parse_loss(const std::string& s, const std::string& where) {
  if (s == "constrained") return surrogate::LossKind::constrained;
  if (s == "standard") return surrogate::LossKind::standard;
  if (s == "mse") return surrogate::LossKind::mse;
  throw config_error(where + ": unknown loss \"" + s + "\"");
}

nn::Act parse_act(const std::string& s, const std::string& where) {
  if (s == "linear") return nn::Act::linear;
  if (s == "relu") return nn::Act::relu;
  if (s == "tanh") return nn::Act::tanh;
  if (s == "sigmoid") return nn::Act::sigmoid;
  throw config_error(where + ": unknown activation \"" + s + "\"");
}

std::ofstream open_out(const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw io_error("cannot open " + path + " for writing");
  return f;
}

std::string join_path(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

}  // namespace

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t x = a + 0x9e3779b97f4a7c15ull * (b + 1);
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ull;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebull;
  x ^= x >> 31;
  return x;
}

RunConfig parse_config(const std::string& json_text, const std::string& origin) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw config_error(origin + ": " + e.what());
  }
  if (!j.is_object()) throw config_error(origin + ": top level must be an object");

  RunConfig cfg;
  try {
    check_keys(j, origin,
               {"grid", "permeability", "fluid", "experiment", "samples", "dt", "n_steps",
                "n_schedules", "rates", "schedule", "train", "flow_net", "sat_net", "arch", "seed",
                "out_dir"});
    if (j.contains("grid")) {
      const json& g = j["grid"];
      check_keys(g, origin + ".grid", {"nx", "ny", "lx", "ly"});
      if (g.contains("nx")) cfg.grid.nx = g["nx"].get<std::size_t>();
      if (g.contains("ny")) cfg.grid.ny = g["ny"].get<std::size_t>();
      if (g.contains("lx")) cfg.grid.lx = g["lx"].get<double>();
      if (g.contains("ly")) cfg.grid.ly = g["ly"].get<double>();
    }
    if (j.contains("permeability")) {
      const json& p = j["permeability"];
      check_keys(p, origin + ".permeability", {"file", "seed", "sigma", "corr_len"});
      if (p.contains("file")) {
        cfg.perm.file = p["file"].get<std::string>();
        if (p.size() > 1)
          throw config_error(origin + ".permeability: file excludes the synthetic keys");
      } else {
        if (p.contains("seed")) cfg.perm.seed = p["seed"].get<std::uint64_t>();
        if (p.contains("sigma")) cfg.perm.sigma = p["sigma"].get<double>();
        if (p.contains("corr_len")) cfg.perm.corr_len = p["corr_len"].get<double>();
      }
    }
    if (j.contains("fluid")) {
      const json& f = j["fluid"];
      check_keys(f, origin + ".fluid", {"mu_w", "mu_o", "a", "b"});
      if (f.contains("mu_w")) cfg.fluid.mu_w = f["mu_w"].get<double>();
      if (f.contains("mu_o")) cfg.fluid.mu_o = f["mu_o"].get<double>();
      if (f.contains("a")) cfg.fluid.a = f["a"].get<double>();
      if (f.contains("b")) cfg.fluid.b = f["b"].get<double>();
    }
    if (j.contains("experiment")) {
      const std::string e = j["experiment"].get<std::string>();
      if (e == "single-flow")
        cfg.experiment = Experiment::single_flow;
      else if (e == "single-sat")
        cfg.experiment = Experiment::single_sat;
      else if (e == "two-phase")
        cfg.experiment = Experiment::two_phase;
      else
        throw config_error(origin + ": unknown experiment \"" + e + "\"");
    }
    if (j.contains("samples")) {
      const json& s = j["samples"];
      check_keys(s, origin + ".samples", {"train", "val"});
      if (s.contains("train")) cfg.n_train = s["train"].get<std::size_t>();
      if (s.contains("val")) cfg.n_val = s["val"].get<std::size_t>();
    }
    if (j.contains("dt")) cfg.dt = j["dt"].get<double>();
    if (j.contains("n_steps")) cfg.n_steps = j["n_steps"].get<std::size_t>();
    if (j.contains("n_schedules")) cfg.n_schedules = j["n_schedules"].get<std::size_t>();
    if (j.contains("rates")) {
      const json& r = j["rates"];
      check_keys(r, origin + ".rates", {"lo", "hi", "base"});
      if (r.contains("lo")) cfg.five_spot.lo = r["lo"].get<double>();
      if (r.contains("hi")) cfg.five_spot.hi = r["hi"].get<double>();
      if (r.contains("base")) cfg.five_spot.base = r["base"].get<double>();
    }
    if (j.contains("schedule")) {
      const json& s = j["schedule"];
      check_keys(s, origin + ".schedule", {"n_breaks", "lo", "hi", "base"});
      if (s.contains("n_breaks")) cfg.schedule.n_breaks = s["n_breaks"].get<std::size_t>();
      if (s.contains("lo")) cfg.schedule.lo = s["lo"].get<double>();
      if (s.contains("hi")) cfg.schedule.hi = s["hi"].get<double>();
      if (s.contains("base")) cfg.schedule.base = s["base"].get<double>();
    }
    if (j.contains("train")) {
      const json& t = j["train"];
      check_keys(t, origin + ".train",
                 {"lr", "batch_size", "epochs", "seed", "val_fraction", "loss", "beta_mode",
                  "beta_factor", "grid_epochs"});
      if (t.contains("lr")) cfg.train.lr = t["lr"].get<double>();
      if (t.contains("batch_size")) cfg.train.batch_size = t["batch_size"].get<std::size_t>();
      if (t.contains("epochs")) cfg.train.epochs = t["epochs"].get<std::size_t>();
      if (t.contains("seed")) cfg.train.seed = t["seed"].get<std::uint64_t>();
      if (t.contains("val_fraction")) cfg.train.val_fraction = t["val_fraction"].get<double>();
      if (t.contains("loss")) {
        cfg.train.loss = parse_loss(t["loss"].get<std::string>(), origin + ".train");
        cfg.loss_set = true;
      }
      if (t.contains("beta_mode")) {
        const std::string m = t["beta_mode"].get<std::string>();
        if (m == "fixed")
          cfg.train.beta_mode = surrogate::BetaMode::fixed;
        else if (m == "grid-search")
          cfg.train.beta_mode = surrogate::BetaMode::grid_search;
        else
          throw config_error(origin + ".train: unknown beta_mode \"" + m + "\"");
      }
      if (t.contains("beta_factor")) cfg.train.beta_factor = t["beta_factor"].get<double>();
      if (t.contains("grid_epochs")) cfg.train.grid_epochs = t["grid_epochs"].get<std::size_t>();
    }
    if (j.contains("flow_net")) {
      const json& f = j["flow_net"];
      check_keys(f, origin + ".flow_net",
                 {"n_coarse", "alpha", "alpha_prime", "kernel", "n_u_coarse", "n_pre_conv"});
      if (f.contains("n_coarse")) cfg.flow_net.n_coarse = f["n_coarse"].get<std::size_t>();
      if (f.contains("alpha")) cfg.flow_net.alpha = f["alpha"].get<std::size_t>();
      if (f.contains("alpha_prime")) cfg.flow_net.alpha_prime = f["alpha_prime"].get<std::size_t>();
      if (f.contains("kernel")) cfg.flow_net.kernel = f["kernel"].get<std::size_t>();
      if (f.contains("n_u_coarse")) cfg.flow_net.n_u_coarse = f["n_u_coarse"].get<std::size_t>();
      if (f.contains("n_pre_conv")) cfg.flow_net.n_pre_conv = f["n_pre_conv"].get<std::size_t>();
    }
    if (j.contains("sat_net")) {
      const json& s = j["sat_net"];
      check_keys(s, origin + ".sat_net", {"act", "hidden", "src_width"});
      if (s.contains("act")) cfg.sat_net.act = parse_act(s["act"].get<std::string>(), origin);
      if (s.contains("hidden")) cfg.sat_net.hidden = s["hidden"].get<std::size_t>();
      if (s.contains("src_width")) cfg.sat_net.src_width = s["src_width"].get<std::size_t>();
    }
    if (j.contains("arch")) cfg.arch = j["arch"].get<std::string>();
    if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("out_dir")) cfg.out_dir = j["out_dir"].get<std::string>();
  } catch (const json::exception& e) {
    throw config_error(origin + ": " + e.what());
  }

  if (cfg.grid.nx == 0 || cfg.grid.ny == 0) throw config_error(origin + ": empty grid");
  if (!(cfg.dt > 0.0)) throw config_error(origin + ": dt must be positive");
  if (cfg.n_steps == 0) throw config_error(origin + ": n_steps must be positive");
  if (cfg.arch != "lcn" && cfg.arch != "cnn" && cfg.arch != "dnn" && cfg.arch != "sat" &&
      cfg.arch != "sat-dense")
    throw config_error(origin + ": unknown arch \"" + cfg.arch + "\"");
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw io_error("cannot open config " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str(), path);
}

PermField make_permeability(const RunConfig& cfg, const Grid& grid) {
  if (!cfg.perm.file.empty()) return load_permeability(cfg.perm.file, grid);
  return generate_lognormal_permeability(grid, cfg.perm.seed, cfg.perm.sigma, cfg.perm.corr_len);
}

SourceField make_five_spot(const RunConfig& cfg, const Grid& grid, std::uint64_t sample_index) {
  std::array<double, 4> rates =
      sample_five_spot_rates(mix_seed(cfg.seed, sample_index), cfg.five_spot.lo, cfg.five_spot.hi);
  for (double& r : rates) r *= cfg.five_spot.base;
  return five_spot_source(grid, rates);
}

RateSchedule make_schedule(const RunConfig& cfg, std::uint64_t stream) {
  RateSchedule s = sample_rate_schedule(mix_seed(cfg.seed, kHoldoutStream + stream), cfg.n_steps,
                                        cfg.schedule.n_breaks, cfg.schedule.lo, cfg.schedule.hi);
  for (double& r : s.rates) r *= cfg.schedule.base;
  return s;
}

surrogate::FlowNetConfig flow_net_config(const RunConfig& cfg, const Grid& grid, bool two_phase) {
  surrogate::FlowNetConfig fc = cfg.flow_net;
  fc.n_fine = grid.n_cells;
  fc.n_u_fine = grid.n_edges;
  fc.channels = two_phase ? 2 : 1;
  if (!two_phase)
    fc.n_pre_conv = 0;
  else if (fc.n_pre_conv == 0)
    fc.n_pre_conv = 2;
  return fc;
}

surrogate::SatNetConfig sat_net_config(const RunConfig& cfg, const Grid& grid) {
  surrogate::SatNetConfig sc = cfg.sat_net;
  sc.n_cells = grid.n_cells;
  return sc;
}

// ----------------------------------------------------------------- gen-data

namespace {

void log_progress(const char* what, std::size_t done, std::size_t total, double t0) {
  std::cout << what << ": " << done << "/" << total << " (" << g17(now_seconds() - t0)
            << " s elapsed)\n";
}

data::Dataset gen_single_flow(const RunConfig& cfg, const Grid& grid, const PermField& perm) {
  const std::size_t n = cfg.n_train + cfg.n_val;
  const Transmissibility T = assemble_transmissibility(grid, perm.kappa);
  data::Dataset ds;
  ds.kind = data::kFlowSingle;
  ds.nx = grid.nx;
  ds.ny = grid.ny;
  ds.n_samples = n;
  ds.context.emplace_back("kappa", perm.kappa);
  ds.fields = {{"in_r", grid.n_cells}, {"out_u", grid.n_edges}};
  ds.payload.resize(n * ds.record_width());
  const double t0 = now_seconds();
  for (std::size_t i = 0; i < n; ++i) {
    const SourceField f = make_five_spot(cfg, grid, i);
    FlowSolution sol;
    try {
      sol = solve_darcy(grid, T, f);
    } catch (const std::exception& e) {
      throw numeric_error("gen-data: solver failed at sample " + std::to_string(i) + ": " +
                          e.what());
    }
    double* rec = ds.payload.data() + i * ds.record_width();
    std::copy(f.r.begin(), f.r.end(), rec);
    std::copy(sol.u.values.begin(), sol.u.values.end(), rec + grid.n_cells);
    if ((i + 1) % 250 == 0 || i + 1 == n) log_progress("single-flow samples", i + 1, n, t0);
  }
  return ds;
}

data::Dataset gen_single_sat(const RunConfig& cfg, const Grid& grid, const PermField& perm) {
  const SourceField f = make_five_spot(cfg, grid, 0);
  const std::vector<double> S0(grid.n_cells, 0.0);
  const double t0 = now_seconds();
  SinglePhaseRun run;
  try {
    run = run_single_phase(grid, perm, f, S0, cfg.dt, cfg.n_steps);
  } catch (const std::exception& e) {
    throw numeric_error(std::string("gen-data: single-phase run failed: ") + e.what());
  }
  log_progress("single-sat steps", cfg.n_steps, cfg.n_steps, t0);
  data::Dataset ds;
  ds.kind = data::kSatSingle;
  ds.nx = grid.nx;
  ds.ny = grid.ny;
  ds.n_samples = cfg.n_steps;
  ds.context.emplace_back("kappa", perm.kappa);
  ds.context.emplace_back("u", run.flow.u.values);
  ds.context.emplace_back("r", f.r);
  ds.context.emplace_back("dt", std::vector<double>{cfg.dt});
  ds.fields = {{"in_S", grid.n_cells}, {"out_S", grid.n_cells}};
  ds.payload.resize(ds.n_samples * ds.record_width());
  for (std::size_t i = 0; i < cfg.n_steps; ++i) {
    const std::vector<double>& Sin = i == 0 ? S0 : run.states[i - 1];
    double* rec = ds.payload.data() + i * ds.record_width();
    std::copy(Sin.begin(), Sin.end(), rec);
    std::copy(run.states[i].begin(), run.states[i].end(), rec + grid.n_cells);
  }
  return ds;
}

void gen_two_phase(const RunConfig& cfg, const Grid& grid, const PermField& perm,
                   data::Dataset& flow_ds, data::Dataset& sat_ds) {
  const std::size_t n = cfg.n_schedules * cfg.n_steps;
  flow_ds.kind = data::kFlowTwo;
  flow_ds.nx = sat_ds.nx = grid.nx;
  flow_ds.ny = sat_ds.ny = grid.ny;
  flow_ds.n_samples = sat_ds.n_samples = n;
  flow_ds.context.emplace_back("kappa", perm.kappa);
  flow_ds.fields = {{"in_lambda", grid.n_cells}, {"in_r", grid.n_cells}, {"out_u", grid.n_edges}};
  flow_ds.payload.resize(n * flow_ds.record_width());
  sat_ds.kind = data::kSatTwo;
  sat_ds.context.emplace_back("kappa", perm.kappa);
  sat_ds.context.emplace_back("dt", std::vector<double>{cfg.dt});
  sat_ds.fields = {{"in_S", grid.n_cells},  {"in_u1", grid.n_cells}, {"in_u2", grid.n_cells},
                   {"in_u3", grid.n_cells}, {"in_u4", grid.n_cells}, {"in_r", grid.n_cells},
                   {"out_S", grid.n_cells}};
  sat_ds.payload.resize(n * sat_ds.record_width());

  const std::vector<double> S0(grid.n_cells, 0.0);
  const double t0 = now_seconds();
  for (std::size_t sch = 0; sch < cfg.n_schedules; ++sch) {
    const RateSchedule schedule = make_schedule(cfg, sch);
    TwoPhaseRun run;
    try {
      run = run_two_phase(grid, perm, cfg.fluid, schedule, S0, cfg.dt, cfg.n_steps);
    } catch (const std::exception& e) {
      throw numeric_error("gen-data: two-phase run failed on schedule " + std::to_string(sch) +
                          ": " + e.what());
    }
    for (std::size_t step = 1; step <= cfg.n_steps; ++step) {
      const std::size_t i = sch * cfg.n_steps + (step - 1);
      const std::vector<double>& Sprev = step == 1 ? S0 : run.states[step - 2];
      const SourceField src = two_well_source(grid, run.rates[step - 1]);
      const std::vector<double> lambda = mobility(cfg.fluid, Sprev);
      const CellDirectionalFlux dirs = edge_to_directional(grid, run.fluxes[step - 1]);

      double* frec = flow_ds.payload.data() + i * flow_ds.record_width();
      std::copy(lambda.begin(), lambda.end(), frec);
      std::copy(src.r.begin(), src.r.end(), frec + grid.n_cells);
      std::copy(run.fluxes[step - 1].values.begin(), run.fluxes[step - 1].values.end(),
                frec + 2 * grid.n_cells);

      double* srec = sat_ds.payload.data() + i * sat_ds.record_width();
      std::copy(Sprev.begin(), Sprev.end(), srec);
      std::copy(dirs.u1.begin(), dirs.u1.end(), srec + grid.n_cells);
      std::copy(dirs.u2.begin(), dirs.u2.end(), srec + 2 * grid.n_cells);
      std::copy(dirs.u3.begin(), dirs.u3.end(), srec + 3 * grid.n_cells);
      std::copy(dirs.u4.begin(), dirs.u4.end(), srec + 4 * grid.n_cells);
      std::copy(src.r.begin(), src.r.end(), srec + 5 * grid.n_cells);
      std::copy(run.states[step - 1].begin(), run.states[step - 1].end(),
                srec + 6 * grid.n_cells);
    }
    log_progress("two-phase schedules", sch + 1, cfg.n_schedules, t0);
  }
}

}  // namespace

int cmd_gen_data(const RunConfig& cfg) {
  const Grid grid = build_grid(cfg.grid.nx, cfg.grid.ny, cfg.grid.lx, cfg.grid.ly);
  const PermField perm = make_permeability(cfg, grid);
  std::filesystem::create_directories(cfg.out_dir);
  const double t0 = now_seconds();
  switch (cfg.experiment) {
    case Experiment::single_flow: {
      const std::string path = join_path(cfg.out_dir, "flow_single.pmldat");
      data::save_dataset(gen_single_flow(cfg, grid, perm), path);
      std::cout << "wrote " << path << "\n";
      break;
    }
    case Experiment::single_sat: {
      const std::string path = join_path(cfg.out_dir, "sat_single.pmldat");
      data::save_dataset(gen_single_sat(cfg, grid, perm), path);
      std::cout << "wrote " << path << "\n";
      break;
    }
    case Experiment::two_phase: {
      data::Dataset flow_ds, sat_ds;
      gen_two_phase(cfg, grid, perm, flow_ds, sat_ds);
      const std::string fpath = join_path(cfg.out_dir, "flow_two.pmldat");
      const std::string spath = join_path(cfg.out_dir, "sat_two.pmldat");
      data::save_dataset(flow_ds, fpath);
      data::save_dataset(sat_ds, spath);
      std::cout << "wrote " << fpath << "\nwrote " << spath << "\n";
      break;
    }
  }
  std::cout << "gen-data finished in " << g17(now_seconds() - t0) << " s\n";
  return 0;
}

// -------------------------------------------------------------------- train

namespace {

std::vector<double> interleave2(const std::vector<double>& a, const std::vector<double>& b,
                                std::size_t n_samples, std::size_t n) {
  std::vector<double> out(n_samples * 2 * n);
  for (std::size_t s = 0; s < n_samples; ++s)
    for (std::size_t c = 0; c < n; ++c) {
      out[(s * n + c) * 2] = a[s * n + c];
      out[(s * n + c) * 2 + 1] = b[s * n + c];
    }
  return out;
}

std::unique_ptr<nn::Network> build_for_dataset(const RunConfig& cfg, const Grid& grid,
                                               const data::Dataset& ds) {
  const bool two_phase_flow = ds.kind == data::kFlowTwo;
  const std::uint64_t seed = cfg.train.seed;
  if (ds.kind == data::kFlowSingle || ds.kind == data::kFlowTwo) {
    const surrogate::FlowNetConfig fc = flow_net_config(cfg, grid, two_phase_flow);
    if (cfg.arch == "lcn")
      return two_phase_flow ? surrogate::build_flow_net_two_phase(fc, seed)
                            : surrogate::build_flow_net(fc, seed);
    if (cfg.arch == "cnn") return surrogate::build_baseline(surrogate::Baseline::cnn, fc, seed);
    if (cfg.arch == "dnn") return surrogate::build_baseline(surrogate::Baseline::dnn, fc, seed);
    throw config_error("train: arch \"" + cfg.arch + "\" does not fit a flow dataset");
  }
  // For saturation datasets the flow archs (lcn/cnn/dnn) carry no meaning;
  // they select the flow variant of the same experiment. The saturation net
  // has one standard form, so anything but the explicit dense baseline maps
  // to it.
  const std::string arch = (cfg.arch == "sat-dense") ? cfg.arch : "sat";
  if (ds.kind == data::kSatSingle) {
    if (arch == "sat") {
      EdgeFlux u;
      u.values = ds.ctx("u");
      SourceField f;
      f.r = ds.ctx("r");
      const double dt = ds.ctx("dt").at(0);
      return surrogate::build_sat_net_single(sat_net_config(cfg, grid), grid,
                                             edge_to_directional(grid, u), f, dt, seed);
    }
    // Plain dense baseline mapping S^n to S^{n+1}, two n_cells-wide layers.
    auto net = std::make_unique<nn::SequentialNet>();
    net->add(std::make_unique<nn::DenseLayer>(grid.n_cells, grid.n_cells, nn::Act::relu));
    net->add(std::make_unique<nn::DenseLayer>(grid.n_cells, grid.n_cells, nn::Act::linear));
    net->init_params(seed);
    return net;
  }
  if (ds.kind == data::kSatTwo) {
    if (arch == "sat-dense")
      throw config_error("train: the dense baseline only fits the single-phase dataset");
    const double dt = ds.ctx("dt").at(0);
    return surrogate::build_sat_net_two_phase(sat_net_config(cfg, grid), grid, dt, seed);
  }
  throw io_error("train: unknown dataset kind " + std::to_string(ds.kind));
}

}  // namespace

int cmd_train(const RunConfig& cfg, const std::string& dataset_path,
              const std::string& model_out) {
  const Grid grid = build_grid(cfg.grid.nx, cfg.grid.ny, cfg.grid.lx, cfg.grid.ly);
  const data::Dataset ds = data::load_dataset(dataset_path);
  if (ds.nx != grid.nx || ds.ny != grid.ny)
    throw inconsistency_error("train: dataset grid " + std::to_string(ds.nx) + "x" +
                              std::to_string(ds.ny) + " does not match the config");

  std::vector<double> X, Y;
  const bool flow_kind = ds.kind == data::kFlowSingle || ds.kind == data::kFlowTwo;
  if (ds.kind == data::kFlowSingle) {
    X = ds.gather("in_r");
    Y = ds.gather("out_u");
  } else if (ds.kind == data::kFlowTwo) {
    X = interleave2(ds.gather("in_lambda"), ds.gather("in_r"), ds.n_samples, grid.n_cells);
    Y = ds.gather("out_u");
  } else if (ds.kind == data::kSatSingle) {
    X = ds.gather("in_S");
    Y = ds.gather("out_S");
  } else if (ds.kind == data::kSatTwo) {
    X = ds.gather({"in_S", "in_u1", "in_u2", "in_u3", "in_u4", "in_r"});
    Y = ds.gather("out_S");
  } else {
    throw io_error("train: unknown dataset kind " + std::to_string(ds.kind));
  }

  std::unique_ptr<nn::Network> net = build_for_dataset(cfg, grid, ds);
  surrogate::TrainConfig tc = cfg.train;
  if (!cfg.loss_set) tc.loss = flow_kind ? surrogate::LossKind::constrained : surrogate::LossKind::mse;

  SparseMatrix B;
  const SparseMatrix* Bp = nullptr;
  if (tc.loss != surrogate::LossKind::mse) {
    B = build_divergence(grid);
    Bp = &B;
  }

  const std::string shown_arch =
      flow_kind ? cfg.arch : (cfg.arch == "sat-dense" ? cfg.arch : std::string("sat"));
  std::cout << "training " << shown_arch << " on " << dataset_path << " (" << ds.n_samples
            << " samples, " << net->n_params() << " parameters)\n";
  const double t0 = now_seconds();
  const surrogate::TrainHistory hist = surrogate::train(*net, X, Y, ds.n_samples, tc, Bp);
  const double elapsed = now_seconds() - t0;

  nn::save_model(*net, model_out);
  const std::string csv_path = model_out + ".loss.csv";
  std::ofstream csv = open_out(csv_path);
  csv << "epoch,train_loss,val_loss\n";
  for (std::size_t e = 0; e < hist.train_loss.size(); ++e) {
    csv << e + 1 << "," << g17(hist.train_loss[e]) << ",";
    if (e < hist.val_loss.size()) csv << g17(hist.val_loss[e]);
    csv << "\n";
  }
  std::cout << "beta " << g17(hist.beta) << ", final train loss "
            << g17(hist.train_loss.empty() ? 0.0 : hist.train_loss.back()) << ", final val loss "
            << g17(hist.val_loss.empty() ? 0.0 : hist.val_loss.back()) << "\n"
            << "trained in " << g17(elapsed) << " s\nwrote " << model_out << "\nwrote " << csv_path
            << "\n";
  return 0;
}

// ------------------------------------------------------------------ rollout

namespace {

std::vector<std::size_t> checkpoints(std::size_t horizon) {
  std::vector<std::size_t> cks;
  for (int k = 1; k <= 5; ++k) {
    const std::size_t c = horizon * static_cast<std::size_t>(k) / 5;
    if (c >= 1 && (cks.empty() || c != cks.back())) cks.push_back(c);
  }
  return cks;
}

nn::LoadedModel load_checked(const std::string& path, std::uint32_t want, const char* role) {
  nn::LoadedModel m = nn::load_model(path);
  if (m.kind != want)
    throw io_error(path + ": network kind " + std::to_string(m.kind) + " cannot serve as the " +
                   role + " model (kind " + std::to_string(want) + " expected)");
  return m;
}

}  // namespace

int cmd_rollout(const RunConfig& cfg, const std::vector<std::string>& model_paths,
                std::size_t horizon) {
  const Grid grid = build_grid(cfg.grid.nx, cfg.grid.ny, cfg.grid.lx, cfg.grid.ly);
  const PermField perm = make_permeability(cfg, grid);
  std::filesystem::create_directories(cfg.out_dir);
  const std::vector<double> S0(grid.n_cells, 0.0);

  if (cfg.experiment == Experiment::single_sat) {
    if (model_paths.size() != 1)
      throw config_error("rollout: single-sat takes one saturation model");
    nn::LoadedModel sat = load_checked(model_paths[0], 2, "saturation");
    const SourceField f = make_five_spot(cfg, grid, 0);
    const SinglePhaseRun ref = run_single_phase(grid, perm, f, S0, cfg.dt, horizon);
    const surrogate::SatRollout roll = surrogate::rollout_sat_single(*sat.net, S0, horizon);
    std::ofstream csv = open_out(join_path(cfg.out_dir, "e_s.csv"));
    csv << "step,e_s_pct\n";
    for (std::size_t ck : checkpoints(horizon)) {
      const double es = surrogate::e_s_percent(roll.states[ck], ref.states[ck - 1]);
      csv << ck << "," << g17(es) << "\n";
      std::cout << "E_s(" << ck << ") = " << g17(es) << " %\n";
    }
    if (horizon == 0) std::cout << "horizon 0: returning the initial state\n";
    return 0;
  }

  if (cfg.experiment != Experiment::two_phase)
    throw config_error("rollout: experiment must be single-sat or two-phase");
  if (model_paths.size() != 2)
    throw config_error("rollout: two-phase takes the flow model then the saturation model");
  nn::LoadedModel flow = load_checked(model_paths[0], 1, "flow");
  nn::LoadedModel sat = load_checked(model_paths[1], 3, "saturation");
  auto* sat_net = dynamic_cast<nn::SatTwoPhaseNet*>(sat.net.get());

  const RateSchedule schedule = make_schedule(cfg, kHoldoutStream);
  std::cout << "reference simulation, " << horizon << " steps\n";
  const double tref0 = now_seconds();
  const TwoPhaseRun ref = run_two_phase(grid, perm, cfg.fluid, schedule, S0, cfg.dt, horizon);
  const double tref = now_seconds() - tref0;
  std::cout << "surrogate rollout\n";
  const surrogate::CoupledRollout roll =
      surrogate::rollout_coupled(*flow.net, *sat_net, grid, cfg.fluid, schedule, S0, horizon);

  std::ofstream es_csv = open_out(join_path(cfg.out_dir, "e_s.csv"));
  es_csv << "step,e_s_pct\n";
  for (std::size_t ck : checkpoints(horizon)) {
    const double es = surrogate::e_s_percent(roll.states[ck - 1], ref.states[ck - 1]);
    es_csv << ck << "," << g17(es) << "\n";
    std::cout << "E_s(" << ck << ") = " << g17(es) << " %\n";
  }

  const std::size_t producer = grid.nx - 1;
  std::ofstream wc_csv = open_out(join_path(cfg.out_dir, "water_cut.csv"));
  wc_csv << "step,reference,surrogate\n";
  for (std::size_t i = 0; i < horizon; ++i)
    wc_csv << i + 1 << "," << g17(water_cut(cfg.fluid, ref.states[i], producer)) << ","
           << g17(roll.water_cut[i]) << "\n";

  std::ofstream rep = open_out(join_path(cfg.out_dir, "rollout_report.csv"));
  rep << "horizon,unstable,reference_s,surrogate_s\n"
      << horizon << "," << (roll.unstable ? 1 : 0) << "," << g17(tref) << ","
      << g17(roll.seconds) << "\n";
  if (roll.unstable) std::cout << "instability flag: predictions left [-0.05, 1.05]\n";
  if (horizon == 0) std::cout << "horizon 0: returning the initial state\n";
  std::cout << "wrote e_s.csv, water_cut.csv, rollout_report.csv in " << cfg.out_dir << "\n";
  return 0;
}

// ---------------------------------------------------------------- benchmark

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double spread(const std::vector<double>& v) {
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  const double med = median(v);
  return med > 0.0 ? (*hi - *lo) / med : 0.0;
}

}  // namespace

int cmd_benchmark(const RunConfig& cfg, const std::vector<std::string>& model_paths) {
  if (cfg.experiment != Experiment::two_phase)
    throw config_error("benchmark: experiment must be two-phase");
  if (model_paths.size() != 2)
    throw config_error("benchmark: takes the flow model then the saturation model");
  const Grid grid = build_grid(cfg.grid.nx, cfg.grid.ny, cfg.grid.lx, cfg.grid.ly);
  const PermField perm = make_permeability(cfg, grid);
  std::filesystem::create_directories(cfg.out_dir);
  nn::LoadedModel flow = load_checked(model_paths[0], 1, "flow");
  nn::LoadedModel sat = load_checked(model_paths[1], 3, "saturation");
  auto* sat_net = dynamic_cast<nn::SatTwoPhaseNet*>(sat.net.get());

  const std::size_t horizon = cfg.n_steps;
  const RateSchedule schedule = make_schedule(cfg, kHoldoutStream);
  const std::vector<double> S0(grid.n_cells, 0.0);
  const int reps = 5;

  std::vector<double> t_classical, t_surrogate;
  TwoPhaseRun ref;
  for (int r = 0; r < reps; ++r) {
    const double t0 = now_seconds();
    ref = run_two_phase(grid, perm, cfg.fluid, schedule, S0, cfg.dt, horizon);
    t_classical.push_back(now_seconds() - t0);
    std::cout << "classical rollout rep " << r + 1 << ": " << g17(t_classical.back()) << " s\n";
  }
  for (int r = 0; r < reps; ++r) {
    const surrogate::CoupledRollout roll =
        surrogate::rollout_coupled(*flow.net, *sat_net, grid, cfg.fluid, schedule, S0, horizon);
    t_surrogate.push_back(roll.seconds);
    std::cout << "surrogate rollout rep " << r + 1 << ": " << g17(t_surrogate.back()) << " s\n";
  }

  // Single-operation timings on a representative mid-run state.
  const std::vector<double>& Smid = ref.states[horizon / 2];
  const SourceField src = two_well_source(grid, schedule.rate_at(horizon / 2 + 1));
  std::vector<double> img(2 * grid.n_cells);
  {
    const std::vector<double> lambda = mobility(cfg.fluid, Smid);
    for (std::size_t c = 0; c < grid.n_cells; ++c) {
      img[2 * c] = lambda[c];
      img[2 * c + 1] = src.r[c];
    }
  }
  std::vector<double> t_solve, t_predict;
  for (int r = 0; r < 7; ++r) {
    double t0 = now_seconds();
    const std::vector<double> lambda = mobility(cfg.fluid, Smid);
    std::vector<double> keff(grid.n_cells);
    for (std::size_t c = 0; c < grid.n_cells; ++c) keff[c] = perm.kappa[c] * lambda[c];
    const Transmissibility T = assemble_transmissibility(grid, keff);
    solve_darcy(grid, T, src);
    t_solve.push_back(now_seconds() - t0);
    t0 = now_seconds();
    flow.net->forward(img.data(), 1, false);
    t_predict.push_back(now_seconds() - t0);
  }

  const double med_c = median(t_classical), med_s = median(t_surrogate);
  const double med_solve = median(t_solve), med_pred = median(t_predict);
  const double speedup = med_s > 0.0 ? med_c / med_s : 0.0;
  const double speedup_single = med_pred > 0.0 ? med_solve / med_pred : 0.0;

  std::ofstream csv = open_out(join_path(cfg.out_dir, "benchmark.csv"));
  csv << "task,classical_s,surrogate_s,speedup,classical_spread,surrogate_spread\n";
  csv << "rollout_" << horizon << "," << g17(med_c) << "," << g17(med_s) << "," << g17(speedup)
      << "," << g17(spread(t_classical)) << "," << g17(spread(t_surrogate)) << "\n";
  csv << "single_step," << g17(med_solve) << "," << g17(med_pred) << "," << g17(speedup_single)
      << "," << g17(spread(t_solve)) << "," << g17(spread(t_predict)) << "\n";
  std::cout << "rollout: classical " << g17(med_c) << " s, surrogate " << g17(med_s)
            << " s, speedup " << g17(speedup) << "x\n"
            << "single step: solve " << g17(med_solve) << " s, predict " << g17(med_pred)
            << " s, speedup " << g17(speedup_single) << "x\n"
            << "wrote " << join_path(cfg.out_dir, "benchmark.csv") << "\n";

  if (grid.nx == 50 && grid.ny == 50 && horizon >= 999 && speedup < 10.0) {
    std::cerr << "benchmark: rollout speedup " << g17(speedup) << "x is below the required 10x\n";
    return 1;
  }
  return 0;
}

// ------------------------------------------------------------------- verify

namespace {

struct Suite {
  const char* name;
  bool (*fn)(std::string&);
};

bool suite_conservation(std::string& why) {
  const Grid grid = build_grid(20, 20, 1.0, 1.0);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const PermField perm = generate_lognormal_permeability(grid, seed, 1.0, 3.0);
    const SourceField f = five_spot_source(grid, {2e-4, 3e-4, 2.5e-4, 1.5e-4});
    const Transmissibility T = assemble_transmissibility(grid, perm.kappa);
    const FlowSolution sol = solve_darcy(grid, T, f);
    double fmax = 0.0;
    for (std::size_t c = 0; c < grid.n_cells; ++c)
      fmax = std::max(fmax, std::fabs(f.r[c] * grid.cell_volume));
    if (sol.residual_mass >= 1e-10 * fmax) {
      why = "seed " + std::to_string(seed) + ": residual " + g17(sol.residual_mass);
      return false;
    }
  }
  return true;
}

// Random divergence-free flux via a stream function: a circulation of
// amplitude psi around each interior vertex. Cell-wise net flux is zero by
// construction, so upwind transport is a convex combination under the CFL
// bound.
EdgeFlux random_solenoidal_flux(const Grid& grid, std::uint64_t seed) {
  EdgeFlux u;
  u.values.assign(grid.n_edges, 0.0);
  std::mt19937_64 gen(seed);
  for (std::size_t vy = 1; vy < grid.ny; ++vy)
    for (std::size_t vx = 1; vx < grid.nx; ++vx) {
      const double psi = rng::normal(gen);
      u.values[grid.vertical_edge(vy - 1, vx - 1)] += psi;
      u.values[grid.horizontal_edge(vy - 1, vx)] += psi;
      u.values[grid.vertical_edge(vy, vx - 1)] -= psi;
      u.values[grid.horizontal_edge(vy - 1, vx - 1)] -= psi;
    }
  return u;
}

bool suite_cfl(std::string& why) {
  const Grid grid = build_grid(12, 9, 1.0, 1.0);
  const CellDirectionalFlux dirs = edge_to_directional(grid, random_solenoidal_flux(grid, 11));
  const double dt_ok = max_stable_dt(grid, dirs);
  SourceField none;
  none.r.assign(grid.n_cells, 0.0);
  std::mt19937_64 gen(42);
  std::vector<double> S(grid.n_cells);
  for (double& s : S) s = rng::uniform01(gen);
  for (int step = 0; step < 50; ++step) {
    S = explicit_step(grid, S, dirs, none, dt_ok);
    for (double s : S)
      if (s < -1e-12 || s > 1.0 + 1e-12) {
        why = "explicit step left [0,1] at step " + std::to_string(step);
        return false;
      }
  }
  try {
    explicit_step(grid, S, dirs, none, dt_ok * 2.0);
    why = "oversized step was not rejected";
    return false;
  } catch (const cfl_error&) {
  }
  return true;
}

bool suite_grad_check(std::string& why) {
  auto net = std::make_unique<nn::SequentialNet>();
  net->add(std::make_unique<nn::Conv2DLayer>(6, 6, 1, 3, 3, 1, nn::Pad::same, nn::Act::relu));
  net->add(std::make_unique<nn::AvgPoolLayer>(6, 6, 3, 2, 2));
  net->add(std::make_unique<nn::FlattenLayer>(27));
  net->add(std::make_unique<nn::DenseLayer>(27, 10, nn::Act::tanh));
  net->add(std::make_unique<nn::DenseLayer>(10, 5, nn::Act::linear));
  net->init_params(99);
  std::mt19937_64 gen(5);
  std::vector<double> x(2 * 36), target(2 * 5);
  for (double& v : x) v = rng::normal(gen);
  for (double& v : target) v = rng::normal(gen);
  auto loss = [&](const double* y, std::size_t batch, double* gy) {
    return nn::loss_mse(y, target.data(), batch, 5, gy);
  };
  const double err = nn::grad_check(*net, loss, x.data(), 2, 30, 1e-6, 7);
  if (err >= 1e-6) {
    why = "max relative error " + g17(err);
    return false;
  }
  return true;
}

bool suite_svl_oracle(std::string& why) {
  const Grid grid = build_grid(6, 5, 1.0, 1.0);
  const PermField perm = generate_lognormal_permeability(grid, 3, 0.8, 2.0);
  const SourceField f = five_spot_source(grid, {2e-4, 2e-4, 2e-4, 2e-4});
  const Transmissibility T = assemble_transmissibility(grid, perm.kappa);
  const FlowSolution sol = solve_darcy(grid, T, f);
  const CellDirectionalFlux dirs = edge_to_directional(grid, sol.u);
  const double dt = 0.5 * max_stable_dt(grid, dirs);
  surrogate::SatNetConfig sc;
  sc.n_cells = grid.n_cells;
  auto net = surrogate::build_sat_net_single(sc, grid, dirs, f, dt, 1);
  // Oracle values: -1 on the donor diagonal for outflow, -1 on the neighbor
  // column for inflow; the premultiplied velocities carry dt/|K| and the sign.
  const std::vector<double>* du[4] = {&dirs.u1, &dirs.u2, &dirs.u3, &dirs.u4};
  const std::ptrdiff_t off[4] = {-static_cast<std::ptrdiff_t>(grid.nx),
                                 static_cast<std::ptrdiff_t>(grid.nx), -1, 1};
  for (int i = 0; i < 4; ++i) {
    nn::SparseVelocity& svl = net->svl_[i];
    std::fill(svl.V.begin(), svl.V.end(), 0.0);
    const nn::SparsePattern& P = *svl.pattern_;
    for (std::size_t a = 0; a < grid.n_cells; ++a) {
      const double ua = (*du[i])[a];
      if (ua == 0.0) continue;
      const std::size_t want =
          ua > 0.0 ? a : static_cast<std::size_t>(static_cast<std::ptrdiff_t>(a) + off[i]);
      for (std::size_t p = P.row_ptr[a]; p < P.row_ptr[a + 1]; ++p)
        if (P.col[p] == want) svl.V[p] = -1.0;
    }
  }
  std::mt19937_64 gen(17);
  std::vector<double> S(grid.n_cells);
  for (double& s : S) s = rng::uniform01(gen);
  const std::vector<double> stepped = explicit_step(grid, S, dirs, f, dt);
  const double* y = net->forward(S.data(), 1, false);
  for (std::size_t c = 0; c < grid.n_cells; ++c)
    if (std::fabs(y[c] - stepped[c]) > 1e-12) {
      why = "cell " + std::to_string(c) + ": |" + g17(y[c]) + " - " + g17(stepped[c]) + "|";
      return false;
    }
  return true;
}

bool suite_round_trip(std::string& why) {
  const std::string dir = std::filesystem::temp_directory_path().string();
  const std::string mpath = join_path(dir, "pml_verify_model.pmlnet");
  auto net = std::make_unique<nn::SequentialNet>();
  net->add(std::make_unique<nn::DenseLayer>(7, 4, nn::Act::tanh));
  net->add(std::make_unique<nn::DenseLayer>(4, 3, nn::Act::linear));
  net->init_params(2024);
  nn::save_model(*net, mpath);
  const nn::LoadedModel loaded = nn::load_model(mpath);
  const std::string mpath2 = mpath + ".2";
  nn::save_model(*loaded.net, mpath2);
  std::ifstream a(mpath, std::ios::binary), b(mpath2, std::ios::binary);
  const std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
  const std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
  if (sa != sb) {
    why = "save-load-save is not byte identical";
    return false;
  }
  std::ofstream trunc(mpath2, std::ios::binary | std::ios::trunc);
  trunc.write(sa.data(), static_cast<std::streamsize>(sa.size() - 5));
  trunc.close();
  try {
    nn::load_model(mpath2);
    why = "corrupted model file was accepted";
    return false;
  } catch (const io_error&) {
  }
  std::filesystem::remove(mpath);
  std::filesystem::remove(mpath2);
  return true;
}

}  // namespace

int cmd_verify() {
  const Suite suites[] = {{"conservation", suite_conservation},
                          {"cfl", suite_cfl},
                          {"grad-check", suite_grad_check},
                          {"svl-oracle", suite_svl_oracle},
                          {"round-trip", suite_round_trip}};
  int failures = 0;
  for (const Suite& s : suites) {
    std::string why;
    const double t0 = now_seconds();
    bool ok = false;
    try {
      ok = s.fn(why);
    } catch (const std::exception& e) {
      why = e.what();
    }
    const double dt = now_seconds() - t0;
    if (ok) {
      std::cout << "suite " << s.name << ": PASS (" << g17(dt) << " s)\n";
    } else {
      std::cout << "suite " << s.name << ": FAIL (" << why << ")\n";
      ++failures;
    }
  }
  return failures == 0 ? 0 : 1;
}

}  // namespace pml::cli
