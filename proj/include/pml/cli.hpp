#pragma once

// Run configuration (strict JSON), experiment wiring shared by the subcommands,
// and the subcommand entry points themselves. Every command is reproducible
// from (config, seed); artifacts other than timing reports are byte-identical
// across reruns.

#include <cstdint>
#include <string>
#include <vector>

#include "pml/dataset.hpp"
#include "pml/fields.hpp"
#include "pml/grid.hpp"
#include "pml/surrogate.hpp"

namespace pml::cli {

struct GridConfig {
  std::size_t nx = 50, ny = 50;
  double lx = 1.0, ly = 1.0;
};

// Permeability comes from a file when `file` is set, otherwise synthesized.
struct PermConfig {
  std::string file;
  std::uint64_t seed = 7;
  double sigma = 1.0;
  double corr_len = 4.0;
};

enum class Experiment { single_flow, single_sat, two_phase };

// Five-spot corner rates: multipliers uniform in [lo, hi], times base.
struct FiveSpotConfig {
  double lo = 0.5, hi = 1.5;
  double base = 2e-4;
};

// Two-well injection schedule: n_breaks breakpoints, rate multipliers uniform
// in [lo, hi], times base.
struct ScheduleConfig {
  std::size_t n_breaks = 4;
  double lo = 1.0, hi = 5.0;
  double base = 1e-3;
};

struct RunConfig {
  GridConfig grid;
  PermConfig perm;
  FluidModel fluid;
  Experiment experiment = Experiment::single_flow;
  std::size_t n_train = 1000, n_val = 250;  // single-flow sample counts
  double dt = 1.0;
  std::size_t n_steps = 1200;
  std::size_t n_schedules = 5;  // two-phase training schedules
  FiveSpotConfig five_spot;
  ScheduleConfig schedule;
  surrogate::TrainConfig train;
  bool loss_set = false;  // whether the config named a loss explicitly
  surrogate::FlowNetConfig flow_net;  // n_fine / n_u_fine / channels derived from grid
  surrogate::SatNetConfig sat_net;    // n_cells derived from grid
  std::string arch = "lcn";           // lcn | cnn | dnn | sat | sat-dense
  std::uint64_t seed = 1;
  std::string out_dir = ".";
};

// Strict parse: unknown keys anywhere in the document are rejected.
RunConfig parse_config(const std::string& json_text, const std::string& origin);
RunConfig load_config(const std::string& path);

// splitmix64-style stream derivation so sample, schedule, and hold-out draws
// never share a generator.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

// Stream id for draws that must stay disjoint from training data.
constexpr std::uint64_t kHoldoutStream = 1u << 20;

PermField make_permeability(const RunConfig& cfg, const Grid& grid);
SourceField make_five_spot(const RunConfig& cfg, const Grid& grid, std::uint64_t sample_index);
RateSchedule make_schedule(const RunConfig& cfg, std::uint64_t stream);

// Resolved network shapes for the configured grid.
surrogate::FlowNetConfig flow_net_config(const RunConfig& cfg, const Grid& grid, bool two_phase);
surrogate::SatNetConfig sat_net_config(const RunConfig& cfg, const Grid& grid);

int cmd_gen_data(const RunConfig& cfg);
int cmd_train(const RunConfig& cfg, const std::string& dataset_path, const std::string& model_out);
int cmd_rollout(const RunConfig& cfg, const std::vector<std::string>& model_paths,
                std::size_t horizon);
int cmd_benchmark(const RunConfig& cfg, const std::vector<std::string>& model_paths);
int cmd_verify();

}  // namespace pml::cli
