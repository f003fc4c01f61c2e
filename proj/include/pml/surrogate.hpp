#pragma once

// Network builders for the flow and saturation architectures, their training
// loop, the surrogate rollouts (single-phase saturation iteration and the
// coupled neural simulator), and the evaluation metrics.

#include <cstdint>
#include <memory>
#include <utility>
#include <vector>

#include "pml/fields.hpp"
#include "pml/grid.hpp"
#include "pml/nn.hpp"

namespace pml::surrogate {

// Geometry of the coarse-grid flow network. n_fine and n_coarse must both be
// squares and the fine side a multiple of the coarse side (integral pooling
// ratio). channels = 1 single-phase (source image), 2 two-phase (mobility and
// source images); n_pre_conv front convolutions are only used with 2 channels.
struct FlowNetConfig {
  std::size_t n_fine = 2500;     // fine pressure DOFs = n_cells
  std::size_t n_coarse = 100;    // coarse features, square
  std::size_t alpha = 4;         // first locally connected filter count
  std::size_t alpha_prime = 8;   // second locally connected filter count
  std::size_t kernel = 4;        // locally connected kernel, stride 1, valid
  std::size_t n_u_coarse = 180;  // coarse velocity width
  std::size_t n_u_fine = 4900;   // output width = n_edges
  std::size_t channels = 1;
  std::size_t n_pre_conv = 0;
};

struct SatNetConfig {
  std::size_t n_cells = 2500;
  nn::Act act = nn::Act::linear;  // SVL activation
  std::size_t hidden = 0;         // two-phase post-sum dense width; 0 = n_cells
  std::size_t src_width = 16;     // two-phase source-branch width
};

enum class LossKind : std::uint32_t { constrained = 0, standard = 1, mse = 2 };
enum class BetaMode : std::uint32_t { fixed = 0, grid_search = 1 };

struct TrainConfig {
  double lr = 1e-3;
  std::size_t batch_size = 100;
  std::size_t epochs = 250;
  std::uint64_t seed = 1;
  double val_fraction = 0.2;  // trailing samples held out for validation
  LossKind loss = LossKind::mse;
  BetaMode beta_mode = BetaMode::fixed;
  double beta_factor = 1e-3;
  std::size_t grid_epochs = 10;  // short-run length per beta candidate
};

struct TrainHistory {
  std::vector<double> train_loss;  // mean batch loss per epoch
  std::vector<double> val_loss;    // end-of-epoch loss on the held-out samples
  double beta = 0.0;               // resolved constraint weight (0 unless constrained)
};

struct Metrics {
  double rel_l2_pct = 0.0;
  double weighted_rel_l2_pct = 0.0;
  double local_mass_mean = 0.0;
  std::vector<std::pair<std::size_t, double>> e_s;  // (horizon, percent)
  std::vector<double> water_cut;
  double seconds = 0.0;
};

// AvgPool(ratio) -> Flatten -> Dense(n_coarse) -> Reshape -> LocallyConnected2D
// (alpha, k) -> LocallyConnected2D(alpha_prime, k) -> Flatten -> Dense(n_u_coarse)
// -> Dense(n_u_fine, linear), with n_pre_conv Conv2D(8, 3x3, same) layers in front
// when configured. ReLU on hidden layers, linear output.
std::unique_ptr<nn::SequentialNet> build_flow_net(const FlowNetConfig& cfg, std::uint64_t seed);

// Same trunk with a 2-channel (mobility, source) image input and at least one
// front convolution.
std::unique_ptr<nn::SequentialNet> build_flow_net_two_phase(const FlowNetConfig& cfg,
                                                            std::uint64_t seed);

enum class Baseline { cnn, dnn };

// cnn: the flow net with the locally connected pair swapped for convolutions of
// the same geometry. dnn: equal depth, 500-wide dense hidden layers.
std::unique_ptr<nn::SequentialNet> build_baseline(Baseline kind, const FlowNetConfig& cfg,
                                                  std::uint64_t seed);

// Residual saturation net for the fixed single-phase velocity: the four
// directional velocities are premultiplied by dt/|K| and frozen in as context,
// the source enters as the exact bias dt*r.
std::unique_ptr<nn::SatSingleNet> build_sat_net_single(const SatNetConfig& cfg, const Grid& grid,
                                                       const CellDirectionalFlux& u,
                                                       const SourceField& f, double dt,
                                                       std::uint64_t seed);

std::unique_ptr<nn::SatTwoPhaseNet> build_sat_net_two_phase(const SatNetConfig& cfg,
                                                            const Grid& grid, double dt,
                                                            std::uint64_t seed);

// Seeded-shuffle epoch loop over the leading (1 - val_fraction) samples of X/Y
// (sample-major, n_samples rows). B is the divergence operator, required for the
// constrained and standard losses. Aborts with a numeric_error carrying epoch,
// batch, and max |grad| when the loss stops being finite.
TrainHistory train(nn::Network& net, const std::vector<double>& X, const std::vector<double>& Y,
                   std::size_t n_samples, const TrainConfig& cfg,
                   const SparseMatrix* B = nullptr);

struct SatRollout {
  std::vector<std::vector<double>> states;  // states[0] = S_start, then one per step
};

SatRollout rollout_sat_single(nn::Network& net, const std::vector<double>& S_start,
                              std::size_t n_steps);

struct CoupledRollout {
  std::vector<std::vector<double>> states;  // S^1 .. S^m (clamped to [0,1])
  std::vector<double> water_cut;            // fractional flow at the producer, per step
  bool unstable = false;                    // a raw prediction left [-0.05, 1.05]
  double seconds = 0.0;
};

// Neural counterpart of the sequential two-phase simulator: per step the flow
// net maps (lambda(S), r) to edge fluxes and the saturation net advances S with
// them. The schedule's rate at step n drives the step that produces S^n.
CoupledRollout rollout_coupled(nn::Network& flow_net, nn::SatTwoPhaseNet& sat_net,
                               const Grid& grid, const FluidModel& fluid,
                               const RateSchedule& schedule, const std::vector<double>& S_start,
                               std::size_t m);

// Mean over samples of 100 * ||pred - truth|| / ||truth||.
double rel_l2_percent(const double* pred, const double* truth, std::size_t n_samples,
                      std::size_t n);

// Same with the permeability-weighted velocity norm.
double weighted_rel_l2_percent(const Grid& grid, const std::vector<double>& kappa,
                               const double* pred, const double* truth, std::size_t n_samples);

// Mean over cells of |(B (u_pred - u_true))_i|, then mean over samples.
double local_mass_mean(const SparseMatrix& B, const double* u_pred, const double* u_true,
                       std::size_t n_samples);

// 100 * ||pred - truth||_2 / ||truth||_2 over one state vector.
double e_s_percent(const std::vector<double>& pred, const std::vector<double>& truth);

Metrics evaluate_flow(const Grid& grid, const std::vector<double>& kappa, const SparseMatrix& B,
                      const double* u_pred, const double* u_true, std::size_t n_samples);

}  // namespace pml::surrogate
