#include "pml/surrogate.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>

#include "pml/errors.hpp"
#include "pml/flow.hpp"
#include "pml/rng.hpp"
#include "pml/transport.hpp"

namespace pml::surrogate {

namespace {

std::size_t isqrt_exact(std::size_t n, const char* what) {
  const auto r = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(n))));
  if (r * r != n) throw config_error(std::string(what) + " must be a square number");
  return r;
}

struct FlowGeometry {
  std::size_t side, cside, ratio;
};

FlowGeometry check_geometry(const FlowNetConfig& cfg) {
  FlowGeometry g;
  g.side = isqrt_exact(cfg.n_fine, "flow net: n_fine");
  g.cside = isqrt_exact(cfg.n_coarse, "flow net: n_coarse");
  if (g.cside == 0 || g.side % g.cside != 0)
    throw config_error("flow net: pooling ratio is not integral");
  g.ratio = g.side / g.cside;
  if (cfg.kernel == 0 || g.cside < 2 * cfg.kernel - 1)
    throw config_error("flow net: coarse map too small for two locally connected layers");
  if (cfg.channels == 0 || cfg.n_u_coarse == 0 || cfg.n_u_fine == 0)
    throw config_error("flow net: zero width");
  return g;
}

std::unique_ptr<nn::SequentialNet> build_trunk(const FlowNetConfig& cfg, bool shared_filters,
                                               std::uint64_t seed) {
  using namespace nn;
  const FlowGeometry g = check_geometry(cfg);
  auto net = std::make_unique<SequentialNet>();
  std::size_t ch = cfg.channels;
  for (std::size_t i = 0; i < cfg.n_pre_conv; ++i) {
    net->add(std::make_unique<Conv2DLayer>(g.side, g.side, ch, 8, 3, 1, Pad::same, Act::relu));
    ch = 8;
  }
  net->add(std::make_unique<AvgPoolLayer>(g.side, g.side, ch, g.ratio, g.ratio));
  net->add(std::make_unique<FlattenLayer>(g.cside * g.cside * ch));
  net->add(std::make_unique<DenseLayer>(g.cside * g.cside * ch, cfg.n_coarse, Act::relu));
  net->add(std::make_unique<ReshapeLayer>(std::vector<std::size_t>{g.cside, g.cside, 1}));
  const std::size_t k = cfg.kernel;
  const std::size_t h1 = g.cside - k + 1, h2 = h1 - k + 1;
  if (shared_filters) {
    net->add(std::make_unique<Conv2DLayer>(g.cside, g.cside, 1, cfg.alpha, k, 1, Pad::valid,
                                           Act::relu));
    net->add(std::make_unique<Conv2DLayer>(h1, h1, cfg.alpha, cfg.alpha_prime, k, 1, Pad::valid,
                                           Act::relu));
  } else {
    net->add(std::make_unique<LocallyConnected2DLayer>(g.cside, g.cside, 1, cfg.alpha, k,
                                                       Act::relu));
    net->add(std::make_unique<LocallyConnected2DLayer>(h1, h1, cfg.alpha, cfg.alpha_prime, k,
                                                       Act::relu));
  }
  net->add(std::make_unique<FlattenLayer>(h2 * h2 * cfg.alpha_prime));
  net->add(std::make_unique<DenseLayer>(h2 * h2 * cfg.alpha_prime, cfg.n_u_coarse, Act::relu));
  net->add(std::make_unique<DenseLayer>(cfg.n_u_coarse, cfg.n_u_fine, Act::linear));
  net->init_params(seed);
  return net;
}

}  // namespace

std::unique_ptr<nn::SequentialNet> build_flow_net(const FlowNetConfig& cfg, std::uint64_t seed) {
  return build_trunk(cfg, false, seed);
}

std::unique_ptr<nn::SequentialNet> build_flow_net_two_phase(const FlowNetConfig& cfg,
                                                            std::uint64_t seed) {
  if (cfg.channels != 2) throw config_error("two-phase flow net needs 2 input channels");
  if (cfg.n_pre_conv < 1) throw config_error("two-phase flow net needs a front convolution");
  return build_trunk(cfg, false, seed);
}

std::unique_ptr<nn::SequentialNet> build_baseline(Baseline kind, const FlowNetConfig& cfg,
                                                  std::uint64_t seed) {
  using namespace nn;
  if (kind == Baseline::cnn) return build_trunk(cfg, true, seed);
  check_geometry(cfg);
  // Equal depth to the locally connected net: four 500-wide hidden layers.
  auto net = std::make_unique<SequentialNet>();
  const std::size_t in = cfg.n_fine * cfg.channels;
  net->add(std::make_unique<FlattenLayer>(in));
  net->add(std::make_unique<DenseLayer>(in, 500, Act::relu));
  for (int i = 0; i < 3; ++i) net->add(std::make_unique<DenseLayer>(500, 500, Act::relu));
  net->add(std::make_unique<DenseLayer>(500, cfg.n_u_fine, Act::linear));
  net->init_params(seed);
  return net;
}

std::unique_ptr<nn::SatSingleNet> build_sat_net_single(const SatNetConfig& cfg, const Grid& grid,
                                                       const CellDirectionalFlux& u,
                                                       const SourceField& f, double dt,
                                                       std::uint64_t seed) {
  if (cfg.n_cells != grid.n_cells) throw config_error("sat net: n_cells does not match the grid");
  if (!(dt > 0.0)) throw config_error("sat net: dt must be positive");
  auto net = std::make_unique<nn::SatSingleNet>(grid.nx, grid.ny, cfg.act);
  const double scale = dt / grid.cell_volume;
  std::vector<double> su[4];
  const std::vector<double>* dirs[4] = {&u.u1, &u.u2, &u.u3, &u.u4};
  for (int i = 0; i < 4; ++i) {
    su[i].resize(grid.n_cells);
    for (std::size_t c = 0; c < grid.n_cells; ++c) su[i][c] = scale * (*dirs[i])[c];
  }
  std::vector<double> bias(grid.n_cells);
  for (std::size_t c = 0; c < grid.n_cells; ++c) bias[c] = dt * f.r[c];
  net->set_context(su, std::move(bias));
  net->init_params(seed);
  return net;
}

std::unique_ptr<nn::SatTwoPhaseNet> build_sat_net_two_phase(const SatNetConfig& cfg,
                                                            const Grid& grid, double dt,
                                                            std::uint64_t seed) {
  if (cfg.n_cells != grid.n_cells) throw config_error("sat net: n_cells does not match the grid");
  if (!(dt > 0.0)) throw config_error("sat net: dt must be positive");
  const std::size_t hidden = cfg.hidden ? cfg.hidden : cfg.n_cells;
  auto net = std::make_unique<nn::SatTwoPhaseNet>(grid.nx, grid.ny, cfg.act, hidden, cfg.src_width,
                                                  dt, grid.cell_volume);
  net->init_params(seed);
  return net;
}

namespace {

double eval_loss(nn::Network& net, const double* X, const double* Y, std::size_t n,
                 LossKind kind, const SparseMatrix* B, double beta) {
  const double* y = net.forward(X, n, false);
  if (kind == LossKind::mse) return nn::loss_mse(y, Y, n, net.output_size(), nullptr);
  return nn::loss_constrained(y, Y, n, net.output_size(), *B, kind == LossKind::standard ? 0.0 : beta,
                              nullptr);
}

double eval_rel_l2(nn::Network& net, const double* X, const double* Y, std::size_t n) {
  const double* y = net.forward(X, n, false);
  return rel_l2_percent(y, Y, n, net.output_size());
}

struct EpochRunner {
  nn::Network& net;
  const double* X;
  const double* Y;
  std::size_t n_train, in, out;
  const TrainConfig& cfg;
  const SparseMatrix* B;

  void run(double beta, std::size_t epochs, nn::AdamState& adam, std::mt19937_64& shuf,
           std::vector<double>* train_curve, const double* Xv, const double* Yv, std::size_t n_val,
           std::vector<double>* val_curve) {
    std::vector<std::size_t> perm(n_train);
    for (std::size_t i = 0; i < n_train; ++i) perm[i] = i;
    std::vector<double> Xb(cfg.batch_size * in), Yb(cfg.batch_size * out),
        gy(cfg.batch_size * out);
    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
      for (std::size_t i = n_train; i > 1; --i)
        std::swap(perm[i - 1], perm[rng::uniform_below(shuf, i)]);
      double epoch_loss = 0.0;
      std::size_t batch_index = 0;
      for (std::size_t start = 0; start < n_train; start += cfg.batch_size, ++batch_index) {
        const std::size_t bs = std::min(cfg.batch_size, n_train - start);
        for (std::size_t s = 0; s < bs; ++s) {
          const std::size_t src = perm[start + s];
          std::copy(X + src * in, X + (src + 1) * in, Xb.begin() + s * in);
          std::copy(Y + src * out, Y + (src + 1) * out, Yb.begin() + s * out);
        }
        const double* y = net.forward(Xb.data(), bs, true);
        double L;
        if (cfg.loss == LossKind::mse)
          L = nn::loss_mse(y, Yb.data(), bs, out, gy.data());
        else
          L = nn::loss_constrained(y, Yb.data(), bs, out, *B,
                                   cfg.loss == LossKind::standard ? 0.0 : beta, gy.data());
        net.zero_grad();
        net.backward(gy.data(), bs);
        if (!std::isfinite(L)) {
          double maxg = 0.0;
          for (nn::ParamBlock blk : net.params())
            for (std::size_t i = 0; i < blk.n; ++i) maxg = std::max(maxg, std::fabs(blk.g[i]));
          std::ostringstream msg;
          msg << "training diverged: non-finite loss at epoch " << epoch << ", batch "
              << batch_index << ", max |grad| = " << maxg;
          throw numeric_error(msg.str());
        }
        nn::adam_update(adam, net.params());
        epoch_loss += L * static_cast<double>(bs);
      }
      if (train_curve) train_curve->push_back(epoch_loss / static_cast<double>(n_train));
      if (val_curve && n_val > 0)
        val_curve->push_back(eval_loss(net, Xv, Yv, n_val, cfg.loss, B, beta));
    }
  }
};

}  // namespace

TrainHistory train(nn::Network& net, const std::vector<double>& X, const std::vector<double>& Y,
                   std::size_t n_samples, const TrainConfig& cfg, const SparseMatrix* B) {
  const std::size_t in = net.input_size(), out = net.output_size();
  if (n_samples == 0) throw config_error("train: empty dataset");
  if (X.size() != n_samples * in || Y.size() != n_samples * out)
    throw inconsistency_error("train: dataset shape does not match the network");
  if (cfg.val_fraction < 0.0 || cfg.val_fraction >= 1.0)
    throw config_error("train: val_fraction must lie in [0, 1)");
  if (cfg.lr < 0.0) throw config_error("train: negative learning rate");
  const std::size_t n_val =
      static_cast<std::size_t>(cfg.val_fraction * static_cast<double>(n_samples) + 0.5);
  const std::size_t n_train = n_samples - n_val;
  if (n_train == 0) throw config_error("train: no training samples left after the split");
  if (cfg.batch_size == 0 || cfg.batch_size > n_train)
    throw config_error("train: batch_size must lie in [1, n_train]");
  if (cfg.loss != LossKind::mse && !B)
    throw inconsistency_error("train: the constrained and standard losses need the divergence operator");

  const double* Xv = X.data() + n_train * in;
  const double* Yv = Y.data() + n_train * out;
  EpochRunner runner{net, X.data(), Y.data(), n_train, in, out, cfg, B};

  TrainHistory hist;
  if (cfg.loss == LossKind::constrained) {
    const nn::BetaStats stats = nn::beta_stats(Y.data(), n_train, out, *B);
    if (cfg.beta_mode == BetaMode::fixed) {
      hist.beta = nn::select_beta(cfg.beta_factor, stats);
    } else {
      // Short training run per candidate from the same initial parameters.
      std::vector<std::vector<double>> snap;
      for (nn::ParamBlock blk : net.params()) snap.emplace_back(blk.w, blk.w + blk.n);
      auto restore = [&]() {
        std::size_t i = 0;
        for (nn::ParamBlock blk : net.params())
          std::copy(snap[i].begin(), snap[i].end(), blk.w), ++i;
      };
      const std::vector<double> factors = {1e-4, 1e-3, 1e-2, 1e-1, 1.0};
      hist.beta = nn::select_beta_grid(factors, stats, [&](double beta) {
        restore();
        nn::AdamState adam;
        adam.lr = cfg.lr;
        std::mt19937_64 shuf(cfg.seed);
        runner.run(beta, cfg.grid_epochs, adam, shuf, nullptr, nullptr, nullptr, 0, nullptr);
        return n_val > 0 ? eval_rel_l2(net, Xv, Yv, n_val)
                         : eval_rel_l2(net, X.data(), Y.data(), n_train);
      });
      restore();
    }
  }

  nn::AdamState adam;
  adam.lr = cfg.lr;
  std::mt19937_64 shuf(cfg.seed);
  runner.run(hist.beta, cfg.epochs, adam, shuf, &hist.train_loss, Xv, Yv, n_val, &hist.val_loss);
  return hist;
}

SatRollout rollout_sat_single(nn::Network& net, const std::vector<double>& S_start,
                              std::size_t n_steps) {
  if (S_start.size() != net.input_size())
    throw inconsistency_error("rollout: state size does not match the network");
  SatRollout out;
  out.states.reserve(n_steps + 1);
  out.states.push_back(S_start);
  std::vector<double> S = S_start;
  for (std::size_t step = 0; step < n_steps; ++step) {
    const double* y = net.forward(S.data(), 1, false);
    S.assign(y, y + net.output_size());
    out.states.push_back(S);
  }
  return out;
}

CoupledRollout rollout_coupled(nn::Network& flow_net, nn::SatTwoPhaseNet& sat_net,
                               const Grid& grid, const FluidModel& fluid,
                               const RateSchedule& schedule, const std::vector<double>& S_start,
                               std::size_t m) {
  const std::size_t n = grid.n_cells;
  if (S_start.size() != n) throw inconsistency_error("rollout: state size does not match the grid");
  if (flow_net.input_size() != 2 * n)
    throw inconsistency_error("rollout: flow net does not take a 2-channel cell image");
  if (flow_net.output_size() != grid.n_edges)
    throw inconsistency_error("rollout: flow net output is not an edge-flux vector");
  if (sat_net.input_size() != 6 * n)
    throw inconsistency_error("rollout: saturation net does not match the grid");

  CoupledRollout out;
  out.states.reserve(m);
  out.water_cut.reserve(m);
  const std::size_t producer = grid.nx - 1;
  std::vector<double> S = S_start;
  std::vector<double> img(2 * n), rec(6 * n);
  double last_rate = std::numeric_limits<double>::quiet_NaN();
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t step = 1; step <= m; ++step) {
    // The source is piecewise constant in time; rebuild only at breakpoints.
    const double rate = schedule.rate_at(step);
    if (rate != last_rate) {
      const SourceField src = two_well_source(grid, rate);
      for (std::size_t c = 0; c < n; ++c) img[2 * c + 1] = src.r[c];
      std::copy(src.r.begin(), src.r.end(), rec.begin() + 5 * n);
      last_rate = rate;
    }
    const std::vector<double> lambda = mobility(fluid, S);
    for (std::size_t c = 0; c < n; ++c) img[2 * c] = lambda[c];
    const double* ue = flow_net.forward(img.data(), 1, false);
    // Scatter the predicted edge fluxes straight into the record's four
    // outward-face blocks (the edge_to_directional convention).
    std::copy(S.begin(), S.end(), rec.begin());
    std::fill(rec.begin() + n, rec.begin() + 5 * n, 0.0);
    double* r1 = rec.data() + n;
    double* r2 = rec.data() + 2 * n;
    double* r3 = rec.data() + 3 * n;
    double* r4 = rec.data() + 4 * n;
    for (std::size_t k = 0; k < grid.ny; ++k)
      for (std::size_t h = 0; h + 1 < grid.nx; ++h) {
        const double q = ue[grid.vertical_edge(k, h)];
        r4[grid.cell_id(k, h)] = q;
        r3[grid.cell_id(k, h + 1)] = -q;
      }
    for (std::size_t k = 0; k + 1 < grid.ny; ++k)
      for (std::size_t h = 0; h < grid.nx; ++h) {
        const double q = ue[grid.horizontal_edge(k, h)];
        r2[grid.cell_id(k, h)] = q;
        r1[grid.cell_id(k + 1, h)] = -q;
      }
    const double* Sn = sat_net.forward(rec.data(), 1, false);
    for (std::size_t c = 0; c < n; ++c) {
      if (Sn[c] < -0.05 || Sn[c] > 1.05) out.unstable = true;
      S[c] = std::clamp(Sn[c], 0.0, 1.0);
    }
    out.states.push_back(S);
    out.water_cut.push_back(water_cut(fluid, S, producer));
  }
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

double rel_l2_percent(const double* pred, const double* truth, std::size_t n_samples,
                      std::size_t n) {
  if (n_samples == 0) throw config_error("rel_l2: no samples");
  double acc = 0.0;
  for (std::size_t s = 0; s < n_samples; ++s) {
    double nd2 = 0.0, nt2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = pred[s * n + i] - truth[s * n + i];
      nd2 += d * d;
      nt2 += truth[s * n + i] * truth[s * n + i];
    }
    if (nt2 == 0.0) throw domain_error("rel_l2: zero-norm reference sample");
    acc += std::sqrt(nd2 / nt2);
  }
  return 100.0 * acc / static_cast<double>(n_samples);
}

double weighted_rel_l2_percent(const Grid& grid, const std::vector<double>& kappa,
                               const double* pred, const double* truth, std::size_t n_samples) {
  if (n_samples == 0) throw config_error("rel_l2: no samples");
  const std::size_t n = grid.n_edges;
  EdgeFlux diff, ref;
  diff.values.resize(n);
  ref.values.resize(n);
  double acc = 0.0;
  for (std::size_t s = 0; s < n_samples; ++s) {
    for (std::size_t i = 0; i < n; ++i) {
      diff.values[i] = pred[s * n + i] - truth[s * n + i];
      ref.values[i] = truth[s * n + i];
    }
    const double nt = weighted_velocity_norm(grid, ref, kappa);
    if (nt == 0.0) throw domain_error("rel_l2: zero-norm reference sample");
    acc += weighted_velocity_norm(grid, diff, kappa) / nt;
  }
  return 100.0 * acc / static_cast<double>(n_samples);
}

double local_mass_mean(const SparseMatrix& B, const double* u_pred, const double* u_true,
                       std::size_t n_samples) {
  if (n_samples == 0) throw config_error("local_mass_mean: no samples");
  std::vector<double> d(B.cols), Bd(B.rows);
  double acc = 0.0;
  for (std::size_t s = 0; s < n_samples; ++s) {
    for (std::size_t i = 0; i < B.cols; ++i)
      d[i] = u_pred[s * B.cols + i] - u_true[s * B.cols + i];
    B.matvec(d.data(), Bd.data());
    double m = 0.0;
    for (double v : Bd) m += std::fabs(v);
    acc += m / static_cast<double>(B.rows);
  }
  return acc / static_cast<double>(n_samples);
}

double e_s_percent(const std::vector<double>& pred, const std::vector<double>& truth) {
  if (pred.size() != truth.size()) throw inconsistency_error("e_s: size mismatch");
  double nd2 = 0.0, nt2 = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - truth[i];
    nd2 += d * d;
    nt2 += truth[i] * truth[i];
  }
  if (nt2 == 0.0) throw domain_error("e_s: zero-norm reference state");
  return 100.0 * std::sqrt(nd2 / nt2);
}

Metrics evaluate_flow(const Grid& grid, const std::vector<double>& kappa, const SparseMatrix& B,
                      const double* u_pred, const double* u_true, std::size_t n_samples) {
  Metrics m;
  m.rel_l2_pct = rel_l2_percent(u_pred, u_true, n_samples, grid.n_edges);
  m.weighted_rel_l2_pct = weighted_rel_l2_percent(grid, kappa, u_pred, u_true, n_samples);
  m.local_mass_mean = local_mass_mean(B, u_pred, u_true, n_samples);
  return m;
}

}  // namespace pml::surrogate
