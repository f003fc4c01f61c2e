#include <algorithm>
#include <cmath>
#include <vector>

#include "pml/errors.hpp"
#include "pml/nn.hpp"
#include "pml/rng.hpp"

namespace pml::nn {

void adam_update(AdamState& state, const std::vector<ParamBlock>& blocks) {
  std::size_t total = 0;
  for (const ParamBlock& b : blocks) total += b.n;
  if (state.m.empty()) {
    state.m.assign(total, 0.0);
    state.v.assign(total, 0.0);
  } else if (state.m.size() != total) {
    throw inconsistency_error("adam_update: parameter count changed under the optimizer");
  }
  state.t += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  std::size_t off = 0;
  for (const ParamBlock& b : blocks) {
    double* m = state.m.data() + off;
    double* v = state.v.data() + off;
#pragma omp parallel for schedule(static)
    for (std::size_t i = 0; i < b.n; ++i) {
      const double g = b.g[i];
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      b.w[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
    }
    off += b.n;
  }
}

double loss_constrained(const double* u_pred, const double* u_true, std::size_t batch,
                        std::size_t n, const SparseMatrix& B, double beta, double* gu) {
  if (B.cols != n) throw inconsistency_error("loss_constrained: operator width != vector length");
  std::vector<double> d(n), Bd(B.rows), w(B.rows);
  double loss = 0.0;
  const double inv_batch = 1.0 / static_cast<double>(batch);
  for (std::size_t s = 0; s < batch; ++s) {
    const double* p = u_pred + s * n;
    const double* t = u_true + s * n;
    double nd2 = 0.0, nt2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      d[i] = p[i] - t[i];
      nd2 += d[i] * d[i];
      nt2 += t[i] * t[i];
    }
    if (nt2 == 0.0) throw domain_error("loss_constrained: zero-norm true sample");
    const double nd = std::sqrt(nd2), nt = std::sqrt(nt2);
    B.matvec(d.data(), Bd.data());
    double nb2 = 0.0;
    for (double v : Bd) nb2 += v * v;
    const double nb = std::sqrt(nb2);
    loss += (nd / nt + beta * nb) * inv_batch;
    if (!gu) continue;
    double* g = gu + s * n;
    const double c1 = nd > 0.0 ? inv_batch / (nd * nt) : 0.0;
    for (std::size_t i = 0; i < n; ++i) g[i] = c1 * d[i];
    if (beta != 0.0 && nb > 0.0) {
      const double c2 = beta * inv_batch / nb;
      for (std::size_t i = 0; i < B.rows; ++i) w[i] = c2 * Bd[i];
      B.matvec_transpose_add(w.data(), g);
    }
  }
  return loss;
}

double loss_mse(const double* pred, const double* target, std::size_t batch, std::size_t n,
                double* gp) {
  const std::size_t total = batch * n;
  const double scale = 1.0 / static_cast<double>(total);
  double loss = 0.0;
  for (std::size_t i = 0; i < total; ++i) {
    const double d = pred[i] - target[i];
    loss += d * d * scale;
    if (gp) gp[i] = 2.0 * d * scale;
  }
  return loss;
}

BetaStats beta_stats(const double* u_true, std::size_t n_samples, std::size_t n,
                     const SparseMatrix& B) {
  if (n_samples == 0) throw config_error("beta_stats: no samples");
  if (B.cols != n) throw inconsistency_error("beta_stats: operator width != vector length");
  std::vector<double> norms(n_samples), masses(n_samples), Bu(B.rows);
  for (std::size_t s = 0; s < n_samples; ++s) {
    const double* u = u_true + s * n;
    double n2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) n2 += u[i] * u[i];
    norms[s] = std::sqrt(n2);
    B.matvec(u, Bu.data());
    double acc = 0.0;
    for (double v : Bu) acc += std::fabs(v);
    masses[s] = acc / static_cast<double>(B.rows);
  }
  auto pop_std = [](const std::vector<double>& x) {
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= static_cast<double>(x.size());
    double var = 0.0;
    for (double v : x) var += (v - mean) * (v - mean);
    return std::sqrt(var / static_cast<double>(x.size()));
  };
  return {pop_std(norms), pop_std(masses)};
}

double select_beta(double factor, const BetaStats& stats) {
  if (!(stats.std_mass_mean > 0.0) || !std::isfinite(stats.std_mass_mean) ||
      !std::isfinite(stats.std_u_norm))
    return factor;
  return factor * stats.std_u_norm / stats.std_mass_mean;
}

double select_beta_grid(const std::vector<double>& factors, const BetaStats& stats,
                        const std::function<double(double beta)>& validation_error) {
  if (factors.empty()) throw config_error("select_beta_grid: empty candidate set");
  double best_beta = 0.0, best_err = 0.0;
  bool have = false;
  for (double f : factors) {
    const double beta = select_beta(f, stats);
    const double err = validation_error(beta);
    if (!have || err < best_err || (err == best_err && beta < best_beta)) {
      best_beta = beta;
      best_err = err;
      have = true;
    }
  }
  return best_beta;
}

double grad_check(Network& net,
                  const std::function<double(const double* y, std::size_t batch, double* gy)>& loss,
                  const double* x, std::size_t batch, std::size_t n_coords, double step,
                  std::uint64_t seed) {
  const std::size_t out = net.output_size();
  std::vector<double> gy(batch * out);
  const double* y = net.forward(x, batch, true);
  loss(y, batch, gy.data());
  net.zero_grad();
  net.backward(gy.data(), batch);

  std::vector<ParamBlock> blocks = net.params();
  std::size_t total = 0;
  double amax = 0.0;
  for (const ParamBlock& b : blocks) {
    total += b.n;
    for (std::size_t i = 0; i < b.n; ++i) amax = std::max(amax, std::fabs(b.g[i]));
  }
  // Snapshot: the FD loop reuses the net and would trample b.g otherwise.
  std::vector<std::vector<double>> an(blocks.size());
  for (std::size_t bi = 0; bi < blocks.size(); ++bi)
    an[bi].assign(blocks[bi].g, blocks[bi].g + blocks[bi].n);

  std::mt19937_64 gen(seed);
  std::vector<std::size_t> coords;
  if (n_coords >= total) {
    coords.resize(total);
    for (std::size_t i = 0; i < total; ++i) coords[i] = i;
  } else {
    while (coords.size() < n_coords) {
      const std::size_t c = rng::uniform_below(gen, total);
      if (std::find(coords.begin(), coords.end(), c) == coords.end()) coords.push_back(c);
    }
  }

  // Coordinates whose gradient sits far below the net's gradient scale are
  // dominated by central-difference cancellation noise; the floor keeps them
  // from reporting spurious relative error.
  const double floor = std::max(1e-8, 1e-3 * amax);
  double worst = 0.0;
  for (std::size_t c : coords) {
    std::size_t bi = 0, off = c;
    while (off >= blocks[bi].n) off -= blocks[bi++].n;
    double* w = blocks[bi].w + off;
    const double orig = *w;
    *w = orig + step;
    const double lp = loss(net.forward(x, batch, true), batch, gy.data());
    *w = orig - step;
    const double lm = loss(net.forward(x, batch, true), batch, gy.data());
    *w = orig;
    const double fd = (lp - lm) / (2.0 * step);
    const double a = an[bi][off];
    const double rel = std::fabs(fd - a) / std::max({std::fabs(fd), std::fabs(a), floor});
    worst = std::max(worst, rel);
  }
  return worst;
}

}  // namespace pml::nn
