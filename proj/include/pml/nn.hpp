#pragma once

// Minimal reverse-mode network engine, 64-bit floats throughout: dense, 2-D
// convolution (channels-last), average pooling, locally connected, flatten/
// reshape/scale, and the sparse velocity layer, plus Adam, the constrained flow
// loss, gradient checking, and model serialization.
//
// Buffer contract: pointers passed to forward must stay valid until the matching
// backward returns; layers cache pointers, not copies. Residual addition is part
// of the saturation network classes rather than a standalone layer.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <random>
#include <vector>

#include "pml/grid.hpp"

namespace pml::nn {

struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  std::size_t numel() const {
    std::size_t n = 1;
    for (std::size_t e : shape) n *= e;
    return n;
  }
};

enum class Act : std::uint32_t { linear = 0, relu = 1, tanh = 2, sigmoid = 3 };
enum class Pad : std::uint32_t { valid = 0, same = 1 };

double apply_act(Act a, double z);
// Activation derivatives are functions of the activation output.
double act_deriv(Act a, double y);

struct ParamBlock {
  double* w;
  double* g;
  std::size_t n;
};

// Fixed sparsity pattern in CSR form over an n x n matrix (n = number of cells).
struct SparsePattern {
  std::size_t n = 0;
  std::vector<std::size_t> row_ptr;  // n + 1
  std::vector<std::size_t> row;      // per entry, for entry-parallel loops
  std::vector<std::size_t> col;
  std::size_t nnz() const { return col.size(); }
};

// Grid-adjacency pentadiagonal pattern: offsets 0, +-1, +-nx with entries that
// would leave the grid or cross a row boundary removed.
SparsePattern pentadiagonal_pattern(std::size_t nx, std::size_t ny);

class Layer {
 public:
  virtual ~Layer() = default;
  virtual std::size_t in_size() const = 0;
  virtual std::size_t out_size() const = 0;
  virtual void forward(const double* x, std::size_t batch, double* y, bool cache) = 0;
  // Uses the pointers cached by the last forward; gx may be null when the input
  // gradient is not needed. Parameter gradients accumulate.
  virtual void backward(const double* gy, std::size_t batch, double* gx) = 0;
  virtual std::vector<ParamBlock> params() { return {}; }
  virtual void init_params(std::mt19937_64&) {}
  virtual std::uint32_t tag() const = 0;
  virtual void write_manifest(std::ostream& os) const = 0;

  void zero_grad() {
    for (ParamBlock b : params())
      for (std::size_t i = 0; i < b.n; ++i) b.g[i] = 0.0;
  }
};

class DenseLayer : public Layer {
 public:
  DenseLayer(std::size_t in, std::size_t out, Act act);
  std::size_t in_size() const override { return in_; }
  std::size_t out_size() const override { return out_; }
  void forward(const double* x, std::size_t batch, double* y, bool cache) override;
  void backward(const double* gy, std::size_t batch, double* gx) override;
  std::vector<ParamBlock> params() override;
  void init_params(std::mt19937_64& gen) override;
  std::uint32_t tag() const override { return 1; }
  void write_manifest(std::ostream& os) const override;

  std::size_t in_, out_;
  Act act_;
  std::vector<double> W, b, gW, gb;  // W is out x in, row-major

 private:
  const double* x_ = nullptr;
  const double* y_ = nullptr;
  std::vector<double> dz_;
};

class Conv2DLayer : public Layer {
 public:
  Conv2DLayer(std::size_t in_h, std::size_t in_w, std::size_t in_ch, std::size_t out_ch,
              std::size_t k, std::size_t stride, Pad pad, Act act);
  std::size_t in_size() const override { return in_h_ * in_w_ * in_ch_; }
  std::size_t out_size() const override { return out_h_ * out_w_ * out_ch_; }
  void forward(const double* x, std::size_t batch, double* y, bool cache) override;
  void backward(const double* gy, std::size_t batch, double* gx) override;
  std::vector<ParamBlock> params() override;
  void init_params(std::mt19937_64& gen) override;
  std::uint32_t tag() const override { return 2; }
  void write_manifest(std::ostream& os) const override;

  std::size_t in_h_, in_w_, in_ch_, out_ch_, k_, stride_;
  Pad pad_;
  Act act_;
  std::size_t pad_h_, pad_w_;  // leading padding; trailing gets the remainder
  std::size_t out_h_, out_w_;
  std::vector<double> W, b, gW, gb;  // W is out_ch x (k*k*in_ch)

 private:
  void im2col(const double* x, double* P) const;
  // Inference path: direct convolution vectorized over the filter index, no
  // patch matrix. Training keeps im2col because backward reuses the patches.
  void forward_direct(const double* x, std::size_t batch, double* y);
  const double* x_ = nullptr;
  const double* y_ = nullptr;
  std::vector<double> P_, dP_, dz_, Wt_;
};

class AvgPoolLayer : public Layer {
 public:
  AvgPoolLayer(std::size_t in_h, std::size_t in_w, std::size_t ch, std::size_t ph, std::size_t pw);
  std::size_t in_size() const override { return in_h_ * in_w_ * ch_; }
  std::size_t out_size() const override { return (in_h_ / ph_) * (in_w_ / pw_) * ch_; }
  void forward(const double* x, std::size_t batch, double* y, bool cache) override;
  void backward(const double* gy, std::size_t batch, double* gx) override;
  std::uint32_t tag() const override { return 3; }
  void write_manifest(std::ostream& os) const override;

  std::size_t in_h_, in_w_, ch_, ph_, pw_;
};

// Independent filter bank per output location: parameter count
// out_h*out_w*(k*k*in_ch*alpha + alpha). Stride 1, valid padding.
class LocallyConnected2DLayer : public Layer {
 public:
  LocallyConnected2DLayer(std::size_t in_h, std::size_t in_w, std::size_t in_ch, std::size_t alpha,
                          std::size_t k, Act act);
  std::size_t in_size() const override { return in_h_ * in_w_ * in_ch_; }
  std::size_t out_size() const override { return out_h_ * out_w_ * alpha_; }
  void forward(const double* x, std::size_t batch, double* y, bool cache) override;
  void backward(const double* gy, std::size_t batch, double* gx) override;
  std::vector<ParamBlock> params() override;
  void init_params(std::mt19937_64& gen) override;
  std::uint32_t tag() const override { return 4; }
  void write_manifest(std::ostream& os) const override;

  std::size_t in_h_, in_w_, in_ch_, alpha_, k_, out_h_, out_w_;
  Act act_;
  // W[(oy*out_w+ox)*alpha + f][k*k*in_ch], b[(oy*out_w+ox)*alpha + f]
  std::vector<double> W, b, gW, gb;

 private:
  const double* x_ = nullptr;
  const double* y_ = nullptr;
};

class FlattenLayer : public Layer {
 public:
  explicit FlattenLayer(std::size_t size) : size_(size) {}
  std::size_t in_size() const override { return size_; }
  std::size_t out_size() const override { return size_; }
  void forward(const double* x, std::size_t batch, double* y, bool cache) override;
  void backward(const double* gy, std::size_t batch, double* gx) override;
  std::uint32_t tag() const override { return 5; }
  void write_manifest(std::ostream& os) const override;

  std::size_t size_;
};

class ReshapeLayer : public Layer {
 public:
  explicit ReshapeLayer(std::vector<std::size_t> shape);
  std::size_t in_size() const override { return size_; }
  std::size_t out_size() const override { return size_; }
  void forward(const double* x, std::size_t batch, double* y, bool cache) override;
  void backward(const double* gy, std::size_t batch, double* gx) override;
  std::uint32_t tag() const override { return 6; }
  void write_manifest(std::ostream& os) const override;

  std::vector<std::size_t> shape_;
  std::size_t size_;
};

class ScaleLayer : public Layer {
 public:
  ScaleLayer(std::size_t size, double c) : size_(size), c_(c) {}
  std::size_t in_size() const override { return size_; }
  std::size_t out_size() const override { return size_; }
  void forward(const double* x, std::size_t batch, double* y, bool cache) override;
  void backward(const double* gy, std::size_t batch, double* gx) override;
  std::uint32_t tag() const override { return 7; }
  void write_manifest(std::ostream& os) const override;

  std::size_t size_;
  double c_;
};

// One direction of the sparse velocity map: y = act(u .* (W S)), the trainable
// values V living on a fixed pattern; u scales row a of W and is a non-trainable
// input shared across the batch.
class SparseVelocity {
 public:
  SparseVelocity() = default;
  SparseVelocity(const SparsePattern* pattern, Act act);
  void init_params(std::mt19937_64& gen);
  // y is batch x n; u is length n.
  void forward(const double* S, const double* u, std::size_t batch, double* y, bool cache);
  // Accumulates dV; adds the input gradient into gS_add when non-null.
  void backward(const double* gy, std::size_t batch, double* gS_add);

  const SparsePattern* pattern_ = nullptr;
  Act act_;
  std::vector<double> V, gV;

 private:
  const double* S_ = nullptr;
  const double* u_ = nullptr;
  const double* y_ = nullptr;
  std::vector<double> dz_;
};

class Network {
 public:
  virtual ~Network() = default;
  virtual std::size_t input_size() const = 0;
  virtual std::size_t output_size() const = 0;
  // Result is owned by the network and valid until the next forward.
  virtual const double* forward(const double* x, std::size_t batch, bool train) = 0;
  virtual void backward(const double* gy, std::size_t batch) = 0;
  virtual void zero_grad() = 0;
  virtual std::vector<ParamBlock> params() = 0;
  virtual std::uint32_t kind() const = 0;
  virtual void save_body(std::ostream& os) const = 0;

  std::size_t n_params() {
    std::size_t n = 0;
    for (ParamBlock b : params()) n += b.n;
    return n;
  }
};

class SequentialNet : public Network {
 public:
  void add(std::unique_ptr<Layer> layer);
  void init_params(std::uint64_t seed);
  std::size_t input_size() const override { return layers_.front()->in_size(); }
  std::size_t output_size() const override { return layers_.back()->out_size(); }
  const double* forward(const double* x, std::size_t batch, bool train) override;
  void backward(const double* gy, std::size_t batch) override;
  void zero_grad() override;
  std::vector<ParamBlock> params() override;
  std::uint32_t kind() const override { return 1; }
  void save_body(std::ostream& os) const override;

  std::vector<std::unique_ptr<Layer>> layers_;

 private:
  std::vector<std::vector<double>> bufs_, gbufs_;
  const double* x_ = nullptr;
  std::size_t batch_ = 0;
};

// Single-phase saturation net: out = S + sum_i act((W_i .* u_i) S) + bias, with
// the four directional velocities fixed at build time (already premultiplied by
// dt/|K|) and bias = dt*r.
class SatSingleNet : public Network {
 public:
  SatSingleNet(std::size_t nx, std::size_t ny, Act act);
  void set_context(const std::vector<double>* u4, std::vector<double> bias);
  void init_params(std::uint64_t seed);
  std::size_t input_size() const override { return pattern_.n; }
  std::size_t output_size() const override { return pattern_.n; }
  const double* forward(const double* x, std::size_t batch, bool train) override;
  void backward(const double* gy, std::size_t batch) override;
  void zero_grad() override;
  std::vector<ParamBlock> params() override;
  std::uint32_t kind() const override { return 2; }
  void save_body(std::ostream& os) const override;

  std::size_t nx_, ny_;
  Act act_;
  SparsePattern pattern_;
  SparseVelocity svl_[4];
  std::vector<double> u_[4];  // scaled directional velocities
  std::vector<double> bias_;  // dt * r

 private:
  std::vector<double> out_, phi_;
};

// Two-phase saturation net. Input record per sample: [S | u1 | u2 | u3 | u4 | r],
// each of length n_cells. In training mode the SVLs see the batch-mean velocity;
// at inference every sample uses its own. Velocities are scaled by dt/|K| before
// entering the SVLs; the source branch sees dt*r.
class SatTwoPhaseNet : public Network {
 public:
  SatTwoPhaseNet(std::size_t nx, std::size_t ny, Act act, std::size_t hidden,
                 std::size_t src_width, double dt, double cell_volume);
  void init_params(std::uint64_t seed);
  std::size_t input_size() const override { return 6 * pattern_.n; }
  std::size_t output_size() const override { return pattern_.n; }
  const double* forward(const double* x, std::size_t batch, bool train) override;
  void backward(const double* gy, std::size_t batch) override;
  void zero_grad() override;
  std::vector<ParamBlock> params() override;
  std::uint32_t kind() const override { return 3; }
  void save_body(std::ostream& os) const override;

  std::size_t nx_, ny_;
  Act act_;
  double dt_, cell_volume_;
  SparsePattern pattern_;
  SparseVelocity svl_[4];
  DenseLayer d1_, d2_, s1_, s2_;

 private:
  std::vector<double> S_, u_[4], r_, umean_[4], phi_[4], rin_, z_, t1_, t2_, sv1_, sv2_, out_,
      gz_, gt1_, gsv1_;
  bool train_ = false;
};

struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::uint64_t t = 0;
  std::vector<double> m, v;
};

// Standard bias-corrected Adam step over the concatenated parameter blocks.
void adam_update(AdamState& state, const std::vector<ParamBlock>& blocks);

// (1/N) sum_i ( ||d_i||/||t_i|| + beta ||B d_i|| ), d = u_pred - u_true, with the
// analytic gradient in gu (batch x n). beta = 0 is the standard relative loss.
double loss_constrained(const double* u_pred, const double* u_true, std::size_t batch,
                        std::size_t n, const SparseMatrix& B, double beta, double* gu);

// Mean over all elements of (pred - target)^2; gradient in gp when non-null.
double loss_mse(const double* pred, const double* target, std::size_t batch, std::size_t n,
                double* gp);

struct BetaStats {
  double std_u_norm = 0.0;    // std over samples of ||u_true||_2
  double std_mass_mean = 0.0; // std over samples of mean_i |(B u_true)_i|
};

BetaStats beta_stats(const double* u_true, std::size_t n_samples, std::size_t n,
                     const SparseMatrix& B);

// beta = factor * std(||u||)/std(mean |M|); falls back to beta = factor when the
// denominator vanishes.
double select_beta(double factor, const BetaStats& stats);

// Evaluates validation error per candidate factor (short training runs supplied
// by the caller) and returns the beta with the lowest error, ties toward the
// smaller beta.
double select_beta_grid(const std::vector<double>& factors, const BetaStats& stats,
                        const std::function<double(double beta)>& validation_error);

// Central-difference check at n_coords random parameter coordinates; returns the
// max relative error. loss(y, batch, gy) must fill gy with d loss / d y.
double grad_check(Network& net,
                  const std::function<double(const double* y, std::size_t batch, double* gy)>& loss,
                  const double* x, std::size_t batch, std::size_t n_coords, double step,
                  std::uint64_t seed);

struct LoadedModel {
  std::unique_ptr<Network> net;
  std::uint32_t kind = 0;
};

// File: "PMLNET01" magic, u32 version, u32 kind, manifest + f64 parameter blobs,
// trailing FNV-1a checksum of all preceding bytes. Round trips bitwise.
void save_model(const Network& net, const std::string& path);
LoadedModel load_model(const std::string& path);

std::uint64_t fnv1a(const void* data, std::size_t len, std::uint64_t seed = 14695981039346656037ull);

}  // namespace pml::nn
