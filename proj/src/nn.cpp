#include "pml/nn.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <string>

#include "pml/binio.hpp"
#include "pml/errors.hpp"
#include "pml/kernels.hpp"
#include "pml/rng.hpp"

namespace pml::nn {

double apply_act(Act a, double z) {
  switch (a) {
    case Act::linear: return z;
    case Act::relu: return z > 0.0 ? z : 0.0;
    case Act::tanh: return std::tanh(z);
    case Act::sigmoid: return 1.0 / (1.0 + std::exp(-z));
  }
  return z;
}

double act_deriv(Act a, double y) {
  switch (a) {
    case Act::linear: return 1.0;
    case Act::relu: return y > 0.0 ? 1.0 : 0.0;
    case Act::tanh: return 1.0 - y * y;
    case Act::sigmoid: return y * (1.0 - y);
  }
  return 1.0;
}

namespace {

inline void activate(Act a, double* y, std::size_t n) {
  if (a == Act::linear) return;
  for (std::size_t i = 0; i < n; ++i) y[i] = apply_act(a, y[i]);
}

// He-style uniform init on fan_in.
inline void he_init(std::mt19937_64& gen, double* w, std::size_t n, std::size_t fan_in) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (std::size_t i = 0; i < n; ++i) w[i] = rng::uniform(gen, -limit, limit);
}

}  // namespace

SparsePattern pentadiagonal_pattern(std::size_t nx, std::size_t ny) {
  if (nx == 0 || ny == 0) throw config_error("pentadiagonal_pattern: empty grid");
  SparsePattern p;
  p.n = nx * ny;
  p.row_ptr.reserve(p.n + 1);
  p.row_ptr.push_back(0);
  for (std::size_t a = 0; a < p.n; ++a) {
    const std::size_t k = a / nx, h = a % nx;
    if (k > 0) { p.row.push_back(a); p.col.push_back(a - nx); }
    if (h > 0) { p.row.push_back(a); p.col.push_back(a - 1); }
    p.row.push_back(a);
    p.col.push_back(a);
    if (h + 1 < nx) { p.row.push_back(a); p.col.push_back(a + 1); }
    if (k + 1 < ny) { p.row.push_back(a); p.col.push_back(a + nx); }
    p.row_ptr.push_back(p.col.size());
  }
  return p;
}

// ---------------------------------------------------------------- DenseLayer

DenseLayer::DenseLayer(std::size_t in, std::size_t out, Act act)
    : in_(in), out_(out), act_(act) {
  if (in == 0 || out == 0) throw config_error("DenseLayer: zero dimension");
  W.assign(in * out, 0.0);
  b.assign(out, 0.0);
  gW.assign(W.size(), 0.0);
  gb.assign(b.size(), 0.0);
}

void DenseLayer::forward(const double* x, std::size_t batch, double* y, bool cache) {
  kernels::gemm_nt(x, W.data(), y, batch, out_, in_);
  for (std::size_t s = 0; s < batch; ++s) {
    double* ys = y + s * out_;
    for (std::size_t j = 0; j < out_; ++j) ys[j] = apply_act(act_, ys[j] + b[j]);
  }
  if (cache) {
    x_ = x;
    y_ = y;
  }
}

void DenseLayer::backward(const double* gy, std::size_t batch, double* gx) {
  dz_.resize(batch * out_);
  for (std::size_t i = 0; i < batch * out_; ++i) dz_[i] = gy[i] * act_deriv(act_, y_[i]);
  kernels::gemm_tn_acc(dz_.data(), x_, gW.data(), batch, in_, out_);
  for (std::size_t s = 0; s < batch; ++s)
    for (std::size_t j = 0; j < out_; ++j) gb[j] += dz_[s * out_ + j];
  if (gx) kernels::gemm_nn(dz_.data(), W.data(), gx, batch, in_, out_);
}

std::vector<ParamBlock> DenseLayer::params() {
  return {{W.data(), gW.data(), W.size()}, {b.data(), gb.data(), b.size()}};
}

void DenseLayer::init_params(std::mt19937_64& gen) {
  he_init(gen, W.data(), W.size(), in_);
  std::fill(b.begin(), b.end(), 0.0);
}

void DenseLayer::write_manifest(std::ostream& os) const {
  bin::wu32(os, static_cast<std::uint32_t>(in_));
  bin::wu32(os, static_cast<std::uint32_t>(out_));
  bin::wu32(os, static_cast<std::uint32_t>(act_));
}

// --------------------------------------------------------------- Conv2DLayer

Conv2DLayer::Conv2DLayer(std::size_t in_h, std::size_t in_w, std::size_t in_ch,
                         std::size_t out_ch, std::size_t k, std::size_t stride, Pad pad, Act act)
    : in_h_(in_h), in_w_(in_w), in_ch_(in_ch), out_ch_(out_ch), k_(k), stride_(stride), pad_(pad),
      act_(act) {
  if (stride == 0 || k == 0) throw config_error("Conv2DLayer: zero kernel or stride");
  if (pad_ == Pad::same) {
    out_h_ = (in_h_ + stride_ - 1) / stride_;
    out_w_ = (in_w_ + stride_ - 1) / stride_;
    const std::size_t need_h = (out_h_ - 1) * stride_ + k_;
    const std::size_t need_w = (out_w_ - 1) * stride_ + k_;
    // Leading side gets the floor; the remainder trails.
    pad_h_ = (need_h > in_h_ ? need_h - in_h_ : 0) / 2;
    pad_w_ = (need_w > in_w_ ? need_w - in_w_ : 0) / 2;
  } else {
    if (in_h_ < k_ || in_w_ < k_) throw config_error("Conv2DLayer: kernel exceeds input");
    out_h_ = (in_h_ - k_) / stride_ + 1;
    out_w_ = (in_w_ - k_) / stride_ + 1;
    pad_h_ = pad_w_ = 0;
  }
  W.assign(out_ch_ * k_ * k_ * in_ch_, 0.0);
  b.assign(out_ch_, 0.0);
  gW.assign(W.size(), 0.0);
  gb.assign(b.size(), 0.0);
}

void Conv2DLayer::im2col(const double* x, double* P) const {
  const std::size_t cols = k_ * k_ * in_ch_;
  for (std::size_t oy = 0; oy < out_h_; ++oy)
    for (std::size_t ox = 0; ox < out_w_; ++ox) {
      double* row = P + (oy * out_w_ + ox) * cols;
      for (std::size_t dy = 0; dy < k_; ++dy) {
        const std::ptrdiff_t iy =
            static_cast<std::ptrdiff_t>(oy * stride_ + dy) - static_cast<std::ptrdiff_t>(pad_h_);
        for (std::size_t dx = 0; dx < k_; ++dx) {
          const std::ptrdiff_t ix =
              static_cast<std::ptrdiff_t>(ox * stride_ + dx) - static_cast<std::ptrdiff_t>(pad_w_);
          double* dst = row + (dy * k_ + dx) * in_ch_;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(in_h_) || ix < 0 ||
              ix >= static_cast<std::ptrdiff_t>(in_w_)) {
            for (std::size_t c = 0; c < in_ch_; ++c) dst[c] = 0.0;
          } else {
            const double* src = x + (static_cast<std::size_t>(iy) * in_w_ +
                                     static_cast<std::size_t>(ix)) * in_ch_;
            for (std::size_t c = 0; c < in_ch_; ++c) dst[c] = src[c];
          }
        }
      }
    }
}

void Conv2DLayer::forward(const double* x, std::size_t batch, double* y, bool cache) {
  if (!cache && (out_ch_ == 4 || out_ch_ == 8 || out_ch_ == 16 || out_ch_ == 32)) {
    forward_direct(x, batch, y);
    return;
  }
  const std::size_t pos = out_h_ * out_w_, cols = k_ * k_ * in_ch_;
  P_.resize(pos * cols);
  for (std::size_t s = 0; s < batch; ++s) {
    im2col(x + s * in_size(), P_.data());
    double* ys = y + s * out_size();
    kernels::gemm_nt(P_.data(), W.data(), ys, pos, out_ch_, cols);
    for (std::size_t p = 0; p < pos; ++p)
      for (std::size_t f = 0; f < out_ch_; ++f)
        ys[p * out_ch_ + f] = apply_act(act_, ys[p * out_ch_ + f] + b[f]);
  }
  if (cache) {
    x_ = x;
    y_ = y;
  }
}

namespace {

// One sample of direct convolution with a compile-time filter count, so the
// accumulator is a fixed-width vector register block across the tap loop.
template <int OC>
void conv_direct_sample(const double* xs, double* ys, const double* Wt, const double* b,
                        std::size_t in_h, std::size_t in_w, std::size_t in_ch, std::size_t k,
                        std::size_t stride, std::size_t pad_h, std::size_t pad_w,
                        std::size_t out_h, std::size_t out_w, Act act) {
  for (std::size_t oy = 0; oy < out_h; ++oy)
    for (std::size_t ox = 0; ox < out_w; ++ox) {
      double acc[OC];
      for (int f = 0; f < OC; ++f) acc[f] = b[f];
      for (std::size_t dy = 0; dy < k; ++dy) {
        const std::ptrdiff_t iy =
            static_cast<std::ptrdiff_t>(oy * stride + dy) - static_cast<std::ptrdiff_t>(pad_h);
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(in_h)) continue;
        for (std::size_t dx = 0; dx < k; ++dx) {
          const std::ptrdiff_t ix =
              static_cast<std::ptrdiff_t>(ox * stride + dx) - static_cast<std::ptrdiff_t>(pad_w);
          if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(in_w)) continue;
          const double* px =
              xs + (static_cast<std::size_t>(iy) * in_w + static_cast<std::size_t>(ix)) * in_ch;
          const double* wt = Wt + (dy * k + dx) * in_ch * OC;
          for (std::size_t ic = 0; ic < in_ch; ++ic) {
            const double xv = px[ic];
            const double* w = wt + ic * OC;
#pragma omp simd
            for (int f = 0; f < OC; ++f) acc[f] += xv * w[f];
          }
        }
      }
      double* yo = ys + (oy * out_w + ox) * OC;
      for (int f = 0; f < OC; ++f) yo[f] = apply_act(act, acc[f]);
    }
}

}  // namespace

void Conv2DLayer::forward_direct(const double* x, std::size_t batch, double* y) {
  const std::size_t cols = k_ * k_ * in_ch_;
  Wt_.resize(cols * out_ch_);
  for (std::size_t f = 0; f < out_ch_; ++f)
    for (std::size_t c = 0; c < cols; ++c) Wt_[c * out_ch_ + f] = W[f * cols + c];
  for (std::size_t s = 0; s < batch; ++s) {
    const double* xs = x + s * in_size();
    double* ys = y + s * out_size();
    auto run = [&](auto oc_tag) {
      conv_direct_sample<decltype(oc_tag)::value>(xs, ys, Wt_.data(), b.data(), in_h_, in_w_,
                                                  in_ch_, k_, stride_, pad_h_, pad_w_, out_h_,
                                                  out_w_, act_);
    };
    switch (out_ch_) {
      case 4: run(std::integral_constant<int, 4>{}); break;
      case 8: run(std::integral_constant<int, 8>{}); break;
      case 16: run(std::integral_constant<int, 16>{}); break;
      case 32: run(std::integral_constant<int, 32>{}); break;
      default: throw inconsistency_error("conv: direct path dispatched on unsupported width");
    }
  }
}

void Conv2DLayer::backward(const double* gy, std::size_t batch, double* gx) {
  const std::size_t pos = out_h_ * out_w_, cols = k_ * k_ * in_ch_;
  P_.resize(pos * cols);
  dP_.resize(pos * cols);
  dz_.resize(pos * out_ch_);
  if (gx) std::fill(gx, gx + batch * in_size(), 0.0);
  for (std::size_t s = 0; s < batch; ++s) {
    const double* ys = y_ + s * out_size();
    const double* gys = gy + s * out_size();
    for (std::size_t i = 0; i < pos * out_ch_; ++i) dz_[i] = gys[i] * act_deriv(act_, ys[i]);
    im2col(x_ + s * in_size(), P_.data());
    kernels::gemm_tn_acc(dz_.data(), P_.data(), gW.data(), pos, cols, out_ch_);
    for (std::size_t p = 0; p < pos; ++p)
      for (std::size_t f = 0; f < out_ch_; ++f) gb[f] += dz_[p * out_ch_ + f];
    if (!gx) continue;
    kernels::gemm_nn(dz_.data(), W.data(), dP_.data(), pos, cols, out_ch_);
    double* gxs = gx + s * in_size();
    for (std::size_t oy = 0; oy < out_h_; ++oy)
      for (std::size_t ox = 0; ox < out_w_; ++ox) {
        const double* row = dP_.data() + (oy * out_w_ + ox) * cols;
        for (std::size_t dy = 0; dy < k_; ++dy) {
          const std::ptrdiff_t iy =
              static_cast<std::ptrdiff_t>(oy * stride_ + dy) - static_cast<std::ptrdiff_t>(pad_h_);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(in_h_)) continue;
          for (std::size_t dx = 0; dx < k_; ++dx) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride_ + dx) -
                                      static_cast<std::ptrdiff_t>(pad_w_);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(in_w_)) continue;
            double* dst = gxs + (static_cast<std::size_t>(iy) * in_w_ +
                                 static_cast<std::size_t>(ix)) * in_ch_;
            const double* src = row + (dy * k_ + dx) * in_ch_;
            for (std::size_t c = 0; c < in_ch_; ++c) dst[c] += src[c];
          }
        }
      }
  }
}

std::vector<ParamBlock> Conv2DLayer::params() {
  return {{W.data(), gW.data(), W.size()}, {b.data(), gb.data(), b.size()}};
}

void Conv2DLayer::init_params(std::mt19937_64& gen) {
  he_init(gen, W.data(), W.size(), k_ * k_ * in_ch_);
  std::fill(b.begin(), b.end(), 0.0);
}

void Conv2DLayer::write_manifest(std::ostream& os) const {
  for (std::size_t v : {in_h_, in_w_, in_ch_, out_ch_, k_, stride_})
    bin::wu32(os, static_cast<std::uint32_t>(v));
  bin::wu32(os, static_cast<std::uint32_t>(pad_));
  bin::wu32(os, static_cast<std::uint32_t>(act_));
}

// -------------------------------------------------------------- AvgPoolLayer

AvgPoolLayer::AvgPoolLayer(std::size_t in_h, std::size_t in_w, std::size_t ch, std::size_t ph,
                           std::size_t pw)
    : in_h_(in_h), in_w_(in_w), ch_(ch), ph_(ph), pw_(pw) {
  if (ph == 0 || pw == 0 || in_h % ph != 0 || in_w % pw != 0)
    throw config_error("AvgPoolLayer: pool must divide input extent");
}

void AvgPoolLayer::forward(const double* x, std::size_t batch, double* y, bool) {
  const std::size_t oh = in_h_ / ph_, ow = in_w_ / pw_;
  const double inv = 1.0 / static_cast<double>(ph_ * pw_);
  for (std::size_t s = 0; s < batch; ++s) {
    const double* xs = x + s * in_size();
    double* ys = y + s * out_size();
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox)
        for (std::size_t c = 0; c < ch_; ++c) {
          double acc = 0.0;
          for (std::size_t dy = 0; dy < ph_; ++dy)
            for (std::size_t dx = 0; dx < pw_; ++dx)
              acc += xs[((oy * ph_ + dy) * in_w_ + ox * pw_ + dx) * ch_ + c];
          ys[(oy * ow + ox) * ch_ + c] = acc * inv;
        }
  }
}

void AvgPoolLayer::backward(const double* gy, std::size_t batch, double* gx) {
  if (!gx) return;
  const std::size_t oh = in_h_ / ph_, ow = in_w_ / pw_;
  const double inv = 1.0 / static_cast<double>(ph_ * pw_);
  for (std::size_t s = 0; s < batch; ++s) {
    const double* gys = gy + s * out_size();
    double* gxs = gx + s * in_size();
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox)
        for (std::size_t c = 0; c < ch_; ++c) {
          const double g = gys[(oy * ow + ox) * ch_ + c] * inv;
          for (std::size_t dy = 0; dy < ph_; ++dy)
            for (std::size_t dx = 0; dx < pw_; ++dx)
              gxs[((oy * ph_ + dy) * in_w_ + ox * pw_ + dx) * ch_ + c] = g;
        }
  }
}

void AvgPoolLayer::write_manifest(std::ostream& os) const {
  for (std::size_t v : {in_h_, in_w_, ch_, ph_, pw_}) bin::wu32(os, static_cast<std::uint32_t>(v));
}

// -------------------------------------------------- LocallyConnected2DLayer

LocallyConnected2DLayer::LocallyConnected2DLayer(std::size_t in_h, std::size_t in_w,
                                                 std::size_t in_ch, std::size_t alpha,
                                                 std::size_t k, Act act)
    : in_h_(in_h), in_w_(in_w), in_ch_(in_ch), alpha_(alpha), k_(k), act_(act) {
  if (in_h < k || in_w < k) throw config_error("LocallyConnected2DLayer: kernel exceeds input");
  out_h_ = in_h - k + 1;
  out_w_ = in_w - k + 1;
  W.assign(out_h_ * out_w_ * alpha_ * k_ * k_ * in_ch_, 0.0);
  b.assign(out_h_ * out_w_ * alpha_, 0.0);
  gW.assign(W.size(), 0.0);
  gb.assign(b.size(), 0.0);
}

void LocallyConnected2DLayer::forward(const double* x, std::size_t batch, double* y, bool cache) {
  const std::size_t patch = k_ * k_ * in_ch_;
#pragma omp parallel for schedule(static)
  for (std::size_t s = 0; s < batch; ++s) {
    const double* xs = x + s * in_size();
    double* ys = y + s * out_size();
    for (std::size_t oy = 0; oy < out_h_; ++oy)
      for (std::size_t ox = 0; ox < out_w_; ++ox)
        for (std::size_t f = 0; f < alpha_; ++f) {
          const std::size_t loc = (oy * out_w_ + ox) * alpha_ + f;
          const double* w = W.data() + loc * patch;
          double acc = b[loc];
          std::size_t idx = 0;
          for (std::size_t dy = 0; dy < k_; ++dy) {
            const double* row = xs + ((oy + dy) * in_w_ + ox) * in_ch_;
            for (std::size_t dx = 0; dx < k_ * in_ch_; ++dx) acc += w[idx++] * row[dx];
          }
          ys[loc] = apply_act(act_, acc);
        }
  }
  if (cache) {
    x_ = x;
    y_ = y;
  }
}

void LocallyConnected2DLayer::backward(const double* gy, std::size_t batch, double* gx) {
  const std::size_t patch = k_ * k_ * in_ch_;
  if (gx) std::fill(gx, gx + batch * in_size(), 0.0);
  for (std::size_t s = 0; s < batch; ++s) {
    const double* xs = x_ + s * in_size();
    const double* ys = y_ + s * out_size();
    const double* gys = gy + s * out_size();
    double* gxs = gx ? gx + s * in_size() : nullptr;
    for (std::size_t oy = 0; oy < out_h_; ++oy)
      for (std::size_t ox = 0; ox < out_w_; ++ox)
        for (std::size_t f = 0; f < alpha_; ++f) {
          const std::size_t loc = (oy * out_w_ + ox) * alpha_ + f;
          const double dz = gys[loc] * act_deriv(act_, ys[loc]);
          if (dz == 0.0) continue;
          const double* w = W.data() + loc * patch;
          double* gw = gW.data() + loc * patch;
          gb[loc] += dz;
          std::size_t idx = 0;
          for (std::size_t dy = 0; dy < k_; ++dy) {
            const double* row = xs + ((oy + dy) * in_w_ + ox) * in_ch_;
            double* grow = gxs ? gxs + ((oy + dy) * in_w_ + ox) * in_ch_ : nullptr;
            for (std::size_t dx = 0; dx < k_ * in_ch_; ++dx, ++idx) {
              gw[idx] += dz * row[dx];
              if (grow) grow[dx] += dz * w[idx];
            }
          }
        }
  }
}

std::vector<ParamBlock> LocallyConnected2DLayer::params() {
  return {{W.data(), gW.data(), W.size()}, {b.data(), gb.data(), b.size()}};
}

void LocallyConnected2DLayer::init_params(std::mt19937_64& gen) {
  he_init(gen, W.data(), W.size(), k_ * k_ * in_ch_);
  std::fill(b.begin(), b.end(), 0.0);
}

void LocallyConnected2DLayer::write_manifest(std::ostream& os) const {
  for (std::size_t v : {in_h_, in_w_, in_ch_, alpha_, k_})
    bin::wu32(os, static_cast<std::uint32_t>(v));
  bin::wu32(os, static_cast<std::uint32_t>(act_));
}

// ------------------------------------------------- Flatten/Reshape/ScaleLayer

void FlattenLayer::forward(const double* x, std::size_t batch, double* y, bool) {
  std::copy(x, x + batch * size_, y);
}
void FlattenLayer::backward(const double* gy, std::size_t batch, double* gx) {
  if (gx) std::copy(gy, gy + batch * size_, gx);
}
void FlattenLayer::write_manifest(std::ostream& os) const {
  bin::wu32(os, static_cast<std::uint32_t>(size_));
}

ReshapeLayer::ReshapeLayer(std::vector<std::size_t> shape) : shape_(std::move(shape)) {
  size_ = 1;
  for (std::size_t e : shape_) size_ *= e;
}
void ReshapeLayer::forward(const double* x, std::size_t batch, double* y, bool) {
  std::copy(x, x + batch * size_, y);
}
void ReshapeLayer::backward(const double* gy, std::size_t batch, double* gx) {
  if (gx) std::copy(gy, gy + batch * size_, gx);
}
void ReshapeLayer::write_manifest(std::ostream& os) const {
  bin::wu32(os, static_cast<std::uint32_t>(shape_.size()));
  for (std::size_t e : shape_) bin::wu32(os, static_cast<std::uint32_t>(e));
}

void ScaleLayer::forward(const double* x, std::size_t batch, double* y, bool) {
  for (std::size_t i = 0; i < batch * size_; ++i) y[i] = c_ * x[i];
}
void ScaleLayer::backward(const double* gy, std::size_t batch, double* gx) {
  if (!gx) return;
  for (std::size_t i = 0; i < batch * size_; ++i) gx[i] = c_ * gy[i];
}
void ScaleLayer::write_manifest(std::ostream& os) const {
  bin::wu32(os, static_cast<std::uint32_t>(size_));
  bin::wf64(os, c_);
}

// ------------------------------------------------------------ SparseVelocity

SparseVelocity::SparseVelocity(const SparsePattern* pattern, Act act)
    : pattern_(pattern), act_(act) {
  V.assign(pattern->nnz(), 0.0);
  gV.assign(V.size(), 0.0);
}

void SparseVelocity::init_params(std::mt19937_64& gen) {
  // Small normal values keep the residual map near the identity at start.
  for (double& v : V) v = 0.1 * rng::normal(gen);
}

void SparseVelocity::forward(const double* S, const double* u, std::size_t batch, double* y,
                             bool cache) {
  kernels::scaled_csr_batch(pattern_->row_ptr.data(), pattern_->col.data(), V.data(), u, S, y,
                            pattern_->n, batch);
  activate(act_, y, batch * pattern_->n);
  if (cache) {
    S_ = S;
    u_ = u;
    y_ = y;
  }
}

void SparseVelocity::backward(const double* gy, std::size_t batch, double* gS_add) {
  const std::size_t n = pattern_->n, nnz = pattern_->nnz();
  dz_.resize(batch * n);
  for (std::size_t i = 0; i < batch * n; ++i) dz_[i] = gy[i] * act_deriv(act_, y_[i]);
#pragma omp parallel for schedule(static)
  for (std::size_t p = 0; p < nnz; ++p) {
    const std::size_t a = pattern_->row[p], bcol = pattern_->col[p];
    double acc = 0.0;
    for (std::size_t s = 0; s < batch; ++s) acc += dz_[s * n + a] * S_[s * n + bcol];
    gV[p] += u_[a] * acc;
  }
  if (!gS_add) return;
#pragma omp parallel for schedule(static)
  for (std::size_t s = 0; s < batch; ++s) {
    double* g = gS_add + s * n;
    const double* dzs = dz_.data() + s * n;
    for (std::size_t p = 0; p < nnz; ++p)
      g[pattern_->col[p]] += dzs[pattern_->row[p]] * u_[pattern_->row[p]] * V[p];
  }
}

// ------------------------------------------------------------- SequentialNet

void SequentialNet::add(std::unique_ptr<Layer> layer) {
  if (!layers_.empty() && layers_.back()->out_size() != layer->in_size())
    throw inconsistency_error("SequentialNet: layer input " + std::to_string(layer->in_size()) +
                              " does not match previous output " +
                              std::to_string(layers_.back()->out_size()));
  layers_.push_back(std::move(layer));
}

void SequentialNet::init_params(std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  for (auto& l : layers_) l->init_params(gen);
}

const double* SequentialNet::forward(const double* x, std::size_t batch, bool train) {
  bufs_.resize(layers_.size());
  const double* cur = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    bufs_[i].resize(batch * layers_[i]->out_size());
    layers_[i]->forward(cur, batch, bufs_[i].data(), train);
    cur = bufs_[i].data();
  }
  x_ = x;
  batch_ = batch;
  return cur;
}

void SequentialNet::backward(const double* gy, std::size_t batch) {
  gbufs_.resize(layers_.size());
  const double* g = gy;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    double* gx = nullptr;
    if (i > 0) {
      gbufs_[i - 1].resize(batch * layers_[i]->in_size());
      gx = gbufs_[i - 1].data();
    }
    layers_[i]->backward(g, batch, gx);
    g = gx;
  }
}

void SequentialNet::zero_grad() {
  for (auto& l : layers_) l->zero_grad();
}

std::vector<ParamBlock> SequentialNet::params() {
  std::vector<ParamBlock> blocks;
  for (auto& l : layers_)
    for (ParamBlock b : l->params()) blocks.push_back(b);
  return blocks;
}

void SequentialNet::save_body(std::ostream& os) const {
  bin::wu32(os, static_cast<std::uint32_t>(layers_.size()));
  for (const auto& l : layers_) {
    bin::wu32(os, l->tag());
    l->write_manifest(os);
  }
  for (const auto& l : layers_)
    for (ParamBlock blk : const_cast<Layer&>(*l).params()) bin::wf64s(os, blk.w, blk.n);
}

// -------------------------------------------------------------- SatSingleNet

SatSingleNet::SatSingleNet(std::size_t nx, std::size_t ny, Act act)
    : nx_(nx), ny_(ny), act_(act), pattern_(pentadiagonal_pattern(nx, ny)) {
  for (auto& s : svl_) s = SparseVelocity(&pattern_, act);
  for (auto& u : u_) u.assign(pattern_.n, 0.0);
  bias_.assign(pattern_.n, 0.0);
}

void SatSingleNet::set_context(const std::vector<double>* u4, std::vector<double> bias) {
  for (int i = 0; i < 4; ++i) {
    if (u4[i].size() != pattern_.n) throw inconsistency_error("SatSingleNet: velocity size");
    u_[i] = u4[i];
  }
  if (bias.size() != pattern_.n) throw inconsistency_error("SatSingleNet: bias size");
  bias_ = std::move(bias);
}

void SatSingleNet::init_params(std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  for (auto& s : svl_) s.init_params(gen);
}

const double* SatSingleNet::forward(const double* x, std::size_t batch, bool train) {
  const std::size_t n = pattern_.n;
  out_.resize(batch * n);
  phi_.resize(4 * batch * n);
  for (std::size_t s = 0; s < batch; ++s)
    for (std::size_t c = 0; c < n; ++c) out_[s * n + c] = x[s * n + c] + bias_[c];
  for (int i = 0; i < 4; ++i) {
    double* phi = phi_.data() + static_cast<std::size_t>(i) * batch * n;
    svl_[i].forward(x, u_[i].data(), batch, phi, train);
    for (std::size_t j = 0; j < batch * n; ++j) out_[j] += phi[j];
  }
  return out_.data();
}

void SatSingleNet::backward(const double* gy, std::size_t batch) {
  for (auto& s : svl_) s.backward(gy, batch, nullptr);
}

void SatSingleNet::zero_grad() {
  for (auto& s : svl_) std::fill(s.gV.begin(), s.gV.end(), 0.0);
}

std::vector<ParamBlock> SatSingleNet::params() {
  std::vector<ParamBlock> blocks;
  for (auto& s : svl_) blocks.push_back({s.V.data(), s.gV.data(), s.V.size()});
  return blocks;
}

void SatSingleNet::save_body(std::ostream& os) const {
  bin::wu32(os, static_cast<std::uint32_t>(nx_));
  bin::wu32(os, static_cast<std::uint32_t>(ny_));
  bin::wu32(os, static_cast<std::uint32_t>(act_));
  for (const auto& s : svl_) bin::wf64s(os, s.V.data(), s.V.size());
  for (const auto& u : u_) bin::wf64s(os, u.data(), u.size());
  bin::wf64s(os, bias_.data(), bias_.size());
}

// ------------------------------------------------------------ SatTwoPhaseNet

SatTwoPhaseNet::SatTwoPhaseNet(std::size_t nx, std::size_t ny, Act act, std::size_t hidden,
                               std::size_t src_width, double dt, double cell_volume)
    : nx_(nx), ny_(ny), act_(act), dt_(dt), cell_volume_(cell_volume),
      pattern_(pentadiagonal_pattern(nx, ny)),
      d1_(nx * ny, hidden, Act::relu), d2_(hidden, nx * ny, Act::linear),
      s1_(nx * ny, src_width, Act::relu), s2_(src_width, nx * ny, Act::linear) {
  for (auto& s : svl_) s = SparseVelocity(&pattern_, act);
}

void SatTwoPhaseNet::init_params(std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  for (auto& s : svl_) s.init_params(gen);
  d1_.init_params(gen);
  d2_.init_params(gen);
  s1_.init_params(gen);
  s2_.init_params(gen);
}

const double* SatTwoPhaseNet::forward(const double* x, std::size_t batch, bool train) {
  const std::size_t n = pattern_.n;
  train_ = train;
  rin_.resize(batch * n);
  z_.assign(batch * n, 0.0);
  for (int i = 0; i < 4; ++i) {
    phi_[i].resize(batch * n);
    umean_[i].resize(n);
  }
  const double uscale = dt_ / cell_volume_;
  if (train) {
    // Training copies the record apart: backward revisits the saturation and
    // velocity blocks, and the sparse layers see batch-mean velocities.
    S_.resize(batch * n);
    r_.resize(batch * n);
    for (int i = 0; i < 4; ++i) u_[i].resize(batch * n);
    for (std::size_t s = 0; s < batch; ++s) {
      const double* rec = x + s * 6 * n;
      std::copy(rec, rec + n, S_.begin() + s * n);
      for (int i = 0; i < 4; ++i)
        std::copy(rec + (i + 1) * n, rec + (i + 2) * n, u_[i].begin() + s * n);
      std::copy(rec + 5 * n, rec + 6 * n, r_.begin() + s * n);
    }
    for (int i = 0; i < 4; ++i) {
      for (std::size_t c = 0; c < n; ++c) {
        double acc = 0.0;
        for (std::size_t s = 0; s < batch; ++s) acc += u_[i][s * n + c];
        umean_[i][c] = uscale * acc / static_cast<double>(batch);
      }
      svl_[i].forward(S_.data(), umean_[i].data(), batch, phi_[i].data(), true);
      for (std::size_t j = 0; j < batch * n; ++j) z_[j] += phi_[i][j];
    }
    for (std::size_t j = 0; j < batch * n; ++j) rin_[j] = dt_ * r_[j];
  } else {
    // Inference reads straight out of the record; velocities are per sample.
    for (std::size_t s = 0; s < batch; ++s) {
      const double* rec = x + s * 6 * n;
      double* zz = z_.data() + s * n;
      for (int i = 0; i < 4; ++i) {
        const double* us = rec + (i + 1) * n;
        for (std::size_t c = 0; c < n; ++c) umean_[i][c] = uscale * us[c];
        svl_[i].forward(rec, umean_[i].data(), 1, phi_[i].data() + s * n, false);
        const double* ph = phi_[i].data() + s * n;
        for (std::size_t c = 0; c < n; ++c) zz[c] += ph[c];
      }
      const double* rs = rec + 5 * n;
      double* ri = rin_.data() + s * n;
      for (std::size_t c = 0; c < n; ++c) ri[c] = dt_ * rs[c];
    }
  }
  t1_.resize(batch * d1_.out_size());
  t2_.resize(batch * n);
  sv1_.resize(batch * s1_.out_size());
  sv2_.resize(batch * n);
  d1_.forward(z_.data(), batch, t1_.data(), train);
  d2_.forward(t1_.data(), batch, t2_.data(), train);
  s1_.forward(rin_.data(), batch, sv1_.data(), train);
  s2_.forward(sv1_.data(), batch, sv2_.data(), train);
  out_.resize(batch * n);
  if (train) {
    for (std::size_t j = 0; j < batch * n; ++j) out_[j] = S_[j] + t2_[j] + sv2_[j];
  } else {
    for (std::size_t s = 0; s < batch; ++s) {
      const double* Sx = x + s * 6 * n;
      double* os = out_.data() + s * n;
      const double* ts = t2_.data() + s * n;
      const double* vs = sv2_.data() + s * n;
      for (std::size_t c = 0; c < n; ++c) os[c] = Sx[c] + ts[c] + vs[c];
    }
  }
  return out_.data();
}

void SatTwoPhaseNet::backward(const double* gy, std::size_t batch) {
  if (!train_) throw inconsistency_error("SatTwoPhaseNet: backward requires a training forward");
  const std::size_t n = pattern_.n;
  gt1_.resize(batch * d1_.out_size());
  gz_.resize(batch * n);
  gsv1_.resize(batch * s1_.out_size());
  d2_.backward(gy, batch, gt1_.data());
  d1_.backward(gt1_.data(), batch, gz_.data());
  s2_.backward(gy, batch, gsv1_.data());
  s1_.backward(gsv1_.data(), batch, nullptr);
  for (auto& s : svl_) s.backward(gz_.data(), batch, nullptr);
}

void SatTwoPhaseNet::zero_grad() {
  for (auto& s : svl_) std::fill(s.gV.begin(), s.gV.end(), 0.0);
  d1_.zero_grad();
  d2_.zero_grad();
  s1_.zero_grad();
  s2_.zero_grad();
}

std::vector<ParamBlock> SatTwoPhaseNet::params() {
  std::vector<ParamBlock> blocks;
  for (auto& s : svl_) blocks.push_back({s.V.data(), s.gV.data(), s.V.size()});
  for (DenseLayer* d : {&d1_, &d2_, &s1_, &s2_})
    for (ParamBlock b : d->params()) blocks.push_back(b);
  return blocks;
}

void SatTwoPhaseNet::save_body(std::ostream& os) const {
  bin::wu32(os, static_cast<std::uint32_t>(nx_));
  bin::wu32(os, static_cast<std::uint32_t>(ny_));
  bin::wu32(os, static_cast<std::uint32_t>(act_));
  bin::wu32(os, static_cast<std::uint32_t>(d1_.out_size()));
  bin::wu32(os, static_cast<std::uint32_t>(s1_.out_size()));
  bin::wf64(os, dt_);
  bin::wf64(os, cell_volume_);
  for (const auto& s : svl_) bin::wf64s(os, s.V.data(), s.V.size());
  for (const DenseLayer* d : {&d1_, &d2_, &s1_, &s2_}) {
    bin::wf64s(os, d->W.data(), d->W.size());
    bin::wf64s(os, d->b.data(), d->b.size());
  }
}

}  // namespace pml::nn
