#include <cstring>
#include <fstream>
#include <sstream>
#include <string>

#include "pml/binio.hpp"
#include "pml/errors.hpp"
#include "pml/nn.hpp"

namespace pml::nn {

namespace {

constexpr char kMagic[8] = {'P', 'M', 'L', 'N', 'E', 'T', '0', '1'};
constexpr std::uint32_t kVersion = 1;

Act read_act(std::uint32_t v, const std::string& origin) {
  if (v > 3) throw io_error(origin + ": unknown activation tag " + std::to_string(v));
  return static_cast<Act>(v);
}

std::unique_ptr<Layer> read_layer(bin::Reader& r, const std::string& origin) {
  const std::uint32_t tag = r.u32();
  switch (tag) {
    case 1: {
      const std::uint32_t in = r.u32(), out = r.u32(), act = r.u32();
      return std::make_unique<DenseLayer>(in, out, read_act(act, origin));
    }
    case 2: {
      const std::uint32_t ih = r.u32(), iw = r.u32(), ic = r.u32(), oc = r.u32(), k = r.u32(),
                          st = r.u32(), pad = r.u32(), act = r.u32();
      if (pad > 1) throw io_error(origin + ": unknown padding tag");
      return std::make_unique<Conv2DLayer>(ih, iw, ic, oc, k, st, static_cast<Pad>(pad),
                                           read_act(act, origin));
    }
    case 3: {
      const std::uint32_t ih = r.u32(), iw = r.u32(), ch = r.u32(), ph = r.u32(), pw = r.u32();
      return std::make_unique<AvgPoolLayer>(ih, iw, ch, ph, pw);
    }
    case 4: {
      const std::uint32_t ih = r.u32(), iw = r.u32(), ic = r.u32(), al = r.u32(), k = r.u32(),
                          act = r.u32();
      return std::make_unique<LocallyConnected2DLayer>(ih, iw, ic, al, k, read_act(act, origin));
    }
    case 5:
      return std::make_unique<FlattenLayer>(r.u32());
    case 6: {
      const std::uint32_t rank = r.u32();
      std::vector<std::size_t> shape(rank);
      for (auto& e : shape) e = r.u32();
      return std::make_unique<ReshapeLayer>(std::move(shape));
    }
    case 7: {
      const std::uint32_t size = r.u32();
      const double c = r.f64();
      return std::make_unique<ScaleLayer>(size, c);
    }
    default:
      throw io_error(origin + ": unknown layer tag " + std::to_string(tag));
  }
}

}  // namespace

std::uint64_t fnv1a(const void* data, std::size_t len, std::uint64_t seed) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

void save_model(const Network& net, const std::string& path) {
  std::ostringstream os(std::ios::binary);
  os.write(kMagic, 8);
  bin::wu32(os, kVersion);
  bin::wu32(os, net.kind());
  net.save_body(os);
  std::string buf = os.str();
  const std::uint64_t sum = fnv1a(buf.data(), buf.size());
  buf.append(reinterpret_cast<const char*>(&sum), 8);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw io_error("save_model: cannot open " + path);
  f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!f) throw io_error("save_model: write failed for " + path);
}

LoadedModel load_model(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw io_error("load_model: cannot open " + path);
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (buf.size() < 8 || std::memcmp(buf.data(), kMagic, 8) != 0)
    throw io_error(path + ": not a model file (magic mismatch)");
  if (buf.size() < 8 + 4 + 4 + 8)
    throw io_error(path + ": truncated, checksum cannot be verified");
  std::uint64_t stored;
  std::memcpy(&stored, buf.data() + buf.size() - 8, 8);
  if (fnv1a(buf.data(), buf.size() - 8) != stored)
    throw io_error(path + ": checksum mismatch (file damaged or truncated)");

  bin::Reader r(buf.data() + 8, buf.size() - 16, path);
  const std::uint32_t version = r.u32();
  if (version != kVersion)
    throw io_error(path + ": unsupported model version " + std::to_string(version));
  const std::uint32_t kind = r.u32();

  LoadedModel out;
  out.kind = kind;
  switch (kind) {
    case 1: {
      auto net = std::make_unique<SequentialNet>();
      const std::uint32_t n_layers = r.u32();
      for (std::uint32_t i = 0; i < n_layers; ++i) net->add(read_layer(r, path));
      for (ParamBlock b : net->params()) r.f64s(b.w, b.n);
      out.net = std::move(net);
      break;
    }
    case 2: {
      const std::uint32_t nx = r.u32(), ny = r.u32(), act = r.u32();
      auto net = std::make_unique<SatSingleNet>(nx, ny, read_act(act, path));
      for (auto& s : net->svl_) r.f64s(s.V.data(), s.V.size());
      for (auto& u : net->u_) r.f64s(u.data(), u.size());
      r.f64s(net->bias_.data(), net->bias_.size());
      out.net = std::move(net);
      break;
    }
    case 3: {
      const std::uint32_t nx = r.u32(), ny = r.u32(), act = r.u32(), hidden = r.u32(),
                          src = r.u32();
      const double dt = r.f64(), vol = r.f64();
      auto net = std::make_unique<SatTwoPhaseNet>(nx, ny, read_act(act, path), hidden, src, dt, vol);
      for (auto& s : net->svl_) r.f64s(s.V.data(), s.V.size());
      for (DenseLayer* d : {&net->d1_, &net->d2_, &net->s1_, &net->s2_}) {
        r.f64s(d->W.data(), d->W.size());
        r.f64s(d->b.data(), d->b.size());
      }
      out.net = std::move(net);
      break;
    }
    default:
      throw io_error(path + ": unknown network kind " + std::to_string(kind));
  }
  if (!r.done()) throw io_error(path + ": trailing bytes after model body");
  return out;
}

}  // namespace pml::nn
