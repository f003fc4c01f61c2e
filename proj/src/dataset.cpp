#include "pml/dataset.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "pml/binio.hpp"
#include "pml/errors.hpp"
#include "pml/nn.hpp"

namespace pml::data {

namespace {
constexpr char kMagic[8] = {'P', 'M', 'L', 'D', 'A', 'T', '0', '1'};
constexpr std::uint32_t kVersion = 1;
}  // namespace

std::size_t Dataset::field_offset(const std::string& name) const {
  std::size_t off = 0;
  for (const auto& f : fields) {
    if (f.first == name) return off;
    off += f.second;
  }
  throw io_error("dataset: no field named " + name);
}

std::size_t Dataset::field_width(const std::string& name) const {
  for (const auto& f : fields)
    if (f.first == name) return f.second;
  throw io_error("dataset: no field named " + name);
}

const std::vector<double>& Dataset::ctx(const std::string& name) const {
  for (const auto& c : context)
    if (c.first == name) return c.second;
  throw io_error("dataset: no context array named " + name);
}

std::vector<double> Dataset::gather(const std::vector<std::string>& names) const {
  const std::size_t rw = record_width();
  std::vector<std::pair<std::size_t, std::size_t>> spans;  // (offset, width)
  std::size_t out_w = 0;
  for (const auto& name : names) {
    spans.emplace_back(field_offset(name), field_width(name));
    out_w += spans.back().second;
  }
  std::vector<double> out(n_samples * out_w);
  for (std::size_t s = 0; s < n_samples; ++s) {
    const double* rec = payload.data() + s * rw;
    double* dst = out.data() + s * out_w;
    for (const auto& [off, w] : spans) {
      std::memcpy(dst, rec + off, w * sizeof(double));
      dst += w;
    }
  }
  return out;
}

void save_dataset(const Dataset& ds, const std::string& path) {
  if (ds.payload.size() != ds.n_samples * ds.record_width())
    throw inconsistency_error("dataset: payload length does not match the record layout");
  std::ostringstream os(std::ios::binary);
  os.write(kMagic, 8);
  bin::wu32(os, kVersion);
  bin::wu32(os, ds.kind);
  bin::wu32(os, static_cast<std::uint32_t>(ds.nx));
  bin::wu32(os, static_cast<std::uint32_t>(ds.ny));
  bin::wu64(os, ds.n_samples);
  bin::wu32(os, static_cast<std::uint32_t>(ds.context.size()));
  for (const auto& [name, values] : ds.context) {
    bin::wstr(os, name);
    bin::wu64(os, values.size());
    bin::wf64s(os, values.data(), values.size());
  }
  bin::wu32(os, static_cast<std::uint32_t>(ds.fields.size()));
  for (const auto& [name, width] : ds.fields) {
    bin::wstr(os, name);
    bin::wu64(os, width);
  }
  bin::wf64s(os, ds.payload.data(), ds.payload.size());
  std::string buf = os.str();
  const std::uint64_t sum = nn::fnv1a(buf.data(), buf.size());
  buf.append(reinterpret_cast<const char*>(&sum), 8);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw io_error("save_dataset: cannot open " + path);
  f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!f) throw io_error("save_dataset: write failed for " + path);
}

Dataset load_dataset(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw io_error("load_dataset: cannot open " + path);
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (buf.size() < 8 || std::memcmp(buf.data(), kMagic, 8) != 0)
    throw io_error(path + ": not a dataset file (magic mismatch)");
  if (buf.size() < 8 + 4 + 8) throw io_error(path + ": truncated, checksum cannot be verified");
  std::uint64_t stored;
  std::memcpy(&stored, buf.data() + buf.size() - 8, 8);
  if (nn::fnv1a(buf.data(), buf.size() - 8) != stored)
    throw io_error(path + ": checksum mismatch (file damaged or truncated)");

  bin::Reader r(buf.data() + 8, buf.size() - 16, path);
  const std::uint32_t version = r.u32();
  if (version != kVersion)
    throw io_error(path + ": unsupported dataset version " + std::to_string(version));
  Dataset ds;
  ds.kind = r.u32();
  ds.nx = r.u32();
  ds.ny = r.u32();
  ds.n_samples = r.u64();
  const std::uint32_t n_ctx = r.u32();
  for (std::uint32_t i = 0; i < n_ctx; ++i) {
    std::string name = r.str();
    std::vector<double> values(r.u64());
    r.f64s(values.data(), values.size());
    ds.context.emplace_back(std::move(name), std::move(values));
  }
  const std::uint32_t n_fields = r.u32();
  for (std::uint32_t i = 0; i < n_fields; ++i) {
    std::string name = r.str();
    const std::uint64_t width = r.u64();
    ds.fields.emplace_back(std::move(name), width);
  }
  ds.payload.resize(ds.n_samples * ds.record_width());
  r.f64s(ds.payload.data(), ds.payload.size());
  if (!r.done()) throw io_error(path + ": trailing bytes after payload");
  return ds;
}

}  // namespace pml::data
