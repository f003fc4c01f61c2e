#pragma once

// Little-endian binary stream helpers shared by the model and dataset formats.
// This toolkit targets little-endian hosts; values are written in native layout.

#include <cstdint>
#include <cstring>
#include <ostream>
#include <string>

#include "pml/errors.hpp"

namespace pml::bin {

inline void wu32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), 4);
}
inline void wu64(std::ostream& os, std::uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), 8);
}
inline void wf64(std::ostream& os, double v) { os.write(reinterpret_cast<const char*>(&v), 8); }
inline void wf64s(std::ostream& os, const double* v, std::size_t n) {
  os.write(reinterpret_cast<const char*>(v), static_cast<std::streamsize>(8 * n));
}
inline void wstr(std::ostream& os, const std::string& s) {
  wu32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

class Reader {
 public:
  Reader(const char* data, std::size_t len, std::string origin)
      : p_(data), end_(data + len), origin_(std::move(origin)) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v;
    std::memcpy(&v, p_, 4);
    p_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v;
    std::memcpy(&v, p_, 8);
    p_ += 8;
    return v;
  }
  double f64() {
    need(8);
    double v;
    std::memcpy(&v, p_, 8);
    p_ += 8;
    return v;
  }
  void f64s(double* dst, std::size_t n) {
    need(8 * n);
    std::memcpy(dst, p_, 8 * n);
    p_ += 8 * n;
  }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(p_, n);
    p_ += n;
    return s;
  }
  void bytes(void* dst, std::size_t n) {
    need(n);
    std::memcpy(dst, p_, n);
    p_ += n;
  }
  bool done() const { return p_ == end_; }
  std::size_t remaining() const { return static_cast<std::size_t>(end_ - p_); }

 private:
  void need(std::size_t n) {
    if (static_cast<std::size_t>(end_ - p_) < n)
      throw io_error(origin_ + ": truncated (need " + std::to_string(n) + " more bytes)");
  }
  const char* p_;
  const char* end_;
  std::string origin_;
};

}  // namespace pml::bin
