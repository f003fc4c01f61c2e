#pragma once

// Sample containers and the on-disk dataset format. A dataset is a fixed-width
// record table (one record per sample) plus named context arrays shared by all
// samples (permeability, steady velocity, time step, ...). Files are
// self-describing; loading never needs the generating configuration.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace pml::data {

// Experiment kind tags stored in the file header.
constexpr std::uint32_t kFlowSingle = 1;  // in_r -> out_u
constexpr std::uint32_t kSatSingle = 2;   // in_S -> out_S
constexpr std::uint32_t kFlowTwo = 3;     // in_lambda, in_r -> out_u
constexpr std::uint32_t kSatTwo = 4;      // in_S, in_u1..in_u4, in_r -> out_S

struct Dataset {
  std::uint32_t kind = 0;
  std::size_t nx = 0, ny = 0;
  std::size_t n_samples = 0;
  std::vector<std::pair<std::string, std::vector<double>>> context;
  std::vector<std::pair<std::string, std::size_t>> fields;  // (name, width) per record
  std::vector<double> payload;  // n_samples x record_width, fields in declared order

  std::size_t record_width() const {
    std::size_t w = 0;
    for (const auto& f : fields) w += f.second;
    return w;
  }
  std::size_t field_offset(const std::string& name) const;
  std::size_t field_width(const std::string& name) const;
  const std::vector<double>& ctx(const std::string& name) const;

  // Dense n_samples x (sum of widths) block of the named fields, concatenated
  // per sample in the order given.
  std::vector<double> gather(const std::vector<std::string>& names) const;
  std::vector<double> gather(const std::string& name) const {
    return gather(std::vector<std::string>{name});
  }
};

// "PMLDAT01" magic, u32 version, u32 kind, u32 nx, u32 ny, u64 n_samples,
// context section, field descriptors, payload, trailing FNV-1a checksum.
void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

}  // namespace pml::data
