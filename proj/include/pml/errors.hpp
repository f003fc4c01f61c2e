#pragma once

#include <stdexcept>
#include <string>

namespace pml {

// Invalid user-facing configuration (bad grid sizes, incompatible shapes in
// a run config, unknown JSON keys).
struct config_error : std::runtime_error {
  explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Data violates a structural invariant (anti-symmetry of mirrored fluxes,
// incompatible source terms).
struct inconsistency_error : std::runtime_error {
  explicit inconsistency_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Argument outside the mathematical domain of an operation (saturation
// outside [0,1], non-positive permeability).
struct domain_error : std::runtime_error {
  explicit domain_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerical failure: CFL violation, Newton divergence, CG stagnation,
// NaN loss during training.
struct numeric_error : std::runtime_error {
  explicit numeric_error(const std::string& msg) : std::runtime_error(msg) {}
};

// File I/O and binary-format failures (magic/version/checksum mismatch).
struct io_error : std::runtime_error {
  explicit io_error(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace pml
