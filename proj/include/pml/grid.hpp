#pragma once

#include <cstddef>
#include <vector>

namespace pml {

// Triplet/CSR sparse matrix. Used for the discrete divergence operator and
// for the sparse weight patterns of the velocity layers. Pattern is fixed
// after build_csr(); only values may change afterwards.
struct SparseMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::size_t> row_idx;  // triplet rows
  std::vector<std::size_t> col_idx;  // triplet cols
  std::vector<double> values;

  // CSR view (built from the triplets, which must be row-sorted)
  std::vector<std::size_t> row_ptr;

  void add(std::size_t r, std::size_t c, double v);
  void build_csr();  // sorts triplets by (row, col) and fills row_ptr

  std::size_t nnz() const { return values.size(); }
  // y = A x
  void matvec(const double* x, double* y) const;
  // y += A^T x
  void matvec_transpose_add(const double* x, double* y) const;
};

// Uniform rectangular mesh with no-flow outer boundary. Velocity DOFs live
// on interior edges only and are stored as integrated normal fluxes.
//
// Cell (k,h) = row k (y index), column h (x index), cell id = k*nx + h.
// Vertical edges (normal +x) come first in the edge numbering, then
// horizontal edges (normal +y).
struct Grid {
  std::size_t nx = 0, ny = 0;
  double lx = 0.0, ly = 0.0;
  double hx = 0.0, hy = 0.0;
  double cell_volume = 0.0;
  std::size_t n_cells = 0;
  std::size_t n_edges = 0;

  std::size_t n_vertical_edges() const { return (nx - 1) * ny; }

  std::size_t cell_id(std::size_t k, std::size_t h) const { return k * nx + h; }
  std::size_t cell_row(std::size_t c) const { return c / nx; }
  std::size_t cell_col(std::size_t c) const { return c % nx; }

  // Edge between (k,h) and (k,h+1), h in [0, nx-1)
  std::size_t vertical_edge(std::size_t k, std::size_t h) const { return k * (nx - 1) + h; }
  // Edge between (k,h) and (k+1,h), k in [0, ny-1)
  std::size_t horizontal_edge(std::size_t k, std::size_t h) const {
    return n_vertical_edges() + k * nx + h;
  }
  // Geometric length of an edge
  double edge_length(std::size_t e) const { return e < n_vertical_edges() ? hy : hx; }
};

// Integrated normal fluxes on interior edges; positive in +x across vertical
// edges and +y across horizontal edges.
struct EdgeFlux {
  std::vector<double> values;
};

// Per-cell outward integrated fluxes on the four faces of each cell:
// direction 1 = face shared with (k-1,h), 2 = (k+1,h), 3 = (k,h-1),
// 4 = (k,h+1). Boundary faces hold zero.
struct CellDirectionalFlux {
  std::vector<double> u1, u2, u3, u4;
};

Grid build_grid(std::size_t nx, std::size_t ny, double lx, double ly);

// B of shape n_cells x n_edges with (B u)_i = net integrated outflow of
// cell i; each column holds one +1 (donor) and one -1 (receiver).
SparseMatrix build_divergence(const Grid& grid);

CellDirectionalFlux edge_to_directional(const Grid& grid, const EdgeFlux& u);

// Inverse of edge_to_directional; throws inconsistency_error if the mirrored
// face values violate anti-symmetry beyond an absolute 1e-12 (scaled by the
// face magnitude when above 1).
EdgeFlux directional_to_edge(const Grid& grid, const CellDirectionalFlux& d);

}  // namespace pml
