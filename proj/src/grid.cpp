#include "pml/grid.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "pml/errors.hpp"
#include "pml/kernels.hpp"

namespace pml {

void SparseMatrix::add(std::size_t r, std::size_t c, double v) {
  row_idx.push_back(r);
  col_idx.push_back(c);
  values.push_back(v);
}

void SparseMatrix::build_csr() {
  const std::size_t m = values.size();
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (row_idx[a] != row_idx[b]) return row_idx[a] < row_idx[b];
    return col_idx[a] < col_idx[b];
  });
  std::vector<std::size_t> r2(m), c2(m);
  std::vector<double> v2(m);
  for (std::size_t i = 0; i < m; ++i) {
    r2[i] = row_idx[order[i]];
    c2[i] = col_idx[order[i]];
    v2[i] = values[order[i]];
  }
  row_idx = std::move(r2);
  col_idx = std::move(c2);
  values = std::move(v2);
  row_ptr.assign(rows + 1, 0);
  for (std::size_t i = 0; i < m; ++i) ++row_ptr[row_idx[i] + 1];
  for (std::size_t r = 0; r < rows; ++r) row_ptr[r + 1] += row_ptr[r];
}

void SparseMatrix::matvec(const double* x, double* y) const {
  kernels::csr_matvec(row_ptr.data(), col_idx.data(), values.data(), x, y, rows);
}

void SparseMatrix::matvec_transpose_add(const double* x, double* y) const {
  for (std::size_t p = 0; p < values.size(); ++p) y[col_idx[p]] += values[p] * x[row_idx[p]];
}

Grid build_grid(std::size_t nx, std::size_t ny, double lx, double ly) {
  if (nx < 1 || ny < 1 || !(lx > 0.0) || !(ly > 0.0))
    throw config_error("build_grid: nx, ny must be >= 1 and lx, ly > 0");
  Grid g;
  g.nx = nx;
  g.ny = ny;
  g.lx = lx;
  g.ly = ly;
  g.hx = lx / static_cast<double>(nx);
  g.hy = ly / static_cast<double>(ny);
  g.cell_volume = g.hx * g.hy;
  g.n_cells = nx * ny;
  g.n_edges = (nx - 1) * ny + nx * (ny - 1);
  return g;
}

SparseMatrix build_divergence(const Grid& grid) {
  SparseMatrix B;
  B.rows = grid.n_cells;
  B.cols = grid.n_edges;
  for (std::size_t k = 0; k < grid.ny; ++k)
    for (std::size_t h = 0; h + 1 < grid.nx; ++h) {
      const std::size_t e = grid.vertical_edge(k, h);
      B.add(grid.cell_id(k, h), e, 1.0);
      B.add(grid.cell_id(k, h + 1), e, -1.0);
    }
  for (std::size_t k = 0; k + 1 < grid.ny; ++k)
    for (std::size_t h = 0; h < grid.nx; ++h) {
      const std::size_t e = grid.horizontal_edge(k, h);
      B.add(grid.cell_id(k, h), e, 1.0);
      B.add(grid.cell_id(k + 1, h), e, -1.0);
    }
  B.build_csr();
  return B;
}

CellDirectionalFlux edge_to_directional(const Grid& grid, const EdgeFlux& u) {
  if (u.values.size() != grid.n_edges)
    throw inconsistency_error("edge_to_directional: flux length " +
                              std::to_string(u.values.size()) + " != n_edges " +
                              std::to_string(grid.n_edges));
  CellDirectionalFlux d;
  d.u1.assign(grid.n_cells, 0.0);
  d.u2.assign(grid.n_cells, 0.0);
  d.u3.assign(grid.n_cells, 0.0);
  d.u4.assign(grid.n_cells, 0.0);
  for (std::size_t k = 0; k < grid.ny; ++k)
    for (std::size_t h = 0; h + 1 < grid.nx; ++h) {
      const double q = u.values[grid.vertical_edge(k, h)];
      d.u4[grid.cell_id(k, h)] = q;       // outflow to the right
      d.u3[grid.cell_id(k, h + 1)] = -q;  // mirrored face
    }
  for (std::size_t k = 0; k + 1 < grid.ny; ++k)
    for (std::size_t h = 0; h < grid.nx; ++h) {
      const double q = u.values[grid.horizontal_edge(k, h)];
      d.u2[grid.cell_id(k, h)] = q;
      d.u1[grid.cell_id(k + 1, h)] = -q;
    }
  return d;
}

EdgeFlux directional_to_edge(const Grid& grid, const CellDirectionalFlux& d) {
  if (d.u1.size() != grid.n_cells || d.u2.size() != grid.n_cells ||
      d.u3.size() != grid.n_cells || d.u4.size() != grid.n_cells)
    throw inconsistency_error("directional_to_edge: array length != n_cells");
  auto check = [](double a, double b, const char* where) {
    const double tol = 1e-12 * std::max(1.0, std::max(std::fabs(a), std::fabs(b)));
    if (std::fabs(a + b) > tol)
      throw inconsistency_error(std::string("directional_to_edge: anti-symmetry violated on ") +
                                where + " face: " + std::to_string(a) + " vs " +
                                std::to_string(b));
  };
  EdgeFlux u;
  u.values.assign(grid.n_edges, 0.0);
  for (std::size_t k = 0; k < grid.ny; ++k)
    for (std::size_t h = 0; h + 1 < grid.nx; ++h) {
      const double a = d.u4[grid.cell_id(k, h)];
      const double b = d.u3[grid.cell_id(k, h + 1)];
      check(a, b, "vertical");
      u.values[grid.vertical_edge(k, h)] = a;
    }
  for (std::size_t k = 0; k + 1 < grid.ny; ++k)
    for (std::size_t h = 0; h < grid.nx; ++h) {
      const double a = d.u2[grid.cell_id(k, h)];
      const double b = d.u1[grid.cell_id(k + 1, h)];
      check(a, b, "horizontal");
      u.values[grid.horizontal_edge(k, h)] = a;
    }
  return u;
}

}  // namespace pml
