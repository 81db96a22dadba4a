#pragma once

#include <cmath>
#include <string>

#include "odflow/common.hpp"

namespace odflow {

/// Regular Cartesian grid over a projected plane (meters). Cells are indexed
/// row-major: cell = row * n_cols + col.
struct GridSpec {
  double origin_x = 0.0;
  double origin_y = 0.0;
  double cell_size = 500.0;
  int n_rows = 1;
  int n_cols = 1;

  int n_cells() const { return n_rows * n_cols; }

  void validate() const {
    if (!(cell_size > 0.0)) throw DataError("GridSpec: cell_size must be > 0");
    if (n_rows < 1 || n_cols < 1) throw DataError("GridSpec: n_rows and n_cols must be >= 1");
  }

  int row_of(int cell) const { return cell / n_cols; }
  int col_of(int cell) const { return cell % n_cols; }

  double centroid_x(int cell) const { return origin_x + (col_of(cell) + 0.5) * cell_size; }
  double centroid_y(int cell) const { return origin_y + (row_of(cell) + 0.5) * cell_size; }

  /// Euclidean distance between cell centroids, meters.
  double centroid_distance(int cell_a, int cell_b) const {
    const double dx = centroid_x(cell_a) - centroid_x(cell_b);
    const double dy = centroid_y(cell_a) - centroid_y(cell_b);
    return std::sqrt(dx * dx + dy * dy);
  }

  /// Moore 8-neighborhood test on cell coordinates (Chebyshev distance 1).
  bool moore_adjacent(int cell_a, int cell_b) const {
    if (cell_a == cell_b) return false;
    const int dr = std::abs(row_of(cell_a) - row_of(cell_b));
    const int dc = std::abs(col_of(cell_a) - col_of(cell_b));
    return dr <= 1 && dc <= 1;
  }
};

/// Maps a projected point to its grid cell. Boundary points belong to the
/// higher-index cell, except the outer maximum edge which belongs to the last
/// row/column.
inline int assign_cell(double x, double y, const GridSpec& grid) {
  grid.validate();
  const double max_x = grid.origin_x + grid.n_cols * grid.cell_size;
  const double max_y = grid.origin_y + grid.n_rows * grid.cell_size;
  if (!(x >= grid.origin_x && x <= max_x && y >= grid.origin_y && y <= max_y)) {
    throw DataError("assign_cell: point (" + format_double(x) + ", " + format_double(y) +
                    ") outside grid bounds");
  }
  int col = static_cast<int>(std::floor((x - grid.origin_x) / grid.cell_size));
  int row = static_cast<int>(std::floor((y - grid.origin_y) / grid.cell_size));
  if (col == grid.n_cols) col = grid.n_cols - 1;  // outer max edge
  if (row == grid.n_rows) row = grid.n_rows - 1;
  return row * grid.n_cols + col;
}

}  // namespace odflow
