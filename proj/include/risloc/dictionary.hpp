#pragma once

#include <vector>

#include "risloc/core_model.hpp"
#include "risloc/grid.hpp"
#include "risloc/types.hpp"

namespace risloc {

// Endpoints are pinned to the configured ranges; spacing is range / (count - 1).
Grid build_uniform_grid(const SystemConfig& config, int angle_count, int delay_count);

// Nr x (Q*U) slice for subcarrier n of block m.
CMatrix assemble_block(const Grid& grid, const SystemConfig& config, const PilotSet& pilots, int m, int n);
// Nr*N x (Q*U); rows n*Nr + p.
CMatrix assemble_frame(const Grid& grid, const SystemConfig& config, const PilotSet& pilots, int m);

// Dense derivatives of the block-m frame operator; nonzero only in the columns of the moved point.
CMatrix derivative_angle(const Grid& grid, const SystemConfig& config, const PilotSet& pilots, int m, int q);
CMatrix derivative_delay(const Grid& grid, const SystemConfig& config, const PilotSet& pilots, int m, int u);

// Column i holds the derivative of column i of the block-m frame operator with respect to its own
// grid angle (resp. delay). The delay version is a row scaling of the frame operator itself.
CMatrix angle_derivative_columns(const Grid& grid, const SystemConfig& config, const PilotSet& pilots, int m);
CMatrix delay_derivative_columns(const Grid& grid, const SystemConfig& config, const CMatrix& frame);

// Single stacked column e^{-j2 pi n df tau} H(angle) x_m[n] at an arbitrary (angle, delay),
// and its partial derivatives.
CVector atom(double angle, double delay, const SystemConfig& config, const PilotSet& pilots, int m);
CVector atom_d_angle(double angle, double delay, const SystemConfig& config, const PilotSet& pilots, int m);
CVector atom_d_delay(double angle, double delay, const SystemConfig& config, const PilotSet& pilots, int m);

struct BlockOperator {
  CMatrix matrix;  // Z_m
  RMatrix abs2;    // |Z_m|^2 entrywise
};

BlockOperator make_block_operator(CMatrix matrix);

struct Dictionary {
  Grid grid;
  std::vector<BlockOperator> blocks;

  int block_count() const { return static_cast<int>(blocks.size()); }
  int rows() const { return blocks.empty() ? 0 : static_cast<int>(blocks.front().matrix.rows()); }
  int columns() const { return grid.size(); }
};

Dictionary build_dictionary(const Grid& grid, const SystemConfig& config, const PilotSet& pilots);

}  // namespace risloc
