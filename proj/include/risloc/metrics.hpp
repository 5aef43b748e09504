#pragma once

#include <vector>

#include "risloc/core_model.hpp"
#include "risloc/grid.hpp"
#include "risloc/types.hpp"

namespace risloc {

// ||estimate - truth||^2 / ||truth||^2; NaN when the truth has no energy.
double nmse(const CMatrix& estimate, const CMatrix& truth);

struct Assignment {
  std::vector<int> row_of_device;  // -1 when unmatched
  int matched = 0;
  int false_alarms = 0;  // detected rows left without a device
};

// On-grid: a device matches only its own grid row. Off-grid: greedy nearest pairs in
// (angle, delay) space, each axis scaled by its configured range width.
Assignment support_match(const std::vector<int>& rows, const std::vector<DeviceGroundTruth>& devices, const Grid& grid,
                         const SystemConfig& config, bool on_grid);

// Gray-coded bits, most significant first; log2(order) bits per symbol.
std::vector<int> symbol_bits(int symbol, int order);
int bits_per_symbol(int order);

// Hamming error fraction; erased positions (negative entries in `decoded`) count as half an error.
double ber(const std::vector<int>& decoded, const std::vector<int>& truth);

struct TrialMetrics {
  double nmse_gain = 0.0;
  double nmse_angle = 0.0;
  double nmse_distance = 0.0;
  double ber = 0.0;
  int detected = 0;
  int false_alarms = 0;
};

// coefficients: Q*U x M on `grid`; rows: detected support.
TrialMetrics evaluate_trial(const CMatrix& coefficients, const std::vector<int>& rows, const Grid& grid,
                            const Scene& scene, const SystemConfig& config, bool on_grid);

// Q*U x M matrix with each device's gains on its grid row (on-grid scenes only).
CMatrix on_grid_truth(const Scene& scene, const SystemConfig& config, const Grid& grid);

}  // namespace risloc
