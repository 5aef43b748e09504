#include "risloc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <tuple>

namespace risloc {

double nmse(const CMatrix& estimate, const CMatrix& truth) {
  if (estimate.rows() != truth.rows() || estimate.cols() != truth.cols())
    throw StructuralError("estimate and truth shapes differ");
  const double energy = truth.squaredNorm();
  if (energy == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return (estimate - truth).squaredNorm() / energy;
}

Assignment support_match(const std::vector<int>& rows, const std::vector<DeviceGroundTruth>& devices, const Grid& grid,
                         const SystemConfig& config, bool on_grid) {
  Assignment a;
  a.row_of_device.assign(devices.size(), -1);
  std::vector<bool> used(rows.size(), false);

  if (on_grid) {
    for (std::size_t k = 0; k < devices.size(); ++k) {
      if (!devices[k].grid_row) continue;
      const auto it = std::find(rows.begin(), rows.end(), *devices[k].grid_row);
      if (it == rows.end()) continue;
      a.row_of_device[k] = *it;
      used[static_cast<std::size_t>(it - rows.begin())] = true;
    }
  } else {
    const double angle_width = config.angle_max - config.angle_min;
    const double delay_width = config.delay_max() - config.delay_min();
    std::vector<std::tuple<double, std::size_t, std::size_t>> pairs;
    for (std::size_t k = 0; k < devices.size(); ++k)
      for (std::size_t r = 0; r < rows.size(); ++r) {
        const double da = (grid.angles[static_cast<std::size_t>(grid.angle_index(rows[r]))] - devices[k].angle) / angle_width;
        const double dt = (grid.delays[static_cast<std::size_t>(grid.delay_index(rows[r]))] - devices[k].delay) / delay_width;
        pairs.emplace_back(da * da + dt * dt, k, r);
      }
    std::sort(pairs.begin(), pairs.end());
    for (const auto& [dist, k, r] : pairs) {
      if (a.row_of_device[k] >= 0 || used[r]) continue;
      a.row_of_device[k] = rows[r];
      used[r] = true;
    }
  }
  for (int row : a.row_of_device) a.matched += row >= 0 ? 1 : 0;
  a.false_alarms = static_cast<int>(std::count(used.begin(), used.end(), false));
  return a;
}

int bits_per_symbol(int order) {
  if (order < 1) throw InputError("constellation order must be positive");
  int b = 0;
  while ((1 << b) < order) ++b;
  return b;
}

std::vector<int> symbol_bits(int symbol, int order) {
  if (symbol < 0 || symbol >= order) throw InputError("symbol outside the constellation");
  const int nb = bits_per_symbol(order);
  const int gray = symbol ^ (symbol >> 1);
  std::vector<int> bits(static_cast<std::size_t>(nb));
  for (int i = 0; i < nb; ++i) bits[static_cast<std::size_t>(i)] = (gray >> (nb - 1 - i)) & 1;
  return bits;
}

double ber(const std::vector<int>& decoded, const std::vector<int>& truth) {
  if (decoded.size() != truth.size()) throw StructuralError("bit sequences differ in length");
  if (truth.empty()) return std::numeric_limits<double>::quiet_NaN();
  double errors = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (decoded[i] < 0)
      errors += 0.5;
    else if (decoded[i] != truth[i])
      errors += 1.0;
  }
  return errors / static_cast<double>(truth.size());
}

CMatrix on_grid_truth(const Scene& scene, const SystemConfig& config, const Grid& grid) {
  const CMatrix alpha = scene.gains(config);
  CMatrix truth = CMatrix::Zero(grid.size(), alpha.cols());
  for (std::size_t k = 0; k < scene.devices.size(); ++k) {
    const auto& row = scene.devices[k].grid_row;
    if (!row) throw InputError("device is not on the grid");
    truth.row(*row) = alpha.row(static_cast<Eigen::Index>(k));
  }
  return truth;
}

TrialMetrics evaluate_trial(const CMatrix& coefficients, const std::vector<int>& rows, const Grid& grid,
                            const Scene& scene, const SystemConfig& config, bool on_grid) {
  if (coefficients.rows() != grid.size()) throw StructuralError("coefficients do not match the grid");
  const CMatrix alpha = scene.gains(config);
  const Assignment match = support_match(rows, scene.devices, grid, config, on_grid);
  TrialMetrics out;
  out.detected = static_cast<int>(rows.size());
  out.false_alarms = match.false_alarms;

  if (on_grid) {
    out.nmse_gain = nmse(coefficients, on_grid_truth(scene, config, grid));
  } else {
    double err = 0.0;
    for (std::size_t k = 0; k < scene.devices.size(); ++k) {
      const int row = match.row_of_device[k];
      const auto truth = alpha.row(static_cast<Eigen::Index>(k));
      err += row >= 0 ? (coefficients.row(row) - truth).squaredNorm() : truth.squaredNorm();
    }
    out.nmse_gain = err / alpha.squaredNorm();
  }

  double angle_err = 0.0, angle_energy = 0.0, dist_err = 0.0, dist_energy = 0.0;
  std::vector<int> decoded_bits, true_bits;
  const int order = config.dpsk_order;
  const int nb = bits_per_symbol(order);
  for (std::size_t k = 0; k < scene.devices.size(); ++k) {
    const DeviceGroundTruth& dev = scene.devices[k];
    const int row = match.row_of_device[k];
    angle_energy += dev.angle * dev.angle;
    dist_energy += dev.distance * dev.distance;
    for (int s : dev.symbols) {
      const auto b = symbol_bits(s, order);
      true_bits.insert(true_bits.end(), b.begin(), b.end());
    }
    if (row < 0) {
      angle_err += dev.angle * dev.angle;
      dist_err += dev.distance * dev.distance;
      decoded_bits.insert(decoded_bits.end(), dev.symbols.size() * static_cast<std::size_t>(nb), -1);
      continue;
    }
    const double a_hat = grid.angles[static_cast<std::size_t>(grid.angle_index(row))];
    const double d_hat = grid.delays[static_cast<std::size_t>(grid.delay_index(row))] * kSpeedOfLight / 2.0;
    angle_err += (a_hat - dev.angle) * (a_hat - dev.angle);
    dist_err += (d_hat - dev.distance) * (d_hat - dev.distance);
    std::vector<cplx> gains(static_cast<std::size_t>(coefficients.cols()));
    for (Eigen::Index m = 0; m < coefficients.cols(); ++m) gains[static_cast<std::size_t>(m)] = coefficients(row, m);
    for (const auto& sym : dpsk_decode(gains, config.reference_phase, order)) {
      if (sym) {
        const auto b = symbol_bits(*sym, order);
        decoded_bits.insert(decoded_bits.end(), b.begin(), b.end());
      } else {
        decoded_bits.insert(decoded_bits.end(), static_cast<std::size_t>(nb), -1);
      }
    }
  }
  out.nmse_angle = angle_energy > 0.0 ? angle_err / angle_energy : std::numeric_limits<double>::quiet_NaN();
  out.nmse_distance = dist_err / dist_energy;
  out.ber = ber(decoded_bits, true_bits);
  return out;
}

}  // namespace risloc
