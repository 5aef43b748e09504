#pragma once

#include <cstddef>
#include <vector>

namespace risloc {

// Angle/delay grid. Row i of the coefficient matrix maps to (q, u) with i = u * Q + q.
struct Grid {
  std::vector<double> angles;  // radians, strictly increasing
  std::vector<double> delays;  // seconds, strictly increasing

  int angle_count() const { return static_cast<int>(angles.size()); }
  int delay_count() const { return static_cast<int>(delays.size()); }
  int size() const { return angle_count() * delay_count(); }

  int flat_index(int q, int u) const { return u * angle_count() + q; }
  int angle_index(int row) const { return row % angle_count(); }
  int delay_index(int row) const { return row / angle_count(); }

  bool is_sorted() const {
    for (std::size_t i = 1; i < angles.size(); ++i)
      if (!(angles[i] > angles[i - 1])) return false;
    for (std::size_t i = 1; i < delays.size(); ++i)
      if (!(delays[i] > delays[i - 1])) return false;
    return true;
  }
};

}  // namespace risloc
