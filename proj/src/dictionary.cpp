#include "risloc/dictionary.hpp"

#include <cmath>
#include <utility>

namespace risloc {

namespace {

std::vector<double> linspace(double lo, double hi, int count) {
  std::vector<double> v(static_cast<std::size_t>(count));
  const double step = (hi - lo) / (count - 1);
  for (int i = 0; i < count; ++i) v[static_cast<std::size_t>(i)] = lo + step * i;
  v.back() = hi;
  return v;
}

void check_block(const SystemConfig& config, const PilotSet& pilots, int m) {
  if (m < 0 || m >= pilots.block_count()) throw InputError("block index out of range");
  const CMatrix& x = pilots.block(m);
  if (x.rows() != config.n_tx || x.cols() != config.n_subcarriers)
    throw StructuralError("pilot block does not match the antenna/subcarrier counts");
}

double delay_rate(const SystemConfig& config, int n) { return -2.0 * kPi * n * config.subcarrier_spacing; }

// Per-angle pieces shared by all delays: b(-angle) * (a(angle)^H x_n) and its angle derivative.
struct AngleResponse {
  CMatrix value;       // Nr x N, column n = H(angle) x_n
  CMatrix derivative;  // Nr x N, column n = dH/dangle x_n
};

AngleResponse angle_response(double angle, const SystemConfig& config, const CMatrix& x, bool with_derivative) {
  const int nt = config.n_tx;
  const int nr = config.n_rx;
  const CVector a = steering_bs(angle, nt, +1);
  const CVector b = steering_bs(angle, nr, -1);
  const Eigen::RowVectorXcd ax = a.adjoint() * x;  // 1 x N
  AngleResponse out;
  out.value = b * ax;
  if (with_derivative) {
    // dH_{p,t}/dangle = -j pi cos(angle) (p + t) H_{p,t}
    CVector t_weighted_a(nt);
    for (int t = 0; t < nt; ++t) t_weighted_a[t] = a[t] * static_cast<double>(t);
    const Eigen::RowVectorXcd tax = t_weighted_a.adjoint() * x;
    CVector p_weighted_b(nr);
    for (int p = 0; p < nr; ++p) p_weighted_b[p] = b[p] * static_cast<double>(p);
    const cplx scale{0.0, -kPi * std::cos(angle)};
    out.derivative = scale * (p_weighted_b * ax + b * tax);
  }
  return out;
}

}  // namespace

Grid build_uniform_grid(const SystemConfig& config, int angle_count, int delay_count) {
  if (angle_count < 2 || delay_count < 2) throw InputError("grid needs at least two points per dimension");
  config.validate();
  return {linspace(config.angle_min, config.angle_max, angle_count),
          linspace(config.delay_min(), config.delay_max(), delay_count)};
}

CMatrix assemble_block(const Grid& grid, const SystemConfig& config, const PilotSet& pilots, int m, int n) {
  check_block(config, pilots, m);
  if (n < 0 || n >= config.n_subcarriers) throw InputError("subcarrier index out of range");
  const int q_count = grid.angle_count();
  const int u_count = grid.delay_count();
  const CMatrix& x = pilots.block(m);
  CMatrix z(config.n_rx, grid.size());
  for (int q = 0; q < q_count; ++q) {
    const CMatrix hx = channel_bs(grid.angles[static_cast<std::size_t>(q)], config.n_tx, config.n_rx) * x.col(n);
    for (int u = 0; u < u_count; ++u)
      z.col(grid.flat_index(q, u)) = std::polar(1.0, delay_rate(config, n) * grid.delays[static_cast<std::size_t>(u)]) * hx;
  }
  return z;
}

CMatrix assemble_frame(const Grid& grid, const SystemConfig& config, const PilotSet& pilots, int m) {
  check_block(config, pilots, m);
  const int nr = config.n_rx;
  const int n_count = config.n_subcarriers;
  const CMatrix& x = pilots.block(m);
  CMatrix z(nr * n_count, grid.size());
  std::vector<cplx> phasor(static_cast<std::size_t>(n_count));
  for (int q = 0; q < grid.angle_count(); ++q) {
    const AngleResponse resp = angle_response(grid.angles[static_cast<std::size_t>(q)], config, x, false);
    for (int u = 0; u < grid.delay_count(); ++u) {
      const double tau = grid.delays[static_cast<std::size_t>(u)];
      auto col = z.col(grid.flat_index(q, u));
      for (int n = 0; n < n_count; ++n) col.segment(n * nr, nr) = std::polar(1.0, delay_rate(config, n) * tau) * resp.value.col(n);
    }
  }
  return z;
}

CMatrix derivative_angle(const Grid& grid, const SystemConfig& config, const PilotSet& pilots, int m, int q) {
  check_block(config, pilots, m);
  if (q < 0 || q >= grid.angle_count()) throw InputError("angle index out of range");
  const int nr = config.n_rx;
  CMatrix d = CMatrix::Zero(nr * config.n_subcarriers, grid.size());
  for (int u = 0; u < grid.delay_count(); ++u)
    d.col(grid.flat_index(q, u)) =
        atom_d_angle(grid.angles[static_cast<std::size_t>(q)], grid.delays[static_cast<std::size_t>(u)], config, pilots, m);
  return d;
}

CMatrix derivative_delay(const Grid& grid, const SystemConfig& config, const PilotSet& pilots, int m, int u) {
  check_block(config, pilots, m);
  if (u < 0 || u >= grid.delay_count()) throw InputError("delay index out of range");
  const int nr = config.n_rx;
  CMatrix d = CMatrix::Zero(nr * config.n_subcarriers, grid.size());
  for (int q = 0; q < grid.angle_count(); ++q)
    d.col(grid.flat_index(q, u)) =
        atom_d_delay(grid.angles[static_cast<std::size_t>(q)], grid.delays[static_cast<std::size_t>(u)], config, pilots, m);
  return d;
}

CMatrix angle_derivative_columns(const Grid& grid, const SystemConfig& config, const PilotSet& pilots, int m) {
  check_block(config, pilots, m);
  const int nr = config.n_rx;
  const int n_count = config.n_subcarriers;
  CMatrix d(nr * n_count, grid.size());
  for (int q = 0; q < grid.angle_count(); ++q) {
    const AngleResponse resp = angle_response(grid.angles[static_cast<std::size_t>(q)], config, pilots.block(m), true);
    for (int u = 0; u < grid.delay_count(); ++u) {
      const double tau = grid.delays[static_cast<std::size_t>(u)];
      auto col = d.col(grid.flat_index(q, u));
      for (int n = 0; n < n_count; ++n)
        col.segment(n * nr, nr) = std::polar(1.0, delay_rate(config, n) * tau) * resp.derivative.col(n);
    }
  }
  return d;
}

CMatrix delay_derivative_columns(const Grid& grid, const SystemConfig& config, const CMatrix& frame) {
  const int nr = config.n_rx;
  if (frame.rows() != nr * config.n_subcarriers || frame.cols() != grid.size())
    throw StructuralError("frame operator does not match the grid");
  CMatrix d = frame;
  for (int n = 0; n < config.n_subcarriers; ++n) d.middleRows(n * nr, nr) *= cplx{0.0, delay_rate(config, n)};
  return d;
}

CVector atom(double angle, double delay, const SystemConfig& config, const PilotSet& pilots, int m) {
  check_block(config, pilots, m);
  const int nr = config.n_rx;
  const AngleResponse resp = angle_response(angle, config, pilots.block(m), false);
  CVector v(nr * config.n_subcarriers);
  for (int n = 0; n < config.n_subcarriers; ++n)
    v.segment(n * nr, nr) = std::polar(1.0, delay_rate(config, n) * delay) * resp.value.col(n);
  return v;
}

CVector atom_d_angle(double angle, double delay, const SystemConfig& config, const PilotSet& pilots, int m) {
  check_block(config, pilots, m);
  const int nr = config.n_rx;
  const AngleResponse resp = angle_response(angle, config, pilots.block(m), true);
  CVector v(nr * config.n_subcarriers);
  for (int n = 0; n < config.n_subcarriers; ++n)
    v.segment(n * nr, nr) = std::polar(1.0, delay_rate(config, n) * delay) * resp.derivative.col(n);
  return v;
}

CVector atom_d_delay(double angle, double delay, const SystemConfig& config, const PilotSet& pilots, int m) {
  check_block(config, pilots, m);
  const int nr = config.n_rx;
  const AngleResponse resp = angle_response(angle, config, pilots.block(m), false);
  CVector v(nr * config.n_subcarriers);
  for (int n = 0; n < config.n_subcarriers; ++n) {
    const double w = delay_rate(config, n);
    v.segment(n * nr, nr) = cplx{0.0, w} * std::polar(1.0, w * delay) * resp.value.col(n);
  }
  return v;
}

BlockOperator make_block_operator(CMatrix matrix) {
  BlockOperator op;
  op.abs2 = matrix.cwiseAbs2();
  op.matrix = std::move(matrix);
  return op;
}

Dictionary build_dictionary(const Grid& grid, const SystemConfig& config, const PilotSet& pilots) {
  if (!grid.is_sorted()) throw InputError("grid must be strictly increasing");
  Dictionary dict;
  dict.grid = grid;
  dict.blocks.reserve(static_cast<std::size_t>(pilots.block_count()));
  for (int m = 0; m < pilots.block_count(); ++m)
    dict.blocks.push_back(make_block_operator(assemble_frame(grid, config, pilots, m)));
  return dict;
}

}  // namespace risloc
