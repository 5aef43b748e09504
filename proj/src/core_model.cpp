#include "risloc/core_model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>
#include <utility>

namespace risloc {

namespace {

void require(bool ok, const char* message) {
  if (!ok) throw InputError(message);
}

}  // namespace

void SystemConfig::validate() const {
  require(n_subcarriers >= 1, "n_subcarriers must be >= 1");
  require(n_blocks >= 1, "n_blocks must be >= 1");
  require(n_tx >= 1, "n_tx must be >= 1");
  require(n_rx >= 1, "n_rx must be >= 1");
  require(ris_cols >= 1 && ris_rows >= 1, "RIS dimensions must be >= 1");
  require(n_devices >= 1, "n_devices must be >= 1");
  require(dpsk_order >= 1, "dpsk_order must be >= 1");
  require(subcarrier_spacing > 0.0, "subcarrier_spacing must be positive");
  require(cp_duration > 0.0, "cp_duration must be positive");
  require(wavelength > 0.0, "wavelength must be positive");
  require(angle_min < angle_max, "angle range is empty");
  require(distance_min > 0.0 && distance_min < distance_max, "distance range is empty");
  require(delay_max() <= cp_duration, "maximum echo delay exceeds the cyclic prefix");
  require(noise_variance > 0.0, "noise_variance must be positive");
  require(gain_tx > 0.0 && gain_rx > 0.0 && gain_ris > 0.0, "antenna gains must be positive");
}

std::vector<double> dpsk_constellation(int order) {
  if (order < 1) throw InputError("constellation order must be >= 1");
  std::vector<double> phases(static_cast<std::size_t>(order));
  for (int l = 0; l < order; ++l)
    phases[static_cast<std::size_t>(l)] = wrap_phase(kPi / order + 2.0 * kPi * l / order);
  return phases;
}

CVector steering_bs(double angle, int count, int sign) {
  CVector v(count);
  const double s = std::sin(sign >= 0 ? angle : -angle);
  const double scale = 1.0 / std::sqrt(static_cast<double>(count));
  for (int p = 0; p < count; ++p) v[p] = std::polar(scale, kPi * p * s);
  return v;
}

CVector steering_ris(double elevation, double azimuth, int nx, int ny) {
  const double ux = std::sin(elevation) * std::cos(azimuth);
  const double uy = std::sin(elevation) * std::sin(azimuth);
  const double sx = 1.0 / std::sqrt(static_cast<double>(nx));
  const double sy = 1.0 / std::sqrt(static_cast<double>(ny));
  CVector v(nx * ny);
  for (int i = 0; i < nx; ++i)
    for (int j = 0; j < ny; ++j)
      v[i * ny + j] = std::polar(sx, kPi * i * ux) * std::polar(sy, kPi * j * uy);
  return v;
}

CMatrix channel_bs(double angle, int n_tx, int n_rx) {
  return steering_bs(angle, n_rx, -1) * steering_bs(angle, n_tx, +1).adjoint();
}

PhaseGradients retro_gradients(double elevation, double azimuth) {
  return {-2.0 * std::sin(elevation) * std::cos(azimuth), -2.0 * std::sin(elevation) * std::sin(azimuth)};
}

RMatrix ris_phase_profile(double qx, double qy, double reference_phase, int nx, int ny) {
  RMatrix theta(nx, ny);
  for (int i = 0; i < nx; ++i)
    for (int j = 0; j < ny; ++j) theta(i, j) = kPi * i * qx + kPi * j * qy + reference_phase;
  return theta;
}

cplx effective_gain(cplx fading, const RMatrix& phases, Direction incident, Direction reflected) {
  const int nx = static_cast<int>(phases.rows());
  const int ny = static_cast<int>(phases.cols());
  if (nx < 1 || ny < 1) throw StructuralError("phase profile must be at least 1 x 1");
  const CVector a_in = steering_ris(incident.elevation, incident.azimuth, nx, ny);
  const CVector a_out = steering_ris(reflected.elevation, reflected.azimuth, nx, ny);
  cplx acc{0.0, 0.0};
  for (int i = 0; i < nx; ++i)
    for (int j = 0; j < ny; ++j) {
      const int e = i * ny + j;
      acc += std::conj(a_out[e]) * std::polar(1.0, phases(i, j)) * a_in[e];
    }
  return fading * acc;
}

std::vector<double> dpsk_encode(const std::vector<int>& symbols, double initial_phase,
                                double reference_phase, int order) {
  const auto alphabet = dpsk_constellation(order);
  const double first = wrap_phase(initial_phase);
  const bool in_alphabet = std::any_of(alphabet.begin(), alphabet.end(), [&](double s) {
    return std::abs(wrap_phase(s - first)) < 1e-9;
  });
  if (!in_alphabet) throw InputError("initial phase is not a constellation point");

  std::vector<double> phases;
  phases.reserve(symbols.size() + 1);
  phases.push_back(first);
  for (int index : symbols) {
    if (index < 0 || index >= order) throw InputError("DPSK symbol index out of range");
    phases.push_back(wrap_phase(phases.back() + alphabet[static_cast<std::size_t>(index)] + reference_phase));
  }
  return phases;
}

std::vector<std::optional<int>> dpsk_decode(const std::vector<cplx>& gains, double reference_phase,
                                            int order) {
  if (gains.size() < 2) throw InputError("DPSK decoding needs at least two blocks");
  const auto alphabet = dpsk_constellation(order);
  std::vector<std::optional<int>> out;
  out.reserve(gains.size() - 1);
  for (std::size_t m = 1; m < gains.size(); ++m) {
    if (gains[m] == cplx{} || gains[m - 1] == cplx{}) {
      out.emplace_back(std::nullopt);
      continue;
    }
    const double diff = wrap_phase(std::arg(gains[m]) - std::arg(gains[m - 1]) - reference_phase);
    int best = 0;
    double best_dist = std::numeric_limits<double>::infinity();
    for (int l = 0; l < order; ++l) {
      const double d = std::abs(wrap_phase(diff - alphabet[static_cast<std::size_t>(l)]));
      if (d < best_dist - 1e-12) {
        best_dist = d;
        best = l;
      }
    }
    out.emplace_back(best);
  }
  return out;
}

cplx fading_coefficient(double distance, cplx eta, const SystemConfig& config) {
  if (!(distance > 0.0)) throw InputError("distance must be positive");
  const double l = config.ris_elements();
  const double lambda4 = std::pow(config.wavelength, 4);
  const double power = config.gain_tx * config.gain_rx * config.gain_ris * l * l * (lambda4 / 4.0) /
                       (64.0 * kPi * kPi * kPi * std::pow(distance, 4));
  return eta * std::sqrt(power);
}

GainPrior beta_prior(const SystemConfig& config) {
  const double p_max = std::abs(fading_coefficient(config.distance_min, 1.0, config));
  const double p_min = std::abs(fading_coefficient(config.distance_max, 1.0, config));
  // Kept exactly as the reference model states it, including the squared-mean term.
  const double v = (p_min * p_min + p_min * p_max + p_max * p_max) / 3.0 + (p_min + p_max) * (p_min + p_max) / 4.0;
  return {cplx{0.0, 0.0}, v};
}

cplx complex_normal(std::mt19937_64& rng, double variance) {
  std::normal_distribution<double> normal(0.0, std::sqrt(variance / 2.0));
  const double re = normal(rng);
  const double im = normal(rng);
  return {re, im};
}

CMatrix Scene::gains(const SystemConfig& config) const {
  const int k_count = static_cast<int>(devices.size());
  const int m_count = config.n_blocks;
  CMatrix alpha(k_count, m_count);
  for (int k = 0; k < k_count; ++k) {
    const auto& dev = devices[static_cast<std::size_t>(k)];
    const auto grad = retro_gradients(dev.incident_elevation, dev.incident_azimuth);
    for (int m = 0; m < m_count; ++m) {
      const RMatrix theta = ris_phase_profile(grad.qx, grad.qy, dev.phases[static_cast<std::size_t>(m)],
                                              config.ris_cols, config.ris_rows);
      alpha(k, m) = effective_gain(dev.fading, theta, {dev.incident_elevation, dev.incident_azimuth},
                                   {dev.reflected_elevation, dev.reflected_azimuth});
    }
  }
  return alpha;
}

Scene generate_scene(const SystemConfig& config, std::uint64_t seed, const Grid* grid) {
  config.validate();
  std::mt19937_64 rng(seed);
  const int k_count = config.n_devices;
  Scene scene;

  std::vector<std::pair<double, double>> positions;  // (angle, distance)
  std::vector<std::optional<int>> rows;
  if (grid != nullptr) {
    if (grid->angle_count() < 1 || grid->delay_count() < 1) throw InputError("grid is empty");
    if (k_count > grid->size()) throw InputError("more devices than grid points");
    std::uniform_int_distribution<int> pick_q(0, grid->angle_count() - 1);
    std::uniform_int_distribution<int> pick_u(0, grid->delay_count() - 1);
    std::set<int> used;
    while (static_cast<int>(positions.size()) < k_count) {
      const int q = pick_q(rng);
      const int u = pick_u(rng);
      const int row = grid->flat_index(q, u);
      if (!used.insert(row).second) continue;
      const double tau = grid->delays[static_cast<std::size_t>(u)];
      positions.emplace_back(grid->angles[static_cast<std::size_t>(q)], tau * kSpeedOfLight / 2.0);
      rows.emplace_back(row);
    }
  } else {
    std::uniform_real_distribution<double> pick_angle(config.angle_min, config.angle_max);
    std::uniform_real_distribution<double> pick_dist(config.distance_min, config.distance_max);
    while (static_cast<int>(positions.size()) < k_count) {
      const std::pair<double, double> p{pick_angle(rng), pick_dist(rng)};
      if (std::find(positions.begin(), positions.end(), p) != positions.end()) continue;
      positions.push_back(p);
      rows.emplace_back(std::nullopt);
    }
  }

  const auto alphabet = dpsk_constellation(config.dpsk_order);
  std::uniform_int_distribution<int> pick_symbol(0, config.dpsk_order - 1);
  std::uniform_real_distribution<double> pick_elev(-kPi / 3.0, kPi / 3.0);
  std::uniform_real_distribution<double> pick_az(0.0, 2.0 * kPi);

  for (int k = 0; k < k_count; ++k) {
    DeviceGroundTruth dev;
    dev.angle = positions[static_cast<std::size_t>(k)].first;
    dev.distance = positions[static_cast<std::size_t>(k)].second;
    dev.delay = 2.0 * dev.distance / kSpeedOfLight;
    dev.grid_row = rows[static_cast<std::size_t>(k)];
    dev.eta = complex_normal(rng);
    dev.fading = fading_coefficient(dev.distance, dev.eta, config);
    dev.incident_elevation = pick_elev(rng);
    dev.incident_azimuth = pick_az(rng);
    dev.reflected_elevation = -dev.incident_elevation;
    dev.reflected_azimuth = dev.incident_azimuth;
    dev.symbols.resize(static_cast<std::size_t>(config.n_blocks - 1));
    for (auto& s : dev.symbols) s = pick_symbol(rng);
    const double first = alphabet[static_cast<std::size_t>(pick_symbol(rng))];
    dev.phases = dpsk_encode(dev.symbols, first, config.reference_phase, config.dpsk_order);
    scene.devices.push_back(std::move(dev));
  }

  // Unit-modulus QPSK pilots per (antenna, subcarrier, block).
  std::uniform_int_distribution<int> pick_qpsk(0, 3);
  scene.pilots.blocks.resize(static_cast<std::size_t>(config.n_blocks));
  for (auto& block : scene.pilots.blocks) {
    block.resize(config.n_tx, config.n_subcarriers);
    for (int n = 0; n < config.n_subcarriers; ++n)
      for (int t = 0; t < config.n_tx; ++t) block(t, n) = std::polar(1.0, kPi / 4.0 + kPi / 2.0 * pick_qpsk(rng));
  }
  return scene;
}

MeasurementFrame noiseless_frame(const Scene& scene, const SystemConfig& config) {
  const int n_count = config.n_subcarriers;
  const int m_count = config.n_blocks;
  const int nr = config.n_rx;
  MeasurementFrame frame;
  frame.n_rx = nr;
  frame.observations = CMatrix::Zero(nr * n_count, m_count);
  const CMatrix alpha = scene.gains(config);
  for (std::size_t k = 0; k < scene.devices.size(); ++k) {
    const auto& dev = scene.devices[k];
    const CMatrix h = channel_bs(dev.angle, config.n_tx, nr);
    for (int m = 0; m < m_count; ++m) {
      const CMatrix& x = scene.pilots.block(m);
      for (int n = 0; n < n_count; ++n) {
        const cplx phasor = std::polar(1.0, -2.0 * kPi * n * config.subcarrier_spacing * dev.delay);
        frame.observations.col(m).segment(n * nr, nr) += alpha(static_cast<Eigen::Index>(k), m) * phasor * (h * x.col(n));
      }
    }
  }
  return frame;
}

MeasurementFrame add_noise(const MeasurementFrame& clean, double noise_variance, std::uint64_t seed) {
  MeasurementFrame noisy = clean;
  if (noise_variance <= 0.0) return noisy;
  std::mt19937_64 rng(seed);
  for (Eigen::Index m = 0; m < noisy.observations.cols(); ++m)
    for (Eigen::Index j = 0; j < noisy.observations.rows(); ++j)
      noisy.observations(j, m) += complex_normal(rng, noise_variance);
  return noisy;
}

MeasurementFrame synthesize_frame(const Scene& scene, const SystemConfig& config, std::uint64_t seed) {
  return add_noise(noiseless_frame(scene, config), config.noise_variance, seed);
}

double snr_db(const MeasurementFrame& noiseless, double noise_variance) {
  if (!(noise_variance > 0.0)) throw InputError("noise variance must be positive");
  const double energy = noiseless.energy();
  if (energy <= 0.0) return -std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(energy / (static_cast<double>(noiseless.observations.size()) * noise_variance));
}

double noise_variance_for_snr(const MeasurementFrame& noiseless, double snr) {
  const double energy = noiseless.energy();
  if (energy <= 0.0) throw InputError("noiseless frame carries no energy");
  return energy / (static_cast<double>(noiseless.observations.size()) * std::pow(10.0, snr / 10.0));
}

}  // namespace risloc
