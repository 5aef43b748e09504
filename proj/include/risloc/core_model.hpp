#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include "risloc/grid.hpp"
#include "risloc/types.hpp"

namespace risloc {

// System parameters. Defaults are the desk-scale reference setup
// (N = 30, M = 20, 16 x 8 antennas, 30 x 30 RIS, K = 5, DQPSK).
struct SystemConfig {
  int n_subcarriers = 30;
  int n_blocks = 20;
  int n_tx = 16;
  int n_rx = 8;
  double subcarrier_spacing = 15e3;  // Hz
  double cp_duration = 16.67e-6;     // s
  double wavelength = 0.1;           // m
  int ris_cols = 30;
  int ris_rows = 30;
  int n_devices = 5;
  int dpsk_order = 4;
  double reference_phase = kPi / 4.0;
  double angle_min = -kPi / 6.0;
  double angle_max = kPi / 6.0;
  double distance_min = 50.0;   // m
  double distance_max = 500.0;  // m
  double gain_tx = 100.0;
  double gain_rx = 100.0;
  double gain_ris = 1.0;
  double noise_variance = 1.0;

  double symbol_duration() const { return 1.0 / subcarrier_spacing; }
  int ris_elements() const { return ris_cols * ris_rows; }
  double delay_min() const { return 2.0 * distance_min / kSpeedOfLight; }
  double delay_max() const { return 2.0 * distance_max / kSpeedOfLight; }
  int observation_length() const { return n_rx * n_subcarriers; }

  // Throws InputError listing the first violated invariant.
  void validate() const;
};

struct DeviceGroundTruth {
  double angle = 0.0;     // BS departure angle, radians
  double delay = 0.0;     // round-trip delay, seconds
  double distance = 0.0;  // m
  cplx eta{0.0, 0.0};     // small-scale fading draw
  cplx fading{0.0, 0.0};  // round-trip coefficient beta
  double incident_elevation = 0.0;
  double incident_azimuth = 0.0;
  double reflected_elevation = 0.0;
  double reflected_azimuth = 0.0;
  std::vector<double> phases;  // reference phase per block, M entries
  std::vector<int> symbols;    // constellation indices for blocks 2..M, M-1 entries
  std::optional<int> grid_row; // set for on-grid scenes
};

// Pilot symbols; block(m) is Nt x N with column n holding x_m[n].
struct PilotSet {
  std::vector<CMatrix> blocks;

  const CMatrix& block(int m) const { return blocks.at(static_cast<std::size_t>(m)); }
  int block_count() const { return static_cast<int>(blocks.size()); }
};

// Received frame; column m stacks y_m[0..N-1], row = n * Nr + p.
struct MeasurementFrame {
  CMatrix observations;
  int n_rx = 0;

  auto snapshot(int m, int n) const { return observations.col(m).segment(n * n_rx, n_rx); }
  double energy() const { return observations.squaredNorm(); }
};

struct Scene {
  std::vector<DeviceGroundTruth> devices;
  PilotSet pilots;

  // K x M effective gains alpha_{k,m} evaluated through the RIS response.
  CMatrix gains(const SystemConfig& config) const;
};

// DPSK phase alphabet S_0..S_{V-1} = pi/V + 2 pi l / V, wrapped into (-pi, pi].
std::vector<double> dpsk_constellation(int order);

CVector steering_bs(double angle, int count, int sign);
CVector steering_ris(double elevation, double azimuth, int nx, int ny);
CMatrix channel_bs(double angle, int n_tx, int n_rx);

struct PhaseGradients {
  double qx = 0.0;
  double qy = 0.0;
};
PhaseGradients retro_gradients(double elevation, double azimuth);

// Nx x Ny matrix of element phases.
RMatrix ris_phase_profile(double qx, double qy, double reference_phase, int nx, int ny);

struct Direction {
  double elevation = 0.0;
  double azimuth = 0.0;
};
cplx effective_gain(cplx fading, const RMatrix& phases, Direction incident, Direction reflected);

std::vector<double> dpsk_encode(const std::vector<int>& symbols, double initial_phase,
                                double reference_phase, int order);
// Erased entries (a zero gain on either side of the difference) are nullopt.
std::vector<std::optional<int>> dpsk_decode(const std::vector<cplx>& gains, double reference_phase,
                                            int order);

cplx fading_coefficient(double distance, cplx eta, const SystemConfig& config);

struct GainPrior {
  cplx mean{0.0, 0.0};
  double variance = 0.0;
};
GainPrior beta_prior(const SystemConfig& config);

// Devices are drawn on distinct grid points when `grid` is given, continuously otherwise.
Scene generate_scene(const SystemConfig& config, std::uint64_t seed, const Grid* grid = nullptr);

MeasurementFrame noiseless_frame(const Scene& scene, const SystemConfig& config);
MeasurementFrame add_noise(const MeasurementFrame& clean, double noise_variance, std::uint64_t seed);
MeasurementFrame synthesize_frame(const Scene& scene, const SystemConfig& config, std::uint64_t seed);

// -inf when the noiseless frame carries no energy.
double snr_db(const MeasurementFrame& noiseless, double noise_variance);
double noise_variance_for_snr(const MeasurementFrame& noiseless, double snr_db);

// Circular complex Gaussian CN(0, variance).
cplx complex_normal(std::mt19937_64& rng, double variance = 1.0);

}  // namespace risloc
