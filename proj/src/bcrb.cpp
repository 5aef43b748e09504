#include "risloc/bcrb.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "risloc/dictionary.hpp"

namespace risloc {

BimMatrix assemble_data_bim(const Scene& scene, const SystemConfig& config, double noise_variance) {
  if (!(noise_variance > 0.0)) throw InputError("noise variance must be positive");
  const int k_count = static_cast<int>(scene.devices.size());
  const int m_count = scene.pilots.block_count();
  if (k_count == 0) throw InputError("scene has no devices");
  if (m_count != config.n_blocks) throw StructuralError("pilot blocks do not match the configuration");
  const Eigen::Index len = config.observation_length();
  const CMatrix alpha = scene.gains(config);

  BimMatrix bim;
  bim.devices = k_count;
  bim.blocks = m_count;
  CMatrix d = CMatrix::Zero(len * m_count, bim.dimension());
  for (int k = 0; k < k_count; ++k) {
    const DeviceGroundTruth& dev = scene.devices[static_cast<std::size_t>(k)];
    for (int m = 0; m < m_count; ++m) {
      const Eigen::Index top = len * m;
      const CVector a = atom(dev.angle, dev.delay, config, scene.pilots, m);
      d.block(top, bim.angle(k), len, 1) = alpha(k, m) * atom_d_angle(dev.angle, dev.delay, config, scene.pilots, m);
      d.block(top, bim.delay(k), len, 1) = alpha(k, m) * atom_d_delay(dev.angle, dev.delay, config, scene.pilots, m);
      d.block(top, bim.gain_re(k, m), len, 1) = a;
      d.block(top, bim.gain_im(k, m), len, 1) = cplx{0.0, 1.0} * a;
    }
  }
  bim.j = (2.0 / noise_variance) * (d.adjoint() * d).real();
  bim.j = 0.5 * (bim.j + bim.j.transpose()).eval();
  return bim;
}

RMatrix gain_prior_information(const RowPrior& prior) {
  prior.validate();
  const double v = prior.gain_variance;
  if (std::abs(prior.gain_mean) == 0.0) return (2.0 / v) * RMatrix::Identity(2, 2);

  // The mixture score has no closed-form second moment; integrate on a tensor grid.
  const int order = prior.order();
  std::vector<cplx> centers(static_cast<std::size_t>(order));
  for (int l = 0; l < order; ++l)
    centers[static_cast<std::size_t>(l)] = prior.gain_mean * std::polar(1.0, prior.phases[static_cast<std::size_t>(l)]);
  const double half = std::abs(prior.gain_mean) + 10.0 * std::sqrt(v);
  const int n = 601;
  const double h = 2.0 * half / (n - 1);
  RMatrix info = RMatrix::Zero(2, 2);
  std::vector<double> lw(static_cast<std::size_t>(order));
  for (int a = 0; a < n; ++a) {
    for (int b = 0; b < n; ++b) {
      const cplx z{-half + a * h, -half + b * h};
      double mx = -1e300;
      for (int l = 0; l < order; ++l) {
        lw[static_cast<std::size_t>(l)] = -std::norm(z - centers[static_cast<std::size_t>(l)]) / v;
        mx = std::max(mx, lw[static_cast<std::size_t>(l)]);
      }
      double total = 0.0;
      cplx score{};
      for (int l = 0; l < order; ++l) {
        const double w = std::exp(lw[static_cast<std::size_t>(l)] - mx);
        total += w;
        score += w * (-2.0 / v) * (z - centers[static_cast<std::size_t>(l)]);
      }
      score /= total;
      const double density = total * std::exp(mx) / (order * kPi * v);
      const double weight = density * h * h;
      info(0, 0) += weight * score.real() * score.real();
      info(0, 1) += weight * score.real() * score.imag();
      info(1, 1) += weight * score.imag() * score.imag();
    }
  }
  info(1, 0) = info(0, 1);
  return info;
}

BimMatrix assemble_prior_bim(const RowPrior& prior, int devices, int blocks) {
  if (devices < 1 || blocks < 1) throw InputError("device and block counts must be positive");
  BimMatrix bim;
  bim.devices = devices;
  bim.blocks = blocks;
  bim.j = RMatrix::Zero(bim.dimension(), bim.dimension());
  const RMatrix g = gain_prior_information(prior);
  for (int k = 0; k < devices; ++k)
    for (int m = 0; m < blocks; ++m) bim.j.block(bim.gain_re(k, m), bim.gain_re(k, m), 2, 2) = g;
  return bim;
}

BoundValues bcrb_values(const RMatrix& j) {
  if (j.rows() != j.cols() || j.rows() == 0) throw StructuralError("information matrix must be square and non-empty");
  const Eigen::Index n = j.rows();
  RVector scale(n);
  for (Eigen::Index i = 0; i < n; ++i) scale[i] = j(i, i) > 0.0 ? 1.0 / std::sqrt(j(i, i)) : 1.0;
  const RMatrix a = scale.asDiagonal() * j * scale.asDiagonal();
  Eigen::SelfAdjointEigenSolver<RMatrix> eig(0.5 * (a + a.transpose()));
  if (eig.info() != Eigen::Success) throw StructuralError("eigendecomposition of the information matrix failed");
  const RVector& lam = eig.eigenvalues();
  const double top = lam.cwiseAbs().maxCoeff();
  const double cutoff = 1e-13 * top;

  BoundValues out;
  out.condition = lam.minCoeff() > 0.0 ? lam.maxCoeff() / lam.minCoeff() : std::numeric_limits<double>::infinity();
  RVector inv(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    if (lam[k] > cutoff) {
      inv[k] = 1.0 / lam[k];
    } else {
      inv[k] = 0.0;
      out.pseudo_inverse = true;
    }
  }
  const RMatrix& v = eig.eigenvectors();
  out.variances.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) out.variances[i] = (v.row(i).array().square() * inv.transpose().array()).sum() * scale[i] * scale[i];
  return out;
}

RVector distance_crb(const RVector& delay_variances) {
  return (kSpeedOfLight * kSpeedOfLight / 4.0) * delay_variances;
}

BcrbSummary evaluate_bcrb(const Scene& scene, const SystemConfig& config, double noise_variance, const RowPrior& prior) {
  const BimMatrix data = assemble_data_bim(scene, config, noise_variance);
  const BimMatrix pri = assemble_prior_bim(prior, data.devices, data.blocks);
  const BoundValues b = bcrb_values(data.j + pri.j);
  const int k_count = data.devices;
  const int m_count = data.blocks;
  const CMatrix alpha = scene.gains(config);

  BcrbSummary s;
  s.condition = b.condition;
  s.pseudo_inverse = b.pseudo_inverse;
  s.angle_variance.resize(k_count);
  s.delay_variance.resize(k_count);
  s.gain_variance.resize(k_count, m_count);
  double angle_energy = 0.0;
  double distance_energy = 0.0;
  for (int k = 0; k < k_count; ++k) {
    const DeviceGroundTruth& dev = scene.devices[static_cast<std::size_t>(k)];
    s.angle_variance[k] = b.variances[data.angle(k)];
    s.delay_variance[k] = b.variances[data.delay(k)];
    angle_energy += dev.angle * dev.angle;
    distance_energy += dev.distance * dev.distance;
    for (int m = 0; m < m_count; ++m)
      s.gain_variance(k, m) = b.variances[data.gain_re(k, m)] + b.variances[data.gain_im(k, m)];
  }
  s.distance_variance = distance_crb(s.delay_variance);
  s.angle_nmse = angle_energy > 0.0 ? s.angle_variance.sum() / angle_energy : std::numeric_limits<double>::quiet_NaN();
  s.distance_nmse = s.distance_variance.sum() / distance_energy;
  s.gain_nmse_complex = s.gain_variance.sum() / alpha.squaredNorm();
  s.gain_nmse = 0.5 * s.gain_nmse_complex;
  return s;
}

}  // namespace risloc
