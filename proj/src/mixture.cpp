#include "risloc/mixture.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

namespace risloc {

namespace {

double log_sum_exp(const std::vector<double>& x) {
  const double mx = *std::max_element(x.begin(), x.end());
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (double v : x) s += std::exp(v - mx);
  return mx + std::log(s);
}

// Normalizes log-weights in place into probabilities. Returns false when nothing survives.
bool normalize_log_weights(std::vector<double>& lw) {
  const double lse = log_sum_exp(lw);
  if (!std::isfinite(lse)) {
    std::fill(lw.begin(), lw.end(), 1.0 / static_cast<double>(lw.size()));
    return false;
  }
  for (double& v : lw) v = std::exp(v - lse);
  return true;
}

double safe_log(double w) { return w > 0.0 ? std::log(w) : -std::numeric_limits<double>::infinity(); }

// Moment-matches one group of shared-variance components.
void match_group(const std::vector<double>& w, const std::vector<cplx>& mu, double v, double& weight, cplx& mean,
                 double& variance) {
  weight = std::accumulate(w.begin(), w.end(), 0.0);
  mean = cplx{};
  if (weight <= 0.0) {
    for (const cplx& m : mu) mean += m;
    mean /= static_cast<double>(mu.size());
    variance = v;
    return;
  }
  for (std::size_t k = 0; k < w.size(); ++k) mean += (w[k] / weight) * mu[k];
  double spread = 0.0;
  for (std::size_t k = 0; k < w.size(); ++k) spread += (w[k] / weight) * std::norm(mu[k] - mean);
  variance = v + spread;
}

// logistic(x) = 1 / (1 + exp(-x)) without overflow
double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

double GaussianMixture::weight_sum() const { return std::accumulate(weights.begin(), weights.end(), 0.0); }

void RowPrior::validate() const {
  if (!(sparsity > 0.0 && sparsity < 1.0)) throw InputError("sparsity must lie in (0, 1)");
  if (!(gain_variance > 0.0)) throw InputError("gain variance must be positive");
  if (phases.empty()) throw InputError("constellation must contain at least one phase");
}

GaussianMixture forward_message(cplx r, double vr, const RowPrior& prior, int source_index) {
  const int v_count = prior.order();
  GaussianMixture g;
  g.weights.assign(static_cast<std::size_t>(v_count), 1.0 / v_count);
  g.variances.assign(static_cast<std::size_t>(v_count), vr);
  g.means.resize(static_cast<std::size_t>(v_count));
  for (int l = 0; l < v_count; ++l) g.means[static_cast<std::size_t>(l)] = std::polar(1.0, -prior.phases[static_cast<std::size_t>(l)]) * r;
  g.source_magnitude = std::abs(r);
  g.source_index = source_index;
  return g;
}

MixtureProduct mixture_product_reduce(const GaussianMixture& a, const GaussianMixture& b, double variance_floor) {
  if (a.size() < 1 || b.size() < 1) throw StructuralError("mixtures must be non-empty");
  const bool a_anchors = a.source_magnitude > b.source_magnitude ||
                         (a.source_magnitude == b.source_magnitude && a.source_index <= b.source_index);
  const GaussianMixture& x = a_anchors ? a : b;
  const GaussianMixture& w = a_anchors ? b : a;
  const int nl = x.size();
  const int nq = w.size();

  std::vector<double> lw(static_cast<std::size_t>(nl * nq));
  std::vector<cplx> mu(static_cast<std::size_t>(nl * nq));
  std::vector<double> var(static_cast<std::size_t>(nl * nq));
  for (int l = 0; l < nl; ++l) {
    const double vx = std::max(x.variances[static_cast<std::size_t>(l)], variance_floor);
    for (int q = 0; q < nq; ++q) {
      const double vw = std::max(w.variances[static_cast<std::size_t>(q)], variance_floor);
      const std::size_t k = static_cast<std::size_t>(l * nq + q);
      const cplx mx = x.means[static_cast<std::size_t>(l)];
      const cplx mw = w.means[static_cast<std::size_t>(q)];
      var[k] = 1.0 / (1.0 / vx + 1.0 / vw);
      mu[k] = var[k] * (mx / vx + mw / vw);
      lw[k] = safe_log(x.weights[static_cast<std::size_t>(l)]) + safe_log(w.weights[static_cast<std::size_t>(q)]) +
              log_cn0(mx - mw, vx + vw);
    }
  }
  MixtureProduct out;
  out.underflow = !normalize_log_weights(lw);

  GaussianMixture& g = out.grouped;
  g.source_magnitude = x.source_magnitude;
  g.source_index = x.source_index;
  g.weights.resize(static_cast<std::size_t>(nl));
  g.means.resize(static_cast<std::size_t>(nl));
  g.variances.resize(static_cast<std::size_t>(nl));
  for (int l = 0; l < nl; ++l) {
    const auto first = static_cast<std::ptrdiff_t>(l * nq);
    const std::vector<double> gw(lw.begin() + first, lw.begin() + first + nq);
    const std::vector<cplx> gm(mu.begin() + first, mu.begin() + first + nq);
    // Within a group all products share a variance only when the anchor component's variance
    // is common; use the weighted mean of the exact product variances otherwise.
    double v = 0.0;
    const double gsum = std::accumulate(gw.begin(), gw.end(), 0.0);
    for (int q = 0; q < nq; ++q)
      v += (gsum > 0.0 ? gw[static_cast<std::size_t>(q)] / gsum : 1.0 / nq) * var[static_cast<std::size_t>(l * nq + q)];
    match_group(gw, gm, v, g.weights[static_cast<std::size_t>(l)], g.means[static_cast<std::size_t>(l)],
                g.variances[static_cast<std::size_t>(l)]);
    g.variances[static_cast<std::size_t>(l)] = std::max(g.variances[static_cast<std::size_t>(l)], variance_floor);
  }

  // Component l is component 0 turned by -2 pi l / V, the same labelling the forward messages use.
  GaussianMixture& r = out.reduced;
  r = g;
  for (int l = 0; l < nl; ++l) {
    r.means[static_cast<std::size_t>(l)] = std::polar(1.0, -2.0 * kPi * l / nl) * g.means[0];
    r.variances[static_cast<std::size_t>(l)] = g.variances[0];
  }
  return out;
}

BernoulliMixture combine_with_prior(const GaussianMixture* product, const RowPrior& prior, double variance_floor) {
  BernoulliMixture out;
  const double vb = prior.gain_variance;
  if (product == nullptr || product->size() == 0) {
    out.active_prob = prior.sparsity;
    out.slab.weights = {1.0};
    out.slab.means = {prior.gain_mean};
    out.slab.variances = {vb};
    return out;
  }
  const int n = product->size();
  std::vector<double> lc(static_cast<std::size_t>(n));
  std::vector<double> lz(static_cast<std::size_t>(n));
  out.slab.weights.resize(static_cast<std::size_t>(n));
  out.slab.means.resize(static_cast<std::size_t>(n));
  out.slab.variances.resize(static_cast<std::size_t>(n));
  for (int l = 0; l < n; ++l) {
    const auto k = static_cast<std::size_t>(l);
    const double w = std::max(product->variances[k], variance_floor);
    const cplx mu = product->means[k];
    const double lxi = safe_log(product->weights[k]);
    const double v = 1.0 / (1.0 / w + 1.0 / vb);
    out.slab.variances[k] = std::max(v, variance_floor);
    out.slab.means[k] = v * (mu / w + prior.gain_mean / vb);
    lc[k] = lxi + log_cn0(prior.gain_mean - mu, vb + w);
    lz[k] = lxi + log_cn0(mu, w);
  }
  const double log_slab = log_sum_exp(lc);
  const double log_spike = log_sum_exp(lz);
  out.slab.weights = lc;
  normalize_log_weights(out.slab.weights);
  const double odds = std::log(prior.sparsity) + log_slab - std::log1p(-prior.sparsity) - log_spike;
  out.active_prob = std::isnan(odds) ? prior.sparsity : logistic(odds);
  return out;
}

BernoulliMixture backward_message_nu(const std::vector<GaussianMixture>& messages, const RowPrior& prior,
                                     double variance_floor) {
  if (messages.empty()) return combine_with_prior(nullptr, prior, variance_floor);
  std::vector<const GaussianMixture*> order;
  order.reserve(messages.size());
  for (const auto& m : messages) order.push_back(&m);
  std::stable_sort(order.begin(), order.end(), [](const GaussianMixture* l, const GaussianMixture* r) {
    if (l->source_magnitude != r->source_magnitude) return l->source_magnitude > r->source_magnitude;
    return l->source_index < r->source_index;
  });
  GaussianMixture acc = *order.front();
  for (std::size_t k = 1; k < order.size(); ++k) acc = mixture_product_reduce(acc, *order[k], variance_floor).reduced;
  return combine_with_prior(&acc, prior, variance_floor);
}

BernoulliMixture zeta_message(const BernoulliMixture& nu, const RowPrior& prior, double variance_floor) {
  const int v_count = prior.order();
  const int n = nu.slab.size();
  BernoulliMixture out;
  out.active_prob = nu.active_prob;
  out.slab.weights.resize(static_cast<std::size_t>(v_count));
  out.slab.means.resize(static_cast<std::size_t>(v_count));
  out.slab.variances.resize(static_cast<std::size_t>(v_count));
  // Cluster c collects e^{jS_q} nu_l with (q - l) mod V = c.
  for (int c = 0; c < v_count; ++c) {
    std::vector<double> w;
    std::vector<cplx> mu;
    std::vector<double> var;
    for (int l = 0; l < n; ++l) {
      const int q = (l + c) % v_count;
      w.push_back(nu.slab.weights[static_cast<std::size_t>(l)] / v_count);
      mu.push_back(std::polar(1.0, prior.phases[static_cast<std::size_t>(q)]) * nu.slab.means[static_cast<std::size_t>(l)]);
      var.push_back(nu.slab.variances[static_cast<std::size_t>(l)]);
    }
    const double wsum = std::accumulate(w.begin(), w.end(), 0.0);
    double v = 0.0;
    for (std::size_t k = 0; k < w.size(); ++k) v += (wsum > 0.0 ? w[k] / wsum : 1.0 / w.size()) * var[k];
    const auto ck = static_cast<std::size_t>(c);
    match_group(w, mu, v, out.slab.weights[ck], out.slab.means[ck], out.slab.variances[ck]);
    out.slab.variances[ck] = std::max(out.slab.variances[ck], variance_floor);
  }
  const double total = out.slab.weight_sum();
  if (total > 0.0)
    for (double& w : out.slab.weights) w /= total;
  return out;
}

ScalarPosterior zeta_posterior(cplx r, double vr, const BernoulliMixture& message) {
  ScalarPosterior out;
  const double pi_in = message.active_prob;
  if (pi_in <= 0.0) return out;
  const int n = message.slab.size();
  std::vector<double> lc(static_cast<std::size_t>(n));
  std::vector<cplx> means(static_cast<std::size_t>(n));
  std::vector<double> vars(static_cast<std::size_t>(n));
  for (int l = 0; l < n; ++l) {
    const auto k = static_cast<std::size_t>(l);
    const double vn = message.slab.variances[k];
    const cplx mn = message.slab.means[k];
    vars[k] = 1.0 / (1.0 / vr + 1.0 / vn);
    means[k] = vars[k] * (r / vr + mn / vn);
    lc[k] = safe_log(message.slab.weights[k]) + log_cn0(r - mn, vr + vn);
  }
  const double log_slab = log_sum_exp(lc);
  std::vector<double> xi = lc;
  normalize_log_weights(xi);
  if (pi_in >= 1.0) {
    out.active_prob = 1.0;
  } else {
    const double odds = std::log(pi_in) + log_slab - std::log1p(-pi_in) - log_cn0(r, vr);
    out.active_prob = std::isnan(odds) ? pi_in : logistic(odds);
  }
  cplx slab_mean{};
  for (int l = 0; l < n; ++l) slab_mean += xi[static_cast<std::size_t>(l)] * means[static_cast<std::size_t>(l)];
  out.mean = out.active_prob * slab_mean;
  double second = 0.0;
  for (int l = 0; l < n; ++l) {
    const auto k = static_cast<std::size_t>(l);
    second += xi[k] * (vars[k] + std::norm(means[k] - out.mean));
  }
  out.variance = (1.0 - out.active_prob) * std::norm(out.mean) + out.active_prob * second;
  return out;
}

}  // namespace risloc
