#include "bnnvi/limit.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "bnnvi/math.hpp"

namespace bnnvi {

EmpiricalMeasure EmpiricalMeasure::from_posterior(const VariationalPosterior& q) {
  return EmpiricalMeasure{q.d_x, q.d_y, q.neurons};
}

VariationalPosterior EmpiricalMeasure::as_posterior() const {
  return VariationalPosterior{d_x, d_y, atoms};
}

GaussianReluMoments relu_gaussian_moments(double m, double s) {
  if (s < 0.0) throw std::invalid_argument("relu_gaussian_moments: s must be >= 0");
  GaussianReluMoments mom;
  mom.m = m;
  mom.s = s;
  if (s == 0.0) {
    const double r = std::max(0.0, m);
    mom.e1 = r;
    mom.e2 = r * r;
    return mom;
  }
  const double t = m / s;
  const double cdf = normal_cdf(t);
  const double pdf = normal_pdf(t);
  mom.e1 = m * cdf + s * pdf;
  mom.e2 = (m * m + s * s) * cdf + m * s * pdf;
  // Tail cancellation can leave a tiny negative residue for m << 0.
  mom.e1 = std::max(0.0, mom.e1);
  mom.e2 = std::max(mom.e2, mom.e1 * mom.e1);
  return mom;
}

PreActivation pre_activation(const NeuronParams& theta, std::span<const double> x) {
  if (x.size() != theta.mu_b.size()) {
    throw std::invalid_argument("pre_activation: x length must match d_x");
  }
  PreActivation p;
  double var = 0.0;
  for (std::size_t l = 0; l < x.size(); ++l) {
    p.mean += theta.mu_b[l] * x[l];
    const double s = softplus(theta.rho_b[l]);
    var += s * s * x[l] * x[l];
  }
  p.std = std::sqrt(var);
  return p;
}

std::vector<double> phi_bar(const NeuronParams& theta, std::span<const double> x, Activation act) {
  const PreActivation pre = pre_activation(theta, x);
  double eh = 0.0;
  switch (act) {
    case Activation::ReLU:
      eh = relu_gaussian_moments(pre.mean, pre.std).e1;
      break;
    case Activation::Sigmoid:
      eh = gaussian_expectation(pre.mean, pre.std, [](double t) { return logistic(t); });
      break;
  }
  std::vector<double> out(theta.mu_a.size());
  for (std::size_t l = 0; l < out.size(); ++l) out[l] = theta.mu_a[l] * eh;
  return out;
}

double phi_variance_scalar(const NeuronParams& theta, std::span<const double> x) {
  const PreActivation pre = pre_activation(theta, x);
  const GaussianReluMoments mom = relu_gaussian_moments(pre.mean, pre.std);
  double mu_sq = 0.0;
  double a_second = 0.0;  // E[||a||^2]
  for (std::size_t l = 0; l < theta.mu_a.size(); ++l) {
    const double sa = softplus(theta.rho_a[l]);
    mu_sq += theta.mu_a[l] * theta.mu_a[l];
    a_second += theta.mu_a[l] * theta.mu_a[l] + sa * sa;
  }
  return std::max(0.0, a_second * mom.e2 - mu_sq * mom.e1 * mom.e1);
}

namespace {

std::vector<double> mean_prediction(const EmpiricalMeasure& nu, std::span<const double> x,
                                    Activation act) {
  if (nu.atoms.empty()) throw std::invalid_argument("empirical measure: no atoms");
  std::vector<double> mean(nu.d_y, 0.0);
  for (const NeuronParams& theta : nu.atoms) {
    const std::vector<double> pb = phi_bar(theta, x, act);
    for (int l = 0; l < nu.d_y; ++l) mean[l] += pb[l];
  }
  const double inv_n = 1.0 / static_cast<double>(nu.atoms.size());
  for (double& v : mean) v *= inv_n;
  return mean;
}

double mean_kl(const EmpiricalMeasure& nu, const FactorizedGaussianPrior& prior) {
  double acc = 0.0;
  for (const NeuronParams& theta : nu.atoms) acc += kl_neuron(theta, prior);
  return acc / static_cast<double>(nu.atoms.size());
}

}  // namespace

double g_tilde(const EmpiricalMeasure& nu, std::span<const double> x, const Target& y, Loss loss,
               Activation act) {
  return loss_value(loss, y, mean_prediction(nu, x, act));
}

double f_tilde(const EmpiricalMeasure& nu, const Dataset& data, const FactorizedGaussianPrior& prior,
               double eta, std::size_t n, Loss loss, Activation act) {
  double data_part = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    data_part += g_tilde(nu, data.row(i), data.target(i), loss, act);
  }
  return -data_part - eta * static_cast<double>(n) * mean_kl(nu, prior);
}

double f_tau_p(const EmpiricalMeasure& nu, const Dataset& data, const FactorizedGaussianPrior& prior,
               double tau, Loss loss, Activation act) {
  const std::size_t p = data.size();
  if (p < 1) throw std::invalid_argument("f_tau_p: need p >= 1");
  double data_part = 0.0;
  for (std::size_t i = 0; i < p; ++i) {
    data_part += g_tilde(nu, data.row(i), data.target(i), loss, act);
  }
  return -data_part / static_cast<double>(p) - tau * mean_kl(nu, prior);
}

RTauEstimate r_tau_estimate(const EmpiricalMeasure& nu, const PairSampler& sampler,
                            const FactorizedGaussianPrior& prior, double tau, std::size_t mc_draws,
                            const Rng& rng, Loss loss, Activation act) {
  if (mc_draws < 1) throw std::invalid_argument("r_tau_estimate: need at least one draw");
  double sum = 0.0;
  double sum_sq = 0.0;
  for (std::size_t k = 0; k < mc_draws; ++k) {
    Rng stream = rng.sub(k);
    const auto [x, y] = sampler(stream);
    const double g = g_tilde(nu, x, y, loss, act);
    sum += g;
    sum_sq += g * g;
  }
  const double mean = sum / static_cast<double>(mc_draws);
  RTauEstimate est;
  est.value = -mean - tau * mean_kl(nu, prior);
  if (mc_draws > 1) {
    const double var = (sum_sq - mc_draws * mean * mean) / static_cast<double>(mc_draws - 1);
    est.std_error = std::sqrt(std::max(0.0, var) / static_cast<double>(mc_draws));
  }
  return est;
}

namespace {

// (1/N^2) sum_i sum_j Var_j(x_i); the exact ELBO-vs-limit discrepancy for
// square loss + ReLU via E||y - f||^2 = ||y - E f||^2 + tr Var(f).
double variance_gap(const EmpiricalMeasure& nu, const Dataset& data) {
  const double n = static_cast<double>(nu.atoms.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto x = data.row(i);
    for (const NeuronParams& theta : nu.atoms) acc += phi_variance_scalar(theta, x);
  }
  return acc / (n * n);
}

}  // namespace

double exact_square_relu_data_term(const EmpiricalMeasure& nu, const Dataset& data) {
  if (data.classification()) {
    throw std::invalid_argument("exact_square_relu_data_term: needs a regression dataset");
  }
  double acc = variance_gap(nu, data);
  for (std::size_t i = 0; i < data.size(); ++i) {
    acc += g_tilde(nu, data.row(i), data.target(i), Loss::SquareLoss, Activation::ReLU);
  }
  return acc;
}

double theorem3_gap_exact(const VariationalPosterior& q, const Dataset& data, Loss loss,
                          Activation act) {
  if (loss != Loss::SquareLoss || act != Activation::ReLU) {
    throw std::invalid_argument(
        "theorem3_gap_exact: exact oracle requires square loss + ReLU "
        "(use theorem3_gap_mc otherwise)");
  }
  return variance_gap(EmpiricalMeasure::from_posterior(q), data);
}

RTauEstimate theorem3_gap_mc(const VariationalPosterior& q, const Dataset& data, Loss loss,
                             Activation act, int mc_samples, const Rng& rng) {
  const EmpiricalMeasure nu = EmpiricalMeasure::from_posterior(q);
  const DataTermEstimate d = estimate_data_term(q, data, loss, act, mc_samples, rng);
  double g_sum = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    g_sum += g_tilde(nu, data.row(i), data.target(i), loss, act);
  }
  return {d.value - g_sum, d.std_error};
}

std::vector<Theorem3Row> theorem3_scaling_experiment(
    const std::function<NeuronParams(Rng&)>& atom_sampler, const Dataset& data,
    std::span<const int> n_grid, std::uint64_t seed) {
  if (n_grid.empty()) throw std::invalid_argument("theorem3_scaling_experiment: empty N grid");
  const int n_max = *std::max_element(n_grid.begin(), n_grid.end());
  Rng stream = Rng(seed).sub(0xa70u);
  std::vector<NeuronParams> atoms;
  atoms.reserve(n_max);
  for (int j = 0; j < n_max; ++j) atoms.push_back(atom_sampler(stream));

  std::vector<Theorem3Row> rows;
  const double p = static_cast<double>(data.size());
  for (int n : n_grid) {
    if (n < 1 || n > n_max) throw std::invalid_argument("theorem3_scaling_experiment: bad N");
    VariationalPosterior q;
    q.d_x = data.d_x;
    q.d_y = data.d_y;
    q.neurons.assign(atoms.begin(), atoms.begin() + n);
    const double gap = theorem3_gap_exact(q, data, Loss::SquareLoss, Activation::ReLU);
    rows.push_back({n, data.size(), gap, gap * n / p});
  }
  return rows;
}

}  // namespace bnnvi
