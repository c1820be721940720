#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "bnnvi/data.hpp"
#include "bnnvi/elbo.hpp"
#include "bnnvi/model.hpp"
#include "bnnvi/variational.hpp"

namespace bnnvi {

// Uniform-weight atoms over per-neuron variational parameters.
struct EmpiricalMeasure {
  int d_x = 0;
  int d_y = 0;
  std::vector<NeuronParams> atoms;

  int size() const { return static_cast<int>(atoms.size()); }
  static EmpiricalMeasure from_posterior(const VariationalPosterior& q);
  VariationalPosterior as_posterior() const;
};

// First and second rectified moments of U ~ N(m, s^2): e1 = E[max(0,U)],
// e2 = E[max(0,U)^2].
struct GaussianReluMoments {
  double m = 0.0;
  double s = 0.0;
  double e1 = 0.0;
  double e2 = 0.0;
};

GaussianReluMoments relu_gaussian_moments(double m, double s);

// Pre-activation distribution of <b, x> under q1_theta.
struct PreActivation {
  double mean = 0.0;  // <mu_b, x>
  double std = 0.0;   // sqrt(sum_l sigma_{b,l}^2 x_l^2)
};
PreActivation pre_activation(const NeuronParams& theta, std::span<const double> x);

// Expected neuron output under its variational Gaussian:
// phi_bar = mu_a * E[act(<b, x>)]. Closed form for ReLU, 64-point
// Gauss-Hermite quadrature for the sigmoid.
std::vector<double> phi_bar(const NeuronParams& theta, std::span<const double> x, Activation act);

// Total variance of s(w, x) over output coordinates, ReLU path:
// E[||a||^2] E[h^2] - ||E[a]||^2 E[h]^2.
double phi_variance_scalar(const NeuronParams& theta, std::span<const double> x);

// G-tilde: loss of the mean prediction, l(y, (1/N) sum_j phi_bar_j(x)).
double g_tilde(const EmpiricalMeasure& nu, std::span<const double> x, const Target& y, Loss loss,
               Activation act);

// F-tilde over an empirical measure: -sum_i g_tilde - eta * n * mean-KL.
double f_tilde(const EmpiricalMeasure& nu, const Dataset& data, const FactorizedGaussianPrior& prior,
               double eta, std::size_t n, Loss loss, Activation act);

// F_tau^p = -(1/p) sum_i g_tilde - tau * mean-KL.
double f_tau_p(const EmpiricalMeasure& nu, const Dataset& data, const FactorizedGaussianPrior& prior,
               double tau, Loss loss, Activation act);

struct RTauEstimate {
  double value = 0.0;
  double std_error = 0.0;
};

// Monte Carlo estimate of R_tau = -E_pi[g_tilde] - tau * mean-KL over fresh
// draws from the data distribution.
RTauEstimate r_tau_estimate(const EmpiricalMeasure& nu, const PairSampler& sampler,
                            const FactorizedGaussianPrior& prior, double tau, std::size_t mc_draws,
                            const Rng& rng, Loss loss, Activation act);

// Exact E_q[sum_i ||y_i - f_w(x_i)||^2] for ReLU via the rectified moments:
// sum_i [ g_tilde_i + (1/N^2) sum_j Var_j(x_i) ].
double exact_square_relu_data_term(const EmpiricalMeasure& nu, const Dataset& data);

// |ELBO_eta^N - F_tilde_eta^N(nu_N)| in closed form for square loss + ReLU:
// (1/N^2) sum_i sum_j phi_variance_scalar(theta_j, x_i). The KL terms cancel,
// so the gap is eta-independent and always >= 0.
double theorem3_gap_exact(const VariationalPosterior& q, const Dataset& data, Loss loss,
                          Activation act);

// Monte Carlo fallback for configurations without the exact oracle:
// estimated data term minus sum_i g_tilde, with the estimate's standard error.
RTauEstimate theorem3_gap_mc(const VariationalPosterior& q, const Dataset& data, Loss loss,
                             Activation act, int mc_samples, const Rng& rng);

struct Theorem3Row {
  int n = 0;
  std::size_t p = 0;
  double gap = 0.0;
  double gap_n_over_p = 0.0;
};

// Exact-gap sweep over a neuron-count grid. Atoms come from one i.i.d.
// sequence drawn from `atom_sampler`; each grid point uses its prefix.
std::vector<Theorem3Row> theorem3_scaling_experiment(
    const std::function<NeuronParams(Rng&)>& atom_sampler, const Dataset& data,
    std::span<const int> n_grid, std::uint64_t seed);

}  // namespace bnnvi
