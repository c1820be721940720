#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "bnnvi/rng.hpp"

namespace bnnvi {

// One neuron's variational parameters. Standard deviations are stored through
// the raw scale rho with sigma = softplus(rho), so every real rho is valid.
struct NeuronParams {
  std::vector<double> mu_a;   // output-weight means, length d_y
  std::vector<double> rho_a;  // output-weight raw scales, length d_y
  std::vector<double> mu_b;   // hidden-weight means, length d_x
  std::vector<double> rho_b;  // hidden-weight raw scales, length d_x

  int d_y() const { return static_cast<int>(mu_a.size()); }
  int d_x() const { return static_cast<int>(mu_b.size()); }
};

// Gaussian prior N(mean, variance) applied independently to every coordinate.
struct FactorizedGaussianPrior {
  double mean = 0.0;
  double variance = 0.2;
};

// Mean-field posterior: q(w) = prod_j q1(w_j), each factor a diagonal Gaussian.
struct VariationalPosterior {
  int d_x = 0;
  int d_y = 0;
  std::vector<NeuronParams> neurons;

  int size() const { return static_cast<int>(neurons.size()); }
  // Throws std::invalid_argument on dimension mismatches or non-finite values.
  void validate() const;
};

struct WeightPair {
  std::vector<double> a;  // length d_y
  std::vector<double> b;  // length d_x
};

// One realized weight set for the whole network.
struct WeightSample {
  int d_x = 0;
  int d_y = 0;
  std::vector<WeightPair> neurons;

  int size() const { return static_cast<int>(neurons.size()); }
};

// T_theta(z) = mu + softplus(rho) .* z. z layout is [z_b | z_a]: the first d_x
// coordinates drive the hidden weights, the last d_y the output weights.
WeightPair reparam_transform(const NeuronParams& theta, std::span<const double> z);

// Draws w_j = T_{theta_j}(z_j) with fresh i.i.d. standard-normal z per neuron
// (b coordinates first, then a, matching the z layout above).
WeightSample sample_weights(const VariationalPosterior& q, Rng& rng);

// Exact KL(q1_theta | N(m0, v0 I)) summed over the neuron's coordinates.
double kl_neuron(const NeuronParams& theta, const FactorizedGaussianPrior& prior);

// Sum of kl_neuron over all neurons.
double kl_total(const VariationalPosterior& q, const FactorizedGaussianPrior& prior);

// d(kl_neuron)/d(mu, rho) for one coordinate pair, used by the trainer.
struct KlCoordGrad {
  double d_mu;
  double d_rho;
};
KlCoordGrad kl_coordinate_gradient(double mu, double rho, const FactorizedGaussianPrior& prior);

// Flat JSON: {d_x, d_y, N, neurons: [{mu_a, rho_a, mu_b, rho_b}]}.
std::string posterior_to_json(const VariationalPosterior& q);
VariationalPosterior posterior_from_json(const std::string& text);
void save_posterior(const std::string& path, const VariationalPosterior& q);
VariationalPosterior load_posterior(const std::string& path);

}  // namespace bnnvi
