#include "bnnvi/variational.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "bnnvi/math.hpp"
#include "json.hpp"

namespace bnnvi {

namespace {

void check_finite(std::span<const double> v, const char* what) {
  for (double x : v) {
    if (!std::isfinite(x)) throw std::invalid_argument(std::string(what) + ": non-finite value");
  }
}

}  // namespace

void VariationalPosterior::validate() const {
  if (neurons.empty()) throw std::invalid_argument("posterior: need at least one neuron");
  if (d_x < 1 || d_y < 1) throw std::invalid_argument("posterior: dimensions must be >= 1");
  for (const NeuronParams& n : neurons) {
    if (n.d_x() != d_x || n.d_y() != d_y || n.rho_a.size() != n.mu_a.size() ||
        n.rho_b.size() != n.mu_b.size()) {
      throw std::invalid_argument("posterior: inconsistent neuron dimensions");
    }
    check_finite(n.mu_a, "mu_a");
    check_finite(n.rho_a, "rho_a");
    check_finite(n.mu_b, "mu_b");
    check_finite(n.rho_b, "rho_b");
  }
}

WeightPair reparam_transform(const NeuronParams& theta, std::span<const double> z) {
  const std::size_t dx = theta.mu_b.size();
  const std::size_t dy = theta.mu_a.size();
  if (z.size() != dx + dy) {
    throw std::invalid_argument("reparam_transform: z length must be d_x + d_y");
  }
  WeightPair w;
  w.b.resize(dx);
  w.a.resize(dy);
  for (std::size_t l = 0; l < dx; ++l) {
    w.b[l] = theta.mu_b[l] + softplus(theta.rho_b[l]) * z[l];
  }
  for (std::size_t l = 0; l < dy; ++l) {
    w.a[l] = theta.mu_a[l] + softplus(theta.rho_a[l]) * z[dx + l];
  }
  return w;
}

WeightSample sample_weights(const VariationalPosterior& q, Rng& rng) {
  WeightSample w;
  w.d_x = q.d_x;
  w.d_y = q.d_y;
  w.neurons.reserve(q.neurons.size());
  std::vector<double> z(static_cast<std::size_t>(q.d_x) + q.d_y);
  for (const NeuronParams& theta : q.neurons) {
    rng.fill_normal(z);
    w.neurons.push_back(reparam_transform(theta, z));
  }
  return w;
}

namespace {

double kl_coordinate(double mu, double rho, const FactorizedGaussianPrior& prior) {
  const double sigma = softplus(rho);
  const double var = sigma * sigma;
  const double diff = mu - prior.mean;
  return (var + diff * diff) / (2.0 * prior.variance) - 0.5 * std::log(var / prior.variance) - 0.5;
}

}  // namespace

double kl_neuron(const NeuronParams& theta, const FactorizedGaussianPrior& prior) {
  if (!(prior.variance > 0.0)) throw std::invalid_argument("kl_neuron: prior variance must be > 0");
  double kl = 0.0;
  for (std::size_t l = 0; l < theta.mu_b.size(); ++l) kl += kl_coordinate(theta.mu_b[l], theta.rho_b[l], prior);
  for (std::size_t l = 0; l < theta.mu_a.size(); ++l) kl += kl_coordinate(theta.mu_a[l], theta.rho_a[l], prior);
  return kl;
}

double kl_total(const VariationalPosterior& q, const FactorizedGaussianPrior& prior) {
  double kl = 0.0;
  for (const NeuronParams& theta : q.neurons) kl += kl_neuron(theta, prior);
  return kl;
}

KlCoordGrad kl_coordinate_gradient(double mu, double rho, const FactorizedGaussianPrior& prior) {
  const double sigma = softplus(rho);
  KlCoordGrad g;
  g.d_mu = (mu - prior.mean) / prior.variance;
  // d/d sigma of the closed form, chained through sigma = softplus(rho).
  g.d_rho = (sigma / prior.variance - 1.0 / sigma) * logistic(rho);
  return g;
}

std::string posterior_to_json(const VariationalPosterior& q) {
  nlohmann::json j;
  j["d_x"] = q.d_x;
  j["d_y"] = q.d_y;
  j["N"] = q.size();
  nlohmann::json neurons = nlohmann::json::array();
  for (const NeuronParams& n : q.neurons) {
    neurons.push_back({{"mu_a", n.mu_a}, {"rho_a", n.rho_a}, {"mu_b", n.mu_b}, {"rho_b", n.rho_b}});
  }
  j["neurons"] = std::move(neurons);
  return j.dump();
}

VariationalPosterior posterior_from_json(const std::string& text) {
  const nlohmann::json j = nlohmann::json::parse(text);
  VariationalPosterior q;
  q.d_x = j.at("d_x").get<int>();
  q.d_y = j.at("d_y").get<int>();
  for (const nlohmann::json& nj : j.at("neurons")) {
    NeuronParams n;
    n.mu_a = nj.at("mu_a").get<std::vector<double>>();
    n.rho_a = nj.at("rho_a").get<std::vector<double>>();
    n.mu_b = nj.at("mu_b").get<std::vector<double>>();
    n.rho_b = nj.at("rho_b").get<std::vector<double>>();
    q.neurons.push_back(std::move(n));
  }
  if (j.contains("N") && j.at("N").get<int>() != q.size()) {
    throw std::invalid_argument("posterior_from_json: N does not match neuron count");
  }
  q.validate();
  return q;
}

void save_posterior(const std::string& path, const VariationalPosterior& q) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_posterior: cannot open " + path);
  out << posterior_to_json(q) << '\n';
}

VariationalPosterior load_posterior(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_posterior: cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return posterior_from_json(text);
}

}  // namespace bnnvi
