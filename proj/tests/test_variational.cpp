#include "bnnvi/variational.hpp"

#include <cmath>
#include <filesystem>
#include <stdexcept>

#include "bnnvi/elbo.hpp"
#include "bnnvi/math.hpp"
#include "doctest.h"
#include "support/oracles.hpp"

using namespace bnnvi;

namespace {

NeuronParams make_neuron(int d_x, int d_y, Rng& rng, double mu_scale = 1.0, double rho_lo = -2.0,
                         double rho_hi = 1.0) {
  NeuronParams n;
  n.mu_b.resize(d_x);
  n.rho_b.resize(d_x);
  n.mu_a.resize(d_y);
  n.rho_a.resize(d_y);
  for (double& v : n.mu_b) v = mu_scale * rng.normal();
  for (double& v : n.mu_a) v = mu_scale * rng.normal();
  for (double& v : n.rho_b) v = rho_lo + (rho_hi - rho_lo) * rng.uniform();
  for (double& v : n.rho_a) v = rho_lo + (rho_hi - rho_lo) * rng.uniform();
  return n;
}

VariationalPosterior make_posterior(int n, int d_x, int d_y, Rng& rng) {
  VariationalPosterior q;
  q.d_x = d_x;
  q.d_y = d_y;
  for (int j = 0; j < n; ++j) q.neurons.push_back(make_neuron(d_x, d_y, rng));
  return q;
}

NeuronParams prior_neuron(int d_x, int d_y, const FactorizedGaussianPrior& prior) {
  NeuronParams n;
  const double rho = softplus_inverse(std::sqrt(prior.variance));
  n.mu_b.assign(d_x, prior.mean);
  n.rho_b.assign(d_x, rho);
  n.mu_a.assign(d_y, prior.mean);
  n.rho_a.assign(d_y, rho);
  return n;
}

}  // namespace

TEST_CASE("reparam_transform basics") {
  Rng rng(3);
  NeuronParams theta = make_neuron(3, 2, rng);

  SUBCASE("zero noise returns the means") {
    const std::vector<double> z(5, 0.0);
    const WeightPair w = reparam_transform(theta, z);
    for (std::size_t l = 0; l < 3; ++l) CHECK(w.b[l] == theta.mu_b[l]);
    for (std::size_t l = 0; l < 2; ++l) CHECK(w.a[l] == theta.mu_a[l]);
  }

  SUBCASE("unit scale and a basis vector bump one coordinate") {
    theta.rho_b.assign(3, softplus_inverse(1.0));
    std::vector<double> z(5, 0.0);
    z[1] = 1.0;  // z layout is [z_b | z_a]
    const WeightPair w = reparam_transform(theta, z);
    CHECK(w.b[0] == doctest::Approx(theta.mu_b[0]).epsilon(1e-14));
    CHECK(w.b[1] == doctest::Approx(theta.mu_b[1] + 1.0).epsilon(1e-12));
    CHECK(w.b[2] == doctest::Approx(theta.mu_b[2]).epsilon(1e-14));
  }

  SUBCASE("matches independent scalar arithmetic") {
    std::vector<double> z(5);
    for (double& v : z) v = rng.normal();
    const WeightPair w = reparam_transform(theta, z);
    for (std::size_t l = 0; l < 3; ++l) {
      const double sigma = std::log1p(std::exp(theta.rho_b[l]));
      CHECK(w.b[l] == doctest::Approx(theta.mu_b[l] + sigma * z[l]).epsilon(1e-12));
    }
    for (std::size_t l = 0; l < 2; ++l) {
      const double sigma = std::log1p(std::exp(theta.rho_a[l]));
      CHECK(w.a[l] == doctest::Approx(theta.mu_a[l] + sigma * z[3 + l]).epsilon(1e-12));
    }
  }

  SUBCASE("dimension mismatch throws") {
    CHECK_THROWS_AS(reparam_transform(theta, std::vector<double>(4, 0.0)), std::invalid_argument);
  }
}

TEST_CASE("reparam_transform is affine in z") {
  Rng rng(5);
  const NeuronParams theta = make_neuron(4, 3, rng);
  std::vector<double> z1(7), z2(7);
  for (double& v : z1) v = rng.normal();
  for (double& v : z2) v = rng.normal();
  const double alpha = 0.3;
  std::vector<double> mix(7);
  for (std::size_t l = 0; l < 7; ++l) mix[l] = alpha * z1[l] + (1.0 - alpha) * z2[l];
  const WeightPair wm = reparam_transform(theta, mix);
  const WeightPair w1 = reparam_transform(theta, z1);
  const WeightPair w2 = reparam_transform(theta, z2);
  for (std::size_t l = 0; l < 4; ++l) {
    CHECK(wm.b[l] == doctest::Approx(alpha * w1.b[l] + (1.0 - alpha) * w2.b[l]).epsilon(1e-12));
  }
  for (std::size_t l = 0; l < 3; ++l) {
    CHECK(wm.a[l] == doctest::Approx(alpha * w1.a[l] + (1.0 - alpha) * w2.a[l]).epsilon(1e-12));
  }
}

TEST_CASE("sample_weights degenerate noise and determinism") {
  Rng rng(8);
  VariationalPosterior q = make_posterior(5, 3, 2, rng);
  const double rho_tiny = softplus_inverse(1e-8);
  for (NeuronParams& n : q.neurons) {
    n.rho_a.assign(2, rho_tiny);
    n.rho_b.assign(3, rho_tiny);
  }
  Rng sampler(21);
  const WeightSample w = sample_weights(q, sampler);
  double max_dev = 0.0;
  for (int j = 0; j < q.size(); ++j) {
    for (std::size_t l = 0; l < 3; ++l) max_dev = std::max(max_dev, std::abs(w.neurons[j].b[l] - q.neurons[j].mu_b[l]));
    for (std::size_t l = 0; l < 2; ++l) max_dev = std::max(max_dev, std::abs(w.neurons[j].a[l] - q.neurons[j].mu_a[l]));
  }
  CHECK(max_dev < 1e-6);

  // Same seed and draw position give the identical sample.
  Rng s1(99), s2(99);
  const WeightSample w1 = sample_weights(q, s1);
  const WeightSample w2 = sample_weights(q, s2);
  for (int j = 0; j < q.size(); ++j) {
    for (std::size_t l = 0; l < 3; ++l) CHECK(w1.neurons[j].b[l] == w2.neurons[j].b[l]);
  }
}

TEST_CASE("sample_weights empirical mean matches mu") {
  Rng rng(13);
  VariationalPosterior q = make_posterior(1, 1, 1, rng);
  const double mu = q.neurons[0].mu_b[0];
  const double sigma = softplus(q.neurons[0].rho_b[0]);
  const std::size_t draws = 100000;
  Rng sampler(17);
  double sum = 0.0;
  for (std::size_t i = 0; i < draws; ++i) {
    sum += sample_weights(q, sampler).neurons[0].b[0];
  }
  const double se = sigma / std::sqrt(static_cast<double>(draws));
  CHECK(std::abs(sum / draws - mu) < 4.0 * se);
}

TEST_CASE("kl_neuron closed form") {
  const FactorizedGaussianPrior std_prior{0.0, 1.0};

  SUBCASE("zero at the prior") {
    const NeuronParams n = prior_neuron(4, 3, std_prior);
    CHECK(kl_neuron(n, std_prior) == doctest::Approx(0.0).epsilon(1e-12));
    const FactorizedGaussianPrior wide{0.4, 0.2};
    const NeuronParams m = prior_neuron(2, 2, wide);
    CHECK(std::abs(kl_neuron(m, wide)) < 1e-12);
  }

  SUBCASE("d = 1, mu = 1, sigma = 1, prior N(0,1) gives 1/2") {
    NeuronParams n;
    n.mu_b = {1.0};
    n.rho_b = {softplus_inverse(1.0)};
    CHECK(kl_neuron(n, std_prior) == doctest::Approx(0.5).epsilon(1e-12));
  }

  SUBCASE("d = 1, mu = 0.3, sigma = 0.2, prior N(0, 0.04) gives 1.125") {
    NeuronParams n;
    n.mu_b = {0.3};
    n.rho_b = {softplus_inverse(0.2)};
    CHECK(kl_neuron(n, {0.0, 0.04}) == doctest::Approx(1.125).epsilon(1e-12));
  }

  SUBCASE("nonnegative on random parameters") {
    Rng rng(31);
    for (int trial = 0; trial < 200; ++trial) {
      const NeuronParams n = make_neuron(3, 2, rng, 2.0, -4.0, 2.0);
      CHECK(kl_neuron(n, {0.1, 0.7}) >= 0.0);
    }
  }
}

TEST_CASE("kl_total additivity, symmetry, and MC agreement") {
  Rng rng(37);
  const FactorizedGaussianPrior prior{0.0, 0.2};

  SUBCASE("prior replicated is zero, identical neurons add") {
    VariationalPosterior q;
    q.d_x = 2;
    q.d_y = 2;
    q.neurons.assign(6, prior_neuron(2, 2, prior));
    CHECK(kl_total(q, prior) == doctest::Approx(0.0).epsilon(1e-12));

    const NeuronParams n = make_neuron(2, 2, rng);
    q.neurons.assign(6, n);
    CHECK(kl_total(q, prior) == doctest::Approx(6.0 * kl_neuron(n, prior)).epsilon(1e-12));
  }

  SUBCASE("permutation invariance") {
    VariationalPosterior q = make_posterior(7, 2, 3, rng);
    VariationalPosterior shuffled = q;
    std::rotate(shuffled.neurons.begin(), shuffled.neurons.begin() + 3, shuffled.neurons.end());
    std::swap(shuffled.neurons[0], shuffled.neurons[4]);
    CHECK(kl_total(q, prior) == doctest::Approx(kl_total(shuffled, prior)).epsilon(1e-12));
  }

  SUBCASE("closed form matches the MC log-ratio estimate") {
    const VariationalPosterior q = make_posterior(3, 2, 2, rng);
    const double exact = kl_total(q, prior);
    const DataTermEstimate mc = kl_total_mc(q, prior, 100000, Rng(101));
    CHECK(std::abs(mc.value - exact) < 3.0 * mc.std_error);
  }
}

TEST_CASE("kl gradient is zero exactly at the prior") {
  const FactorizedGaussianPrior prior{0.3, 0.5};
  const double rho_star = softplus_inverse(std::sqrt(prior.variance));
  const KlCoordGrad g = kl_coordinate_gradient(prior.mean, rho_star, prior);
  CHECK(g.d_mu == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(g.d_rho == doctest::Approx(0.0).epsilon(1e-12));

  // And matches finite differences elsewhere.
  for (double mu : {-0.8, 0.1}) {
    for (double rho : {-1.5, 0.4}) {
      const KlCoordGrad grad = kl_coordinate_gradient(mu, rho, prior);
      NeuronParams n;
      auto kl_at = [&](double m, double r) {
        NeuronParams probe;
        probe.mu_b = {m};
        probe.rho_b = {r};
        return kl_neuron(probe, prior);
      };
      const double fd_mu = (kl_at(mu + 1e-6, rho) - kl_at(mu - 1e-6, rho)) / 2e-6;
      const double fd_rho = (kl_at(mu, rho + 1e-6) - kl_at(mu, rho - 1e-6)) / 2e-6;
      CHECK(grad.d_mu == doctest::Approx(fd_mu).epsilon(1e-7));
      CHECK(grad.d_rho == doctest::Approx(fd_rho).epsilon(1e-7));
    }
  }
}

TEST_CASE("posterior JSON serialization round trips") {
  Rng rng(53);
  const VariationalPosterior q = make_posterior(4, 3, 2, rng);
  const VariationalPosterior back = posterior_from_json(posterior_to_json(q));
  REQUIRE(back.size() == q.size());
  CHECK(back.d_x == q.d_x);
  CHECK(back.d_y == q.d_y);
  for (int j = 0; j < q.size(); ++j) {
    for (std::size_t l = 0; l < q.neurons[j].mu_b.size(); ++l) {
      CHECK(back.neurons[j].mu_b[l] == doctest::Approx(q.neurons[j].mu_b[l]).epsilon(1e-12));
      CHECK(back.neurons[j].rho_b[l] == doctest::Approx(q.neurons[j].rho_b[l]).epsilon(1e-12));
    }
  }

  const std::filesystem::path path =
      std::filesystem::temp_directory_path() / "bnnvi_test_posterior.json";
  save_posterior(path.string(), q);
  const VariationalPosterior loaded = load_posterior(path.string());
  CHECK(loaded.neurons[2].rho_a[1] == q.neurons[2].rho_a[1]);
  std::filesystem::remove(path);

  CHECK_THROWS(posterior_from_json("{\"d_x\": 1}"));
  CHECK_THROWS_AS(load_posterior("/nonexistent/posterior.json"), std::runtime_error);
}

TEST_CASE("posterior validation rejects bad shapes") {
  Rng rng(59);
  VariationalPosterior q = make_posterior(2, 2, 2, rng);
  q.neurons[1].mu_b.push_back(0.0);
  CHECK_THROWS_AS(q.validate(), std::invalid_argument);

  VariationalPosterior empty;
  empty.d_x = 1;
  empty.d_y = 1;
  CHECK_THROWS_AS(empty.validate(), std::invalid_argument);
}
