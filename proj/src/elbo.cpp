#include "bnnvi/elbo.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "bnnvi/math.hpp"

namespace bnnvi {

TemperatureSchedule TemperatureSchedule::fixed_eta(double eta) {
  // eta = 0 is allowed as the untempered-data diagnostic limit.
  if (!(eta >= 0.0)) throw std::invalid_argument("TemperatureSchedule: eta must be >= 0");
  return {Mode::FixedEta, eta};
}

TemperatureSchedule TemperatureSchedule::scaled(double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("TemperatureSchedule: tau must be > 0");
  return {Mode::Scaled, tau};
}

double resolve_eta(const TemperatureSchedule& schedule, std::size_t p, std::size_t n) {
  if (p < 1 || n < 1) throw std::invalid_argument("resolve_eta: p and n must be >= 1");
  switch (schedule.mode) {
    case TemperatureSchedule::Mode::FixedEta: return schedule.value;
    case TemperatureSchedule::Mode::Scaled:
      return schedule.value * static_cast<double>(p) / static_cast<double>(n);
  }
  throw std::logic_error("resolve_eta: unknown mode");
}

DataTermEstimate estimate_data_term(const VariationalPosterior& q, const Dataset& data,
                                    std::span<const std::size_t> rows, Loss loss, Activation act,
                                    int mc_samples, const Rng& rng) {
  if (mc_samples < 1) throw std::invalid_argument("estimate_data_term: mc_samples must be >= 1");
  DataTermEstimate est;
  if (rows.empty()) return est;
  std::vector<double> replicate(mc_samples, 0.0);
  for (int r = 0; r < mc_samples; ++r) {
    Rng stream = rng.sub(static_cast<std::uint64_t>(r));
    const WeightSample w = sample_weights(q, stream);
    double acc = 0.0;
    for (std::size_t i : rows) {
      acc += loss_value(loss, data.target(i), forward(w, data.row(i), act));
    }
    replicate[r] = acc;
  }
  double mean = 0.0;
  for (double v : replicate) mean += v;
  mean /= mc_samples;
  est.value = mean;
  if (mc_samples > 1) {
    double var = 0.0;
    for (double v : replicate) var += (v - mean) * (v - mean);
    var /= (mc_samples - 1);
    est.std_error = std::sqrt(var / mc_samples);
  }
  return est;
}

DataTermEstimate estimate_data_term(const VariationalPosterior& q, const Dataset& data, Loss loss,
                                    Activation act, int mc_samples, const Rng& rng) {
  const std::vector<std::size_t> rows = iota_indices(data.size());
  return estimate_data_term(q, data, rows, loss, act, mc_samples, rng);
}

ElboBreakdown elbo_estimate(const VariationalPosterior& q, const FactorizedGaussianPrior& prior,
                            const Dataset& data, Loss loss, Activation act,
                            const TemperatureSchedule& schedule, int mc_samples, const Rng& rng) {
  ElboBreakdown b;
  const DataTermEstimate d = estimate_data_term(q, data, loss, act, mc_samples, rng);
  b.data_term = d.value;
  b.std_error_data_term = d.std_error;
  b.kl_term = kl_total(q, prior);
  b.eta = resolve_eta(schedule, data.size(), q.size());
  b.elbo = -b.data_term - b.eta * b.kl_term;
  b.mc_samples = mc_samples;
  return b;
}

double minibatch_nelbo(const VariationalPosterior& q, const FactorizedGaussianPrior& prior,
                       const Dataset& data, std::span<const std::size_t> batch_rows, int batch_count,
                       Loss loss, Activation act, const TemperatureSchedule& schedule,
                       int mc_samples, const Rng& rng) {
  if (batch_count < 1) throw std::invalid_argument("minibatch_nelbo: batch count must be >= 1");
  const double eta = resolve_eta(schedule, data.size(), q.size());
  const DataTermEstimate d = estimate_data_term(q, data, batch_rows, loss, act, mc_samples, rng);
  return eta * kl_total(q, prior) / batch_count + d.value;
}

double balance_ratio(const ElboBreakdown& breakdown) {
  if (breakdown.data_term == 0.0) return std::numeric_limits<double>::infinity();
  return breakdown.eta * breakdown.kl_term / breakdown.data_term;
}

DataTermEstimate kl_total_mc(const VariationalPosterior& q, const FactorizedGaussianPrior& prior,
                             int samples, const Rng& rng) {
  if (samples < 1) throw std::invalid_argument("kl_total_mc: samples must be >= 1");
  const double log_2pi = std::log(2.0 * std::numbers::pi);
  std::vector<double> ratios(samples, 0.0);
  for (int s = 0; s < samples; ++s) {
    Rng stream = rng.sub(static_cast<std::uint64_t>(s));
    double acc = 0.0;
    for (const NeuronParams& theta : q.neurons) {
      auto coord = [&](double mu, double rho) {
        const double sigma = softplus(rho);
        const double z = stream.normal();
        const double w = mu + sigma * z;
        const double log_q = -0.5 * log_2pi - std::log(sigma) - 0.5 * z * z;
        const double dp = w - prior.mean;
        const double log_p0 =
            -0.5 * log_2pi - 0.5 * std::log(prior.variance) - dp * dp / (2.0 * prior.variance);
        acc += log_q - log_p0;
      };
      for (std::size_t l = 0; l < theta.mu_b.size(); ++l) coord(theta.mu_b[l], theta.rho_b[l]);
      for (std::size_t l = 0; l < theta.mu_a.size(); ++l) coord(theta.mu_a[l], theta.rho_a[l]);
    }
    ratios[s] = acc;
  }
  DataTermEstimate est;
  for (double v : ratios) est.value += v;
  est.value /= samples;
  if (samples > 1) {
    double var = 0.0;
    for (double v : ratios) var += (v - est.value) * (v - est.value);
    var /= (samples - 1);
    est.std_error = std::sqrt(var / samples);
  }
  return est;
}

}  // namespace bnnvi
