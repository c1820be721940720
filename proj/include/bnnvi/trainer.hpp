#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "bnnvi/data.hpp"
#include "bnnvi/elbo.hpp"
#include "bnnvi/model.hpp"
#include "bnnvi/variational.hpp"

namespace bnnvi {

enum class KlMode { ClosedForm, MonteCarlo };

struct TrainerConfig {
  double step_size = 0.05;
  int iterations = 1000;
  int mc_samples = 1;   // replicates per gradient step
  int batch_count = 1;  // L
  TemperatureSchedule schedule = TemperatureSchedule{TemperatureSchedule::Mode::Scaled, 1.0};
  std::uint64_t seed = 0;
  KlMode kl_mode = KlMode::ClosedForm;
  int trace_every = 10;     // 0 disables intermediate rows
  int elbo_mc_samples = 8;  // replicates used when recording the trace
};

struct TraceRow {
  int iteration = 0;
  ElboBreakdown breakdown;
  double grad_norm_mu = 0.0;
  double grad_norm_rho = 0.0;
};

struct TrainingTrace {
  std::vector<TraceRow> rows;
};

// Coordinate layout of the flattened parameter vector:
// per neuron, [mu_b | rho_b | mu_a | rho_a].
struct ParamLayout {
  int n = 0;
  int d_x = 0;
  int d_y = 0;

  std::size_t per_neuron() const { return 2 * (static_cast<std::size_t>(d_x) + d_y); }
  std::size_t total() const { return static_cast<std::size_t>(n) * per_neuron(); }
  bool is_rho(std::size_t k) const;
  static ParamLayout of(const VariationalPosterior& q) { return {q.size(), q.d_x, q.d_y}; }
};

std::vector<double> flatten(const VariationalPosterior& q);
void unflatten(std::span<const double> flat, VariationalPosterior& q);

struct ParamGradient {
  std::vector<double> flat;  // layout matches flatten()
  double norm_mu = 0.0;
  double norm_rho = 0.0;
};

// One-sided NELBO gradient of the rescaled minibatch objective
// eta*KL/L + batch data term, averaged over mc_samples reparameterized
// replicates (replicate r uses rng.sub(r), matching estimate_data_term).
ParamGradient elbo_parameter_gradient(const VariationalPosterior& q,
                                      const FactorizedGaussianPrior& prior, const Dataset& data,
                                      std::span<const std::size_t> batch_rows, int batch_count,
                                      Loss loss, Activation act,
                                      const TemperatureSchedule& schedule, int mc_samples,
                                      const Rng& rng, KlMode kl_mode);

// The same objective as a deterministic function of theta under common random
// numbers; this is what central differences are taken against.
double fixed_z_nelbo(const VariationalPosterior& q, const FactorizedGaussianPrior& prior,
                     const Dataset& data, std::span<const std::size_t> batch_rows, int batch_count,
                     Loss loss, Activation act, const TemperatureSchedule& schedule, int mc_samples,
                     const Rng& rng, KlMode kl_mode);

// mu -= step * grad, rho -= step * grad. Throws on non-finite gradients.
void sgd_update(VariationalPosterior& q, const ParamGradient& gradient, double step);

// Near-deterministic start: mu ~ N(0, 0.01^2), sigma = 1e-3 exactly.
VariationalPosterior initialize_posterior(int n, int d_x, int d_y, std::uint64_t seed);

struct TrainResult {
  VariationalPosterior posterior;
  TrainingTrace trace;
  bool diverged = false;
};

TrainResult train(VariationalPosterior init, const FactorizedGaussianPrior& prior,
                  const Dataset& data, const TrainerConfig& config, Loss loss, Activation act);

struct GradientCheckReport {
  double max_rel_error = 0.0;
  std::size_t coords_checked = 0;
  std::size_t coords_skipped = 0;  // ReLU-kink-adjacent hidden-weight coordinates
};

// Central-difference verification of elbo_parameter_gradient under common
// random numbers. fd_step defaults to 1e-5.
GradientCheckReport gradient_check(const VariationalPosterior& q,
                                   const FactorizedGaussianPrior& prior, const Dataset& data,
                                   std::span<const std::size_t> batch_rows, int batch_count,
                                   Loss loss, Activation act, const TemperatureSchedule& schedule,
                                   int mc_samples, std::uint64_t seed, KlMode kl_mode,
                                   double fd_step = 1e-5);

}  // namespace bnnvi
