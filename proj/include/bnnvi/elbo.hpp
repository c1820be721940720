#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "bnnvi/data.hpp"
#include "bnnvi/model.hpp"
#include "bnnvi/rng.hpp"
#include "bnnvi/variational.hpp"

namespace bnnvi {

// Cooling parameter: either a fixed eta, or the scaled form eta_N = tau * p / N.
struct TemperatureSchedule {
  enum class Mode { FixedEta, Scaled };
  Mode mode = Mode::Scaled;
  double value = 1.0;  // eta for FixedEta, tau for Scaled

  static TemperatureSchedule fixed_eta(double eta);
  static TemperatureSchedule scaled(double tau);
};

double resolve_eta(const TemperatureSchedule& schedule, std::size_t p, std::size_t n);

struct ElboBreakdown {
  double data_term = 0.0;  // sum_i E_q[l(y_i, f_w(x_i))], Monte Carlo
  double kl_term = 0.0;    // sum_j KL(q1_j | P0^1), closed form
  double eta = 0.0;
  double elbo = 0.0;  // -data_term - eta * kl_term
  int mc_samples = 0;
  double std_error_data_term = 0.0;
};

struct DataTermEstimate {
  double value = 0.0;
  double std_error = 0.0;
};

// Monte Carlo estimate of the data term over the given rows. Each replicate r
// draws one z ~ gamma^(xN) from rng.sub(r) and shares it across all rows, so a
// replicate costs O(|rows| * N). Empty rows give 0.
DataTermEstimate estimate_data_term(const VariationalPosterior& q, const Dataset& data,
                                    std::span<const std::size_t> rows, Loss loss, Activation act,
                                    int mc_samples, const Rng& rng);

// Full-dataset convenience overload.
DataTermEstimate estimate_data_term(const VariationalPosterior& q, const Dataset& data, Loss loss,
                                    Activation act, int mc_samples, const Rng& rng);

ElboBreakdown elbo_estimate(const VariationalPosterior& q, const FactorizedGaussianPrior& prior,
                            const Dataset& data, Loss loss, Activation act,
                            const TemperatureSchedule& schedule, int mc_samples, const Rng& rng);

// Rescaled per-minibatch NELBO: eta * kl_total / L + batch data term. Summed
// over a full L-cell partition this is an unbiased estimate of -elbo.
double minibatch_nelbo(const VariationalPosterior& q, const FactorizedGaussianPrior& prior,
                       const Dataset& data, std::span<const std::size_t> batch_rows, int batch_count,
                       Loss loss, Activation act, const TemperatureSchedule& schedule,
                       int mc_samples, const Rng& rng);

// eta * kl_term / data_term; infinity when the data term is zero.
double balance_ratio(const ElboBreakdown& breakdown);

// Monte Carlo log-density-ratio estimate of kl_total; diagnostic cross-check
// for the closed form.
DataTermEstimate kl_total_mc(const VariationalPosterior& q, const FactorizedGaussianPrior& prior,
                             int samples, const Rng& rng);

}  // namespace bnnvi
