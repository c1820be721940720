#include "bnnvi/trainer.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "bnnvi/math.hpp"

namespace bnnvi {

namespace {

// Stream tags for the trainer's derived substreams.
constexpr std::uint64_t kTagPartition = 1;
constexpr std::uint64_t kTagTrace = 2;
constexpr std::uint64_t kTagEpoch = 3;
constexpr std::uint64_t kTagStep = 4;

}  // namespace

bool ParamLayout::is_rho(std::size_t k) const {
  const std::size_t within = k % per_neuron();
  const std::size_t dx = static_cast<std::size_t>(d_x);
  const std::size_t dy = static_cast<std::size_t>(d_y);
  if (within < dx) return false;            // mu_b
  if (within < 2 * dx) return true;         // rho_b
  if (within < 2 * dx + dy) return false;   // mu_a
  return true;                              // rho_a
}

std::vector<double> flatten(const VariationalPosterior& q) {
  const ParamLayout layout = ParamLayout::of(q);
  std::vector<double> flat;
  flat.reserve(layout.total());
  for (const NeuronParams& n : q.neurons) {
    flat.insert(flat.end(), n.mu_b.begin(), n.mu_b.end());
    flat.insert(flat.end(), n.rho_b.begin(), n.rho_b.end());
    flat.insert(flat.end(), n.mu_a.begin(), n.mu_a.end());
    flat.insert(flat.end(), n.rho_a.begin(), n.rho_a.end());
  }
  return flat;
}

void unflatten(std::span<const double> flat, VariationalPosterior& q) {
  const ParamLayout layout = ParamLayout::of(q);
  if (flat.size() != layout.total()) throw std::invalid_argument("unflatten: length mismatch");
  std::size_t k = 0;
  for (NeuronParams& n : q.neurons) {
    for (double& v : n.mu_b) v = flat[k++];
    for (double& v : n.rho_b) v = flat[k++];
    for (double& v : n.mu_a) v = flat[k++];
    for (double& v : n.rho_a) v = flat[k++];
  }
}

namespace {

struct ReplicateDraw {
  WeightSample w;
  std::vector<std::vector<double>> z;  // per neuron, layout [z_b | z_a]
};

// Must draw in exactly the order sample_weights uses so that common random
// numbers line up with estimate_data_term.
ReplicateDraw draw_replicate(const VariationalPosterior& q, Rng& stream) {
  ReplicateDraw d;
  d.w.d_x = q.d_x;
  d.w.d_y = q.d_y;
  d.w.neurons.reserve(q.neurons.size());
  d.z.reserve(q.neurons.size());
  std::vector<double> z(static_cast<std::size_t>(q.d_x) + q.d_y);
  for (const NeuronParams& theta : q.neurons) {
    stream.fill_normal(z);
    d.w.neurons.push_back(reparam_transform(theta, z));
    d.z.push_back(z);
  }
  return d;
}

double log_normal_density(double w, double mean, double var) {
  const double d = w - mean;
  return -0.5 * std::log(2.0 * std::numbers::pi * var) - d * d / (2.0 * var);
}

}  // namespace

ParamGradient elbo_parameter_gradient(const VariationalPosterior& q,
                                      const FactorizedGaussianPrior& prior, const Dataset& data,
                                      std::span<const std::size_t> batch_rows, int batch_count,
                                      Loss loss, Activation act,
                                      const TemperatureSchedule& schedule, int mc_samples,
                                      const Rng& rng, KlMode kl_mode) {
  if (mc_samples < 1) throw std::invalid_argument("elbo_parameter_gradient: mc_samples >= 1");
  if (batch_count < 1) throw std::invalid_argument("elbo_parameter_gradient: batch_count >= 1");
  const ParamLayout layout = ParamLayout::of(q);
  const double eta = resolve_eta(schedule, data.size(), q.size());
  const double kl_scale = eta / batch_count;

  ParamGradient grad;
  grad.flat.assign(layout.total(), 0.0);

  for (int r = 0; r < mc_samples; ++r) {
    Rng stream = rng.sub(static_cast<std::uint64_t>(r));
    const ReplicateDraw rep = draw_replicate(q, stream);

    WeightGrad wg = WeightGrad::zeros_like(rep.w);
    for (std::size_t i : batch_rows) {
      accumulate_weight_gradient(rep.w, data.row(i), data.target(i), loss, act, wg);
    }

    std::size_t k = 0;
    for (int j = 0; j < q.size(); ++j) {
      const NeuronParams& theta = q.neurons[j];
      const std::vector<double>& z = rep.z[j];
      // Pathwise chain: dw/dmu = 1, dw/drho = z * logistic(rho).
      auto push_block = [&](std::span<const double> gw, std::span<const double> mu,
                            std::span<const double> rho, std::size_t z_off) {
        for (std::size_t l = 0; l < mu.size(); ++l) {
          double g_mu = gw[l];
          double g_rho = gw[l] * z[z_off + l] * logistic(rho[l]);
          if (kl_mode == KlMode::MonteCarlo) {
            // Single-sample estimate of d(KL)/d(theta) through w = T_theta(z):
            // log q(w|theta) contributes -logistic(rho)/sigma to rho only;
            // -log P0(w) contributes via dw/dtheta.
            const double sigma = softplus(rho[l]);
            const double w_val = mu[l] + sigma * z[z_off + l];
            const double dp = (w_val - prior.mean) / prior.variance;
            g_mu += kl_scale * dp;
            g_rho += kl_scale * (dp * z[z_off + l] - 1.0 / sigma) * logistic(rho[l]);
          }
          grad.flat[k + l] += g_mu;
          grad.flat[k + mu.size() + l] += g_rho;
        }
      };
      push_block(wg.neurons[j].b, theta.mu_b, theta.rho_b, 0);
      k += 2 * theta.mu_b.size();
      push_block(wg.neurons[j].a, theta.mu_a, theta.rho_a, theta.mu_b.size());
      k += 2 * theta.mu_a.size();
    }
  }
  for (double& v : grad.flat) v /= mc_samples;

  if (kl_mode == KlMode::ClosedForm) {
    std::size_t k = 0;
    for (const NeuronParams& theta : q.neurons) {
      auto push_block = [&](std::span<const double> mu, std::span<const double> rho) {
        for (std::size_t l = 0; l < mu.size(); ++l) {
          const KlCoordGrad kg = kl_coordinate_gradient(mu[l], rho[l], prior);
          grad.flat[k + l] += kl_scale * kg.d_mu;
          grad.flat[k + mu.size() + l] += kl_scale * kg.d_rho;
        }
        k += 2 * mu.size();
      };
      push_block(theta.mu_b, theta.rho_b);
      push_block(theta.mu_a, theta.rho_a);
    }
  }

  double nm = 0.0, nr = 0.0;
  for (std::size_t k = 0; k < grad.flat.size(); ++k) {
    const double v = grad.flat[k] * grad.flat[k];
    if (layout.is_rho(k)) nr += v; else nm += v;
  }
  grad.norm_mu = std::sqrt(nm);
  grad.norm_rho = std::sqrt(nr);
  return grad;
}

double fixed_z_nelbo(const VariationalPosterior& q, const FactorizedGaussianPrior& prior,
                     const Dataset& data, std::span<const std::size_t> batch_rows, int batch_count,
                     Loss loss, Activation act, const TemperatureSchedule& schedule, int mc_samples,
                     const Rng& rng, KlMode kl_mode) {
  const double eta = resolve_eta(schedule, data.size(), q.size());
  const double kl_scale = eta / batch_count;
  const DataTermEstimate d = estimate_data_term(q, data, batch_rows, loss, act, mc_samples, rng);
  double value = d.value;
  if (kl_mode == KlMode::ClosedForm) {
    value += kl_scale * kl_total(q, prior);
  } else {
    double acc = 0.0;
    for (int r = 0; r < mc_samples; ++r) {
      Rng stream = rng.sub(static_cast<std::uint64_t>(r));
      const ReplicateDraw rep = draw_replicate(q, stream);
      for (int j = 0; j < q.size(); ++j) {
        const NeuronParams& theta = q.neurons[j];
        auto coord = [&](double mu, double rho, double w_val) {
          const double sigma = softplus(rho);
          acc += log_normal_density(w_val, mu, sigma * sigma) -
                 log_normal_density(w_val, prior.mean, prior.variance);
        };
        for (std::size_t l = 0; l < theta.mu_b.size(); ++l) {
          coord(theta.mu_b[l], theta.rho_b[l], rep.w.neurons[j].b[l]);
        }
        for (std::size_t l = 0; l < theta.mu_a.size(); ++l) {
          coord(theta.mu_a[l], theta.rho_a[l], rep.w.neurons[j].a[l]);
        }
      }
    }
    value += kl_scale * acc / mc_samples;
  }
  return value;
}

void sgd_update(VariationalPosterior& q, const ParamGradient& gradient, double step) {
  const ParamLayout layout = ParamLayout::of(q);
  if (gradient.flat.size() != layout.total()) throw std::invalid_argument("sgd_update: shape mismatch");
  for (std::size_t k = 0; k < gradient.flat.size(); ++k) {
    if (!std::isfinite(gradient.flat[k])) {
      throw std::runtime_error("sgd_update: non-finite gradient at coordinate " + std::to_string(k) +
                               " (|mu grad| = " + std::to_string(gradient.norm_mu) +
                               ", |rho grad| = " + std::to_string(gradient.norm_rho) + ")");
    }
  }
  std::vector<double> flat = flatten(q);
  for (std::size_t k = 0; k < flat.size(); ++k) flat[k] -= step * gradient.flat[k];
  unflatten(flat, q);
}

VariationalPosterior initialize_posterior(int n, int d_x, int d_y, std::uint64_t seed) {
  if (n < 1 || d_x < 1 || d_y < 1) throw std::invalid_argument("initialize_posterior: bad dims");
  const double rho0 = softplus_inverse(1e-3);
  VariationalPosterior q;
  q.d_x = d_x;
  q.d_y = d_y;
  q.neurons.resize(n);
  Rng stream = Rng(seed).sub(0x141u);
  for (NeuronParams& theta : q.neurons) {
    theta.mu_b.resize(d_x);
    theta.mu_a.resize(d_y);
    for (double& v : theta.mu_b) v = 0.01 * stream.normal();
    for (double& v : theta.mu_a) v = 0.01 * stream.normal();
    theta.rho_b.assign(d_x, rho0);
    theta.rho_a.assign(d_y, rho0);
  }
  return q;
}

TrainResult train(VariationalPosterior init, const FactorizedGaussianPrior& prior,
                  const Dataset& data, const TrainerConfig& config, Loss loss, Activation act) {
  init.validate();
  if (data.size() < 1) throw std::invalid_argument("train: empty dataset");
  if (config.iterations < 0) throw std::invalid_argument("train: negative iteration count");

  TrainResult result;
  result.posterior = std::move(init);
  VariationalPosterior& q = result.posterior;

  const Rng root(config.seed);
  Rng partition_stream = root.sub(kTagPartition);
  const std::vector<std::vector<std::size_t>> cells =
      batches(data.size(), config.batch_count, partition_stream);

  auto record = [&](int iteration, const ParamGradient* g) {
    const ElboBreakdown b =
        elbo_estimate(q, prior, data, loss, act, config.schedule, config.elbo_mc_samples,
                      root.sub(kTagTrace, static_cast<std::uint64_t>(iteration)));
    result.trace.rows.push_back(
        {iteration, b, g != nullptr ? g->norm_mu : 0.0, g != nullptr ? g->norm_rho : 0.0});
    return std::isfinite(b.elbo);
  };

  std::vector<std::size_t> order = iota_indices(cells.size());
  for (int t = 0; t < config.iterations; ++t) {
    if (t % config.batch_count == 0) {
      Rng epoch_stream = root.sub(kTagEpoch, static_cast<std::uint64_t>(t / config.batch_count));
      epoch_stream.shuffle(order);
    }
    const std::vector<std::size_t>& batch = cells[order[t % config.batch_count]];
    const ParamGradient g = elbo_parameter_gradient(
        q, prior, data, batch, config.batch_count, loss, act, config.schedule, config.mc_samples,
        root.sub(kTagStep, static_cast<std::uint64_t>(t)), config.kl_mode);
    bool finite = true;
    for (double v : g.flat) {
      if (!std::isfinite(v)) { finite = false; break; }
    }
    if (!finite) {
      result.diverged = true;
      record(t, &g);
      return result;
    }
    if (config.trace_every > 0 && t % config.trace_every == 0) {
      if (!record(t, &g)) {
        result.diverged = true;
        return result;
      }
    }
    sgd_update(q, g, config.step_size);
  }
  if (!record(config.iterations, nullptr)) result.diverged = true;
  return result;
}

GradientCheckReport gradient_check(const VariationalPosterior& q,
                                   const FactorizedGaussianPrior& prior, const Dataset& data,
                                   std::span<const std::size_t> batch_rows, int batch_count,
                                   Loss loss, Activation act, const TemperatureSchedule& schedule,
                                   int mc_samples, std::uint64_t seed, KlMode kl_mode,
                                   double fd_step) {
  const Rng rng(seed);
  const ParamGradient analytic = elbo_parameter_gradient(
      q, prior, data, batch_rows, batch_count, loss, act, schedule, mc_samples, rng, kl_mode);

  const ParamLayout layout = ParamLayout::of(q);

  // Hidden-weight coordinates of neurons whose pre-activation sits near a ReLU
  // kink (for any replicate and batch row) are excluded from the comparison.
  std::vector<bool> neuron_kinked(q.size(), false);
  if (act == Activation::ReLU) {
    for (int r = 0; r < mc_samples; ++r) {
      Rng stream = rng.sub(static_cast<std::uint64_t>(r));
      const WeightSample w = sample_weights(q, stream);
      for (int j = 0; j < q.size(); ++j) {
        for (std::size_t i : batch_rows) {
          const auto x = data.row(i);
          double u = 0.0;
          for (std::size_t l = 0; l < x.size(); ++l) u += w.neurons[j].b[l] * x[l];
          if (std::abs(u) < 1e-4) neuron_kinked[j] = true;
        }
      }
    }
  }

  double grad_inf = 0.0;
  for (double v : analytic.flat) grad_inf = std::max(grad_inf, std::abs(v));
  const double floor = 1e-6 * grad_inf + 1e-12;

  GradientCheckReport report;
  std::vector<double> flat = flatten(q);
  VariationalPosterior probe = q;
  for (std::size_t k = 0; k < flat.size(); ++k) {
    const std::size_t within = k % layout.per_neuron();
    const bool hidden_side = within < 2 * static_cast<std::size_t>(layout.d_x);
    const std::size_t j = k / layout.per_neuron();
    if (hidden_side && neuron_kinked[j]) {
      ++report.coords_skipped;
      continue;
    }
    const double saved = flat[k];
    flat[k] = saved + fd_step;
    unflatten(flat, probe);
    const double up = fixed_z_nelbo(probe, prior, data, batch_rows, batch_count, loss, act,
                                    schedule, mc_samples, rng, kl_mode);
    flat[k] = saved - fd_step;
    unflatten(flat, probe);
    const double down = fixed_z_nelbo(probe, prior, data, batch_rows, batch_count, loss, act,
                                      schedule, mc_samples, rng, kl_mode);
    flat[k] = saved;
    const double fd = (up - down) / (2.0 * fd_step);
    const double denom = std::max({std::abs(fd), std::abs(analytic.flat[k]), floor});
    report.max_rel_error = std::max(report.max_rel_error, std::abs(fd - analytic.flat[k]) / denom);
    ++report.coords_checked;
  }
  unflatten(flat, probe);
  return report;
}

}  // namespace bnnvi
