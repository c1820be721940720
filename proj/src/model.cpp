#include "bnnvi/model.hpp"

#include <cmath>
#include <stdexcept>

#include "bnnvi/math.hpp"

namespace bnnvi {

double act_value(Activation act, double t) {
  switch (act) {
    case Activation::ReLU: return t > 0.0 ? t : 0.0;
    case Activation::Sigmoid: return logistic(t);
  }
  throw std::logic_error("act_value: unknown activation");
}

double act_deriv(Activation act, double t) {
  switch (act) {
    case Activation::ReLU: return t > 0.0 ? 1.0 : 0.0;
    case Activation::Sigmoid: {
      const double s = logistic(t);
      return s * (1.0 - s);
    }
  }
  throw std::logic_error("act_deriv: unknown activation");
}

Target Target::of_label(int c) {
  if (c < 1) throw std::invalid_argument("Target::of_label: labels are 1-based");
  Target t;
  t.label = c;
  return t;
}

Target Target::of_values(std::vector<double> v) {
  Target t;
  t.values = std::move(v);
  return t;
}

namespace {

double dot(std::span<const double> u, std::span<const double> v) {
  double s = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) s += u[i] * v[i];
  return s;
}

}  // namespace

std::vector<double> neuron_output(const WeightPair& w, std::span<const double> x, Activation act) {
  if (x.size() != w.b.size()) throw std::invalid_argument("neuron_output: x length must match d_x");
  const double h = act_value(act, dot(w.b, x));
  std::vector<double> out(w.a.size());
  for (std::size_t l = 0; l < w.a.size(); ++l) out[l] = w.a[l] * h;
  return out;
}

std::vector<double> forward(const WeightSample& w, std::span<const double> x, Activation act) {
  if (w.neurons.empty()) throw std::invalid_argument("forward: empty weight sample");
  if (static_cast<int>(x.size()) != w.d_x) throw std::invalid_argument("forward: x length must match d_x");
  std::vector<double> out(w.d_y, 0.0);
  for (const WeightPair& neuron : w.neurons) {
    const double h = act_value(act, dot(neuron.b, x));
    for (int l = 0; l < w.d_y; ++l) out[l] += neuron.a[l] * h;
  }
  const double inv_n = 1.0 / static_cast<double>(w.neurons.size());
  for (double& v : out) v *= inv_n;
  return out;
}

double loss_value(Loss loss, const Target& y, std::span<const double> yhat) {
  switch (loss) {
    case Loss::SquareLoss: {
      if (y.is_label()) throw std::invalid_argument("loss_value: square loss needs a real target");
      if (y.values.size() != yhat.size()) throw std::invalid_argument("loss_value: target length mismatch");
      double s = 0.0;
      for (std::size_t l = 0; l < yhat.size(); ++l) {
        const double d = y.values[l] - yhat[l];
        s += d * d;
      }
      return s;
    }
    case Loss::CrossEntropy: {
      if (!y.is_label()) throw std::invalid_argument("loss_value: cross-entropy needs a class label");
      if (y.label > static_cast<int>(yhat.size())) {
        throw std::domain_error("loss_value: label out of range");
      }
      return log_sum_exp(yhat) - yhat[y.label - 1];
    }
  }
  throw std::logic_error("loss_value: unknown loss");
}

std::vector<double> loss_gradient(Loss loss, const Target& y, std::span<const double> yhat) {
  switch (loss) {
    case Loss::SquareLoss: {
      if (y.is_label()) throw std::invalid_argument("loss_gradient: square loss needs a real target");
      if (y.values.size() != yhat.size()) throw std::invalid_argument("loss_gradient: target length mismatch");
      std::vector<double> g(yhat.size());
      for (std::size_t l = 0; l < yhat.size(); ++l) g[l] = 2.0 * (yhat[l] - y.values[l]);
      return g;
    }
    case Loss::CrossEntropy: {
      if (!y.is_label()) throw std::invalid_argument("loss_gradient: cross-entropy needs a class label");
      if (y.label > static_cast<int>(yhat.size())) {
        throw std::domain_error("loss_gradient: label out of range");
      }
      std::vector<double> g = softmax(yhat);
      g[y.label - 1] -= 1.0;
      return g;
    }
  }
  throw std::logic_error("loss_gradient: unknown loss");
}

WeightGrad WeightGrad::zeros_like(const WeightSample& w) {
  WeightGrad g;
  g.neurons.resize(w.neurons.size());
  for (std::size_t j = 0; j < w.neurons.size(); ++j) {
    g.neurons[j].a.assign(w.neurons[j].a.size(), 0.0);
    g.neurons[j].b.assign(w.neurons[j].b.size(), 0.0);
  }
  return g;
}

void accumulate_weight_gradient(const WeightSample& w, std::span<const double> x, const Target& y,
                                Loss loss, Activation act, WeightGrad& out) {
  if (out.neurons.size() != w.neurons.size()) {
    throw std::invalid_argument("accumulate_weight_gradient: shape mismatch");
  }
  const std::vector<double> yhat = forward(w, x, act);
  const std::vector<double> g = loss_gradient(loss, y, yhat);
  const double inv_n = 1.0 / static_cast<double>(w.neurons.size());
  for (std::size_t j = 0; j < w.neurons.size(); ++j) {
    const WeightPair& neuron = w.neurons[j];
    const double u = dot(neuron.b, x);
    const double h = act_value(act, u);
    const double hp = act_deriv(act, u);
    double g_dot_a = 0.0;
    for (std::size_t l = 0; l < neuron.a.size(); ++l) {
      out.neurons[j].a[l] += inv_n * h * g[l];
      g_dot_a += g[l] * neuron.a[l];
    }
    const double scale = inv_n * g_dot_a * hp;
    for (std::size_t l = 0; l < neuron.b.size(); ++l) {
      out.neurons[j].b[l] += scale * x[l];
    }
  }
}

WeightGrad backprop_weights(const WeightSample& w, std::span<const double> x, const Target& y,
                            Loss loss, Activation act) {
  WeightGrad g = WeightGrad::zeros_like(w);
  accumulate_weight_gradient(w, x, y, loss, act, g);
  return g;
}

namespace {

std::vector<double> predictive_accumulate(const VariationalPosterior& q, std::span<const double> x,
                                          int m, const Rng& rng, Activation act, bool apply_softmax) {
  if (m < 1) throw std::invalid_argument("predictive: m must be >= 1");
  std::vector<double> acc(q.d_y, 0.0);
  for (int l = 0; l < m; ++l) {
    Rng stream = rng.sub(static_cast<std::uint64_t>(l));
    const WeightSample w = sample_weights(q, stream);
    std::vector<double> out = forward(w, x, act);
    if (apply_softmax) out = softmax(out);
    for (int c = 0; c < q.d_y; ++c) acc[c] += out[c];
  }
  for (double& v : acc) v /= static_cast<double>(m);
  return acc;
}

}  // namespace

std::vector<double> predictive_probabilities(const VariationalPosterior& q, std::span<const double> x,
                                             int m, const Rng& rng, Activation act) {
  return predictive_accumulate(q, x, m, rng, act, /*apply_softmax=*/true);
}

std::vector<double> predictive_mean(const VariationalPosterior& q, std::span<const double> x,
                                    int m, const Rng& rng, Activation act) {
  return predictive_accumulate(q, x, m, rng, act, /*apply_softmax=*/false);
}

}  // namespace bnnvi
