#pragma once

#include <span>
#include <vector>

#include "bnnvi/rng.hpp"
#include "bnnvi/variational.hpp"

namespace bnnvi {

enum class Activation { ReLU, Sigmoid };
enum class Loss { SquareLoss, CrossEntropy };

double act_value(Activation act, double t);
// ReLU derivative at 0 is taken as 0.
double act_deriv(Activation act, double t);

// Supervised target: a 1-based class label for cross-entropy, or a real vector
// for the square loss. Exactly one side is set.
struct Target {
  int label = 0;  // 1-based; 0 means "values" is the active side
  std::vector<double> values;

  bool is_label() const { return label > 0; }
  static Target of_label(int c);
  static Target of_values(std::vector<double> v);
};

// s(w_j, x) = a_j * act(<b_j, x>).
std::vector<double> neuron_output(const WeightPair& w, std::span<const double> x, Activation act);

// f_w(x) = (1/N) sum_j s(w_j, x). Plain mean, not 1/sqrt(N).
std::vector<double> forward(const WeightSample& w, std::span<const double> x, Activation act);

// SquareLoss: ||y - yhat||^2 (no 1/2). CrossEntropy: -log softmax(yhat)_y.
double loss_value(Loss loss, const Target& y, std::span<const double> yhat);

// SquareLoss: 2(yhat - y). CrossEntropy: softmax(yhat) - onehot(y).
std::vector<double> loss_gradient(Loss loss, const Target& y, std::span<const double> yhat);

// Gradient of l(y, f_w(x)) with the sample's shape.
struct WeightGrad {
  std::vector<WeightPair> neurons;
  static WeightGrad zeros_like(const WeightSample& w);
};

// Adds the gradient at one data point into `out` (same shape as w).
void accumulate_weight_gradient(const WeightSample& w, std::span<const double> x, const Target& y,
                                Loss loss, Activation act, WeightGrad& out);

WeightGrad backprop_weights(const WeightSample& w, std::span<const double> x, const Target& y,
                            Loss loss, Activation act);

// (1/m) sum_l softmax(f_{w_l}(x)), w_l i.i.d. from q. Sample l draws from the
// derived stream rng.sub(l), so the result is independent of evaluation order.
std::vector<double> predictive_probabilities(const VariationalPosterior& q, std::span<const double> x,
                                             int m, const Rng& rng, Activation act);

// Same estimator without the softmax (regression head).
std::vector<double> predictive_mean(const VariationalPosterior& q, std::span<const double> x,
                                    int m, const Rng& rng, Activation act);

}  // namespace bnnvi
