#pragma once

#include <functional>
#include <span>
#include <vector>

namespace bnnvi {

// log(1 + exp(rho)), safe against overflow for large |rho|.
double softplus(double rho);

// Inverse of softplus. Throws std::domain_error for sigma <= 0.
double softplus_inverse(double sigma);

// exp(x) / (1 + exp(x)); this is also the derivative of softplus.
double logistic(double x);

double normal_pdf(double x);
double normal_cdf(double x);

double log_sum_exp(std::span<const double> v);
std::vector<double> softmax(std::span<const double> logits);

// Physicists' Gauss-Hermite rule: integral exp(-t^2) f(t) dt ~ sum w_k f(t_k).
struct GaussHermiteRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

GaussHermiteRule gauss_hermite(int n);

// Shared 64-point rule (built once).
const GaussHermiteRule& gauss_hermite_64();

// E[f(U)] for U ~ N(m, s^2), s >= 0, using the 64-point rule.
double gaussian_expectation(double m, double s, const std::function<double(double)>& f);

// Least-squares slope of log(y) against log(x). Inputs must be positive.
double log_log_slope(std::span<const double> xs, std::span<const double> ys);

}  // namespace bnnvi
