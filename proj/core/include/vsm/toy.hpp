#pragma once

#include "vsm/gaussian.hpp"
#include "vsm/model.hpp"

namespace vsm {

// One-dimensional linear-Gaussian model: z ~ N(0,1), x | z ~ N(theta z, gamma).
// Everything about it is closed-form, which makes it the calibration rig for
// the estimators (marginal N(0, theta^2 + gamma), posterior
// N(theta x / (theta^2 + gamma), v*) with v* = (1 + theta^2/gamma)^-1).
struct LinearToy {
  double theta_star = 2.0;
  double gamma = 0.5;
  double v_pi() const { return theta_star * theta_star + gamma; }
};

// Exact posterior variance under parameters (theta, gamma).
double toy_posterior_var(double theta, double gamma);
// Exact amortization slope: posterior mean = slope * x.
double toy_exact_slope(double theta, double gamma);

// Joint law of (z, x) when x ~ N(0, v_pi) and z | x ~ N(phi x, alpha v*(theta)).
// alpha = 1 with phi = exact slope makes this the model joint at theta = theta*.
GaussFull toy_data_joint(const LinearToy& toy, double theta, double phi,
                         double alpha);
// Joint law of (z, x) under the generative model with parameters (theta, gamma).
GaussFull toy_model_joint(double theta, double gamma);

// The same toy expressed as a one-dimensional model with affine nets:
// decoder g(z) = theta z, encoder mu(x) = phi x, log sd = 0.5 log(alpha v*).
GaussianVae toy_vae(const LinearToy& toy, double theta, double phi, double alpha);

// Entropy-rate constant of the data marginal: 0.5 E_pi (d log pi / dx)^2
// = 1 / (2 v_pi). Subtracted when turning a joint score-matching value into
// the model-only part.
double toy_score_energy(const LinearToy& toy);

}  // namespace vsm
