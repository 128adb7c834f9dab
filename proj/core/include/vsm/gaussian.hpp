#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>

#include "vsm/common.hpp"

namespace vsm {

// Densities are parametrized by standard deviations unless a name says
// otherwise; isotropic likelihoods take the shared variance directly.

double gauss_log_pdf(double x, double mean, double sd);
// N(x; mean, var * I) over d dims.
double gauss_log_pdf_iso(std::span<const double> x, std::span<const double> mean,
                         double var);
double gauss_log_pdf_diag(std::span<const double> x, std::span<const double> mean,
                          std::span<const double> log_sd);
// Standard normal over d dims.
double gauss_log_pdf_std(std::span<const double> x);

// KL(N(m1,s1^2) || N(m2,s2^2)).
double gaussian_kld(double m1, double s1, double m2, double s2);
double gaussian_kld_diag(std::span<const double> m1, std::span<const double> ls1,
                         std::span<const double> m2, std::span<const double> ls2);
// KL(q || N(0, I)) with q = N(mu, diag(exp(2 log_sd))).
double gaussian_kld_to_std(std::span<const double> mu,
                           std::span<const double> log_sd);

// Relative Fisher divergence E_{N1} || grad log N1 - grad log N2 ||^2
// (no leading 1/2). Univariate closed form:
//   1/s1^2 - 2/s2^2 + (s1^2 + (m1-m2)^2) / s2^4.
double gaussian_fd(double m1, double s1, double m2, double s2);
double gaussian_fd_diag(std::span<const double> m1, std::span<const double> ls1,
                        std::span<const double> m2, std::span<const double> ls2);

// Full-covariance Gaussians for joint-distribution comparisons.
struct GaussFull {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};
double gaussian_kld_full(const GaussFull& a, const GaussFull& b);
// Tr(A S1 A) + delta^T S2^-2 delta with A = S1^-1 - S2^-1 (same no-1/2
// convention as the univariate form, to which it reduces).
double gaussian_fd_full(const GaussFull& a, const GaussFull& b);

// Closed-form gradients of the univariate divergences w.r.t. (m1, s1).
struct GaussDivGrad {
  double d_m1, d_s1;
};
GaussDivGrad gaussian_kld_grad(double m1, double s1, double m2, double s2);
// Gradient of the closed-form FD above (the estimator that differentiates
// through the sampling path targets this).
GaussDivGrad gaussian_fd_grad(double m1, double s1, double m2, double s2);
// Expectation of the fixed-sample ("biased") FD gradient: per coordinate it
// is proportional to the KL gradient, with factors 2/s1^2 (mean) and 4/s1^2
// (scale).
GaussDivGrad gaussian_fd_grad_biased(double m1, double s1, double m2, double s2);

}  // namespace vsm
