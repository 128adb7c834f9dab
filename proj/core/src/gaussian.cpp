#include "vsm/gaussian.hpp"

#include <algorithm>
#include <cmath>

namespace vsm {

namespace {
constexpr double kLog2Pi = 1.8378770664093454836;  // log(2*pi)
}

double log_sum_exp(std::span<const double> v) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : v) mx = std::max(mx, x);
  if (!std::isfinite(mx)) return mx;  // all -inf (or a nan propagates below)
  double s = 0.0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s);
}

double gauss_log_pdf(double x, double mean, double sd) {
  const double z = (x - mean) / sd;
  return -0.5 * z * z - std::log(sd) - 0.5 * kLog2Pi;
}

double gauss_log_pdf_iso(std::span<const double> x, std::span<const double> mean,
                         double var) {
  const std::size_t d = x.size();
  double q = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    const double e = x[i] - mean[i];
    q += e * e;
  }
  return -0.5 * q / var - 0.5 * static_cast<double>(d) * (std::log(var) + kLog2Pi);
}

double gauss_log_pdf_diag(std::span<const double> x, std::span<const double> mean,
                          std::span<const double> log_sd) {
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double sd = std::exp(log_sd[i]);
    const double z = (x[i] - mean[i]) / sd;
    acc += -0.5 * z * z - log_sd[i];
  }
  return acc - 0.5 * static_cast<double>(x.size()) * kLog2Pi;
}

double gauss_log_pdf_std(std::span<const double> x) {
  return -0.5 * sq_norm(x) - 0.5 * static_cast<double>(x.size()) * kLog2Pi;
}

double gaussian_kld(double m1, double s1, double m2, double s2) {
  const double d = m1 - m2;
  return std::log(s2 / s1) + (s1 * s1 + d * d) / (2.0 * s2 * s2) - 0.5;
}

double gaussian_kld_diag(std::span<const double> m1, std::span<const double> ls1,
                         std::span<const double> m2, std::span<const double> ls2) {
  double acc = 0.0;
  for (std::size_t i = 0; i < m1.size(); ++i)
    acc += gaussian_kld(m1[i], std::exp(ls1[i]), m2[i], std::exp(ls2[i]));
  return acc;
}

double gaussian_kld_to_std(std::span<const double> mu,
                           std::span<const double> log_sd) {
  double acc = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) {
    const double v = std::exp(2.0 * log_sd[i]);
    acc += 0.5 * (v + mu[i] * mu[i] - 1.0) - log_sd[i];
  }
  return acc;
}

double gaussian_fd(double m1, double s1, double m2, double s2) {
  const double d = m1 - m2;
  const double s1s = s1 * s1, s2s = s2 * s2;
  return 1.0 / s1s - 2.0 / s2s + (s1s + d * d) / (s2s * s2s);
}

double gaussian_fd_diag(std::span<const double> m1, std::span<const double> ls1,
                        std::span<const double> m2, std::span<const double> ls2) {
  double acc = 0.0;
  for (std::size_t i = 0; i < m1.size(); ++i)
    acc += gaussian_fd(m1[i], std::exp(ls1[i]), m2[i], std::exp(ls2[i]));
  return acc;
}

double gaussian_kld_full(const GaussFull& a, const GaussFull& b) {
  const auto d = static_cast<double>(a.mean.size());
  Eigen::LLT<Eigen::MatrixXd> lltA(a.cov), lltB(b.cov);
  if (lltA.info() != Eigen::Success || lltB.info() != Eigen::Success)
    throw std::invalid_argument("gaussian_kld_full: covariance not SPD");
  const Eigen::MatrixXd Binv = b.cov.inverse();
  const Eigen::VectorXd delta = a.mean - b.mean;
  const double logdet_a = 2.0 * lltA.matrixL().toDenseMatrix().diagonal().array().log().sum();
  const double logdet_b = 2.0 * lltB.matrixL().toDenseMatrix().diagonal().array().log().sum();
  return 0.5 * (logdet_b - logdet_a - d + (Binv * a.cov).trace() +
                delta.dot(Binv * delta));
}

double gaussian_fd_full(const GaussFull& a, const GaussFull& b) {
  const Eigen::MatrixXd Ainv = a.cov.inverse();
  const Eigen::MatrixXd Binv = b.cov.inverse();
  const Eigen::MatrixXd A = Ainv - Binv;
  const Eigen::VectorXd delta = a.mean - b.mean;
  return (A * a.cov * A).trace() + delta.dot(Binv * Binv * delta);
}

GaussDivGrad gaussian_kld_grad(double m1, double s1, double m2, double s2) {
  const double s2s = s2 * s2;
  return {(m1 - m2) / s2s, (s1 * s1 - s2s) / (s1 * s2s)};
}

GaussDivGrad gaussian_fd_grad(double m1, double s1, double m2, double s2) {
  const double s2q = s2 * s2 * s2 * s2;
  const double s1s = s1 * s1;
  return {2.0 * (m1 - m2) / s2q, 2.0 * (s1s * s1s - s2q) / (s1s * s1 * s2q)};
}

GaussDivGrad gaussian_fd_grad_biased(double m1, double s1, double m2, double s2) {
  const GaussDivGrad kl = gaussian_kld_grad(m1, s1, m2, s2);
  const double s1s = s1 * s1;
  return {2.0 / s1s * kl.d_m1, 4.0 / s1s * kl.d_s1};
}

}  // namespace vsm
