#include <doctest.h>

#include <cmath>

#include "support/testutil.hpp"
#include "vsm/gaussian.hpp"
#include "vsm/rng.hpp"
#include "vsm/toy.hpp"

using namespace vsm;
using namespace testutil;

namespace {

double norm_pdf(double x, double m, double s) {
  const double z = (x - m) / s;
  return std::exp(-0.5 * z * z) / (s * std::sqrt(2.0 * M_PI));
}

// Quadrature oracles, independent of the closed forms under test.
double kld_quad(double m1, double s1, double m2, double s2) {
  auto f = [&](double x) {
    const double q = norm_pdf(x, m1, s1);
    return q * (std::log(q) - std::log(norm_pdf(x, m2, s2)));
  };
  const double lo = m1 - 12 * s1, hi = m1 + 12 * s1;
  return integrate(f, lo, hi);
}

double fd_quad(double m1, double s1, double m2, double s2) {
  auto f = [&](double x) {
    const double ds = -(x - m1) / (s1 * s1) + (x - m2) / (s2 * s2);
    return norm_pdf(x, m1, s1) * ds * ds;
  };
  const double lo = m1 - 14 * s1, hi = m1 + 14 * s1;
  return integrate(f, lo, hi);
}

}  // namespace

TEST_CASE("log pdf values") {
  // Standard normal at the origin: -log(2 pi)/2.
  std::vector<double> zero{0.0};
  CHECK(gauss_log_pdf_std(zero) == doctest::Approx(-0.9189385332046727).epsilon(1e-14));
  CHECK(gauss_log_pdf(0.0, 0.0, 1.0) == doctest::Approx(-0.9189385332046727).epsilon(1e-14));
  // Diagonal vs isotropic consistency.
  std::vector<double> x{0.3, -1.2}, m{0.1, 0.4}, ls{std::log(0.7), std::log(0.7)};
  CHECK(gauss_log_pdf_diag(x, m, ls) ==
        doctest::Approx(gauss_log_pdf_iso(x, m, 0.49)).epsilon(1e-13));
}

TEST_CASE("kld closed form: pinned values and quadrature oracle") {
  CHECK(gaussian_kld(0, 1, 0, 1) == 0.0);
  CHECK(gaussian_kld(1, 1, 0, 1) == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(gaussian_kld(0, 2, 0, 1) == doctest::Approx(0.8068528194400547).epsilon(1e-14));
  Rng rng(5);
  for (int i = 0; i < 6; ++i) {
    const double m1 = rng.uniform(-2, 2), m2 = rng.uniform(-2, 2);
    const double s1 = rng.uniform(0.3, 2.5), s2 = rng.uniform(0.3, 2.5);
    CHECK(rel_err(gaussian_kld(m1, s1, m2, s2), kld_quad(m1, s1, m2, s2), 1e-8) < 1e-7);
  }
}

TEST_CASE("fd closed form: pinned values, expansion, quadrature and MC oracles") {
  CHECK(gaussian_fd(1, 1, 0, 1) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(gaussian_fd(0, 2, 0, 1) == doctest::Approx(2.25).epsilon(1e-14));
  CHECK(gaussian_fd(0, 1, 0, 1) == 0.0);

  Rng rng(6);
  for (int i = 0; i < 6; ++i) {
    const double m1 = rng.uniform(-2, 2), m2 = rng.uniform(-2, 2);
    const double s1 = rng.uniform(0.4, 2.0), s2 = rng.uniform(0.4, 2.0);
    const double closed = gaussian_fd(m1, s1, m2, s2);
    // Expansion form.
    const double d = m1 - m2;
    const double expand = 1.0 / (s1 * s1) - 2.0 / (s2 * s2) +
                          (s1 * s1 + d * d) / (s2 * s2 * s2 * s2);
    CHECK(rel_err(closed, expand, 1e-12) < 1e-12);
    CHECK(rel_err(closed, fd_quad(m1, s1, m2, s2), 1e-8) < 1e-7);
  }

  // Monte Carlo: E_{z~N1} (score1(z) - score2(z))^2.
  Rng mc(7);
  const double m1 = 0.4, s1 = 1.3, m2 = -0.2, s2 = 0.8;
  const int n = 400000;
  double acc = 0.0, acc2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = m1 + s1 * mc.normal();
    const double ds = -(z - m1) / (s1 * s1) + (z - m2) / (s2 * s2);
    acc += ds * ds;
    acc2 += ds * ds * ds * ds;
  }
  const double mean = acc / n;
  const double se = std::sqrt((acc2 / n - mean * mean) / n);
  CHECK(std::abs(mean - gaussian_fd(m1, s1, m2, s2)) < 3.0 * se);
}

TEST_CASE("diagonal forms sum per-coordinate") {
  std::vector<double> m1{0.5, -1.0}, ls1{std::log(1.2), std::log(0.6)};
  std::vector<double> m2{0.0, 0.0}, ls2{0.0, 0.0};
  CHECK(gaussian_kld_diag(m1, ls1, m2, ls2) ==
        doctest::Approx(gaussian_kld(0.5, 1.2, 0, 1) + gaussian_kld(-1.0, 0.6, 0, 1))
            .epsilon(1e-13));
  CHECK(gaussian_fd_diag(m1, ls1, m2, ls2) ==
        doctest::Approx(gaussian_fd(0.5, 1.2, 0, 1) + gaussian_fd(-1.0, 0.6, 0, 1))
            .epsilon(1e-13));
  CHECK(gaussian_kld_to_std(m1, ls1) ==
        doctest::Approx(gaussian_kld_diag(m1, ls1, m2, ls2)).epsilon(1e-13));
}

TEST_CASE("full-covariance divergences reduce to the diagonal forms") {
  GaussFull a, b;
  a.mean = Eigen::Vector2d(0.5, -1.0);
  a.cov = Eigen::Vector2d(1.44, 0.36).asDiagonal();
  b.mean = Eigen::Vector2d::Zero();
  b.cov = Eigen::Matrix2d::Identity();
  std::vector<double> m1{0.5, -1.0}, ls1{std::log(1.2), std::log(0.6)};
  std::vector<double> m2{0.0, 0.0}, ls2{0.0, 0.0};
  CHECK(rel_err(gaussian_kld_full(a, b), gaussian_kld_diag(m1, ls1, m2, ls2), 1e-12) < 1e-12);
  CHECK(rel_err(gaussian_fd_full(a, b), gaussian_fd_diag(m1, ls1, m2, ls2), 1e-12) < 1e-12);
}

TEST_CASE("full-covariance fd validated by Monte Carlo") {
  // Random SPD pair with correlations; the closed form must match the
  // sampled definition E_{N1} || S1^-1 (u - mu1) - S2^-1 (u - mu2) ||^2.
  Rng rng(8);
  for (int trial = 0; trial < 3; ++trial) {
    Eigen::Matrix2d R1, R2;
    R1 << rng.normal(), rng.normal(), rng.normal(), rng.normal();
    R2 << rng.normal(), rng.normal(), rng.normal(), rng.normal();
    GaussFull a, b;
    a.cov = R1 * R1.transpose() + 0.4 * Eigen::Matrix2d::Identity();
    b.cov = R2 * R2.transpose() + 0.4 * Eigen::Matrix2d::Identity();
    a.mean = Eigen::Vector2d(rng.uniform(-1, 1), rng.uniform(-1, 1));
    b.mean = Eigen::Vector2d(rng.uniform(-1, 1), rng.uniform(-1, 1));

    const Eigen::Matrix2d A1 = a.cov.inverse(), A2 = b.cov.inverse();
    Eigen::LLT<Eigen::Matrix2d> llt(a.cov);
    const Eigen::Matrix2d L = llt.matrixL();
    const int n = 300000;
    double acc = 0, acc2 = 0;
    for (int i = 0; i < n; ++i) {
      Eigen::Vector2d e(rng.normal(), rng.normal());
      Eigen::Vector2d u = a.mean + L * e;
      Eigen::Vector2d ds = -A1 * (u - a.mean) + A2 * (u - b.mean);
      const double v = ds.squaredNorm();
      acc += v;
      acc2 += v * v;
    }
    const double mean = acc / n;
    const double se = std::sqrt((acc2 / n - mean * mean) / n);
    CHECK(std::abs(mean - gaussian_fd_full(a, b)) < 3.5 * se);
  }
}

TEST_CASE("kld full: zero at equality, positive otherwise") {
  GaussFull a;
  a.mean = Eigen::Vector2d(0.3, 0.7);
  a.cov.resize(2, 2);
  a.cov << 1.5, 0.4, 0.4, 0.9;
  CHECK(std::abs(gaussian_kld_full(a, a)) < 1e-12);
  GaussFull b = a;
  b.mean(0) += 0.5;
  CHECK(gaussian_kld_full(a, b) > 0.0);
}

TEST_CASE("closed-form gradients match finite differences of the closed forms") {
  Rng rng(9);
  for (int i = 0; i < 8; ++i) {
    const double m1 = rng.uniform(-2, 2), m2 = rng.uniform(-2, 2);
    const double s1 = rng.uniform(0.4, 2.0), s2 = rng.uniform(0.4, 2.0);
    const double h = 1e-6;
    auto kg = gaussian_kld_grad(m1, s1, m2, s2);
    CHECK(rel_err(kg.d_m1, (gaussian_kld(m1 + h, s1, m2, s2) -
                            gaussian_kld(m1 - h, s1, m2, s2)) / (2 * h), 1e-7) < 1e-7);
    CHECK(rel_err(kg.d_s1, (gaussian_kld(m1, s1 + h, m2, s2) -
                            gaussian_kld(m1, s1 - h, m2, s2)) / (2 * h), 1e-7) < 1e-7);
    auto fg = gaussian_fd_grad(m1, s1, m2, s2);
    CHECK(rel_err(fg.d_m1, (gaussian_fd(m1 + h, s1, m2, s2) -
                            gaussian_fd(m1 - h, s1, m2, s2)) / (2 * h), 1e-6) < 1e-6);
    CHECK(rel_err(fg.d_s1, (gaussian_fd(m1, s1 + h, m2, s2) -
                            gaussian_fd(m1, s1 - h, m2, s2)) / (2 * h), 1e-6) < 1e-6);
  }
}

TEST_CASE("fixed-sample fd gradient is exactly proportional to the kld gradient") {
  Rng rng(10);
  for (int i = 0; i < 8; ++i) {
    const double m1 = rng.uniform(-2, 2), m2 = rng.uniform(-2, 2);
    const double s1 = rng.uniform(0.4, 2.0), s2 = rng.uniform(0.4, 2.0);
    auto kg = gaussian_kld_grad(m1, s1, m2, s2);
    auto bg = gaussian_fd_grad_biased(m1, s1, m2, s2);
    CHECK(bg.d_m1 == doctest::Approx(2.0 / (s1 * s1) * kg.d_m1).epsilon(1e-14));
    CHECK(bg.d_s1 == doctest::Approx(4.0 / (s1 * s1) * kg.d_s1).epsilon(1e-14));
  }
}

TEST_CASE("kld quartering when the target widens") {
  // d KL / d m1 = (m1 - m2) / s2^2: doubling s2 quarters the mean gradient.
  const double m1 = 1.3, s1 = 0.8, m2 = -0.4;
  auto g1 = gaussian_kld_grad(m1, s1, m2, 1.0);
  auto g2 = gaussian_kld_grad(m1, s1, m2, 2.0);
  CHECK(g2.d_m1 == doctest::Approx(0.25 * g1.d_m1).epsilon(1e-14));
}

TEST_CASE("linear toy joints") {
  LinearToy toy;  // theta* = 2, gamma = 0.5
  CHECK(toy_posterior_var(2.0, 0.5) == doctest::Approx(1.0 / 9.0).epsilon(1e-14));
  CHECK(toy.v_pi() == doctest::Approx(4.5).epsilon(1e-14));
  CHECK(toy_exact_slope(2.0, 0.5) == doctest::Approx(2.0 * (1.0 / 9.0) / 0.5).epsilon(1e-14));

  // At theta = theta*, phi = exact slope, alpha = 1 the two joints coincide.
  const double phi = toy_exact_slope(toy.theta_star, toy.gamma);
  GaussFull data = toy_data_joint(toy, toy.theta_star, phi, 1.0);
  GaussFull model = toy_model_joint(toy.theta_star, toy.gamma);
  CHECK((data.cov - model.cov).norm() < 1e-12);
  CHECK(gaussian_kld_full(data, model) < 1e-12);
  CHECK(std::abs(gaussian_fd_full(data, model)) < 1e-12);

  // Mismatched q (alpha != 1) separates them.
  GaussFull data06 = toy_data_joint(toy, toy.theta_star, phi, 0.6);
  CHECK(gaussian_kld_full(data06, model) > 1e-3);
  CHECK(gaussian_fd_full(data06, model) > 1e-3);

  CHECK(toy_score_energy(toy) == doctest::Approx(1.0 / 9.0).epsilon(1e-14));
}
