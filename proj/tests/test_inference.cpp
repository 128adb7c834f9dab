#include <doctest.h>

#include <cmath>
#include <functional>

#include "support/testutil.hpp"
#include "vsm/gaussian.hpp"
#include "vsm/inference.hpp"

using namespace vsm;
using namespace testutil;

namespace {

// Univariate Gaussian N(m2, s2^2) as a score target.
ScoreTarget gauss_target(double m2, double s2) {
  const double v = s2 * s2;
  ScoreTarget t;
  t.dim = 1;
  t.score = [m2, v](std::span<const double> z) {
    return std::vector<double>{-(z[0] - m2) / v};
  };
  t.score_hvp = [v](std::span<const double>, std::span<const double> u) {
    return std::vector<double>{-u[0] / v};
  };
  t.log_density = [m2, v](std::span<const double> z) {
    return -0.5 * (z[0] - m2) * (z[0] - m2) / v;
  };
  return t;
}

LatentBatch draw_batch(std::span<const double> mu,
                       std::span<const double> log_sd, int S, Rng& rng) {
  const int d = static_cast<int>(mu.size());
  LatentBatch zb;
  zb.S = S;
  zb.d_z = d;
  zb.mu.assign(mu.begin(), mu.end());
  zb.log_sd.assign(log_sd.begin(), log_sd.end());
  zb.eps.resize(static_cast<std::size_t>(S) * d);
  rng.normal(zb.eps);
  zb.z.resize(zb.eps.size());
  for (int s = 0; s < S; ++s)
    for (int j = 0; j < d; ++j) {
      const std::size_t i = static_cast<std::size_t>(s) * d + j;
      zb.z[i] = mu[j] + std::exp(log_sd[j]) * zb.eps[i];
    }
  return zb;
}

// Batched mean and standard error of a gradient estimator, so MC assertions
// can self-calibrate.
struct BatchStats {
  std::vector<double> mean, se;
};
BatchStats batch_stats(
    const std::function<std::vector<double>(const LatentBatch&)>& grad,
    std::span<const double> mu, std::span<const double> log_sd, int B,
    int S_per, Rng& rng) {
  BatchStats st;
  std::vector<std::vector<double>> gs;
  for (int b = 0; b < B; ++b) {
    auto zb = draw_batch(mu, log_sd, S_per, rng);
    gs.push_back(grad(zb));
  }
  const std::size_t n = gs[0].size();
  st.mean.assign(n, 0.0);
  st.se.assign(n, 0.0);
  for (const auto& g : gs)
    for (std::size_t i = 0; i < n; ++i) st.mean[i] += g[i] / B;
  for (const auto& g : gs)
    for (std::size_t i = 0; i < n; ++i)
      st.se[i] += (g[i] - st.mean[i]) * (g[i] - st.mean[i]) / (B - 1.0);
  for (std::size_t i = 0; i < n; ++i) st.se[i] = std::sqrt(st.se[i] / B);
  return st;
}

std::vector<double> stacked(const VarGrad& vg) {
  std::vector<double> g(vg.mu);
  g.insert(g.end(), vg.log_sd.begin(), vg.log_sd.end());
  return g;
}

}  // namespace

TEST_CASE("toy targets: scores, curvature and densities agree") {
  for (ToyLik lik : {ToyLik::p1, ToyLik::p2}) {
    CAPTURE(to_string(lik));
    auto spec = toy_posterior_spec(lik);
    auto t = toy_target(spec);
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<double> z{rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0)};
      if (std::abs(z[1]) < 1e-3) z[1] = 0.5;  // keep clear of the relu kink
      auto sc = t.score(z);
      auto fd = fd_grad([&](std::span<const double> p) {
        return t.log_density(p);
      }, z, 1e-4);
      CHECK(max_rel_err(sc, fd, 1e-8) < 1e-7);

      std::vector<double> dir{rng.normal(), rng.normal()};
      auto hv = t.score_hvp(z, dir);
      // Directional finite difference of the score itself.
      const double h = 1e-5;
      std::vector<double> zp{z[0] + h * dir[0], z[1] + h * dir[1]};
      std::vector<double> zm{z[0] - h * dir[0], z[1] - h * dir[1]};
      auto sp = t.score(zp);
      auto sm = t.score(zm);
      std::vector<double> want{(sp[0] - sm[0]) / (2 * h),
                               (sp[1] - sm[1]) / (2 * h)};
      CHECK(max_rel_err(hv, want, 1e-6) < 1e-5);
    }
  }

  // The p1 score vanishes identically at the origin.
  auto p1 = toy_target(toy_posterior_spec(ToyLik::p1));
  auto s0 = p1.score(std::vector<double>{0.0, 0.0});
  CHECK(s0[0] == 0.0);
  CHECK(s0[1] == 0.0);

  // Below the kink the p2 likelihood is flat: pure prior score.
  auto p2 = toy_target(toy_posterior_spec(ToyLik::p2));
  auto sneg = p2.score(std::vector<double>{1.3, -0.8});
  CHECK(sneg[0] == -1.3);
  CHECK(sneg[1] == 0.8);
}

TEST_CASE("univariate closed forms: KLD gradient") {
  Rng rng(22);
  const double m1 = 1.0, s1 = 0.1, m2 = 0.0, s2 = 1.0;
  auto target = gauss_target(m2, s2);
  const std::vector<double> mu{m1}, ls{std::log(s1)};
  auto closed = gaussian_kld_grad(m1, s1, m2, s2);

  auto st = batch_stats(
      [&](const LatentBatch& zb) { return stacked(kld_var_grad(target, zb)); },
      mu, ls, 100, 1000, rng);
  // 10^5 samples in total; the log-sd gradient converts to d/ds1 by 1/s1.
  CHECK(std::abs(st.mean[0] - closed.d_m1) < 3.0 * st.se[0]);
  CHECK(std::abs(st.mean[1] / s1 - closed.d_s1) < 3.0 * st.se[1] / s1);
  CHECK(rel_err(st.mean[0], closed.d_m1) < 1e-3);
  CHECK(rel_err(st.mean[1] / s1, closed.d_s1) < 1e-3);

  // Doubling the target scale quarters the closed-form mean gradient.
  CHECK(rel_err(gaussian_kld_grad(m1, s1, m2, 2.0 * s2).d_m1,
                0.25 * closed.d_m1) < 1e-14);
}

TEST_CASE("univariate closed forms: FD gradients, both variants") {
  Rng rng(33);
  const double m1 = 1.6, s1 = 1.2, m2 = 0.3, s2 = 0.9;
  auto target = gauss_target(m2, s2);
  const std::vector<double> mu{m1}, ls{std::log(s1)};

  SUBCASE("reparametrized estimator vs the closed-form FD gradient") {
    auto closed = gaussian_fd_grad(m1, s1, m2, s2);
    auto st = batch_stats(
        [&](const LatentBatch& zb) {
          return stacked(fd_var_grad(target, zb, true));
        },
        mu, ls, 100, 1000, rng);
    CHECK(std::abs(st.mean[0] - closed.d_m1) < 3.0 * st.se[0]);
    CHECK(std::abs(st.mean[1] / s1 - closed.d_s1) < 3.0 * st.se[1] / s1);
  }

  SUBCASE("fixed-sample estimator vs the biased closed form") {
    auto closed = gaussian_fd_grad_biased(m1, s1, m2, s2);
    auto st = batch_stats(
        [&](const LatentBatch& zb) {
          return stacked(fd_var_grad(target, zb, false));
        },
        mu, ls, 100, 1000, rng);
    CHECK(std::abs(st.mean[0] - closed.d_m1) < 3.0 * st.se[0]);
    CHECK(std::abs(st.mean[1] / s1 - closed.d_s1) < 3.0 * st.se[1] / s1);
  }

  SUBCASE("exact match kills both variants sample-by-sample") {
    auto tgt = gauss_target(m1, s1);
    auto zb = draw_batch(mu, ls, 64, rng);
    for (bool reparam : {true, false}) {
      auto vg = fd_var_grad(tgt, zb, reparam);
      CHECK(vg.value == 0.0);
      CHECK(vg.mu[0] == 0.0);
      CHECK(vg.log_sd[0] == 0.0);
    }
  }

  SUBCASE("closed-form proportionality, exactly and on common samples") {
    auto kld = gaussian_kld_grad(m1, s1, m2, s2);
    auto biased = gaussian_fd_grad_biased(m1, s1, m2, s2);
    CHECK(rel_err(biased.d_m1, 2.0 / (s1 * s1) * kld.d_m1) < 1e-14);
    CHECK(rel_err(biased.d_s1, 4.0 / (s1 * s1) * kld.d_s1) < 1e-14);

    // MC: the residual biased - P*kld is mean-zero per batch.
    auto st = batch_stats(
        [&](const LatentBatch& zb) {
          auto b = stacked(fd_var_grad(target, zb, false));
          auto k = stacked(kld_var_grad(target, zb));
          return std::vector<double>{
              b[0] - 2.0 / (s1 * s1) * k[0],
              b[1] - 4.0 / (s1 * s1) * k[1]};
        },
        mu, ls, 100, 500, rng);
    CHECK(std::abs(st.mean[0]) < 3.0 * st.se[0]);
    CHECK(std::abs(st.mean[1]) < 3.0 * st.se[1]);
  }
}

TEST_CASE("amortized gradients chain through the encoder") {
  Rng rng(44);
  for (int trial = 0; trial < 3; ++trial) {
    GaussianVae m = make_vae(3, 2, {6}, Activation::tanh, Activation::softplus,
                             0.6, rng);
    for (std::size_t i = 0; i < m.encoder.size(); ++i)
      m.encoder[i] += 0.1 * rng.normal();
    for (std::size_t i = 0; i < m.decoder.size(); ++i)
      m.decoder[i] += 0.1 * rng.normal();
    std::vector<double> x{rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0),
                          rng.uniform(-1.0, 1.0)};
    const int S = 4;
    auto zb = sample_posterior(m, x, S, rng);
    auto target = posterior_target(m, x);

    {
      // KLD: finite differences of the objective value, latents rebuilt
      // from fixed noise.
      auto got = kld_infer_grad(m, x, zb);
      auto fd = fd_grad(
          [&](std::span<const double> p) {
            GaussianVae mm = m;
            mm.encoder.v.assign(p.begin(), p.end());
            auto zb2 = latents_from_eps(mm, x, zb.eps, S);
            return kld_var_grad(target, zb2).value;
          },
          m.encoder.v);
      CHECK(max_rel_err(got.span(), fd, scaled_floor(fd, 1e-6)) < 1e-6);
    }
    {
      // Reparametrized FD: same treatment.
      auto got = fd_infer_grad(m, x, zb, true);
      auto fd = fd_grad(
          [&](std::span<const double> p) {
            GaussianVae mm = m;
            mm.encoder.v.assign(p.begin(), p.end());
            auto zb2 = latents_from_eps(mm, x, zb.eps, S);
            return fd_var_grad(target, zb2, false).value;
          },
          m.encoder.v);
      CHECK(max_rel_err(got.span(), fd, scaled_floor(fd, 1e-6)) < 1e-6);
    }
    {
      // Fixed-sample FD: the gradient of the value with z held fixed.
      auto got = fd_infer_grad(m, x, zb, false);
      auto fd = fd_grad(
          [&](std::span<const double> p) {
            GaussianVae mm = m;
            mm.encoder.v.assign(p.begin(), p.end());
            auto er = encode(mm, x);
            double acc = 0.0;
            for (int s = 0; s < S; ++s) {
              auto ts = target.score(zb.z_row(s));
              for (int j = 0; j < 2; ++j) {
                const double sd = std::exp(er.log_sd[j]);
                const double u =
                    -(zb.z_row(s)[j] - er.mu[j]) / (sd * sd) - ts[j];
                acc += u * u / S;
              }
            }
            return acc;
          },
          m.encoder.v);
      CHECK(max_rel_err(got.span(), fd, scaled_floor(fd, 1e-6)) < 1e-6);
    }
  }
}

TEST_CASE("stationarity at an exact posterior") {
  Rng rng(55);
  // Affine decoder in one latent dimension: the posterior is Gaussian and
  // the affine encoder below reproduces it exactly.
  GaussianVae m;
  m.decoder_spec = {{1, 2}, Activation::relu};
  m.encoder_spec = {{2, 2}, Activation::relu};
  m.decoder = ParamVector(param_count(m.decoder_spec));
  m.encoder = ParamVector(param_count(m.encoder_spec));
  const double w0 = 0.9, w1 = -1.1, gamma = 0.4;
  m.decoder[0] = w0;
  m.decoder[1] = w1;
  m.log_gamma = std::log(gamma);
  const double lam = 1.0 + (w0 * w0 + w1 * w1) / gamma;
  m.encoder[0] = w0 / (gamma * lam);
  m.encoder[1] = w1 / (gamma * lam);
  m.encoder[5] = -0.5 * std::log(lam);
  std::vector<double> x{0.6, -0.2};

  // Both FD variants vanish sample-by-sample; the score mismatch u cancels
  // to roundoff (the two scores come from different arithmetic).
  auto zb = sample_posterior(m, x, 32, rng);
  for (bool reparam : {true, false}) {
    auto g = fd_infer_grad(m, x, zb, reparam);
    for (std::size_t i = 0; i < g.size(); ++i) CHECK(std::abs(g[i]) < 1e-12);
  }

  // The KLD gradient is zero in expectation: batch its components.
  const int B = 64, S = 32;
  std::vector<double> mean(m.encoder.size(), 0.0), var(m.encoder.size(), 0.0);
  std::vector<ParamVector> gs;
  for (int b = 0; b < B; ++b) {
    auto zbb = sample_posterior(m, x, S, rng);
    gs.push_back(kld_infer_grad(m, x, zbb));
  }
  for (const auto& g : gs)
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += g[i] / B;
  for (const auto& g : gs)
    for (std::size_t i = 0; i < mean.size(); ++i)
      var[i] += (g[i] - mean[i]) * (g[i] - mean[i]) / (B - 1.0);
  for (std::size_t i = 0; i < mean.size(); ++i)
    CHECK(std::abs(mean[i]) <= 3.0 * std::sqrt(var[i] / B) + 1e-12);
}

TEST_CASE("Laplace degeneracy of the fixed-sample gradient") {
  Rng rng(66);

  SUBCASE("location gradient is exactly zero, any samples") {
    for (int trial = 0; trial < 100; ++trial) {
      const double m = rng.uniform(-3.0, 3.0), s = std::exp(rng.uniform(-1.0, 1.0));
      std::vector<double> z(100);
      for (double& v : z) v = m + 2.0 * rng.normal();
      int excluded = -1;
      CHECK(laplace_biased_location_grad(m, s, z, &excluded) == 0.0);
      CHECK(excluded == 0);
    }
    // A sample landing exactly on the location is excluded and counted.
    std::vector<double> z{1.0, 2.0, 1.0};
    int excluded = 0;
    CHECK(laplace_biased_location_grad(1.0, 0.7, z, &excluded) == 0.0);
    CHECK(excluded == 2);
  }

  SUBCASE("scale gradient is generically nonzero") {
    std::vector<double> z(200);
    for (double& v : z) v = 0.3 + 0.9 * rng.normal();
    auto normal_score = [](double v) { return -v; };
    CHECK(std::abs(laplace_biased_scale_grad(0.3, 0.9, normal_score, z)) >
          0.05);
  }

  SUBCASE("reparametrized KLD location gradient stays alive") {
    // Standard Laplace draws by inverse CDF.
    std::vector<double> L(400);
    for (double& l : L) {
      const double u = rng.uniform();
      l = u < 0.5 ? std::log(2.0 * u) : -std::log(2.0 * (1.0 - u));
    }
    const double m = 0.4, s = 0.8, m2 = -0.6, s2 = 1.1;
    const double got = laplace_kld_location_grad(m, s, m2, s2, L);
    CHECK(std::abs(got) > 0.1);
    // Matches a finite difference of the value (piecewise linear in m;
    // the draws keep clear of the kinks at this step size).
    const double h = 1e-6;
    const double fd = (laplace_kld_value(m + h, s, m2, s2, L) -
                       laplace_kld_value(m - h, s, m2, s2, L)) /
                      (2.0 * h);
    CHECK(rel_err(got, fd, 1e-10) < 1e-8);
  }
}

TEST_CASE("posterior traces reproduce the local-optimum pathology") {
  auto spec = toy_posterior_spec(ToyLik::p1);
  TraceConfig cfg;  // 5000 Adam steps at 1e-2, S=10
  const std::array<double, 2> inits[] = {{0.3, -0.2}, {-0.5, 0.4}};

  auto run = [&](InferenceKind k) {
    return toy_posterior_trace(spec, inits, k, OptimizerKind::adam, cfg, 909);
  };

  auto fdr = run(InferenceKind::fd_reparam);
  auto fdn = run(InferenceKind::fd_noreparam);
  auto kld = run(InferenceKind::kld_reparam);
  for (std::size_t i = 0; i < 2; ++i) {
    CAPTURE(i);
    const auto nrm = [](const std::array<double, 2>& v) {
      return std::sqrt(v[0] * v[0] + v[1] * v[1]);
    };
    CHECK_FALSE(fdr[i].diverged);
    CHECK_FALSE(fdn[i].diverged);
    CHECK_FALSE(kld[i].diverged);
    CHECK(nrm(fdr[i].final_mean) < 0.2);   // captured by the origin
    CHECK(nrm(fdn[i].final_mean) > 0.5);   // escapes it
    CHECK(nrm(kld[i].final_mean) > 0.5);   // never attracted in the first place
  }

  // Record plumbing: trajectory bookkeeping and determinism.
  CHECK(fdr[0].steps_taken == static_cast<int>(fdr[0].means.size()));
  CHECK(fdr[0].init_index == 0);
  CHECK(fdr[1].init_index == 1);
  CHECK(fdr[0].inference == InferenceKind::fd_reparam);
  CHECK(fdr[0].optimizer == OptimizerKind::adam);
  auto fdr2 = run(InferenceKind::fd_reparam);
  REQUIRE(fdr2[1].means.size() == fdr[1].means.size());
  CHECK(fdr2[1].final_mean[0] == fdr[1].final_mean[0]);
  CHECK(fdr2[1].final_mean[1] == fdr[1].final_mean[1]);
  CHECK(fdr2[0].log_sds.back()[0] == fdr[0].log_sds.back()[0]);
}

TEST_CASE("mixture fit: gradients, recovery and determinism") {
  Rng rng(77);

  SUBCASE("closed-form loss gradients match finite differences") {
    const int K = 3, d = 2, S = 5;
    GmmMixture mix;
    mix.K = K;
    mix.dim = d;
    mix.logits = {0.2, -0.4, 0.1};
    mix.means.resize(K * d);
    mix.log_sds.resize(K * d);
    for (auto& v : mix.means) v = rng.normal();
    for (auto& v : mix.log_sds) v = 0.3 * rng.normal();
    std::vector<double> z(S * d), t(S * d);
    for (auto& v : z) v = rng.normal();
    for (auto& v : t) v = rng.normal();

    auto gg = gmm_fd_loss_grads(mix, z, t, S);
    std::vector<double> p(mix.logits);
    p.insert(p.end(), mix.means.begin(), mix.means.end());
    p.insert(p.end(), mix.log_sds.begin(), mix.log_sds.end());
    auto fd = fd_grad(
        [&](std::span<const double> q) {
          GmmMixture mm = mix;
          std::copy(q.begin(), q.begin() + K, mm.logits.begin());
          std::copy(q.begin() + K, q.begin() + K + K * d, mm.means.begin());
          std::copy(q.begin() + K + K * d, q.end(), mm.log_sds.begin());
          return gmm_fd_loss_grads(mm, z, t, S).loss;
        },
        p);
    std::vector<double> got(gg.g_logits);
    got.insert(got.end(), gg.g_means.begin(), gg.g_means.end());
    got.insert(got.end(), gg.g_log_sds.begin(), gg.g_log_sds.end());
    CHECK(max_rel_err(got, fd, scaled_floor(fd, 1e-7)) < 1e-6);
  }

  SUBCASE("single component recovers a univariate Gaussian target") {
    auto target = gauss_target(0.7, 0.6);
    GmmFitConfig cfg;
    cfg.components = 1;
    cfg.steps = 8000;
    cfg.step_size = 3e-3;
    auto res = gmm_fd_fit(target, cfg, 4242);
    CHECK(std::abs(res.mix.means[0] - 0.7) < 1e-2);
    CHECK(std::abs(std::exp(res.mix.log_sds[0]) - 0.6) < 1e-2);
    CHECK(res.floor_warnings == 0);
  }

  SUBCASE("toy fit plumbing and determinism") {
    GmmFitConfig cfg;
    cfg.steps = 300;
    auto a = gmm_fd_fit(toy_posterior_spec(ToyLik::p2), cfg, 99);
    auto b = gmm_fd_fit(toy_posterior_spec(ToyLik::p2), cfg, 99);
    REQUIRE(a.loss_trace.size() == 300);
    CHECK(a.loss_trace == b.loss_trace);
    CHECK(a.mix.means == b.mix.means);
    auto w = a.mix.weights();
    double sum = 0.0;
    for (double v : w) sum += v;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    Rng r2(5);
    CHECK(std::isfinite(gmm_fd_loss(a.mix, toy_target(toy_posterior_spec(ToyLik::p2)), 200, r2)));
  }
}

TEST_CASE("inference kind plumbing") {
  CHECK(inference_from_string("fd_noreparam") == InferenceKind::fd_noreparam);
  CHECK_THROWS_AS(inference_from_string("fd"), std::invalid_argument);
  CHECK(std::string(to_string(InferenceKind::kld_reparam)) == "kld_reparam");
  CHECK(toy_lik_from_string("p2") == ToyLik::p2);
  CHECK(toy_posterior_spec(ToyLik::p1).x == 2.0);
  CHECK(toy_posterior_spec(ToyLik::p1).noise_sd == 0.5);
  CHECK(toy_posterior_spec(ToyLik::p2).x == 1.0);
  CHECK(toy_posterior_spec(ToyLik::p2).noise_sd == 1.0);

  Rng rng(88);
  auto target = gauss_target(0.1, 1.3);
  auto zb = draw_batch(std::vector<double>{0.5},
                       std::vector<double>{-0.2}, 16, rng);
  auto a = infer_var_grad(InferenceKind::fd_reparam, target, zb);
  auto b = fd_var_grad(target, zb, true);
  CHECK(a.mu == b.mu);
  CHECK(a.log_sd == b.log_sd);
}
