#include "vsm/objectives.hpp"

#include <cmath>
#include <stdexcept>

#include "vsm/gaussian.hpp"

namespace vsm {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

// Accumulates z-space gradients into an encoder-output cotangent through the
// reparametrization z_s = mu + sd * eps_s: a z gradient lands on mu directly
// and on log sd scaled by sd_j * eps_j. Layout: [mu block, log sd block].
struct ReparamChain {
  std::vector<double> cot;
  explicit ReparamChain(int d_z) : cot(2 * static_cast<std::size_t>(d_z), 0.0) {}

  void add_z_grad(std::span<const double> gz, std::span<const double> eps,
                  std::span<const double> sd) {
    const std::size_t d = gz.size();
    for (std::size_t j = 0; j < d; ++j) {
      cot[j] += gz[j];
      cot[d + j] += gz[j] * sd[j] * eps[j];
    }
  }
};

std::vector<double> sd_from(const LatentBatch& zb) {
  std::vector<double> sd(zb.log_sd.size());
  for (std::size_t j = 0; j < sd.size(); ++j) sd[j] = std::exp(zb.log_sd[j]);
  return sd;
}

// Encoder-parameter gradient of  s^q(z|x) . dir  at the reparametrized
// sample, with dir held fixed. Writing the x-score as s^q = J_enc(x)^T c
// with c = (eps/sd, eps^2 - 1), the c block's sd dependence enters through
// the primal cotangent while the Jacobian dependence rides the linearized
// evaluation in direction dir.
ParamVector xscore_param_grad(const GaussianVae& m, std::span<const double> x,
                              std::span<const double> eps,
                              std::span<const double> dir) {
  const int dz = m.d_z();
  auto res = mlp_jvp_grad(
      m.encoder_spec, m.encoder, x, dir, nullptr,
      [&](std::span<const double> out, std::span<const double> out_t,
          std::span<double> cp, std::span<double> ct) {
        for (int j = 0; j < dz; ++j) {
          const double sd = std::exp(out[dz + j]);
          ct[j] = eps[j] / sd;
          ct[dz + j] = eps[j] * eps[j] - 1.0;
          cp[j] = 0.0;
          cp[dz + j] = -out_t[j] * eps[j] / sd;
        }
      });
  return std::move(res.grad_params);
}

// Shared skeleton for the estimators whose decoder dependence is a per-sample
// output cotangent c_s: runs one reverse pass per sample and accumulates the
// parameter gradient plus (optionally) the reparametrization chain.
template <typename CotFn>
void accumulate_decoder(const GaussianVae& m, const LatentBatch& zb,
                        std::span<const double> sd, CotFn&& cot_for_sample,
                        ParamVector& grad_decoder, ReparamChain* chain) {
  for (int s = 0; s < zb.S; ++s) {
    auto r = mlp_vjp(m.decoder_spec, m.decoder, zb.z_row(s),
                     [&](std::span<const double> out, std::span<double> cot) {
                       cot_for_sample(s, out, cot);
                     });
    axpy(1.0, r.grad_params.span(), grad_decoder.span());
    if (chain) chain->add_z_grad(r.grad_input, zb.eps_row(s), sd);
  }
}

}  // namespace

ObjectiveEstimate elbo_estimate(const GaussianVae& m, std::span<const double> x,
                                const LatentBatch& zb, bool encoder_grad) {
  const int S = zb.S, dx = m.d_x(), dz = m.d_z();
  const double gamma = m.gamma();
  const auto sd = sd_from(zb);

  ObjectiveEstimate est;
  est.grad_decoder = ParamVector(m.decoder.size());
  ReparamChain chain(dz);

  double A = 0.0;  // mean squared reconstruction error over the samples
  accumulate_decoder(
      m, zb, sd,
      [&](int, std::span<const double> out, std::span<double> cot) {
        double sq = 0.0;
        for (int i = 0; i < dx; ++i) {
          const double e = x[i] - out[i];
          sq += e * e;
          cot[i] = e / (gamma * S);
        }
        A += sq / S;
      },
      est.grad_decoder, encoder_grad ? &chain : nullptr);

  est.value = -0.5 * dx * (kLog2Pi + std::log(gamma)) - A / (2.0 * gamma) -
              gaussian_kld_to_std(zb.mu, zb.log_sd);
  est.grad_log_gamma = -0.5 * dx + A / (2.0 * gamma);
  est.gamma_a = A;
  est.gamma_b = dx;

  if (encoder_grad) {
    for (int j = 0; j < dz; ++j) {
      chain.cot[j] -= zb.mu[j];
      chain.cot[dz + j] -= sd[j] * sd[j] - 1.0;
    }
    est.grad_encoder =
        std::move(mlp_vjp(m.encoder_spec, m.encoder, x, chain.cot).grad_params);
  }
  return est;
}

ObjectiveEstimate m1_estimate(const GaussianVae& m, std::span<const double> x,
                              const LatentBatch& zb, bool include_x_score,
                              bool encoder_grad) {
  const int S = zb.S, dx = m.d_x(), dz = m.d_z();
  const double gamma = m.gamma(), g2 = gamma * gamma;
  const auto sd = sd_from(zb);

  ObjectiveEstimate est;
  est.grad_decoder = ParamVector(m.decoder.size());
  ReparamChain chain(dz);

  double A = 0.0;
  accumulate_decoder(
      m, zb, sd,
      [&](int, std::span<const double> out, std::span<double> cot) {
        double sq = 0.0;
        for (int i = 0; i < dx; ++i) {
          const double e = x[i] - out[i];
          sq += e * e;
          cot[i] = -e / (g2 * S);
        }
        A += sq / S;
      },
      est.grad_decoder, encoder_grad ? &chain : nullptr);

  est.value = A / (2.0 * g2) - dx / gamma;
  est.grad_log_gamma = -A / g2 + dx / gamma;
  est.gamma_a = A;
  est.gamma_b = dx;

  if (encoder_grad)
    est.grad_encoder =
        std::move(mlp_vjp(m.encoder_spec, m.encoder, x, chain.cot).grad_params);

  if (include_x_score) {
    for (int s = 0; s < S; ++s) {
      auto sq = encoder_score_x(m, x, zb.z_row(s));
      est.value += 0.5 * sq_norm(sq) / S;
      if (encoder_grad)
        axpy(1.0 / S, xscore_param_grad(m, x, zb.eps_row(s), sq).span(),
             est.grad_encoder.span());
    }
  }
  return est;
}

ObjectiveEstimate m2_estimate(const GaussianVae& m, std::span<const double> x,
                              const LatentBatch& zb, bool encoder_grad) {
  const int S = zb.S, dx = m.d_x(), dz = m.d_z();
  const double gamma = m.gamma(), g2 = gamma * gamma;
  const auto sd = sd_from(zb);

  // First pass: reconstruction errors and their batch mean.
  std::vector<std::vector<double>> e(S);
  std::vector<double> ebar(dx, 0.0);
  double A = 0.0;
  for (int s = 0; s < S; ++s) {
    auto g = decode(m, zb.z_row(s));
    e[s].resize(dx);
    for (int i = 0; i < dx; ++i) {
      e[s][i] = x[i] - g[i];
      ebar[i] += e[s][i] / S;
    }
    A += sq_norm(e[s]) / S;
  }
  const double B = sq_norm(ebar);

  ObjectiveEstimate est;
  est.value = A / g2 - dx / gamma - B / (2.0 * g2);
  est.grad_log_gamma = -2.0 * A / g2 + dx / gamma + B / g2;
  est.gamma_a = 2.0 * A - B;
  est.gamma_b = dx;
  est.flagged = (S == 1);

  est.grad_decoder = ParamVector(m.decoder.size());
  ReparamChain chain(dz);
  accumulate_decoder(
      m, zb, sd,
      [&](int s, std::span<const double>, std::span<double> cot) {
        for (int i = 0; i < dx; ++i)
          cot[i] = (ebar[i] - 2.0 * e[s][i]) / (S * g2);
      },
      est.grad_decoder, encoder_grad ? &chain : nullptr);

  if (encoder_grad)
    est.grad_encoder =
        std::move(mlp_vjp(m.encoder_spec, m.encoder, x, chain.cot).grad_params);
  return est;
}

ObjectiveEstimate m3_estimate(const GaussianVae& m, std::span<const double> x,
                              const LatentBatch& zb, bool encoder_grad) {
  const int S = zb.S, dx = m.d_x(), dz = m.d_z();
  const double gamma = m.gamma(), g2 = gamma * gamma;
  const auto sd = sd_from(zb);

  // First pass: errors, their mean, and the encoder x-scores at each sample.
  std::vector<std::vector<double>> e(S), sq(S);
  std::vector<double> ebar(dx, 0.0);
  double C = 0.0;  // mean_s s^q(z_s|x) . (x - g(z_s))
  for (int s = 0; s < S; ++s) {
    auto g = decode(m, zb.z_row(s));
    e[s].resize(dx);
    for (int i = 0; i < dx; ++i) {
      e[s][i] = x[i] - g[i];
      ebar[i] += e[s][i] / S;
    }
    sq[s] = encoder_score_x(m, x, zb.z_row(s));
    C += dot(sq[s], e[s]) / S;
  }
  const double B = sq_norm(ebar);

  ObjectiveEstimate est;
  est.value = -C / gamma - dx / gamma + B / (2.0 * g2);
  est.grad_log_gamma = (C + dx) / gamma - B / g2;
  est.gamma_a = B;
  est.gamma_b = C + dx;

  est.grad_decoder = ParamVector(m.decoder.size());
  ReparamChain chain(dz);
  accumulate_decoder(
      m, zb, sd,
      [&](int s, std::span<const double>, std::span<double> cot) {
        for (int i = 0; i < dx; ++i)
          cot[i] = sq[s][i] / (S * gamma) - ebar[i] / (S * g2);
      },
      est.grad_decoder, encoder_grad ? &chain : nullptr);

  if (encoder_grad) {
    est.grad_encoder =
        std::move(mlp_vjp(m.encoder_spec, m.encoder, x, chain.cot).grad_params);
    // Direct encoder dependence of the cross term through s^q itself.
    for (int s = 0; s < S; ++s)
      axpy(-1.0 / (S * gamma),
           xscore_param_grad(m, x, zb.eps_row(s), e[s]).span(),
           est.grad_encoder.span());
  }
  return est;
}

ObjectiveEstimate posterior_fd_estimate(const GaussianVae& m,
                                        std::span<const double> x,
                                        const LatentBatch& zb,
                                        bool encoder_grad) {
  const int S = zb.S, dz = m.d_z();
  const double gamma = m.gamma();
  const auto sd = sd_from(zb);

  ObjectiveEstimate est;
  est.grad_decoder = ParamVector(m.decoder.size());
  ReparamChain chain(dz);

  for (int s = 0; s < S; ++s) {
    const auto z = zb.z_row(s);
    const auto eps = zb.eps_row(s);
    // u = grad_z log q - grad_z log p(z, x); both scores are exact.
    auto u = encoder_score_z(zb.mu, zb.log_sd, z);
    const auto psz = posterior_score_z(m, x, z);
    for (int j = 0; j < dz; ++j) u[j] -= psz[j];
    est.value += 0.5 * sq_norm(u) / S;

    // rho = J^T (x - g)/gamma is the decoder part of the posterior score;
    // one linearized reverse pass gives the gradient of u . rho in the
    // decoder parameters and the Hessian-vector product H_rho u at once.
    auto r = mlp_jvp_grad(
        m.decoder_spec, m.decoder, z, u, nullptr,
        [&](std::span<const double> out, std::span<const double> out_t,
            std::span<double> cp, std::span<double> ct) {
          for (std::size_t i = 0; i < out.size(); ++i) {
            cp[i] = -out_t[i] / gamma;
            ct[i] = (x[i] - out[i]) / gamma;
          }
        });
    axpy(-1.0 / S, r.grad_params.span(), est.grad_decoder.span());

    std::vector<double> rho(dz);
    for (int j = 0; j < dz; ++j) rho[j] = psz[j] + z[j];
    est.grad_log_gamma += dot(u, rho) / S;

    if (encoder_grad) {
      // d(1/2 ||u||^2)/d mu = u - H_rho u; the log-sd direction adds the
      // explicit eps/sd term from the q score itself.
      std::vector<double> gz(dz);
      for (int j = 0; j < dz; ++j) gz[j] = (u[j] - r.grad_input[j]) / S;
      chain.add_z_grad(gz, eps, sd);
      for (int j = 0; j < dz; ++j)
        chain.cot[dz + j] += u[j] * eps[j] / (sd[j] * S);
    }
  }

  if (encoder_grad)
    est.grad_encoder =
        std::move(mlp_vjp(m.encoder_spec, m.encoder, x, chain.cot).grad_params);
  return est;
}

ObjectiveEstimate joint_fd_estimate(const GaussianVae& m,
                                    std::span<const double> x,
                                    const LatentBatch& zb, bool encoder_grad) {
  ObjectiveEstimate est = posterior_fd_estimate(m, x, zb, encoder_grad);
  ObjectiveEstimate m1 = m1_estimate(m, x, zb, /*include_x_score=*/true,
                                     encoder_grad);
  est.value += m1.value;
  axpy(1.0, m1.grad_decoder.span(), est.grad_decoder.span());
  est.grad_log_gamma += m1.grad_log_gamma;
  if (encoder_grad)
    axpy(1.0, m1.grad_encoder.span(), est.grad_encoder.span());
  est.gamma_a = est.gamma_b = 0.0;  // not quadratic in 1/gamma
  return est;
}

AutoencLosses autoenc_losses(const GaussianVae& m, std::span<const double> x,
                             const LatentBatch& zb) {
  const int S = zb.S, dx = m.d_x();

  std::vector<std::vector<double>> g(S);
  std::vector<double> gbar(dx, 0.0);
  double mean_sq = 0.0;  // mean_s ||g||^2
  AutoencLosses out;
  for (int s = 0; s < S; ++s) {
    g[s] = decode(m, zb.z_row(s));
    for (int i = 0; i < dx; ++i) gbar[i] += g[s][i] / S;
    mean_sq += sq_norm(g[s]) / S;
  }
  double recon = 0.0;
  for (int i = 0; i < dx; ++i) {
    const double d = x[i] - gbar[i];
    recon += d * d;
  }
  const double var_sum = mean_sq - sq_norm(gbar);  // sum_j var[g_j], 1/S form

  out.l_k = recon + var_sum;
  out.l_2 = recon + 2.0 * mean_sq;
  out.l3_recon = recon;
  for (int s = 0; s < S; ++s) {
    std::vector<double> e(dx);
    for (int i = 0; i < dx; ++i) e[i] = x[i] - g[s][i];
    out.l3_cross += dot(encoder_score_x(m, x, zb.z_row(s)), e) / S;
  }

  // d l_k / d g_s = (2/S)(g_s - gbar - (x - gbar)) = -(2/S)(x - g_s).
  out.grad_decoder_l_k = ParamVector(m.decoder.size());
  for (int s = 0; s < S; ++s) {
    std::vector<double> cot(dx);
    for (int i = 0; i < dx; ++i) cot[i] = -2.0 * (x[i] - g[s][i]) / S;
    axpy(1.0, mlp_vjp(m.decoder_spec, m.decoder, zb.z_row(s), cot).grad_params.span(),
         out.grad_decoder_l_k.span());
  }
  return out;
}

double h_kld(double y, int d_x) {
  if (y <= 0.0) throw std::domain_error("h_kld: y must be positive");
  return 0.5 * d_x * std::log(y / d_x);
}

double h_fd(double y, int d_x) {
  if (y <= 0.0) throw std::domain_error("h_fd: y must be positive");
  return -0.5 * d_x * d_x / y;
}

GammaOptimum gamma_optimal(double a, double b) {
  if (a <= 0.0) throw std::domain_error("gamma_optimal: a must be positive");
  if (b <= 0.0)
    throw std::domain_error("gamma_optimal: b must be positive (infimum not attained)");
  return {a / b, -b * b / (2.0 * a)};
}

ObjectiveKind objective_from_string(std::string_view s) {
  if (s == "elbo") return ObjectiveKind::elbo;
  if (s == "m1") return ObjectiveKind::m1;
  if (s == "m2") return ObjectiveKind::m2;
  if (s == "m3") return ObjectiveKind::m3;
  if (s == "joint_fd") return ObjectiveKind::joint_fd;
  throw std::invalid_argument("unknown objective: " + std::string(s));
}

const char* to_string(ObjectiveKind k) {
  switch (k) {
    case ObjectiveKind::elbo: return "elbo";
    case ObjectiveKind::m1: return "m1";
    case ObjectiveKind::m2: return "m2";
    case ObjectiveKind::m3: return "m3";
    case ObjectiveKind::joint_fd: return "joint_fd";
  }
  return "?";
}

ObjectiveEstimate objective_estimate(ObjectiveKind k, const GaussianVae& m,
                                     std::span<const double> x,
                                     const LatentBatch& zb, bool encoder_grad) {
  switch (k) {
    case ObjectiveKind::elbo: {
      ObjectiveEstimate est = elbo_estimate(m, x, zb, encoder_grad);
      est.value = -est.value;
      for (double& g : est.grad_decoder.v) g = -g;
      est.grad_log_gamma = -est.grad_log_gamma;
      for (double& g : est.grad_encoder.v) g = -g;
      return est;
    }
    case ObjectiveKind::m1:
      // The training form: the decoder-free x-score term is reserved for
      // reporting and the joint objective.
      return m1_estimate(m, x, zb, /*include_x_score=*/false, encoder_grad);
    case ObjectiveKind::m2:
      return m2_estimate(m, x, zb, encoder_grad);
    case ObjectiveKind::m3:
      return m3_estimate(m, x, zb, encoder_grad);
    case ObjectiveKind::joint_fd:
      return joint_fd_estimate(m, x, zb, encoder_grad);
  }
  throw std::invalid_argument("objective_estimate: bad kind");
}

}  // namespace vsm
