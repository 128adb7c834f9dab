#pragma once

#include <span>
#include <string>
#include <vector>

#include "vsm/mlp.hpp"
#include "vsm/rng.hpp"

namespace vsm {

// Latent-variable model with standard-normal prior, decoder mean net g and
// isotropic Gaussian likelihood N(x; g(z), gamma I), plus an amortized
// Gaussian posterior q(z|x) = N(mu(x), diag sd(x)^2). The encoder net emits
// 2*d_z values: [mu, log sd].
struct GaussianVae {
  MlpSpec decoder_spec, encoder_spec;
  ParamVector decoder, encoder;
  double log_gamma = 0.0;

  int d_z() const { return decoder_spec.input_dim(); }
  int d_x() const { return decoder_spec.output_dim(); }
  double gamma() const;
  void validate() const;
};

// Fresh model with Glorot-initialized nets.
GaussianVae make_vae(int d_x, int d_z, const std::vector<int>& hidden,
                     Activation dec_act, Activation enc_act, double gamma_init,
                     Rng& rng);

struct EncodeResult {
  std::vector<double> mu, log_sd;
};
EncodeResult encode(const GaussianVae& m, std::span<const double> x);
std::vector<double> decode(const GaussianVae& m, std::span<const double> z);

// S reparametrized posterior draws for one datum: z[s] = mu + sd * eps[s].
struct LatentBatch {
  int S = 0, d_z = 0;
  std::vector<double> z, eps;         // row-major S x d_z
  std::vector<double> mu, log_sd;     // the encoder outputs used to draw
  std::span<const double> z_row(int s) const {
    return {z.data() + static_cast<std::size_t>(s) * d_z, static_cast<std::size_t>(d_z)};
  }
  std::span<const double> eps_row(int s) const {
    return {eps.data() + static_cast<std::size_t>(s) * d_z, static_cast<std::size_t>(d_z)};
  }
};
LatentBatch sample_posterior(const GaussianVae& m, std::span<const double> x,
                             int S, Rng& rng);
// Rebuild the batch from externally supplied standard-normal draws (row-major
// S x d_z). Lets callers hold the noise fixed while parameters move.
LatentBatch latents_from_eps(const GaussianVae& m, std::span<const double> x,
                             std::span<const double> eps, int S);

// grad_x log p(x|z) = -(x - g(z)) / gamma.
std::vector<double> likelihood_score_x(const GaussianVae& m,
                                       std::span<const double> x,
                                       std::span<const double> z);
// div_x grad_x log p(x|z) = -d_x / gamma, independent of (x, z).
double likelihood_score_x_div(const GaussianVae& m);

// grad_z log q(z|x) for diagonal Gaussian q.
std::vector<double> encoder_score_z(std::span<const double> mu,
                                    std::span<const double> log_sd,
                                    std::span<const double> z);
// grad_x log q(z|x): reverse pass through the encoder with the cotangent
//   d log q / d mu_j    = (z_j - mu_j) / sd_j^2
//   d log q / d logsd_j = (z_j - mu_j)^2 / sd_j^2 - 1.
std::vector<double> encoder_score_x(const GaussianVae& m,
                                    std::span<const double> x,
                                    std::span<const double> z);

// Unnormalized posterior over z at a fixed datum:
//   log p(z) + log p(x|z), score -z + J_g(z)^T (x - g(z)) / gamma.
double posterior_log_density(const GaussianVae& m, std::span<const double> x,
                             std::span<const double> z);
std::vector<double> posterior_score_z(const GaussianVae& m,
                                      std::span<const double> x,
                                      std::span<const double> z);
// Directional derivative of the posterior score (Hessian-vector product of
// the log density), needed when differentiating through sampled latents.
std::vector<double> posterior_score_z_hvp(const GaussianVae& m,
                                          std::span<const double> x,
                                          std::span<const double> z,
                                          std::span<const double> v);

// JSON (de)serialization of the full model (specs, params, log_gamma).
std::string model_to_json(const GaussianVae& m);
GaussianVae model_from_json(const std::string& text);

}  // namespace vsm
