#include "vsm/model.hpp"

#include <cmath>

#include <json.hpp>

#include "vsm/common.hpp"
#include "vsm/gaussian.hpp"

namespace vsm {

double GaussianVae::gamma() const { return std::exp(log_gamma); }

void GaussianVae::validate() const {
  decoder_spec.validate();
  encoder_spec.validate();
  if (encoder_spec.output_dim() != 2 * decoder_spec.input_dim())
    throw std::invalid_argument("GaussianVae: encoder must emit 2*d_z values");
  if (encoder_spec.input_dim() != decoder_spec.output_dim())
    throw std::invalid_argument("GaussianVae: encoder input must match d_x");
  if (decoder.size() != param_count(decoder_spec) ||
      encoder.size() != param_count(encoder_spec))
    throw std::invalid_argument("GaussianVae: parameter block size mismatch");
  if (!std::isfinite(log_gamma))
    throw std::invalid_argument("GaussianVae: log_gamma not finite");
}

GaussianVae make_vae(int d_x, int d_z, const std::vector<int>& hidden,
                     Activation dec_act, Activation enc_act, double gamma_init,
                     Rng& rng) {
  if (gamma_init <= 0.0 || !std::isfinite(gamma_init))
    throw std::invalid_argument("make_vae: gamma_init must be positive");
  GaussianVae m;
  m.decoder_spec.widths.push_back(d_z);
  for (int h : hidden) m.decoder_spec.widths.push_back(h);
  m.decoder_spec.widths.push_back(d_x);
  m.decoder_spec.act = dec_act;
  m.encoder_spec.widths.push_back(d_x);
  for (int h : hidden) m.encoder_spec.widths.push_back(h);
  m.encoder_spec.widths.push_back(2 * d_z);
  m.encoder_spec.act = enc_act;
  m.decoder = init_params(m.decoder_spec, rng);
  m.encoder = init_params(m.encoder_spec, rng);
  m.log_gamma = std::log(gamma_init);
  m.validate();
  return m;
}

EncodeResult encode(const GaussianVae& m, std::span<const double> x) {
  std::vector<double> out = mlp_forward(m.encoder_spec, m.encoder, x);
  const int dz = m.d_z();
  EncodeResult r;
  r.mu.assign(out.begin(), out.begin() + dz);
  r.log_sd.assign(out.begin() + dz, out.end());
  return r;
}

std::vector<double> decode(const GaussianVae& m, std::span<const double> z) {
  return mlp_forward(m.decoder_spec, m.decoder, z);
}

LatentBatch sample_posterior(const GaussianVae& m, std::span<const double> x,
                             int S, Rng& rng) {
  if (S <= 0) throw std::invalid_argument("sample_posterior: S must be positive");
  std::vector<double> eps(static_cast<std::size_t>(S) * m.d_z());
  rng.normal(eps);
  return latents_from_eps(m, x, eps, S);
}

LatentBatch latents_from_eps(const GaussianVae& m, std::span<const double> x,
                             std::span<const double> eps, int S) {
  const int dz = m.d_z();
  if (S <= 0 || eps.size() != static_cast<std::size_t>(S) * dz)
    throw std::invalid_argument("latents_from_eps: eps must be S x d_z");
  EncodeResult enc = encode(m, x);
  LatentBatch b;
  b.S = S;
  b.d_z = dz;
  b.mu = enc.mu;
  b.log_sd = enc.log_sd;
  b.eps.assign(eps.begin(), eps.end());
  b.z.resize(b.eps.size());
  for (int s = 0; s < S; ++s)
    for (int j = 0; j < dz; ++j) {
      const std::size_t i = static_cast<std::size_t>(s) * dz + j;
      b.z[i] = enc.mu[j] + std::exp(enc.log_sd[j]) * b.eps[i];
    }
  return b;
}

std::vector<double> likelihood_score_x(const GaussianVae& m,
                                       std::span<const double> x,
                                       std::span<const double> z) {
  std::vector<double> g = decode(m, z);
  const double inv_gamma = 1.0 / m.gamma();
  for (int i = 0; i < m.d_x(); ++i) g[i] = -(x[i] - g[i]) * inv_gamma;
  return g;
}

double likelihood_score_x_div(const GaussianVae& m) {
  return -static_cast<double>(m.d_x()) / m.gamma();
}

std::vector<double> encoder_score_z(std::span<const double> mu,
                                    std::span<const double> log_sd,
                                    std::span<const double> z) {
  std::vector<double> s(mu.size());
  for (std::size_t j = 0; j < mu.size(); ++j) {
    const double var = std::exp(2.0 * log_sd[j]);
    s[j] = -(z[j] - mu[j]) / var;
  }
  return s;
}

std::vector<double> encoder_score_x(const GaussianVae& m,
                                    std::span<const double> x,
                                    std::span<const double> z) {
  EncodeResult enc = encode(m, x);
  const int dz = m.d_z();
  std::vector<double> cot(2 * dz);
  for (int j = 0; j < dz; ++j) {
    const double sd = std::exp(enc.log_sd[j]);
    const double c = (z[j] - enc.mu[j]) / sd;
    cot[j] = c / sd;
    cot[dz + j] = c * c - 1.0;
  }
  return mlp_vjp(m.encoder_spec, m.encoder, x, cot).grad_input;
}

double posterior_log_density(const GaussianVae& m, std::span<const double> x,
                             std::span<const double> z) {
  std::vector<double> g = decode(m, z);
  return gauss_log_pdf_std(z) + gauss_log_pdf_iso(x, g, m.gamma());
}

std::vector<double> posterior_score_z(const GaussianVae& m,
                                      std::span<const double> x,
                                      std::span<const double> z) {
  const double inv_gamma = 1.0 / m.gamma();
  MlpVjpResult v = mlp_vjp(
      m.decoder_spec, m.decoder, z,
      [&](std::span<const double> g, std::span<double> cot) {
        for (std::size_t i = 0; i < cot.size(); ++i)
          cot[i] = (x[i] - g[i]) * inv_gamma;
      });
  for (int j = 0; j < m.d_z(); ++j) v.grad_input[j] -= z[j];
  return v.grad_input;
}

std::vector<double> posterior_score_z_hvp(const GaussianVae& m,
                                          std::span<const double> x,
                                          std::span<const double> z,
                                          std::span<const double> v) {
  // d/dt [ -(z+tv) + J(z+tv)^T (x - g(z+tv)) / gamma ]
  //   = -v + [dJ^T](x-g)/gamma - J^T J v / gamma.
  // Both J-terms come from one linearized reverse pass: the gradient w.r.t.
  // the input of  cot_primal . g + cot_tangent . (J v)  with
  // cot_tangent = (x-g)/gamma captures dJ^T(x-g)/gamma, and seeding
  // cot_primal = -(J v)/gamma adds -J^T J v / gamma.
  const double inv_gamma = 1.0 / m.gamma();
  MlpJvpGradResult r = mlp_jvp_grad(
      m.decoder_spec, m.decoder, z, v, nullptr,
      [&](std::span<const double> g, std::span<const double> jv,
          std::span<double> cp, std::span<double> ct) {
        for (std::size_t i = 0; i < cp.size(); ++i) {
          cp[i] = -jv[i] * inv_gamma;
          ct[i] = (x[i] - g[i]) * inv_gamma;
        }
      });
  for (int j = 0; j < m.d_z(); ++j) r.grad_input[j] -= v[j];
  return r.grad_input;
}

namespace {

nlohmann::json spec_to_json(const MlpSpec& s) {
  return {{"widths", s.widths}, {"activation", to_string(s.act)}};
}

MlpSpec spec_from_json(const nlohmann::json& j) {
  MlpSpec s;
  s.widths = j.at("widths").get<std::vector<int>>();
  s.act = activation_from_string(j.at("activation").get<std::string>());
  s.validate();
  return s;
}

}  // namespace

std::string model_to_json(const GaussianVae& m) {
  nlohmann::json j{
      {"decoder", {{"spec", spec_to_json(m.decoder_spec)}, {"params", m.decoder.v}}},
      {"encoder", {{"spec", spec_to_json(m.encoder_spec)}, {"params", m.encoder.v}}},
      {"log_gamma", m.log_gamma},
  };
  return j.dump(2);
}

GaussianVae model_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  GaussianVae m;
  m.decoder_spec = spec_from_json(j.at("decoder").at("spec"));
  m.decoder.v = j.at("decoder").at("params").get<std::vector<double>>();
  m.encoder_spec = spec_from_json(j.at("encoder").at("spec"));
  m.encoder.v = j.at("encoder").at("params").get<std::vector<double>>();
  m.log_gamma = j.at("log_gamma").get<double>();
  m.validate();
  return m;
}

}  // namespace vsm
