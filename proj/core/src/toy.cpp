#include "vsm/toy.hpp"

#include <cmath>

namespace vsm {

double toy_posterior_var(double theta, double gamma) {
  return 1.0 / (1.0 + theta * theta / gamma);
}

double toy_exact_slope(double theta, double gamma) {
  return theta * toy_posterior_var(theta, gamma) / gamma;
}

GaussFull toy_data_joint(const LinearToy& toy, double theta, double phi,
                         double alpha) {
  const double vpi = toy.v_pi();
  const double vq = alpha * toy_posterior_var(theta, toy.gamma);
  GaussFull g;
  g.mean = Eigen::Vector2d::Zero();
  g.cov.resize(2, 2);
  // (z, x) with x ~ N(0, vpi), z = phi x + noise(vq).
  g.cov << phi * phi * vpi + vq, phi * vpi, phi * vpi, vpi;
  return g;
}

GaussFull toy_model_joint(double theta, double gamma) {
  GaussFull g;
  g.mean = Eigen::Vector2d::Zero();
  g.cov.resize(2, 2);
  g.cov << 1.0, theta, theta, theta * theta + gamma;
  return g;
}

GaussianVae toy_vae(const LinearToy& toy, double theta, double phi, double alpha) {
  GaussianVae m;
  m.decoder_spec.widths = {1, 1};
  m.encoder_spec.widths = {1, 2};
  m.decoder = ParamVector(2);
  m.decoder[0] = theta;  // weight; bias stays 0
  m.encoder = ParamVector(4);
  // Encoder rows: [mu; log sd] = W x + b with W = [phi; 0], b = [0; log sd].
  m.encoder[0] = phi;
  m.encoder[1] = 0.0;
  m.encoder[2] = 0.0;
  m.encoder[3] = 0.5 * std::log(alpha * toy_posterior_var(theta, toy.gamma));
  m.log_gamma = std::log(toy.gamma);
  m.validate();
  return m;
}

double toy_score_energy(const LinearToy& toy) { return 0.5 / toy.v_pi(); }

}  // namespace vsm
