#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vsm/datasets.hpp"
#include "vsm/inference.hpp"
#include "vsm/metrics.hpp"
#include "vsm/model.hpp"
#include "vsm/objectives.hpp"
#include "vsm/toy.hpp"

namespace vsm {

// How the observation noise scale moves during training: by its own gradient
// of the decoder objective, by the per-batch closed-form optimum of the
// objective's 1/gamma expansion, or not at all.
enum class GammaMode { joint_gradient, closed_form, fixed };
GammaMode gamma_mode_from_string(std::string_view s);
const char* to_string(GammaMode m);

struct TrainConfig {
  ObjectiveKind objective = ObjectiveKind::elbo;   // decoder update
  InferenceKind inference = InferenceKind::kld_reparam;  // encoder update
  int J = 1;        // plain encoder updates per outer step
  int K = 0;        // unrolled theta-parametrized encoder updates (m2/m3 only)
  int S = 2;        // q-samples per estimate
  int batch_size = 1000;
  int steps = 20000;
  OptimizerConfig encoder_opt{OptimizerKind::adam, 1e-3, 0.9, 0.999, 1e-8};
  OptimizerConfig decoder_opt{OptimizerKind::adam, 1e-3, 0.9, 0.999, 1e-8};
  // Inner step size of the unrolled updates; non-positive means "use the
  // encoder step size".
  double bilevel_step_size = 0.0;
  GammaMode gamma_mode = GammaMode::joint_gradient;
  std::uint64_t seed = 0;
  DatasetId dataset;
  // Evaluation: cadence in outer steps (0 = final only), held-out batch,
  // importance samples, and q-samples for the bound metrics.
  int eval_every = 2000;
  int eval_points = 2000;
  int eval_is_samples = 1000;
  int eval_S = 5;
  // Architecture; d_x always comes from the dataset.
  int d_z = 2;
  std::vector<int> hidden{30, 30};
  Activation activation = Activation::softplus;
  double gamma_init = 1.0;
};

// Throws invalid_argument on out-of-range fields or invalid combinations
// (K > 0 outside m2/m3 or without kld_reparam inference, closed-form gamma
// under joint_fd, K above the unroll cap of 64).
void validate(const TrainConfig& cfg);

// Strict JSON round-trip: unknown keys are rejected, absent keys keep their
// defaults. Field names match the struct members.
TrainConfig train_config_from_json(const std::string& text);
std::string train_config_to_json(const TrainConfig& cfg);

struct RunLog {
  TrainConfig config;
  std::vector<MetricsRecord> records;
  GaussianVae final_model;
  int steps_done = 0;
  bool diverged = false;
  int diverged_step = -1;  // outer step at which the abort happened
  double wall_seconds = 0.0;
};

// Algorithm: per outer step, J encoder updates on fresh minibatches, then a
// decoder update (through the K unrolled encoder steps when K > 0) on the
// last minibatch, then the noise-scale move. joint_fd instead updates both
// networks simultaneously from one estimate and ignores J/K.
RunLog train_run(const TrainConfig& cfg);

// Decoder gradient through K unrolled SGD encoder refinements: the encoder
// minimizes the KLD inference objective for K steps starting at m.encoder,
// the outer objective is evaluated at the refined parameters, and the
// returned gradient includes the dependence of those refinements on the
// decoder and noise scale. phi_K is the refined encoder (the trainer adopts
// it); value is the outer objective there, deterministic given the rng.
struct BilevelGrad {
  double value = 0.0;
  ParamVector grad_decoder;
  double grad_log_gamma = 0.0;
  ParamVector phi_K;
};
BilevelGrad bilevel_theta_grad(const GaussianVae& m, std::span<const double> xs,
                               ObjectiveKind objective, int K,
                               double inner_step_size, int S, Rng& rng);

// --- linear-toy parameter recovery -------------------------------------------

// Fit (theta, phi) of the amortized family q(z|x) = N(phi x, alpha v*(theta))
// against data x ~ N(0, theta*^2 + gamma) by minimizing the population joint
// divergence, available in closed form for this affine family. jkld descends
// KL(pi q || p_theta); jfd the joint Fisher divergence. At alpha = 1 both
// recover theta*; at alpha < 1 the FD fit is biased away from it.
enum class RecoverMethod { jkld, jfd };
RecoverMethod recover_method_from_string(std::string_view s);
const char* to_string(RecoverMethod m);

struct RecoverResult {
  double theta_star = 0.0;
  double alpha = 1.0;
  double theta_hat = 0.0;
  double phi_hat = 0.0;
  double objective = 0.0;  // divergence value at the minimizer
};
RecoverResult recover_theta(const LinearToy& toy, double alpha,
                            RecoverMethod method);

// The divergence the recovery descends, exposed for independent grid checks.
double recover_objective(const LinearToy& toy, double alpha,
                         RecoverMethod method, double theta, double phi);

}  // namespace vsm
