#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "vsm/mlp.hpp"
#include "vsm/model.hpp"

namespace vsm {

// A fixed target density known through its score (and optionally its
// unnormalized log density and score-Jacobian products). Encoder updates,
// posterior traces and mixture fits are all written against this interface,
// so the same machinery serves exact VAE posteriors and analytic toys.
struct ScoreTarget {
  int dim = 0;
  std::function<std::vector<double>(std::span<const double> z)> score;
  // grad_z (score(z)) . v; required by the reparametrized FD gradient.
  std::function<std::vector<double>(std::span<const double> z,
                                    std::span<const double> v)>
      score_hvp;
  // Unnormalized log density; required by the KLD objective value.
  std::function<double(std::span<const double> z)> log_density;
};

// --- toy posteriors on R^2 --------------------------------------------------

enum class ToyLik { p1, p2 };
ToyLik toy_lik_from_string(std::string_view s);
const char* to_string(ToyLik lik);

// Standard-normal prior on R^2 plus a scalar observation x with likelihood
// N(x; z1*z2, noise_sd^2) (p1) or N(x; z1*relu(z2), noise_sd^2) (p2).
struct ToyPosteriorSpec {
  ToyLik lik = ToyLik::p1;
  double x = 2.0;
  double noise_sd = 0.5;
};
ToyPosteriorSpec toy_posterior_spec(ToyLik lik);  // shipped defaults
ScoreTarget toy_target(const ToyPosteriorSpec& spec);

// Exact posterior of the VAE at datum x (unnormalized), as a score target.
ScoreTarget posterior_target(const GaussianVae& m, std::vector<double> x);

// --- encoder-update gradients ----------------------------------------------

enum class InferenceKind { kld_reparam, fd_reparam, fd_noreparam };
InferenceKind inference_from_string(std::string_view s);
const char* to_string(InferenceKind k);

// Gradient of one inference objective w.r.t. the variational parameters
// (mu, log sd) of the diagonal Gaussian that produced the latent batch.
struct VarGrad {
  double value = 0.0;
  std::vector<double> mu, log_sd;
};

// KL(q || target): Monte Carlo cross term through the reparametrized
// samples, entropy term in closed form (it is exact for a Gaussian q).
VarGrad kld_var_grad(const ScoreTarget& target, const LatentBatch& zb);

// Fisher divergence E_q ||score_q - score_target||^2 (no 1/2, matching the
// closed-form univariate gradients). reparam=true differentiates through
// z(eps; mu, sd); reparam=false differentiates the integrand at fixed
// samples, where only the q-score depends on the parameters.
VarGrad fd_var_grad(const ScoreTarget& target, const LatentBatch& zb,
                    bool reparam);

VarGrad infer_var_grad(InferenceKind k, const ScoreTarget& target,
                       const LatentBatch& zb);

// Amortized counterparts: chain the variational-parameter gradient through
// the encoder network at datum x. The target is the exact model posterior.
ParamVector kld_infer_grad(const GaussianVae& m, std::span<const double> x,
                           const LatentBatch& zb);
ParamVector fd_infer_grad(const GaussianVae& m, std::span<const double> x,
                          const LatentBatch& zb, bool reparam);

// --- Laplace degeneracy ------------------------------------------------------

// Fixed-sample FD gradient of a Laplace(m, s) location: the q-score is
// +-1/s almost surely, independent of m, so the gradient vanishes
// identically whatever the target. Samples exactly at m (measure zero) are
// excluded and counted.
double laplace_biased_location_grad(double m, double s,
                                    std::span<const double> samples,
                                    int* excluded = nullptr);
// Scale counterpart; generically nonzero, needs the target score.
double laplace_biased_scale_grad(double m, double s,
                                 const std::function<double(double)>& target_score,
                                 std::span<const double> samples);
// Reparametrized KLD location gradient against a shifted Laplace target,
// with z = m + s * L for standard-Laplace draws L; nonzero when m != m2.
double laplace_kld_value(double m, double s, double m2, double s2,
                         std::span<const double> std_laplace);
double laplace_kld_location_grad(double m, double s, double m2, double s2,
                                 std::span<const double> std_laplace);

// --- posterior traces --------------------------------------------------------

struct TraceConfig {
  int steps = 5000;
  double step_size = 1e-2;
  int samples = 10;
  // log(0.3).  The origin's basin of attraction under the reparametrized FD
  // gradient widens as the initial q tightens: at sd0 <= 0.35 it covers the
  // whole demonstration disk (radius 0.7), while at sd0 ~ 0.5 the rim escapes
  // in a narrow cone around the posterior-lobe diagonal.
  double init_log_sd = -1.2039728043259361;
  double grad_tol = 1e-5;  // early stop on gradient norm
};

struct TraceRecord {
  int init_index = 0;
  std::array<double, 2> init_mean{};
  InferenceKind inference = InferenceKind::kld_reparam;
  OptimizerKind optimizer = OptimizerKind::adam;
  std::vector<std::array<double, 2>> means;    // after each step
  std::vector<std::array<double, 2>> log_sds;
  std::array<double, 2> final_mean{};
  std::array<double, 2> final_log_sd{};
  int steps_taken = 0;
  bool diverged = false;
};

// One record per init point; each trace owns an RNG forked from the seed by
// init index, so results do not depend on evaluation order.
std::vector<TraceRecord> toy_posterior_trace(
    const ToyPosteriorSpec& spec,
    std::span<const std::array<double, 2>> init_grid, InferenceKind inference,
    OptimizerKind optimizer, const TraceConfig& cfg, std::uint64_t seed);

// --- mixture fits by the fixed-sample FD gradient ---------------------------

// Diagonal-Gaussian mixture with softmax weights.
struct GmmMixture {
  int K = 0, dim = 0;
  std::vector<double> logits;   // K
  std::vector<double> means;    // K x dim, row-major
  std::vector<double> log_sds;  // K x dim

  std::vector<double> weights() const;
  std::vector<double> score(std::span<const double> z) const;
  void sample(Rng& rng, std::span<double> out) const;
};

// Loss mean_s ||score_mix(z_s) - t_s||^2 and its exact parameter gradient at
// fixed samples (the mixture analog of the biased univariate gradient).
struct GmmGrads {
  double loss = 0.0;
  std::vector<double> g_logits, g_means, g_log_sds;
};
GmmGrads gmm_fd_loss_grads(const GmmMixture& mix, std::span<const double> z,
                           std::span<const double> targets, int S);

struct GmmFitConfig {
  int components = 10;
  int steps = 5000;
  double step_size = 1e-3;
  int samples_per_iter = 10;
  double weight_floor = 1e-8;
};

struct GmmFitResult {
  GmmMixture mix;
  std::vector<double> loss_trace;  // per-iteration minibatch loss
  int floor_warnings = 0;          // weight-collapse renormalizations
};

// Adam on (logits, means, log sds) following the fixed-sample FD gradient at
// unparametrized mixture draws. Means start at prior samples, sds at 1,
// weights equal.
GmmFitResult gmm_fd_fit(const ScoreTarget& target, const GmmFitConfig& cfg,
                        std::uint64_t seed);
GmmFitResult gmm_fd_fit(const ToyPosteriorSpec& spec, const GmmFitConfig& cfg,
                        std::uint64_t seed);

// Accurate loss of a fitted mixture under fresh draws (for stability checks).
double gmm_fd_loss(const GmmMixture& mix, const ScoreTarget& target, int n,
                   Rng& rng);

}  // namespace vsm
