#pragma once

#include <span>
#include <string>
#include <string_view>

#include "vsm/model.hpp"

namespace vsm {

// One Monte Carlo objective evaluation for a single datum. Every estimator
// takes the caller's latent batch, so estimates built from common random
// numbers can be compared sample-for-sample. Decoder and noise-scale
// gradients are always filled; encoder gradients flow through the
// reparametrized samples and are assembled only on request, since they need
// extra linearized passes through both nets.
struct ObjectiveEstimate {
  double value = 0.0;
  ParamVector grad_decoder;
  double grad_log_gamma = 0.0;
  ParamVector grad_encoder;  // empty unless encoder_grad was requested
  // Coefficients of value(gamma) = a/(2 gamma^2) - b/gamma + const for the
  // objectives where that holds exactly (zero otherwise); consumed by the
  // closed-form noise-scale update.
  double gamma_a = 0.0, gamma_b = 0.0;
  // Degenerate estimate, e.g. a batch-mean term evaluated with S = 1.
  bool flagged = false;
};

// Evidence lower bound: mean sample log-likelihood minus the closed-form
// KL(q || prior). Larger is better; the trainer minimizes its negation.
ObjectiveEstimate elbo_estimate(const GaussianVae& m, std::span<const double> x,
                                const LatentBatch& zb, bool encoder_grad = false);

// Score-matching reduction with the divergence term folded in analytically:
//   (1/S) sum_s 1/2 ||s_p(x|z_s)||^2 - d_x/gamma.
// include_x_score adds the decoder-free (1/S) sum_s 1/2 ||s^q(z_s|x)||^2
// term of the full objective; it contributes nothing to the decoder or
// noise-scale gradients and is used for reporting and the joint objective.
ObjectiveEstimate m1_estimate(const GaussianVae& m, std::span<const double> x,
                              const LatentBatch& zb, bool include_x_score,
                              bool encoder_grad = false);

// Variant that subtracts half the squared batch-mean likelihood score:
//   (1/S) sum_s ||s_p||^2 - d_x/gamma - 1/2 ||mean_s s_p||^2.
ObjectiveEstimate m2_estimate(const GaussianVae& m, std::span<const double> x,
                              const LatentBatch& zb, bool encoder_grad = false);

// Cross-score variant:
//   (1/S) sum_s [s^q(z_s|x) . s_p(x|z_s)] - d_x/gamma + 1/2 ||mean_s s_p||^2.
ObjectiveEstimate m3_estimate(const GaussianVae& m, std::span<const double> x,
                              const LatentBatch& zb, bool encoder_grad = false);

// Latent-side score mismatch under q:
//   (1/S) sum_s 1/2 || grad_z log q(z_s|x) + z_s - J_g(z_s)^T (x-g(z_s))/gamma ||^2.
ObjectiveEstimate posterior_fd_estimate(const GaussianVae& m,
                                        std::span<const double> x,
                                        const LatentBatch& zb,
                                        bool encoder_grad = false);

// Joint objective training q and the decoder together: the posterior term
// plus the full (x-score included) form of the first reduction.
ObjectiveEstimate joint_fd_estimate(const GaussianVae& m,
                                    std::span<const double> x,
                                    const LatentBatch& zb,
                                    bool encoder_grad = false);

// Autoencoding forms of the same sample statistics (variances use 1/S so the
// algebraic identities to the estimators above hold exactly per sample set).
struct AutoencLosses {
  double l_k = 0.0;       // ||x - mean g||^2 + sum_j var[g_j]
  double l_2 = 0.0;       // ||x - mean g||^2 + 2 mean_s ||g||^2
  double l3_recon = 0.0;  // ||x - mean g||^2
  double l3_cross = 0.0;  // mean_s s^q(z_s|x) . (x - g(z_s))
  ParamVector grad_decoder_l_k;  // decoder gradient of l_k
};
AutoencLosses autoenc_losses(const GaussianVae& m, std::span<const double> x,
                             const LatentBatch& zb);

// Increasing concave utilities applied to the autoencoding losses.
double h_kld(double y, int d_x);  // d_x log(y/d_x) / 2
double h_fd(double y, int d_x);   // -d_x^2 / (2y)

// min over gamma of a/(2 gamma^2) - b/gamma, attained at gamma = a/b.
struct GammaOptimum {
  double gamma_star = 0.0;
  double min_value = 0.0;
};
GammaOptimum gamma_optimal(double a, double b);

// Named objective selection used by the trainer and tools. All kinds are
// minimization targets: elbo selects the negated bound.
enum class ObjectiveKind { elbo, m1, m2, m3, joint_fd };
ObjectiveKind objective_from_string(std::string_view s);
const char* to_string(ObjectiveKind k);

ObjectiveEstimate objective_estimate(ObjectiveKind k, const GaussianVae& m,
                                     std::span<const double> x,
                                     const LatentBatch& zb,
                                     bool encoder_grad = false);

}  // namespace vsm
