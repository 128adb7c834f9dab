#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <span>
#include <string>

#include "vsm/model.hpp"

namespace vsm {

// One scalar metric with a Monte Carlo standard error. The error comes from
// splitting the test batch into ten folds, so it reflects both per-datum
// estimator noise and across-datum spread. Folds need at least two points
// each; smaller batches leave the error as NaN.
struct MetricValue {
  double value = 0.0;
  double se = std::numeric_limits<double>::quiet_NaN();
  bool diverged = false;  // some per-datum estimate failed to be finite
};

// Per-dimension posterior standard deviations binned on [0, 1.5]; anything
// beyond the range lands in the last bin, so the masses always sum to one.
struct SdHistogram {
  static constexpr int kBins = 30;
  static constexpr double kLo = 0.0, kHi = 1.5;
  std::array<double, kBins> mass{};

  static double bin_left(int i) { return kLo + (kHi - kLo) * i / kBins; }
};

// Importance-sampled negative log-likelihood per datum, averaged over the
// batch: -log[(1/M) sum_m p(z_m) p(x|z_m) / q(z_m|x)] with z_m ~ q(.|x).
MetricValue nll_importance(const GaussianVae& m, std::span<const double> xs,
                           int M, Rng& rng);

// Score-matching loss of the learned marginal at test points:
//   E_hat ||s_p(x|z)||^2 - 1/2 ||s_hat(x)||^2 - d_x/gamma,
// where s_hat is the self-normalized importance estimate of the marginal
// score E_{p(z|x)}[s_p(x|z)] under proposal q.
MetricValue marginal_fd_score(const GaussianVae& m, std::span<const double> xs,
                              int M, Rng& rng);

// Both at once from common per-datum proposals (the trainer's evaluation
// loop wants them together without paying for two passes).
struct IsMetrics {
  MetricValue nll, fd;
};
IsMetrics is_metrics(const GaussianVae& m, std::span<const double> xs, int M,
                     Rng& rng);

// k(a, b) = (a.b / dim + 1)^3, the polynomial kernel behind the latent MMD.
double cubic_kernel(std::span<const double> a, std::span<const double> b,
                    int dim);

// Unbiased U-statistic MMD^2 between two row-major sample sets.
double mmd2_cubic(std::span<const double> X, std::span<const double> Y,
                  int dim);

// MMD^2 between the aggregate posterior (one q-sample per test point) and
// the prior, with as many prior draws as test points.
MetricValue latent_mmd(const GaussianVae& m, std::span<const double> xs,
                       Rng& rng);

// The whole evaluation row for a checkpoint.
struct MetricsRecord {
  int step = 0;
  MetricValue nll;        // importance-sampled, M caller-chosen
  MetricValue fd;         // marginal score-matching loss
  MetricValue mmd;        // latent MMD^2
  MetricValue post_fd;    // batch-mean posterior score mismatch, S samples
  MetricValue recon_mse;  // decode from the posterior mean
  MetricValue neg_elbo;   // S-sample bound with closed-form KL
  SdHistogram sd_hist;

  bool diverged() const {
    return nll.diverged || fd.diverged || mmd.diverged || post_fd.diverged ||
           recon_mse.diverged || neg_elbo.diverged;
  }
};

MetricsRecord test_metrics(const GaussianVae& m, std::span<const double> xs,
                           int S, int M, int step, Rng& rng);

// Pinned CSV shape: one row per checkpoint, histogram in a side file.
std::string metrics_csv_header();
std::string metrics_csv_row(const MetricsRecord& rec);
std::string sd_hist_csv(const SdHistogram& h);  // header + 30 rows

}  // namespace vsm
