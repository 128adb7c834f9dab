#include "vsm/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <vector>

#include "vsm/common.hpp"
#include "vsm/objectives.hpp"

namespace vsm {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

// Mean and ten-fold standard error over per-datum values; non-finite entries
// poison the whole metric (value NaN, diverged set).
MetricValue fold_stats(const std::vector<double>& per_datum) {
  MetricValue mv;
  const int n = static_cast<int>(per_datum.size());
  for (double v : per_datum)
    if (!std::isfinite(v)) {
      mv.value = std::numeric_limits<double>::quiet_NaN();
      mv.diverged = true;
      return mv;
    }
  for (double v : per_datum) mv.value += v / n;
  const int K = 10;
  if (n < K) return mv;  // se stays NaN
  std::vector<double> fold(K, 0.0);
  std::vector<int> cnt(K, 0);
  for (int i = 0; i < n; ++i) {
    const int k = i * K / n;
    fold[k] += per_datum[i];
    ++cnt[k];
  }
  double fm = 0.0;
  for (int k = 0; k < K; ++k) {
    fold[k] /= cnt[k];
    fm += fold[k] / K;
  }
  double var = 0.0;
  for (int k = 0; k < K; ++k) var += (fold[k] - fm) * (fold[k] - fm) / (K - 1);
  mv.se = std::sqrt(var / K);
  return mv;
}

struct PerDatumIs {
  double nll = 0.0, fd = 0.0;
};

// One datum's importance-sampled metrics from M proposal draws.
PerDatumIs is_one(const GaussianVae& m, std::span<const double> x, int M,
                  Rng& rng) {
  const int dz = m.d_z(), dx = m.d_x();
  const double gamma = m.gamma();
  const double log_gamma = m.log_gamma;
  auto er = encode(m, x);

  std::vector<double> logw(M);
  std::vector<double> sp(static_cast<std::size_t>(M) * dx);  // (g - x)/gamma
  std::vector<double> z(dz), eps(dz);
  for (int s = 0; s < M; ++s) {
    rng.normal(eps);
    double logq = -0.5 * dz * kLog2Pi;
    double logprior = -0.5 * dz * kLog2Pi;
    for (int j = 0; j < dz; ++j) {
      const double sd = std::exp(er.log_sd[j]);
      z[j] = er.mu[j] + sd * eps[j];
      logq += -0.5 * eps[j] * eps[j] - er.log_sd[j];
      logprior += -0.5 * z[j] * z[j];
    }
    auto g = decode(m, z);
    double sq = 0.0;
    for (int i = 0; i < dx; ++i) {
      const double e = x[i] - g[i];
      sq += e * e;
      sp[static_cast<std::size_t>(s) * dx + i] = -e / gamma;
    }
    const double loglik = -0.5 * dx * (kLog2Pi + log_gamma) - sq / (2.0 * gamma);
    logw[s] = logprior + loglik - logq;
  }

  const double lse = log_sum_exp(logw);
  PerDatumIs out;
  out.nll = -(lse - std::log(static_cast<double>(M)));

  // Self-normalized posterior expectations of the likelihood score.
  std::vector<double> shat(dx, 0.0);
  double e2 = 0.0;
  for (int s = 0; s < M; ++s) {
    const double w = std::exp(logw[s] - lse);
    double nrm = 0.0;
    for (int i = 0; i < dx; ++i) {
      const double v = sp[static_cast<std::size_t>(s) * dx + i];
      shat[i] += w * v;
      nrm += v * v;
    }
    e2 += w * nrm;
  }
  out.fd = e2 - 0.5 * sq_norm(shat) - dx / gamma;
  return out;
}

}  // namespace

IsMetrics is_metrics(const GaussianVae& m, std::span<const double> xs, int M,
                     Rng& rng) {
  if (M < 1) throw std::invalid_argument("is_metrics: M must be >= 1");
  const int dx = m.d_x();
  const int n = static_cast<int>(xs.size()) / dx;
  Rng master(rng.u64());
  std::vector<double> nll(n), fd(n);
  for (int i = 0; i < n; ++i) {
    Rng sub = master.fork(static_cast<std::uint64_t>(i));
    auto pd = is_one(m, xs.subspan(static_cast<std::size_t>(i) * dx, dx), M, sub);
    nll[i] = pd.nll;
    fd[i] = pd.fd;
  }
  return {fold_stats(nll), fold_stats(fd)};
}

MetricValue nll_importance(const GaussianVae& m, std::span<const double> xs,
                           int M, Rng& rng) {
  return is_metrics(m, xs, M, rng).nll;
}

MetricValue marginal_fd_score(const GaussianVae& m, std::span<const double> xs,
                              int M, Rng& rng) {
  return is_metrics(m, xs, M, rng).fd;
}

double cubic_kernel(std::span<const double> a, std::span<const double> b,
                    int dim) {
  const double t = dot(a, b) / dim + 1.0;
  return t * t * t;
}

double mmd2_cubic(std::span<const double> X, std::span<const double> Y,
                  int dim) {
  const int n = static_cast<int>(X.size()) / dim;
  const int m = static_cast<int>(Y.size()) / dim;
  if (n < 2 || m < 2)
    throw std::invalid_argument("mmd2_cubic: need at least two points per set");
  auto row = [dim](std::span<const double> s, int i) {
    return s.subspan(static_cast<std::size_t>(i) * dim, dim);
  };
  double kxx = 0.0, kyy = 0.0, kxy = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) kxx += cubic_kernel(row(X, i), row(X, j), dim);
  for (int i = 0; i < m; ++i)
    for (int j = i + 1; j < m; ++j) kyy += cubic_kernel(row(Y, i), row(Y, j), dim);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) kxy += cubic_kernel(row(X, i), row(Y, j), dim);
  return 2.0 * kxx / (static_cast<double>(n) * (n - 1)) +
         2.0 * kyy / (static_cast<double>(m) * (m - 1)) -
         2.0 * kxy / (static_cast<double>(n) * m);
}

MetricValue latent_mmd(const GaussianVae& m, std::span<const double> xs,
                       Rng& rng) {
  const int dx = m.d_x(), dz = m.d_z();
  const int n = static_cast<int>(xs.size()) / dx;
  if (n < 2) throw std::invalid_argument("latent_mmd: need at least two test points");
  Rng master(rng.u64());

  std::vector<double> X(static_cast<std::size_t>(n) * dz);
  std::vector<double> Y(static_cast<std::size_t>(n) * dz);
  std::vector<double> eps(dz);
  for (int i = 0; i < n; ++i) {
    Rng sub = master.fork(static_cast<std::uint64_t>(i));
    auto er = encode(m, xs.subspan(static_cast<std::size_t>(i) * dx, dx));
    sub.normal(eps);
    for (int j = 0; j < dz; ++j)
      X[static_cast<std::size_t>(i) * dz + j] =
          er.mu[j] + std::exp(er.log_sd[j]) * eps[j];
  }
  Rng prior = master.fork(0x9e3779b97f4a7c15ull);
  prior.normal(Y);

  MetricValue mv;
  if (!all_finite(X) || !all_finite(Y)) {
    mv.value = std::numeric_limits<double>::quiet_NaN();
    mv.diverged = true;
    return mv;
  }
  mv.value = mmd2_cubic(X, Y, dz);

  // Ten-fold SE from disjoint sub-blocks, each its own small two-sample
  // statistic; needs two points per fold.
  const int K = 10;
  if (n >= 2 * K) {
    std::vector<double> fold(K);
    for (int k = 0; k < K; ++k) {
      const int lo = k * n / K, hi = (k + 1) * n / K;
      const std::size_t a = static_cast<std::size_t>(lo) * dz;
      const std::size_t b = static_cast<std::size_t>(hi) * dz;
      fold[k] = mmd2_cubic(std::span(X).subspan(a, b - a),
                           std::span(Y).subspan(a, b - a), dz);
    }
    double fm = 0.0, var = 0.0;
    for (double f : fold) fm += f / K;
    for (double f : fold) var += (f - fm) * (f - fm) / (K - 1);
    mv.se = std::sqrt(var / K);
  }
  return mv;
}

MetricsRecord test_metrics(const GaussianVae& m, std::span<const double> xs,
                           int S, int M, int step, Rng& rng) {
  if (S < 1) throw std::invalid_argument("test_metrics: S must be >= 1");
  const int dx = m.d_x(), dz = m.d_z();
  const int n = static_cast<int>(xs.size()) / dx;
  MetricsRecord rec;
  rec.step = step;

  Rng r_is(rng.u64());
  Rng r_mmd(rng.u64());
  Rng r_s(rng.u64());

  auto is = is_metrics(m, xs, M, r_is);
  rec.nll = is.nll;
  rec.fd = is.fd;
  rec.mmd = latent_mmd(m, xs, r_mmd);

  std::vector<double> post(n), nelbo(n), recon(n);
  std::array<std::int64_t, SdHistogram::kBins> counts{};
  for (int i = 0; i < n; ++i) {
    auto x = xs.subspan(static_cast<std::size_t>(i) * dx, dx);
    auto zb = sample_posterior(m, x, S, r_s);
    post[i] = posterior_fd_estimate(m, x, zb).value;
    nelbo[i] = -elbo_estimate(m, x, zb).value;
    auto er = encode(m, x);
    auto g = decode(m, er.mu);
    double sq = 0.0;
    for (int j = 0; j < dx; ++j) sq += (x[j] - g[j]) * (x[j] - g[j]);
    recon[i] = sq / dx;
    for (int j = 0; j < dz; ++j) {
      const double sd = std::exp(er.log_sd[j]);
      int b = static_cast<int>(sd / (SdHistogram::kHi - SdHistogram::kLo) *
                               SdHistogram::kBins);
      if (b >= SdHistogram::kBins || !(sd < SdHistogram::kHi))
        b = SdHistogram::kBins - 1;
      if (b < 0) b = 0;
      ++counts[b];
    }
  }
  rec.post_fd = fold_stats(post);
  rec.neg_elbo = fold_stats(nelbo);
  rec.recon_mse = fold_stats(recon);

  const double total = static_cast<double>(n) * dz;
  double partial = 0.0;
  for (int b = 0; b + 1 < SdHistogram::kBins; ++b) {
    rec.sd_hist.mass[b] = counts[b] / total;
    partial += rec.sd_hist.mass[b];
  }
  rec.sd_hist.mass[SdHistogram::kBins - 1] = 1.0 - partial;
  return rec;
}

namespace {

void append_g17(std::string& s, double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  s += buf;
}

}  // namespace

std::string metrics_csv_header() {
  return "step,nll,nll_se,fd,fd_se,mmd,post_fd,recon_mse,neg_elbo";
}

std::string metrics_csv_row(const MetricsRecord& rec) {
  std::string s = std::to_string(rec.step);
  for (double v : {rec.nll.value, rec.nll.se, rec.fd.value, rec.fd.se,
                   rec.mmd.value, rec.post_fd.value, rec.recon_mse.value,
                   rec.neg_elbo.value}) {
    s += ',';
    append_g17(s, v);
  }
  return s;
}

std::string sd_hist_csv(const SdHistogram& h) {
  std::string s = "bin_left,mass";
  for (int b = 0; b < SdHistogram::kBins; ++b) {
    s += '\n';
    append_g17(s, SdHistogram::bin_left(b));
    s += ',';
    append_g17(s, h.mass[b]);
  }
  return s;
}

}  // namespace vsm
