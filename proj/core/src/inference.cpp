#include "vsm/inference.hpp"

#include <cmath>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>

#include "vsm/common.hpp"
#include "vsm/gaussian.hpp"

namespace vsm {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

LatentBatch latents_from_params(std::span<const double> mu,
                                std::span<const double> log_sd, int S,
                                Rng& rng) {
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

}  // namespace

// --- toy posteriors ----------------------------------------------------------

ToyLik toy_lik_from_string(std::string_view s) {
  if (s == "p1") return ToyLik::p1;
  if (s == "p2") return ToyLik::p2;
  throw std::invalid_argument("unknown toy likelihood: " + std::string(s));
}

const char* to_string(ToyLik lik) {
  return lik == ToyLik::p1 ? "p1" : "p2";
}

ToyPosteriorSpec toy_posterior_spec(ToyLik lik) {
  if (lik == ToyLik::p1) return {ToyLik::p1, 2.0, 0.5};
  return {ToyLik::p2, 1.0, 1.0};
}

ScoreTarget toy_target(const ToyPosteriorSpec& spec) {
  const double x = spec.x, v = spec.noise_sd * spec.noise_sd;
  ScoreTarget t;
  t.dim = 2;
  if (spec.lik == ToyLik::p1) {
    t.score = [x, v](std::span<const double> z) {
      const double e = x - z[0] * z[1];
      return std::vector<double>{-z[0] + e * z[1] / v, -z[1] + e * z[0] / v};
    };
    t.score_hvp = [x, v](std::span<const double> z, std::span<const double> u) {
      const double c = x - 2.0 * z[0] * z[1];
      return std::vector<double>{
          -u[0] + (-z[1] * z[1] * u[0] + c * u[1]) / v,
          -u[1] + (c * u[0] - z[0] * z[0] * u[1]) / v};
    };
    t.log_density = [x, v](std::span<const double> z) {
      const double e = x - z[0] * z[1];
      return -0.5 * sq_norm(z) - 0.5 * e * e / v;
    };
  } else {
    // relu(z2) with subgradient 0 at z2 = 0 (a measure-zero event).
    t.score = [x, v](std::span<const double> z) {
      const double r = z[1] > 0.0 ? z[1] : 0.0;
      const double ind = z[1] > 0.0 ? 1.0 : 0.0;
      const double e = x - z[0] * r;
      return std::vector<double>{-z[0] + e * r / v,
                                 -z[1] + e * z[0] * ind / v};
    };
    t.score_hvp = [x, v](std::span<const double> z, std::span<const double> u) {
      if (z[1] <= 0.0) return std::vector<double>{-u[0], -u[1]};
      const double r = z[1], c = x - 2.0 * z[0] * r;
      return std::vector<double>{-u[0] + (-r * r * u[0] + c * u[1]) / v,
                                 -u[1] + (c * u[0] - z[0] * z[0] * u[1]) / v};
    };
    t.log_density = [x, v](std::span<const double> z) {
      const double r = z[1] > 0.0 ? z[1] : 0.0;
      const double e = x - z[0] * r;
      return -0.5 * sq_norm(z) - 0.5 * e * e / v;
    };
  }
  return t;
}

ScoreTarget posterior_target(const GaussianVae& m, std::vector<double> x) {
  auto mp = std::make_shared<const GaussianVae>(m);
  auto xp = std::make_shared<const std::vector<double>>(std::move(x));
  ScoreTarget t;
  t.dim = mp->d_z();
  t.score = [mp, xp](std::span<const double> z) {
    return posterior_score_z(*mp, *xp, z);
  };
  t.score_hvp = [mp, xp](std::span<const double> z, std::span<const double> v) {
    return posterior_score_z_hvp(*mp, *xp, z, v);
  };
  t.log_density = [mp, xp](std::span<const double> z) {
    return posterior_log_density(*mp, *xp, z);
  };
  return t;
}

// --- encoder-update gradients ------------------------------------------------

InferenceKind inference_from_string(std::string_view s) {
  if (s == "kld_reparam") return InferenceKind::kld_reparam;
  if (s == "fd_reparam") return InferenceKind::fd_reparam;
  if (s == "fd_noreparam") return InferenceKind::fd_noreparam;
  throw std::invalid_argument("unknown inference kind: " + std::string(s));
}

const char* to_string(InferenceKind k) {
  switch (k) {
    case InferenceKind::kld_reparam: return "kld_reparam";
    case InferenceKind::fd_reparam: return "fd_reparam";
    default: return "fd_noreparam";
  }
}

VarGrad kld_var_grad(const ScoreTarget& target, const LatentBatch& zb) {
  const int S = zb.S, d = zb.d_z;
  VarGrad vg;
  vg.mu.assign(d, 0.0);
  vg.log_sd.assign(d, 0.0);
  double cross = 0.0;
  for (int s = 0; s < S; ++s) {
    auto ts = target.score(zb.z_row(s));
    for (int j = 0; j < d; ++j) {
      vg.mu[j] -= ts[j] / S;
      vg.log_sd[j] -= ts[j] * zb.eps_row(s)[j] * std::exp(zb.log_sd[j]) / S;
    }
    if (target.log_density) cross -= target.log_density(zb.z_row(s)) / S;
  }
  // E_q log q is exact in the parameters: z(eps) plugs back into the density
  // as -||eps||^2/2 - sum log sd - const, so only the entropy term remains.
  double neg_entropy = -0.5 * d * (1.0 + kLog2Pi);
  for (int j = 0; j < d; ++j) {
    vg.log_sd[j] -= 1.0;
    neg_entropy -= zb.log_sd[j];
  }
  vg.value = target.log_density
                 ? neg_entropy + cross
                 : std::numeric_limits<double>::quiet_NaN();
  return vg;
}

VarGrad fd_var_grad(const ScoreTarget& target, const LatentBatch& zb,
                    bool reparam) {
  if (reparam && !target.score_hvp)
    throw std::invalid_argument(
        "fd_var_grad: reparametrized gradient needs the target score_hvp");
  const int S = zb.S, d = zb.d_z;
  VarGrad vg;
  vg.mu.assign(d, 0.0);
  vg.log_sd.assign(d, 0.0);
  std::vector<double> u(d);
  for (int s = 0; s < S; ++s) {
    auto z = zb.z_row(s);
    auto eps = zb.eps_row(s);
    auto ts = target.score(z);
    for (int j = 0; j < d; ++j) {
      const double sd = std::exp(zb.log_sd[j]);
      u[j] = -(z[j] - zb.mu[j]) / (sd * sd) - ts[j];
    }
    vg.value += sq_norm(u) / S;
    if (!reparam) {
      // Only the q-score depends on the parameters at fixed z.
      for (int j = 0; j < d; ++j) {
        const double s2 = std::exp(2.0 * zb.log_sd[j]);
        vg.mu[j] += 2.0 * u[j] / s2 / S;
        vg.log_sd[j] += 4.0 * u[j] * (z[j] - zb.mu[j]) / s2 / S;
      }
    } else {
      // Through z = mu + sd*eps the q-score pieces largely cancel; what
      // survives couples u to the target curvature.
      auto hv = target.score_hvp(z, u);
      for (int j = 0; j < d; ++j) {
        const double sd = std::exp(zb.log_sd[j]);
        vg.mu[j] += -2.0 * hv[j] / S;
        vg.log_sd[j] +=
            (2.0 * u[j] * eps[j] / sd - 2.0 * sd * eps[j] * hv[j]) / S;
      }
    }
  }
  return vg;
}

VarGrad infer_var_grad(InferenceKind k, const ScoreTarget& target,
                       const LatentBatch& zb) {
  switch (k) {
    case InferenceKind::kld_reparam: return kld_var_grad(target, zb);
    case InferenceKind::fd_reparam: return fd_var_grad(target, zb, true);
    default: return fd_var_grad(target, zb, false);
  }
}

namespace {

ParamVector amortize(const GaussianVae& m, std::span<const double> x,
                     const VarGrad& vg) {
  std::vector<double> cot(vg.mu);
  cot.insert(cot.end(), vg.log_sd.begin(), vg.log_sd.end());
  return mlp_vjp(m.encoder_spec, m.encoder, x, cot).grad_params;
}

}  // namespace

ParamVector kld_infer_grad(const GaussianVae& m, std::span<const double> x,
                           const LatentBatch& zb) {
  auto target = posterior_target(m, std::vector<double>(x.begin(), x.end()));
  return amortize(m, x, kld_var_grad(target, zb));
}

ParamVector fd_infer_grad(const GaussianVae& m, std::span<const double> x,
                          const LatentBatch& zb, bool reparam) {
  auto target = posterior_target(m, std::vector<double>(x.begin(), x.end()));
  return amortize(m, x, fd_var_grad(target, zb, reparam));
}

// --- Laplace degeneracy --------------------------------------------------------

double laplace_biased_location_grad(double m, double /*s*/,
                                    std::span<const double> samples,
                                    int* excluded) {
  // The Laplace score in z is -sign(z - m)/s away from z = m; its derivative
  // in m vanishes there, so every per-sample term is exactly zero.
  int skip = 0;
  double g = 0.0;
  for (double z : samples)
    if (z == m) ++skip;
  if (excluded) *excluded = skip;
  return g;
}

double laplace_biased_scale_grad(double m, double s,
                                 const std::function<double(double)>& target_score,
                                 std::span<const double> samples) {
  double g = 0.0;
  int n = 0;
  for (double z : samples) {
    if (z == m) continue;
    const double sg = z > m ? 1.0 : -1.0;
    const double u = -sg / s - target_score(z);
    g += 2.0 * u * (sg / (s * s));
    ++n;
  }
  return n ? g / n : 0.0;
}

double laplace_kld_value(double m, double s, double m2, double s2,
                         std::span<const double> std_laplace) {
  double v = 0.0;
  for (double l : std_laplace)
    v += -std::abs(l) - std::log(2.0 * s) + std::abs(m + s * l - m2) / s2 +
         std::log(2.0 * s2);
  return v / static_cast<double>(std_laplace.size());
}

double laplace_kld_location_grad(double m, double s, double m2, double s2,
                                 std::span<const double> std_laplace) {
  double g = 0.0;
  for (double l : std_laplace) g += (m + s * l > m2 ? 1.0 : -1.0) / s2;
  return g / static_cast<double>(std_laplace.size());
}

// --- posterior traces ----------------------------------------------------------

std::vector<TraceRecord> toy_posterior_trace(
    const ToyPosteriorSpec& spec,
    std::span<const std::array<double, 2>> init_grid, InferenceKind inference,
    OptimizerKind optimizer, const TraceConfig& cfg, std::uint64_t seed) {
  auto target = toy_target(spec);
  Rng root(seed);
  std::vector<TraceRecord> out;
  out.reserve(init_grid.size());
  for (std::size_t i = 0; i < init_grid.size(); ++i) {
    Rng rng = root.fork(i);
    TraceRecord rec;
    rec.init_index = static_cast<int>(i);
    rec.init_mean = init_grid[i];
    rec.inference = inference;
    rec.optimizer = optimizer;
    std::vector<double> p{init_grid[i][0], init_grid[i][1], cfg.init_log_sd,
                          cfg.init_log_sd};
    OptimizerConfig oc;
    oc.kind = optimizer;
    oc.step_size = cfg.step_size;
    auto st = make_optimizer(oc, p.size());
    for (int it = 0; it < cfg.steps; ++it) {
      auto zb = latents_from_params(std::span(p).subspan(0, 2),
                                    std::span(p).subspan(2, 2), cfg.samples,
                                    rng);
      auto vg = infer_var_grad(inference, target, zb);
      std::vector<double> g{vg.mu[0], vg.mu[1], vg.log_sd[0], vg.log_sd[1]};
      if (std::sqrt(sq_norm(g)) < cfg.grad_tol) break;
      try {
        optimizer_step(st, p, g);
      } catch (const divergence_error&) {
        rec.diverged = true;
        break;
      }
      if (!all_finite(p)) {
        rec.diverged = true;
        break;
      }
      rec.means.push_back({p[0], p[1]});
      rec.log_sds.push_back({p[2], p[3]});
      rec.steps_taken = it + 1;
    }
    rec.final_mean = rec.means.empty() ? rec.init_mean : rec.means.back();
    rec.final_log_sd = rec.log_sds.empty()
                           ? std::array<double, 2>{cfg.init_log_sd,
                                                   cfg.init_log_sd}
                           : rec.log_sds.back();
    out.push_back(std::move(rec));
  }
  return out;
}

// --- mixture fits ----------------------------------------------------------------

std::vector<double> GmmMixture::weights() const {
  std::vector<double> w(logits.begin(), logits.end());
  const double lse = log_sum_exp(w);
  for (double& v : w) v = std::exp(v - lse);
  return w;
}

namespace {

// Responsibilities and component scores at one point.
struct MixLocal {
  std::vector<double> r;   // K
  std::vector<double> sk;  // K x dim component scores
  std::vector<double> u;   // dim mixture score
};

MixLocal mix_local(const GmmMixture& mix, std::span<const double> z) {
  const int K = mix.K, d = mix.dim;
  MixLocal loc;
  loc.r.resize(K);
  loc.sk.assign(static_cast<std::size_t>(K) * d, 0.0);
  loc.u.assign(d, 0.0);
  const double lse = log_sum_exp(mix.logits);
  for (int k = 0; k < K; ++k) {
    double a = mix.logits[k] - lse;
    for (int j = 0; j < d; ++j) {
      const std::size_t kj = static_cast<std::size_t>(k) * d + j;
      const double sd = std::exp(mix.log_sds[kj]);
      const double t = (z[j] - mix.means[kj]) / sd;
      a += -0.5 * t * t - mix.log_sds[kj];
      loc.sk[kj] = -t / sd;
    }
    loc.r[k] = a;
  }
  const double norm = log_sum_exp(loc.r);
  for (int k = 0; k < K; ++k) loc.r[k] = std::exp(loc.r[k] - norm);
  for (int k = 0; k < K; ++k)
    for (int j = 0; j < d; ++j)
      loc.u[j] += loc.r[k] * loc.sk[static_cast<std::size_t>(k) * d + j];
  return loc;
}

}  // namespace

std::vector<double> GmmMixture::score(std::span<const double> z) const {
  return mix_local(*this, z).u;
}

void GmmMixture::sample(Rng& rng, std::span<double> out) const {
  const auto w = weights();
  const int k = rng.categorical(w);
  for (int j = 0; j < dim; ++j) {
    const std::size_t kj = static_cast<std::size_t>(k) * dim + j;
    out[j] = means[kj] + std::exp(log_sds[kj]) * rng.normal();
  }
}

GmmGrads gmm_fd_loss_grads(const GmmMixture& mix, std::span<const double> z,
                           std::span<const double> targets, int S) {
  const int K = mix.K, d = mix.dim;
  GmmGrads gg;
  gg.g_logits.assign(K, 0.0);
  gg.g_means.assign(static_cast<std::size_t>(K) * d, 0.0);
  gg.g_log_sds.assign(static_cast<std::size_t>(K) * d, 0.0);
  for (int s = 0; s < S; ++s) {
    auto zs = z.subspan(static_cast<std::size_t>(s) * d, d);
    auto ts = targets.subspan(static_cast<std::size_t>(s) * d, d);
    auto loc = mix_local(mix, zs);
    double df_sq = 0.0;
    for (int j = 0; j < d; ++j) {
      const double df = loc.u[j] - ts[j];
      df_sq += df * df;
    }
    gg.loss += df_sq / S;
    for (int k = 0; k < K; ++k) {
      double dot = 0.0;
      for (int j = 0; j < d; ++j)
        dot += (loc.u[j] - ts[j]) *
               (loc.sk[static_cast<std::size_t>(k) * d + j] - loc.u[j]);
      gg.g_logits[k] += 2.0 * loc.r[k] * dot / S;
      for (int j = 0; j < d; ++j) {
        const std::size_t kj = static_cast<std::size_t>(k) * d + j;
        const double s2 = std::exp(2.0 * mix.log_sds[kj]);
        const double zm = zs[j] - mix.means[kj];
        const double a = zm / s2;
        const double b = a * zm - 1.0;
        const double df = loc.u[j] - ts[j];
        gg.g_means[kj] += 2.0 * loc.r[k] * (a * dot + df / s2) / S;
        gg.g_log_sds[kj] += 2.0 * loc.r[k] * (b * dot + 2.0 * a * df) / S;
      }
    }
  }
  return gg;
}

GmmFitResult gmm_fd_fit(const ScoreTarget& target, const GmmFitConfig& cfg,
                        std::uint64_t seed) {
  if (cfg.components < 1)
    throw std::invalid_argument("gmm_fd_fit: need at least one component");
  Rng rng(seed);
  const int K = cfg.components, d = target.dim;
  GmmFitResult res;
  GmmMixture& mix = res.mix;
  mix.K = K;
  mix.dim = d;
  mix.logits.assign(K, 0.0);
  mix.means.resize(static_cast<std::size_t>(K) * d);
  rng.normal(mix.means);  // prior draws
  mix.log_sds.assign(static_cast<std::size_t>(K) * d, 0.0);

  const std::size_t np = K + 2UL * K * d;
  std::vector<double> p(np), g(np);
  auto pack = [&](std::vector<double>& dst, const std::vector<double>& la,
                  const std::vector<double>& me, const std::vector<double>& ls) {
    std::copy(la.begin(), la.end(), dst.begin());
    std::copy(me.begin(), me.end(), dst.begin() + K);
    std::copy(ls.begin(), ls.end(), dst.begin() + K + K * d);
  };
  OptimizerConfig oc;
  oc.kind = OptimizerKind::adam;
  oc.step_size = cfg.step_size;
  auto st = make_optimizer(oc, np);

  std::vector<double> z(static_cast<std::size_t>(cfg.samples_per_iter) * d);
  std::vector<double> t(z.size());
  res.loss_trace.reserve(cfg.steps);
  for (int it = 0; it < cfg.steps; ++it) {
    for (int s = 0; s < cfg.samples_per_iter; ++s) {
      auto row = std::span(z).subspan(static_cast<std::size_t>(s) * d, d);
      mix.sample(rng, row);
      auto ts = target.score(row);
      std::copy(ts.begin(), ts.end(),
                t.begin() + static_cast<std::size_t>(s) * d);
    }
    auto gg = gmm_fd_loss_grads(mix, z, t, cfg.samples_per_iter);
    res.loss_trace.push_back(gg.loss);
    pack(p, mix.logits, mix.means, mix.log_sds);
    pack(g, gg.g_logits, gg.g_means, gg.g_log_sds);
    optimizer_step(st, p, g);
    std::copy(p.begin(), p.begin() + K, mix.logits.begin());
    std::copy(p.begin() + K, p.begin() + K + K * d, mix.means.begin());
    std::copy(p.begin() + K + K * d, p.end(), mix.log_sds.begin());

    auto w = mix.weights();
    bool floored = false;
    for (double& wk : w)
      if (wk < cfg.weight_floor) {
        wk = cfg.weight_floor;
        floored = true;
      }
    if (floored) {
      double sum = 0.0;
      for (double wk : w) sum += wk;
      for (int k = 0; k < K; ++k) mix.logits[k] = std::log(w[k] / sum);
      ++res.floor_warnings;
    }
  }
  return res;
}

GmmFitResult gmm_fd_fit(const ToyPosteriorSpec& spec, const GmmFitConfig& cfg,
                        std::uint64_t seed) {
  return gmm_fd_fit(toy_target(spec), cfg, seed);
}

double gmm_fd_loss(const GmmMixture& mix, const ScoreTarget& target, int n,
                   Rng& rng) {
  std::vector<double> z(mix.dim);
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    mix.sample(rng, z);
    auto u = mix.score(z);
    auto t = target.score(z);
    double d2 = 0.0;
    for (int j = 0; j < mix.dim; ++j) d2 += (u[j] - t[j]) * (u[j] - t[j]);
    loss += d2 / n;
  }
  return loss;
}

}  // namespace vsm
