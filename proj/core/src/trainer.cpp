#include "vsm/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "vsm/common.hpp"

namespace vsm {

namespace {

using nlohmann::json;

std::span<const double> datum(std::span<const double> xs, int d_x, int i) {
  return xs.subspan(static_cast<std::size_t>(i) * d_x, d_x);
}

}  // namespace

// --- enum strings ------------------------------------------------------------

GammaMode gamma_mode_from_string(std::string_view s) {
  if (s == "joint_gradient") return GammaMode::joint_gradient;
  if (s == "closed_form") return GammaMode::closed_form;
  if (s == "fixed") return GammaMode::fixed;
  throw std::invalid_argument("unknown gamma mode: " + std::string(s));
}

const char* to_string(GammaMode m) {
  switch (m) {
    case GammaMode::joint_gradient: return "joint_gradient";
    case GammaMode::closed_form: return "closed_form";
    case GammaMode::fixed: return "fixed";
  }
  throw std::invalid_argument("unknown gamma mode");
}

RecoverMethod recover_method_from_string(std::string_view s) {
  if (s == "jkld") return RecoverMethod::jkld;
  if (s == "jfd") return RecoverMethod::jfd;
  throw std::invalid_argument("unknown recovery method: " + std::string(s));
}

const char* to_string(RecoverMethod m) {
  switch (m) {
    case RecoverMethod::jkld: return "jkld";
    case RecoverMethod::jfd: return "jfd";
  }
  throw std::invalid_argument("unknown recovery method");
}

// --- config validation ---------------------------------------------------------

void validate(const TrainConfig& cfg) {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(what);
  };
  require(cfg.J >= 0, "J must be >= 0");
  require(cfg.K >= 0, "K must be >= 0");
  require(cfg.K <= 64, "K exceeds the unroll cap of 64");
  require(cfg.S >= 1, "S must be >= 1");
  require(cfg.batch_size >= 1, "batch_size must be >= 1");
  require(cfg.steps >= 0, "steps must be >= 0");
  require(cfg.encoder_opt.step_size > 0, "encoder step_size must be > 0");
  require(cfg.decoder_opt.step_size > 0, "decoder step_size must be > 0");
  require(cfg.eval_every >= 0, "eval_every must be >= 0");
  require(cfg.eval_points >= 1, "eval_points must be >= 1");
  require(cfg.eval_is_samples >= 1, "eval_is_samples must be >= 1");
  require(cfg.eval_S >= 1, "eval_S must be >= 1");
  require(cfg.d_z >= 1, "d_z must be >= 1");
  require(std::isfinite(cfg.gamma_init) && cfg.gamma_init > 0,
          "gamma_init must be positive");
  for (int w : cfg.hidden) require(w >= 1, "hidden widths must be >= 1");
  if (cfg.K > 0) {
    require(cfg.objective == ObjectiveKind::m2 || cfg.objective == ObjectiveKind::m3,
            "K > 0 applies only to the m2/m3 objectives");
    require(cfg.inference == InferenceKind::kld_reparam,
            "K > 0 requires kld_reparam inference (the unrolled refinements "
            "are derived for the KLD encoder update)");
    require(cfg.gamma_mode != GammaMode::closed_form,
            "K > 0 does not expose the closed-form noise-scale coefficients");
  }
  if (cfg.objective == ObjectiveKind::joint_fd)
    require(cfg.gamma_mode != GammaMode::closed_form,
            "joint_fd has no 1/gamma expansion for the closed-form update");
}

// --- JSON round trip -----------------------------------------------------------

namespace {

void reject_unknown(const json& j, std::initializer_list<const char*> keys,
                    const char* where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : keys)
      if (it.key() == k) { known = true; break; }
    if (!known)
      throw std::invalid_argument(std::string("unknown key \"") + it.key() +
                                  "\" in " + where);
  }
}

json opt_to_json(const OptimizerConfig& c) {
  return json{{"kind", to_string(c.kind)},
              {"step_size", c.step_size},
              {"beta1", c.beta1},
              {"beta2", c.beta2},
              {"eps", c.eps}};
}

OptimizerConfig opt_from_json(const json& j, OptimizerConfig c, const char* where) {
  if (!j.is_object()) throw std::invalid_argument(std::string(where) + " must be an object");
  reject_unknown(j, {"kind", "step_size", "beta1", "beta2", "eps"}, where);
  if (j.contains("kind")) c.kind = optimizer_from_string(j.at("kind").get<std::string>());
  if (j.contains("step_size")) c.step_size = j.at("step_size").get<double>();
  if (j.contains("beta1")) c.beta1 = j.at("beta1").get<double>();
  if (j.contains("beta2")) c.beta2 = j.at("beta2").get<double>();
  if (j.contains("eps")) c.eps = j.at("eps").get<double>();
  return c;
}

json dataset_to_json(const DatasetId& id) {
  return json{{"kind", to_string(id.kind)},
              {"theta_star", id.theta_star},
              {"gamma", id.gamma}};
}

DatasetId dataset_from_json(const json& j) {
  DatasetId id;
  if (j.is_string()) {
    id.kind = dataset_kind_from_string(j.get<std::string>());
    return id;
  }
  if (!j.is_object())
    throw std::invalid_argument("dataset must be a kind string or an object");
  reject_unknown(j, {"kind", "theta_star", "gamma"}, "dataset");
  if (j.contains("kind")) id.kind = dataset_kind_from_string(j.at("kind").get<std::string>());
  if (j.contains("theta_star")) id.theta_star = j.at("theta_star").get<double>();
  if (j.contains("gamma")) id.gamma = j.at("gamma").get<double>();
  return id;
}

}  // namespace

TrainConfig train_config_from_json(const std::string& text) {
  json j = json::parse(text);
  if (!j.is_object()) throw std::invalid_argument("config must be a JSON object");
  reject_unknown(j,
                 {"objective", "inference", "J", "K", "S", "batch_size", "steps",
                  "encoder_opt", "decoder_opt", "bilevel_step_size", "gamma_mode",
                  "seed", "dataset", "eval_every", "eval_points", "eval_is_samples",
                  "eval_S", "d_z", "hidden", "activation", "gamma_init"},
                 "config");
  TrainConfig c;
  if (j.contains("objective"))
    c.objective = objective_from_string(j.at("objective").get<std::string>());
  if (j.contains("inference"))
    c.inference = inference_from_string(j.at("inference").get<std::string>());
  if (j.contains("J")) c.J = j.at("J").get<int>();
  if (j.contains("K")) c.K = j.at("K").get<int>();
  if (j.contains("S")) c.S = j.at("S").get<int>();
  if (j.contains("batch_size")) c.batch_size = j.at("batch_size").get<int>();
  if (j.contains("steps")) c.steps = j.at("steps").get<int>();
  if (j.contains("encoder_opt"))
    c.encoder_opt = opt_from_json(j.at("encoder_opt"), c.encoder_opt, "encoder_opt");
  if (j.contains("decoder_opt"))
    c.decoder_opt = opt_from_json(j.at("decoder_opt"), c.decoder_opt, "decoder_opt");
  if (j.contains("bilevel_step_size"))
    c.bilevel_step_size = j.at("bilevel_step_size").get<double>();
  if (j.contains("gamma_mode"))
    c.gamma_mode = gamma_mode_from_string(j.at("gamma_mode").get<std::string>());
  if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("dataset")) c.dataset = dataset_from_json(j.at("dataset"));
  if (j.contains("eval_every")) c.eval_every = j.at("eval_every").get<int>();
  if (j.contains("eval_points")) c.eval_points = j.at("eval_points").get<int>();
  if (j.contains("eval_is_samples"))
    c.eval_is_samples = j.at("eval_is_samples").get<int>();
  if (j.contains("eval_S")) c.eval_S = j.at("eval_S").get<int>();
  if (j.contains("d_z")) c.d_z = j.at("d_z").get<int>();
  if (j.contains("hidden")) c.hidden = j.at("hidden").get<std::vector<int>>();
  if (j.contains("activation"))
    c.activation = activation_from_string(j.at("activation").get<std::string>());
  if (j.contains("gamma_init")) c.gamma_init = j.at("gamma_init").get<double>();
  validate(c);
  return c;
}

std::string train_config_to_json(const TrainConfig& c) {
  json j{{"objective", to_string(c.objective)},
         {"inference", to_string(c.inference)},
         {"J", c.J},
         {"K", c.K},
         {"S", c.S},
         {"batch_size", c.batch_size},
         {"steps", c.steps},
         {"encoder_opt", opt_to_json(c.encoder_opt)},
         {"decoder_opt", opt_to_json(c.decoder_opt)},
         {"bilevel_step_size", c.bilevel_step_size},
         {"gamma_mode", to_string(c.gamma_mode)},
         {"seed", c.seed},
         {"dataset", dataset_to_json(c.dataset)},
         {"eval_every", c.eval_every},
         {"eval_points", c.eval_points},
         {"eval_is_samples", c.eval_is_samples},
         {"eval_S", c.eval_S},
         {"d_z", c.d_z},
         {"hidden", c.hidden},
         {"activation", to_string(c.activation)},
         {"gamma_init", c.gamma_init}};
  return j.dump(2);
}

// --- decoder gradient through unrolled encoder refinements ---------------------

// The refinements are plain SGD steps phi_{k+1} = phi_k - eta * grad_phi I,
// where I is the batch-mean KLD inference objective. Reverse accumulation
// needs, at each stored phi_k, the Hessian-vector product of I against the
// running adjoint and the theta-derivative of (adjoint . grad_phi I); both
// reduce to second-order net primitives because the only theta-dependence of
// grad_phi I sits in the likelihood score term of the posterior score.
BilevelGrad bilevel_theta_grad(const GaussianVae& m, std::span<const double> xs,
                               ObjectiveKind objective, int K,
                               double inner_step_size, int S, Rng& rng) {
  if (K < 0 || K > 64) throw std::invalid_argument("K must be in [0, 64]");
  if (S < 1) throw std::invalid_argument("S must be >= 1");
  const int d_x = m.d_x();
  const int d_z = m.d_z();
  if (xs.empty() || xs.size() % static_cast<std::size_t>(d_x) != 0)
    throw std::invalid_argument("batch size must be a positive multiple of d_x");
  const int n = static_cast<int>(xs.size() / static_cast<std::size_t>(d_x));
  const double eta = inner_step_size;
  const double gamma = m.gamma();
  const std::size_t enc_dim = m.encoder.v.size();
  const std::size_t draw = static_cast<std::size_t>(n) * S * d_z;

  // Forward: unroll the refinements, storing each iterate and its noise.
  GaussianVae cur = m;
  std::vector<ParamVector> phis;
  phis.reserve(static_cast<std::size_t>(K) + 1);
  phis.push_back(m.encoder);
  std::vector<std::vector<double>> eps_store;
  eps_store.reserve(K);
  for (int k = 0; k < K; ++k) {
    std::vector<double> eps(draw);
    rng.normal(eps);
    cur.encoder = phis[static_cast<std::size_t>(k)];
    ParamVector gsum;
    gsum.v.assign(enc_dim, 0.0);
    for (int i = 0; i < n; ++i) {
      std::span<const double> x = datum(xs, d_x, i);
      LatentBatch zb = latents_from_eps(
          cur, x, std::span<const double>(eps).subspan(static_cast<std::size_t>(i) * S * d_z, static_cast<std::size_t>(S) * d_z), S);
      ParamVector g = kld_infer_grad(cur, x, zb);
      axpy(1.0, g.v, gsum.v);
    }
    ParamVector next = phis.back();
    axpy(-eta / n, gsum.v, next.v);
    phis.push_back(std::move(next));
    eps_store.push_back(std::move(eps));
  }

  // Outer objective and its direct gradients at the refined encoder.
  cur.encoder = phis.back();
  std::vector<double> eps_out(draw);
  rng.normal(eps_out);
  BilevelGrad out;
  out.grad_decoder.v.assign(m.decoder.v.size(), 0.0);
  ParamVector lambda;  // adjoint d(outer)/d(phi_k)
  lambda.v.assign(enc_dim, 0.0);
  for (int i = 0; i < n; ++i) {
    std::span<const double> x = datum(xs, d_x, i);
    LatentBatch zb = latents_from_eps(
        cur, x, std::span<const double>(eps_out).subspan(static_cast<std::size_t>(i) * S * d_z, static_cast<std::size_t>(S) * d_z), S);
    ObjectiveEstimate est = objective_estimate(objective, cur, x, zb, true);
    out.value += est.value / n;
    out.grad_log_gamma += est.grad_log_gamma / n;
    axpy(1.0 / n, est.grad_decoder.v, out.grad_decoder.v);
    axpy(1.0 / n, est.grad_encoder.v, lambda.v);
  }

  // Reverse: walk the refinements back, accumulating the mixed theta terms
  // and propagating the adjoint through the encoder Hessian.
  std::vector<double> w(d_z), cot(2 * d_z), dcot(2 * d_z);
  for (int k = K - 1; k >= 0; --k) {
    cur.encoder = phis[static_cast<std::size_t>(k)];
    const std::vector<double>& eps = eps_store[static_cast<std::size_t>(k)];
    std::vector<double> hvp_acc(enc_dim, 0.0);
    for (int i = 0; i < n; ++i) {
      std::span<const double> x = datum(xs, d_x, i);
      // Encoder outputs and their derivative along the adjoint direction.
      MlpJvpGradResult enc = mlp_jvp_grad(cur.encoder_spec, cur.encoder, x, {},
                                          &lambda, {}, {});
      std::span<const double> mu(enc.output.data(), d_z);
      std::span<const double> ls(enc.output.data() + d_z, d_z);
      std::span<const double> u_mu(enc.output_tangent.data(), d_z);
      std::span<const double> u_ls(enc.output_tangent.data() + d_z, d_z);
      std::fill(cot.begin(), cot.end(), 0.0);
      std::fill(dcot.begin(), dcot.end(), 0.0);
      std::vector<double> z(d_z);
      for (int s = 0; s < S; ++s) {
        std::span<const double> e{
            eps.data() + (static_cast<std::size_t>(i) * S + s) * d_z,
            static_cast<std::size_t>(d_z)};
        for (int j = 0; j < d_z; ++j) {
          double sd = std::exp(ls[j]);
          z[static_cast<std::size_t>(j)] = mu[j] + sd * e[j];
          w[static_cast<std::size_t>(j)] = u_mu[j] + sd * e[j] * u_ls[j];
        }
        std::vector<double> t = posterior_score_z(cur, x, z);

        // Mixed term: d/d theta of -(adjoint . grad_phi I) has, per sample,
        // the derivative of (J_g w).(x - g)/gamma in the decoder parameters
        // and -F/gamma in log gamma, F = (J_g w).(x - g).
        MlpJvpGradResult dec = mlp_jvp_grad(
            cur.decoder_spec, cur.decoder, z, w, nullptr,
            [&](std::span<const double> g, std::span<const double> jw,
                std::span<double> cp, std::span<double> ct) {
              for (int a = 0; a < d_x; ++a) {
                cp[a] = -jw[a] / gamma;
                ct[a] = (x[a] - g[a]) / gamma;
              }
            });
        axpy(eta / (static_cast<double>(n) * S), dec.grad_params.v,
             out.grad_decoder.v);
        double f = 0.0;
        for (int a = 0; a < d_x; ++a)
          f += dec.output_tangent[static_cast<std::size_t>(a)] *
               (x[a] - dec.output[static_cast<std::size_t>(a)]);
        out.grad_log_gamma -= eta * f / (gamma * static_cast<double>(n) * S);

        // Hessian pieces: differentiate the (mu, log sd) cotangent of the
        // KLD gradient along the adjoint direction.
        std::vector<double> hw = posterior_score_z_hvp(cur, x, z, w);
        for (int j = 0; j < d_z; ++j) {
          double sd = std::exp(ls[j]);
          cot[static_cast<std::size_t>(j)] -= t[static_cast<std::size_t>(j)] / S;
          cot[static_cast<std::size_t>(d_z + j)] -=
              t[static_cast<std::size_t>(j)] * sd * e[j] / S;
          dcot[static_cast<std::size_t>(j)] -= hw[static_cast<std::size_t>(j)] / S;
          dcot[static_cast<std::size_t>(d_z + j)] -=
              (hw[static_cast<std::size_t>(j)] * sd * e[j] +
               t[static_cast<std::size_t>(j)] * sd * u_ls[j] * e[j]) /
              S;
        }
      }
      for (int j = 0; j < d_z; ++j) cot[static_cast<std::size_t>(d_z + j)] -= 1.0;
      // (d2 I / d phi2) lambda = J^T dcot + (dJ^T along lambda) cot.
      MlpVjpResult p1 = mlp_vjp(cur.encoder_spec, cur.encoder, x, dcot);
      MlpJvpGradResult p2 =
          mlp_jvp_grad(cur.encoder_spec, cur.encoder, x, {}, &lambda, {}, cot);
      axpy(1.0, p1.grad_params.v, hvp_acc);
      axpy(1.0, p2.grad_params.v, hvp_acc);
    }
    axpy(-eta / n, hvp_acc, lambda.v);
  }

  out.phi_K = std::move(phis.back());
  return out;
}

// --- training loop --------------------------------------------------------------

RunLog train_run(const TrainConfig& cfg) {
  validate(cfg);
  const auto t0 = std::chrono::steady_clock::now();
  Rng root(cfg.seed);
  Rng init_rng = root.fork(1);
  Rng data_rng = root.fork(2);
  Rng train_rng = root.fork(3);
  Rng test_rng = root.fork(4);

  Dataset test = sample_dataset(cfg.dataset, cfg.eval_points, test_rng);
  const int d_x = test.dim;

  RunLog log;
  log.config = cfg;
  GaussianVae m = make_vae(d_x, cfg.d_z, cfg.hidden, cfg.activation,
                           cfg.activation, cfg.gamma_init, init_rng);

  OptimizerState enc_st = make_optimizer(cfg.encoder_opt, m.encoder.v.size());
  OptimizerState dec_st = make_optimizer(cfg.decoder_opt, m.decoder.v.size());
  OptimizerState gam_st = make_optimizer(cfg.decoder_opt, 1);
  const double eta = cfg.bilevel_step_size > 0 ? cfg.bilevel_step_size
                                               : cfg.encoder_opt.step_size;

  // Evaluations fork from the root by step, so a record depends only on the
  // model state, not on the cadence that produced it.
  auto eval_at = [&](int step) {
    Rng ev = root.fork(1000 + static_cast<std::uint64_t>(step));
    log.records.push_back(
        test_metrics(m, test.pts, cfg.eval_S, cfg.eval_is_samples, step, ev));
  };
  eval_at(0);

  auto draw_batch = [&]() {
    return sample_dataset(cfg.dataset, cfg.batch_size, data_rng).pts;
  };
  auto finite_params = [&]() {
    return all_finite(m.decoder.v) && all_finite(m.encoder.v) &&
           std::isfinite(m.log_gamma);
  };
  auto gamma_move = [&](double grad, double a, double b) {
    switch (cfg.gamma_mode) {
      case GammaMode::joint_gradient: {
        std::span<double> lg(&m.log_gamma, 1);
        std::span<const double> g(&grad, 1);
        optimizer_step(gam_st, lg, g);
        break;
      }
      case GammaMode::closed_form:
        // Skip the move when the batch coefficients leave the expansion
        // without an interior minimum, rather than aborting the run.
        try {
          m.log_gamma = std::log(gamma_optimal(a, b).gamma_star);
        } catch (const std::domain_error&) {
        }
        break;
      case GammaMode::fixed: break;
    }
  };

  try {
    for (int step = 0; step < cfg.steps; ++step) {
      std::vector<double> batch;
      if (cfg.objective == ObjectiveKind::joint_fd) {
        // One estimate drives both nets; J and K do not apply.
        batch = draw_batch();
        ParamVector g_enc, g_dec;
        g_enc.v.assign(m.encoder.v.size(), 0.0);
        g_dec.v.assign(m.decoder.v.size(), 0.0);
        double g_lg = 0.0;
        for (int i = 0; i < cfg.batch_size; ++i) {
          std::span<const double> x = datum(batch, d_x, i);
          LatentBatch zb = sample_posterior(m, x, cfg.S, train_rng);
          ObjectiveEstimate est = objective_estimate(cfg.objective, m, x, zb, true);
          axpy(1.0 / cfg.batch_size, est.grad_encoder.v, g_enc.v);
          axpy(1.0 / cfg.batch_size, est.grad_decoder.v, g_dec.v);
          g_lg += est.grad_log_gamma / cfg.batch_size;
        }
        optimizer_step(enc_st, m.encoder.span(), g_enc.v);
        optimizer_step(dec_st, m.decoder.span(), g_dec.v);
        gamma_move(g_lg, 0.0, 0.0);
      } else {
        for (int j = 0; j < cfg.J; ++j) {
          batch = draw_batch();
          ParamVector g;
          g.v.assign(m.encoder.v.size(), 0.0);
          for (int i = 0; i < cfg.batch_size; ++i) {
            std::span<const double> x = datum(batch, d_x, i);
            LatentBatch zb = sample_posterior(m, x, cfg.S, train_rng);
            ParamVector gi =
                cfg.inference == InferenceKind::kld_reparam
                    ? kld_infer_grad(m, x, zb)
                    : fd_infer_grad(m, x, zb,
                                    cfg.inference == InferenceKind::fd_reparam);
            axpy(1.0 / cfg.batch_size, gi.v, g.v);
          }
          optimizer_step(enc_st, m.encoder.span(), g.v);
        }
        if (cfg.J == 0) batch = draw_batch();

        if (cfg.K > 0) {
          BilevelGrad bg = bilevel_theta_grad(m, batch, cfg.objective, cfg.K,
                                              eta, cfg.S, train_rng);
          m.encoder = std::move(bg.phi_K);  // keep the refined iterate
          optimizer_step(dec_st, m.decoder.span(), bg.grad_decoder.v);
          gamma_move(bg.grad_log_gamma, 0.0, 0.0);
        } else {
          ParamVector g_dec;
          g_dec.v.assign(m.decoder.v.size(), 0.0);
          double g_lg = 0.0, a = 0.0, b = 0.0;
          for (int i = 0; i < cfg.batch_size; ++i) {
            std::span<const double> x = datum(batch, d_x, i);
            LatentBatch zb = sample_posterior(m, x, cfg.S, train_rng);
            ObjectiveEstimate est = objective_estimate(cfg.objective, m, x, zb);
            axpy(1.0 / cfg.batch_size, est.grad_decoder.v, g_dec.v);
            g_lg += est.grad_log_gamma / cfg.batch_size;
            a += est.gamma_a / cfg.batch_size;
            b += est.gamma_b / cfg.batch_size;
          }
          optimizer_step(dec_st, m.decoder.span(), g_dec.v);
          gamma_move(g_lg, a, b);
        }
      }
      if (!finite_params())
        throw divergence_error("non-finite parameters after outer step " +
                               std::to_string(step));
      log.steps_done = step + 1;
      if (cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0 &&
          step + 1 < cfg.steps)
        eval_at(step + 1);
    }
  } catch (const divergence_error&) {
    log.diverged = true;
    log.diverged_step = log.steps_done;  // the step that was being applied
  }
  if (!log.diverged && cfg.steps > 0) eval_at(cfg.steps);
  log.final_model = std::move(m);
  log.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return log;
}

// --- linear-toy recovery ----------------------------------------------------------

double recover_objective(const LinearToy& toy, double alpha, RecoverMethod method,
                         double theta, double phi) {
  if (!(alpha > 0)) throw std::invalid_argument("alpha must be positive");
  GaussFull data = toy_data_joint(toy, theta, phi, alpha);
  GaussFull model = toy_model_joint(theta, toy.gamma);
  return method == RecoverMethod::jkld ? gaussian_kld_full(data, model)
                                       : gaussian_fd_full(data, model);
}

namespace {

// Compass search with diagonal moves; the objectives are smooth, so this
// converges to a stationary point at the resolution of the final step size.
struct CompassResult {
  double theta = 0.0, phi = 0.0, value = 0.0;
};

CompassResult compass_minimize(const std::function<double(double, double)>& f,
                               double theta, double phi) {
  static constexpr double kDirs[8][2] = {{1, 0},  {-1, 0}, {0, 1},  {0, -1},
                                         {1, 1},  {1, -1}, {-1, 1}, {-1, -1}};
  CompassResult r{theta, phi, f(theta, phi)};
  double h = 0.25;
  long evals = 0;
  while (h > 1e-11 && evals < 400000) {
    double best = r.value, bt = r.theta, bp = r.phi;
    for (const auto& d : kDirs) {
      double ct = r.theta + h * d[0], cp = r.phi + h * d[1];
      double fc = f(ct, cp);
      ++evals;
      if (fc < best) { best = fc; bt = ct; bp = cp; }
    }
    if (best < r.value) {
      r = {bt, bp, best};
    } else {
      h *= 0.5;
    }
  }
  return r;
}

}  // namespace

RecoverResult recover_theta(const LinearToy& toy, double alpha,
                            RecoverMethod method) {
  auto f = [&](double th, double ph) {
    return recover_objective(toy, alpha, method, th, ph);
  };

  // Coarse global scan plus informed starts; the coordinate (theta, phi) ->
  // (-theta, -phi) reflection leaves both divergences invariant, so basins
  // come in sign pairs and the scan plus mirrored starts covers them.
  double st = toy.theta_star;
  double sp = toy_exact_slope(st, toy.gamma);
  CompassResult scan{0.0, 0.0, f(0.0, 0.0)};
  for (int a = -20; a <= 20; ++a)
    for (int b = -15; b <= 15; ++b) {
      double th = 0.2 * a, ph = 0.2 * b;
      double v = f(th, ph);
      if (v < scan.value) scan = {th, ph, v};
    }
  const double starts[4][2] = {
      {st, sp}, {-st, -sp}, {0.5 * st, 0.5 * sp}, {scan.theta, scan.phi}};
  CompassResult best{starts[0][0], starts[0][1],
                     std::numeric_limits<double>::infinity()};
  for (const auto& s : starts) {
    CompassResult r = compass_minimize(f, s[0], s[1]);
    if (r.value < best.value) best = r;
  }

  // Report the representative on theta_star's side of the reflection.
  if (st != 0.0 && best.theta * st < 0.0) {
    best.theta = -best.theta;
    best.phi = -best.phi;
    best.value = f(best.theta, best.phi);
  }
  RecoverResult out;
  out.theta_star = st;
  out.alpha = alpha;
  out.theta_hat = best.theta;
  out.phi_hat = best.phi;
  out.objective = best.value;
  return out;
}

}  // namespace vsm
