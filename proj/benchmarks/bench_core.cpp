// Microbenchmarks of the per-step hot paths: network passes, objective
// estimates, encoder updates, and the unrolled decoder gradient. Sizes match
// the synthetic-data experiments (2-D data, two hidden layers of 30).

#include <benchmark/benchmark.h>

#include <vector>

#include "vsm/inference.hpp"
#include "vsm/metrics.hpp"
#include "vsm/model.hpp"
#include "vsm/objectives.hpp"
#include "vsm/rng.hpp"
#include "vsm/trainer.hpp"

namespace {

using namespace vsm;

GaussianVae bench_model(Rng& rng) {
  return make_vae(2, 2, {30, 30}, Activation::softplus, Activation::softplus,
                  1.0, rng);
}

void BM_MlpForward(benchmark::State& state) {
  Rng rng(1);
  GaussianVae m = bench_model(rng);
  std::vector<double> z{0.3, -0.8};
  for (auto _ : state) {
    std::vector<double> out = mlp_forward(m.decoder_spec, m.decoder, z);
    benchmark::DoNotOptimize(out.data());
  }
}
BENCHMARK(BM_MlpForward);

void BM_MlpVjp(benchmark::State& state) {
  Rng rng(1);
  GaussianVae m = bench_model(rng);
  std::vector<double> z{0.3, -0.8}, cot{1.0, -0.5};
  for (auto _ : state) {
    MlpVjpResult r = mlp_vjp(m.decoder_spec, m.decoder, z, cot);
    benchmark::DoNotOptimize(r.grad_params.v.data());
  }
}
BENCHMARK(BM_MlpVjp);

void BM_SamplePosterior(benchmark::State& state) {
  Rng rng(1);
  GaussianVae m = bench_model(rng);
  std::vector<double> x{0.7, -0.4};
  const int S = static_cast<int>(state.range(0));
  for (auto _ : state) {
    LatentBatch zb = sample_posterior(m, x, S, rng);
    benchmark::DoNotOptimize(zb.z.data());
  }
}
BENCHMARK(BM_SamplePosterior)->Arg(2)->Arg(8);

void BM_Objective(benchmark::State& state) {
  Rng rng(1);
  GaussianVae m = bench_model(rng);
  std::vector<double> x{0.7, -0.4};
  LatentBatch zb = sample_posterior(m, x, static_cast<int>(state.range(1)), rng);
  const ObjectiveKind kind = static_cast<ObjectiveKind>(state.range(0));
  for (auto _ : state) {
    ObjectiveEstimate est = objective_estimate(kind, m, x, zb);
    benchmark::DoNotOptimize(est.grad_decoder.v.data());
  }
}
BENCHMARK(BM_Objective)
    ->ArgNames({"kind", "S"})
    ->Args({static_cast<long>(ObjectiveKind::elbo), 2})
    ->Args({static_cast<long>(ObjectiveKind::m1), 2})
    ->Args({static_cast<long>(ObjectiveKind::m2), 2})
    ->Args({static_cast<long>(ObjectiveKind::m3), 2})
    ->Args({static_cast<long>(ObjectiveKind::joint_fd), 2})
    ->Args({static_cast<long>(ObjectiveKind::m1), 8});

void BM_EncoderKldGrad(benchmark::State& state) {
  Rng rng(1);
  GaussianVae m = bench_model(rng);
  std::vector<double> x{0.7, -0.4};
  LatentBatch zb = sample_posterior(m, x, 2, rng);
  for (auto _ : state) {
    ParamVector g = kld_infer_grad(m, x, zb);
    benchmark::DoNotOptimize(g.v.data());
  }
}
BENCHMARK(BM_EncoderKldGrad);

void BM_BilevelThetaGrad(benchmark::State& state) {
  Rng rng(1);
  GaussianVae m = bench_model(rng);
  std::vector<double> xs(2 * 32);
  rng.normal(xs);
  const int K = static_cast<int>(state.range(0));
  for (auto _ : state) {
    Rng step_rng(7);
    BilevelGrad bg =
        bilevel_theta_grad(m, xs, ObjectiveKind::m2, K, 1e-3, 2, step_rng);
    benchmark::DoNotOptimize(bg.grad_decoder.v.data());
  }
}
BENCHMARK(BM_BilevelThetaGrad)->Arg(1)->Arg(4);

void BM_TestMetrics(benchmark::State& state) {
  Rng rng(1);
  GaussianVae m = bench_model(rng);
  std::vector<double> xs(2 * 200);
  rng.normal(xs);
  for (auto _ : state) {
    Rng ev(11);
    MetricsRecord rec = test_metrics(m, xs, 3, 50, 0, ev);
    benchmark::DoNotOptimize(rec.nll.value);
  }
}
BENCHMARK(BM_TestMetrics);

void BM_GmmFdLossGrads(benchmark::State& state) {
  Rng rng(1);
  GmmFitConfig fc;
  fc.components = 10;
  fc.steps = 1;
  GmmFitResult fit = gmm_fd_fit(toy_posterior_spec(ToyLik::p2), fc, 1);
  ScoreTarget target = toy_target(toy_posterior_spec(ToyLik::p2));
  const int S = 10;
  std::vector<double> z(S * 2), targets(S * 2);
  for (int s = 0; s < S; ++s) {
    std::span<double> row(z.data() + 2 * s, 2);
    fit.mix.sample(rng, row);
    std::vector<double> t = target.score(row);
    targets[2 * s] = t[0];
    targets[2 * s + 1] = t[1];
  }
  for (auto _ : state) {
    GmmGrads g = gmm_fd_loss_grads(fit.mix, z, targets, S);
    benchmark::DoNotOptimize(g.g_means.data());
  }
}
BENCHMARK(BM_GmmFdLossGrads);

}  // namespace

BENCHMARK_MAIN();
