#include "vsm/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace vsm {
namespace {

double act_eval(Activation a, double x) {
  switch (a) {
    case Activation::relu: return x > 0.0 ? x : 0.0;
    case Activation::tanh: return std::tanh(x);
    case Activation::softplus:
      if (x > 30.0) return x;
      if (x < -30.0) return std::exp(x);
      return std::log1p(std::exp(x));
  }
  return 0.0;
}

// First derivative, given pre-activation x.
double act_deriv(Activation a, double x) {
  switch (a) {
    case Activation::relu: return x > 0.0 ? 1.0 : 0.0;
    case Activation::tanh: {
      const double t = std::tanh(x);
      return 1.0 - t * t;
    }
    case Activation::softplus: return 1.0 / (1.0 + std::exp(-x));
  }
  return 0.0;
}

double act_second(Activation a, double x) {
  switch (a) {
    case Activation::relu: return 0.0;
    case Activation::tanh: {
      const double t = std::tanh(x);
      return -2.0 * t * (1.0 - t * t);
    }
    case Activation::softplus: {
      const double s = 1.0 / (1.0 + std::exp(-x));
      return s * (1.0 - s);
    }
  }
  return 0.0;
}

// Offset of layer l's weight block; bias follows its weights.
std::size_t layer_offset(const MlpSpec& spec, int l) {
  std::size_t off = 0;
  for (int k = 0; k < l; ++k)
    off += static_cast<std::size_t>(spec.widths[k + 1]) * (spec.widths[k] + 1);
  return off;
}

// Per-call scratch holding the forward pass: pre-activations a[l] and
// post-activations h[l] (h[0] = input copy, h[L] = output).
struct Forward {
  std::vector<std::vector<double>> a, h;
};

void run_forward(const MlpSpec& spec, const ParamVector& p,
                 std::span<const double> x, Forward& f) {
  const int L = spec.num_affine();
  f.a.assign(L, {});
  f.h.assign(L + 1, {});
  f.h[0].assign(x.begin(), x.end());
  std::size_t off = 0;
  for (int l = 0; l < L; ++l) {
    const int in = spec.widths[l], out = spec.widths[l + 1];
    const double* W = p.data() + off;
    const double* b = W + static_cast<std::size_t>(out) * in;
    f.a[l].resize(out);
    const double* hp = f.h[l].data();
    for (int r = 0; r < out; ++r) {
      const double* wr = W + static_cast<std::size_t>(r) * in;
      double s = b[r];
      for (int c = 0; c < in; ++c) s += wr[c] * hp[c];
      f.a[l][r] = s;
    }
    f.h[l + 1].resize(out);
    if (l + 1 == L) {
      f.h[l + 1] = f.a[l];  // linear output layer
    } else {
      for (int r = 0; r < out; ++r) f.h[l + 1][r] = act_eval(spec.act, f.a[l][r]);
    }
    off += static_cast<std::size_t>(out) * (in + 1);
  }
}

}  // namespace

Activation activation_from_string(std::string_view s) {
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  if (s == "softplus") return Activation::softplus;
  throw std::invalid_argument("unknown activation: " + std::string(s));
}

const char* to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    case Activation::softplus: return "softplus";
  }
  return "?";
}

OptimizerKind optimizer_from_string(std::string_view s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  throw std::invalid_argument("unknown optimizer: " + std::string(s));
}

const char* to_string(OptimizerKind k) {
  return k == OptimizerKind::sgd ? "sgd" : "adam";
}

void MlpSpec::validate() const {
  if (widths.size() < 2)
    throw std::invalid_argument("MlpSpec: need at least input and output widths");
  for (int w : widths)
    if (w <= 0) throw std::invalid_argument("MlpSpec: widths must be positive");
}

std::size_t param_count(const MlpSpec& spec) {
  spec.validate();
  return layer_offset(spec, spec.num_affine());
}

ParamVector init_params(const MlpSpec& spec, Rng& rng) {
  ParamVector p(param_count(spec));
  std::size_t off = 0;
  for (int l = 0; l < spec.num_affine(); ++l) {
    const int in = spec.widths[l], out = spec.widths[l + 1];
    const double lim = std::sqrt(6.0 / (in + out));
    for (int i = 0; i < out * in; ++i) p[off + i] = rng.uniform(-lim, lim);
    off += static_cast<std::size_t>(out) * (in + 1);  // biases stay zero
  }
  return p;
}

std::vector<double> mlp_forward(const MlpSpec& spec, const ParamVector& params,
                                std::span<const double> input) {
  if (static_cast<int>(input.size()) != spec.input_dim())
    throw std::invalid_argument("mlp_forward: input size mismatch");
  if (params.size() != param_count(spec))
    throw std::invalid_argument("mlp_forward: param size mismatch");
  Forward f;
  run_forward(spec, params, input, f);
  return std::move(f.h.back());
}

namespace {

MlpVjpResult vjp_backward(const MlpSpec& spec, const ParamVector& params,
                          Forward& f, std::span<const double> cotangent) {
  const int L = spec.num_affine();
  MlpVjpResult res;
  res.output = f.h.back();
  res.grad_params = ParamVector(params.size());

  std::vector<double> d(cotangent.begin(), cotangent.end());  // adjoint of a[l]
  std::vector<double> dprev;
  for (int l = L - 1; l >= 0; --l) {
    const int in = spec.widths[l], out = spec.widths[l + 1];
    const std::size_t off = layer_offset(spec, l);
    double* gW = res.grad_params.data() + off;
    double* gb = gW + static_cast<std::size_t>(out) * in;
    const double* hp = f.h[l].data();
    const double* W = params.data() + off;
    dprev.assign(in, 0.0);
    for (int r = 0; r < out; ++r) {
      const double dr = d[r];
      gb[r] += dr;
      double* gwr = gW + static_cast<std::size_t>(r) * in;
      const double* wr = W + static_cast<std::size_t>(r) * in;
      for (int c = 0; c < in; ++c) {
        gwr[c] += dr * hp[c];
        dprev[c] += wr[c] * dr;
      }
    }
    if (l > 0) {
      for (int c = 0; c < in; ++c)
        dprev[c] *= act_deriv(spec.act, f.a[l - 1][c]);
    }
    d.swap(dprev);
  }
  res.grad_input = std::move(d);
  return res;
}

void check_vjp_args(const MlpSpec& spec, const ParamVector& params,
                    std::span<const double> input) {
  if (static_cast<int>(input.size()) != spec.input_dim())
    throw std::invalid_argument("mlp_vjp: input size mismatch");
  if (params.size() != param_count(spec))
    throw std::invalid_argument("mlp_vjp: param size mismatch");
}

}  // namespace

MlpVjpResult mlp_vjp(const MlpSpec& spec, const ParamVector& params,
                     std::span<const double> input,
                     std::span<const double> cotangent) {
  check_vjp_args(spec, params, input);
  if (static_cast<int>(cotangent.size()) != spec.output_dim())
    throw std::invalid_argument("mlp_vjp: cotangent size mismatch");
  Forward f;
  run_forward(spec, params, input, f);
  return vjp_backward(spec, params, f, cotangent);
}

MlpVjpResult mlp_vjp(const MlpSpec& spec, const ParamVector& params,
                     std::span<const double> input,
                     const std::function<void(std::span<const double>,
                                              std::span<double>)>& make_cot) {
  check_vjp_args(spec, params, input);
  Forward f;
  run_forward(spec, params, input, f);
  std::vector<double> cot(spec.output_dim(), 0.0);
  make_cot(f.h.back(), cot);
  return vjp_backward(spec, params, f, cot);
}

MlpJvpResult mlp_jvp(const MlpSpec& spec, const ParamVector& params,
                     std::span<const double> input,
                     std::span<const double> tangent) {
  if (input.size() != tangent.size() ||
      static_cast<int>(input.size()) != spec.input_dim())
    throw std::invalid_argument("mlp_jvp: size mismatch");
  if (params.size() != param_count(spec))
    throw std::invalid_argument("mlp_jvp: param size mismatch");

  const int L = spec.num_affine();
  std::vector<double> h(input.begin(), input.end());
  std::vector<double> ht(tangent.begin(), tangent.end());
  std::vector<double> a, at;
  std::size_t off = 0;
  for (int l = 0; l < L; ++l) {
    const int in = spec.widths[l], out = spec.widths[l + 1];
    const double* W = params.data() + off;
    const double* b = W + static_cast<std::size_t>(out) * in;
    a.assign(out, 0.0);
    at.assign(out, 0.0);
    for (int r = 0; r < out; ++r) {
      const double* wr = W + static_cast<std::size_t>(r) * in;
      double s = b[r], st = 0.0;
      for (int c = 0; c < in; ++c) {
        s += wr[c] * h[c];
        st += wr[c] * ht[c];
      }
      a[r] = s;
      at[r] = st;
    }
    if (l + 1 == L) {
      h = a;
      ht = at;
    } else {
      h.resize(out);
      ht.resize(out);
      for (int r = 0; r < out; ++r) {
        h[r] = act_eval(spec.act, a[r]);
        ht[r] = act_deriv(spec.act, a[r]) * at[r];
      }
    }
    off += static_cast<std::size_t>(out) * (in + 1);
  }
  return {std::move(h), std::move(ht)};
}

namespace {

// Forward pass with joint (input, param) tangents: h/ht post-activation,
// a/at pre-activation.
struct ForwardTangent {
  std::vector<std::vector<double>> hs, hts, as, ats;
};

void check_jvp_grad_args(const MlpSpec& spec, const ParamVector& params,
                         std::span<const double> input,
                         std::span<const double> input_tangent,
                         const ParamVector* param_tangent) {
  if (static_cast<int>(input.size()) != spec.input_dim())
    throw std::invalid_argument("mlp_jvp_grad: input size mismatch");
  if (!input_tangent.empty() && input_tangent.size() != input.size())
    throw std::invalid_argument("mlp_jvp_grad: input tangent size mismatch");
  if (param_tangent && param_tangent->size() != params.size())
    throw std::invalid_argument("mlp_jvp_grad: param tangent size mismatch");
  if (params.size() != param_count(spec))
    throw std::invalid_argument("mlp_jvp_grad: param size mismatch");
}

void run_forward_tangent(const MlpSpec& spec, const ParamVector& params,
                         std::span<const double> input,
                         std::span<const double> input_tangent,
                         const ParamVector* param_tangent, ForwardTangent& f) {
  const int L = spec.num_affine();
  f.hs.assign(L + 1, {});
  f.hts.assign(L + 1, {});
  f.as.assign(L, {});
  f.ats.assign(L, {});
  f.hs[0].assign(input.begin(), input.end());
  f.hts[0].assign(input.size(), 0.0);
  if (!input_tangent.empty())
    std::copy(input_tangent.begin(), input_tangent.end(), f.hts[0].begin());
  std::size_t off = 0;
  for (int l = 0; l < L; ++l) {
    const int in = spec.widths[l], out = spec.widths[l + 1];
    const double* W = params.data() + off;
    const double* b = W + static_cast<std::size_t>(out) * in;
    const double* Wt = param_tangent ? param_tangent->data() + off : nullptr;
    const double* bt = Wt ? Wt + static_cast<std::size_t>(out) * in : nullptr;
    f.as[l].resize(out);
    f.ats[l].resize(out);
    for (int r = 0; r < out; ++r) {
      const double* wr = W + static_cast<std::size_t>(r) * in;
      double s = b[r], st = bt ? bt[r] : 0.0;
      const double* wtr = Wt ? Wt + static_cast<std::size_t>(r) * in : nullptr;
      for (int c = 0; c < in; ++c) {
        s += wr[c] * f.hs[l][c];
        st += wr[c] * f.hts[l][c];
        if (wtr) st += wtr[c] * f.hs[l][c];
      }
      f.as[l][r] = s;
      f.ats[l][r] = st;
    }
    f.hs[l + 1].resize(out);
    f.hts[l + 1].resize(out);
    if (l + 1 == L) {
      f.hs[l + 1] = f.as[l];
      f.hts[l + 1] = f.ats[l];
    } else {
      for (int r = 0; r < out; ++r) {
        f.hs[l + 1][r] = act_eval(spec.act, f.as[l][r]);
        f.hts[l + 1][r] = act_deriv(spec.act, f.as[l][r]) * f.ats[l][r];
      }
    }
    off += static_cast<std::size_t>(out) * (in + 1);
  }
}

// Reverse pass over the augmented (value, tangent) computation. r is the
// adjoint of a[l], rt the adjoint of at[l]. Tangent directions are held
// fixed; gradients accrue to params and input only.
MlpJvpGradResult jvp_grad_backward(const MlpSpec& spec, const ParamVector& params,
                                   const ParamVector* param_tangent,
                                   ForwardTangent& f,
                                   std::span<const double> cot_primal,
                                   std::span<const double> cot_tangent) {
  const int L = spec.num_affine();
  const int dout = spec.output_dim();
  MlpJvpGradResult res;
  res.output = f.hs[L];
  res.output_tangent = f.hts[L];
  res.grad_params = ParamVector(params.size());

  std::vector<double> r(dout, 0.0), rt(dout, 0.0);
  if (!cot_primal.empty()) std::copy(cot_primal.begin(), cot_primal.end(), r.begin());
  if (!cot_tangent.empty()) std::copy(cot_tangent.begin(), cot_tangent.end(), rt.begin());
  std::vector<double> rprev, rtprev;
  for (int l = L - 1; l >= 0; --l) {
    const int in = spec.widths[l], out = spec.widths[l + 1];
    const std::size_t loff = layer_offset(spec, l);
    const double* W = params.data() + loff;
    const double* Wt = param_tangent ? param_tangent->data() + loff : nullptr;
    double* gW = res.grad_params.data() + loff;
    double* gb = gW + static_cast<std::size_t>(out) * in;
    rprev.assign(in, 0.0);
    rtprev.assign(in, 0.0);
    for (int rr = 0; rr < out; ++rr) {
      const double ar = r[rr], art = rt[rr];
      gb[rr] += ar;
      double* gwr = gW + static_cast<std::size_t>(rr) * in;
      const double* wr = W + static_cast<std::size_t>(rr) * in;
      const double* wtr = Wt ? Wt + static_cast<std::size_t>(rr) * in : nullptr;
      const double* hp = f.hs[l].data();
      const double* htp = f.hts[l].data();
      for (int c = 0; c < in; ++c) {
        gwr[c] += ar * hp[c] + art * htp[c];
        rprev[c] += wr[c] * ar;
        rtprev[c] += wr[c] * art;
        if (wtr) rprev[c] += wtr[c] * art;
      }
    }
    if (l > 0) {
      // Through h = act(a), ht = act'(a) * at:
      //   adj(a) = act'(a) * adj(h) + act''(a) * at * adj(ht)
      //   adj(at) = act'(a) * adj(ht)
      for (int c = 0; c < in; ++c) {
        const double ac = f.as[l - 1][c];
        const double d1 = act_deriv(spec.act, ac);
        const double d2 = act_second(spec.act, ac);
        const double adj_h = rprev[c], adj_ht = rtprev[c];
        rprev[c] = d1 * adj_h + d2 * f.ats[l - 1][c] * adj_ht;
        rtprev[c] = d1 * adj_ht;
      }
    }
    r.swap(rprev);
    rt.swap(rtprev);
  }
  res.grad_input = std::move(r);  // adjoint of h[0] = input
  return res;
}

}  // namespace

MlpJvpGradResult mlp_jvp_grad(const MlpSpec& spec, const ParamVector& params,
                              std::span<const double> input,
                              std::span<const double> input_tangent,
                              const ParamVector* param_tangent,
                              std::span<const double> cot_primal,
                              std::span<const double> cot_tangent) {
  check_jvp_grad_args(spec, params, input, input_tangent, param_tangent);
  const int dout = spec.output_dim();
  if (!cot_primal.empty() && static_cast<int>(cot_primal.size()) != dout)
    throw std::invalid_argument("mlp_jvp_grad: cot_primal size mismatch");
  if (!cot_tangent.empty() && static_cast<int>(cot_tangent.size()) != dout)
    throw std::invalid_argument("mlp_jvp_grad: cot_tangent size mismatch");
  ForwardTangent f;
  run_forward_tangent(spec, params, input, input_tangent, param_tangent, f);
  return jvp_grad_backward(spec, params, param_tangent, f, cot_primal, cot_tangent);
}

MlpJvpGradResult mlp_jvp_grad(
    const MlpSpec& spec, const ParamVector& params, std::span<const double> input,
    std::span<const double> input_tangent, const ParamVector* param_tangent,
    const std::function<void(std::span<const double>, std::span<const double>,
                             std::span<double>, std::span<double>)>& make_cots) {
  check_jvp_grad_args(spec, params, input, input_tangent, param_tangent);
  ForwardTangent f;
  run_forward_tangent(spec, params, input, input_tangent, param_tangent, f);
  const int L = spec.num_affine();
  std::vector<double> cp(spec.output_dim(), 0.0), ct(spec.output_dim(), 0.0);
  make_cots(f.hs[L], f.hts[L], cp, ct);
  return jvp_grad_backward(spec, params, param_tangent, f, cp, ct);
}

OptimizerState make_optimizer(const OptimizerConfig& cfg, std::size_t dim) {
  OptimizerState st;
  st.cfg = cfg;
  if (cfg.kind == OptimizerKind::adam) {
    st.m.assign(dim, 0.0);
    st.v.assign(dim, 0.0);
  }
  return st;
}

void optimizer_step(OptimizerState& st, std::span<double> params,
                    std::span<const double> grad) {
  if (params.size() != grad.size())
    throw std::invalid_argument("optimizer_step: size mismatch");
  if (st.cfg.kind == OptimizerKind::adam && st.m.size() != params.size())
    throw std::invalid_argument("optimizer_step: state size mismatch");
  if (!all_finite(grad))
    throw divergence_error("optimizer_step: non-finite gradient");

  if (st.cfg.kind == OptimizerKind::sgd) {
    for (std::size_t i = 0; i < params.size(); ++i)
      params[i] -= st.cfg.step_size * grad[i];
    return;
  }
  ++st.t;
  const double b1 = st.cfg.beta1, b2 = st.cfg.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(st.t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(st.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    st.m[i] = b1 * st.m[i] + (1.0 - b1) * grad[i];
    st.v[i] = b2 * st.v[i] + (1.0 - b2) * grad[i] * grad[i];
    const double mh = st.m[i] / c1;
    const double vh = st.v[i] / c2;
    params[i] -= st.cfg.step_size * mh / (std::sqrt(vh) + st.cfg.eps);
  }
}

}  // namespace vsm
