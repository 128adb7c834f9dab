#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vsm/common.hpp"
#include "vsm/rng.hpp"

namespace vsm {

enum class Activation { relu, tanh, softplus };

Activation activation_from_string(std::string_view s);
const char* to_string(Activation a);

// Fully-connected net: widths = [d_in, hidden..., d_out]. Hidden layers use
// the configured activation; the output layer is linear.
struct MlpSpec {
  std::vector<int> widths;
  Activation act = Activation::relu;

  int input_dim() const { return widths.front(); }
  int output_dim() const { return widths.back(); }
  int num_affine() const { return static_cast<int>(widths.size()) - 1; }
  void validate() const;  // throws std::invalid_argument
};

// Flat parameter block. Per affine layer, in order: weight matrix W
// (rows = out, cols = in, row-major), then bias (out entries).
struct ParamVector {
  std::vector<double> v;

  ParamVector() = default;
  explicit ParamVector(std::size_t n) : v(n, 0.0) {}
  std::size_t size() const { return v.size(); }
  bool empty() const { return v.empty(); }
  double& operator[](std::size_t i) { return v[i]; }
  double operator[](std::size_t i) const { return v[i]; }
  double* data() { return v.data(); }
  const double* data() const { return v.data(); }
  std::span<double> span() { return v; }
  std::span<const double> span() const { return v; }
};

std::size_t param_count(const MlpSpec& spec);

// Glorot-uniform weights (+-sqrt(6/(fan_in+fan_out))), zero biases.
ParamVector init_params(const MlpSpec& spec, Rng& rng);

std::vector<double> mlp_forward(const MlpSpec& spec, const ParamVector& params,
                                std::span<const double> input);

struct MlpVjpResult {
  std::vector<double> output;
  ParamVector grad_params;        // d(cot . f(x)) / d params
  std::vector<double> grad_input; // d(cot . f(x)) / d x
};
MlpVjpResult mlp_vjp(const MlpSpec& spec, const ParamVector& params,
                     std::span<const double> input,
                     std::span<const double> cotangent);
// Variant that derives the cotangent from the freshly computed output, so
// callers needing cot = h(f(x)) pay for a single forward pass.
MlpVjpResult mlp_vjp(const MlpSpec& spec, const ParamVector& params,
                     std::span<const double> input,
                     const std::function<void(std::span<const double> output,
                                              std::span<double> cot)>& make_cot);

struct MlpJvpResult {
  std::vector<double> output;
  std::vector<double> output_tangent;  // J_x(f) . tangent
};
MlpJvpResult mlp_jvp(const MlpSpec& spec, const ParamVector& params,
                     std::span<const double> input,
                     std::span<const double> tangent);

// Second-order building block: differentiate the linearized evaluation.
// Let t(x, p) = J_x(f) . dx + J_p(f) . dp  be the joint directional
// derivative of the net in input direction dx and parameter direction dp
// (either may be omitted). This returns the value and gradient w.r.t.
// (params, input) of the scalar
//     cot_primal . f(x)  +  cot_tangent . t(x, p),
// holding dx, dp, and both cotangents fixed. With cot_tangent = 0 it reduces
// to a plain VJP; with cot_primal = 0 and dx set, grad_input is the
// Hessian-vector product of (cot_tangent . f) in direction dx.
struct MlpJvpGradResult {
  std::vector<double> output;
  std::vector<double> output_tangent;
  ParamVector grad_params;
  std::vector<double> grad_input;
};
MlpJvpGradResult mlp_jvp_grad(const MlpSpec& spec, const ParamVector& params,
                              std::span<const double> input,
                              std::span<const double> input_tangent,   // may be empty
                              const ParamVector* param_tangent,        // may be null
                              std::span<const double> cot_primal,      // may be empty
                              std::span<const double> cot_tangent);    // may be empty
// Variant deriving both cotangents from (output, output_tangent).
MlpJvpGradResult mlp_jvp_grad(
    const MlpSpec& spec, const ParamVector& params, std::span<const double> input,
    std::span<const double> input_tangent, const ParamVector* param_tangent,
    const std::function<void(std::span<const double> output,
                             std::span<const double> output_tangent,
                             std::span<double> cot_primal,
                             std::span<double> cot_tangent)>& make_cots);

// --- optimizers -----------------------------------------------------------

enum class OptimizerKind { sgd, adam };

OptimizerKind optimizer_from_string(std::string_view s);
const char* to_string(OptimizerKind k);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::sgd;
  double step_size = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct OptimizerState {
  OptimizerConfig cfg;
  std::vector<double> m, v;  // adam moments (empty for sgd)
  long t = 0;                // adam step counter
};

OptimizerState make_optimizer(const OptimizerConfig& cfg, std::size_t dim);

// In-place descent step. Throws divergence_error if the gradient contains
// non-finite entries, std::invalid_argument on a dimension mismatch.
void optimizer_step(OptimizerState& st, std::span<double> params,
                    std::span<const double> grad);

}  // namespace vsm
