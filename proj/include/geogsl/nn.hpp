#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "geogsl/rng.hpp"

namespace geogsl {

// Shape of one named parameter block. cols == 0 marks a vector (bias).
struct LayerShape {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t count() const { return cols == 0 ? rows : rows * cols; }
};

// Flat 64-bit float parameter storage with a named shape table.
class ParamVector {
 public:
  std::vector<double> values;
  std::vector<LayerShape> shapes;

  std::size_t size() const { return values.size(); }

  // Offset of block i within `values`.
  std::size_t block_offset(std::size_t i) const;
  std::span<double> block(std::size_t i);
  std::span<const double> block(std::size_t i) const;

  // Name of the block containing flat index `idx`.
  const std::string& block_name_at(std::size_t idx) const;

  // Throws if the shape table and value count disagree or a value is non-finite.
  void validate() const;

  static ParamVector zeros(const std::vector<LayerShape>& shapes);
  static ParamVector zeros_like(const ParamVector& other);

  void fill(double v);
  void add_scaled(const ParamVector& other, double scale);
  double squared_norm() const;
  void scale(double s);
  bool all_finite() const;
};

// Fully connected network: input -> hidden... -> output, ELU on hidden
// layers only, linear output.
struct MlpSpec {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden_dims;
  std::size_t output_dim = 0;

  std::size_t layer_count() const { return hidden_dims.size() + 1; }
  std::size_t layer_in(std::size_t layer) const;
  std::size_t layer_out(std::size_t layer) const;
  std::size_t param_count() const;
  std::vector<LayerShape> shapes(const std::string& prefix = "") const;
  void validate() const;

  bool operator==(const MlpSpec&) const = default;
};

double elu(double z);
double elu_grad(double z);

// Scaled orthogonal-style initialization, seeded. `gains` has one entry per
// layer; if shorter, the last entry is reused.
ParamVector init_mlp_params(const MlpSpec& spec, Rng& rng, std::span<const double> gains);
ParamVector init_mlp_params(const MlpSpec& spec, Rng& rng, double hidden_gain = 1.4142135623730951,
                            double output_gain = 1.0);

// Forward-pass record. Valid for exactly one backward() call and only while
// the (spec, params) it was built from stay alive and unchanged.
struct MlpTape {
  const MlpSpec* spec = nullptr;
  const ParamVector* params = nullptr;
  std::vector<double> input;
  std::vector<std::vector<double>> pre;    // pre-activations, one per layer
  std::vector<std::vector<double>> post;   // activations, post.back() is the output
  bool consumed = false;
};

std::vector<double> mlp_forward(const MlpSpec& spec, const ParamVector& params,
                                std::span<const double> input, MlpTape* tape = nullptr);

struct MlpGrad {
  ParamVector params;
  std::vector<double> input;
};

// Exact reverse-mode gradient of <output_grad, output> w.r.t. parameters and
// input. Marks the tape consumed; a second call on the same tape throws.
MlpGrad mlp_backward(MlpTape& tape, std::span<const double> output_grad);

// Accumulating variant for minibatch losses.
void mlp_backward_accum(MlpTape& tape, std::span<const double> output_grad, ParamVector& param_acc,
                        std::vector<double>* input_grad = nullptr);

struct AdamState {
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  std::int64_t step_count = 0;
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static AdamState init(std::size_t n, double lr);
};

// Standard bias-corrected Adam update, in place. Rejects non-finite gradient
// entries naming the offending parameter block.
void adam_step(ParamVector& params, const ParamVector& grad, AdamState& state);

// Max over parameters of |analytic - central difference| /
// max(1e-8, |analytic| + |numeric|). `loss` must be a pure function of the
// parameter values; `analytic` is the gradient at the current point.
double finite_diff_check(ParamVector& params, const std::function<double()>& loss,
                         const ParamVector& analytic, double eps);

}  // namespace geogsl
