#include "geogsl/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace geogsl {

std::size_t ParamVector::block_offset(std::size_t i) const {
  std::size_t off = 0;
  for (std::size_t k = 0; k < i; ++k) off += shapes[k].count();
  return off;
}

std::span<double> ParamVector::block(std::size_t i) {
  return {values.data() + block_offset(i), shapes[i].count()};
}

std::span<const double> ParamVector::block(std::size_t i) const {
  return {values.data() + block_offset(i), shapes[i].count()};
}

const std::string& ParamVector::block_name_at(std::size_t idx) const {
  std::size_t off = 0;
  for (const auto& s : shapes) {
    off += s.count();
    if (idx < off) return s.name;
  }
  throw std::out_of_range("ParamVector: index past end of shape table");
}

void ParamVector::validate() const {
  std::size_t total = 0;
  for (const auto& s : shapes) total += s.count();
  if (total != values.size()) {
    std::ostringstream msg;
    msg << "ParamVector: shape table covers " << total << " values but " << values.size()
        << " are stored";
    throw std::invalid_argument(msg.str());
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw std::invalid_argument("ParamVector: non-finite value in block " + block_name_at(i));
    }
  }
}

ParamVector ParamVector::zeros(const std::vector<LayerShape>& shapes) {
  ParamVector p;
  p.shapes = shapes;
  std::size_t total = 0;
  for (const auto& s : shapes) total += s.count();
  p.values.assign(total, 0.0);
  return p;
}

ParamVector ParamVector::zeros_like(const ParamVector& other) { return zeros(other.shapes); }

void ParamVector::fill(double v) { std::fill(values.begin(), values.end(), v); }

void ParamVector::add_scaled(const ParamVector& other, double scale) {
  if (other.values.size() != values.size()) {
    throw std::invalid_argument("ParamVector::add_scaled: size mismatch");
  }
  for (std::size_t i = 0; i < values.size(); ++i) values[i] += scale * other.values[i];
}

double ParamVector::squared_norm() const {
  double s = 0.0;
  for (double v : values) s += v * v;
  return s;
}

void ParamVector::scale(double s) {
  for (double& v : values) v *= s;
}

bool ParamVector::all_finite() const {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

std::size_t MlpSpec::layer_in(std::size_t layer) const {
  return layer == 0 ? input_dim : hidden_dims[layer - 1];
}

std::size_t MlpSpec::layer_out(std::size_t layer) const {
  return layer == hidden_dims.size() ? output_dim : hidden_dims[layer];
}

std::size_t MlpSpec::param_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < layer_count(); ++l) n += layer_out(l) * (layer_in(l) + 1);
  return n;
}

std::vector<LayerShape> MlpSpec::shapes(const std::string& prefix) const {
  std::vector<LayerShape> out;
  for (std::size_t l = 0; l < layer_count(); ++l) {
    std::string base = prefix + "layer" + std::to_string(l);
    out.push_back({base + ".weight", layer_out(l), layer_in(l)});
    out.push_back({base + ".bias", layer_out(l), 0});
  }
  return out;
}

void MlpSpec::validate() const {
  if (input_dim < 1 || output_dim < 1) {
    throw std::invalid_argument("MlpSpec: input and output dims must be >= 1");
  }
  for (std::size_t h : hidden_dims) {
    if (h < 1) throw std::invalid_argument("MlpSpec: hidden dims must be >= 1");
  }
}

double elu(double z) { return z > 0.0 ? z : std::expm1(z); }
double elu_grad(double z) { return z > 0.0 ? 1.0 : std::exp(z); }

namespace {

// Gram-Schmidt orthonormalization of the rows of an out x in matrix (or of
// the columns when out > in), then scaled by `gain`.
void orthogonal_fill(std::span<double> w, std::size_t rows, std::size_t cols, double gain,
                     Rng& rng) {
  for (double& v : w) v = rng.normal();
  bool wide = rows <= cols;
  std::size_t n_vec = wide ? rows : cols;
  std::size_t dim = wide ? cols : rows;
  auto at = [&](std::size_t v, std::size_t d) -> double& {
    return wide ? w[v * cols + d] : w[d * cols + v];
  };
  for (std::size_t v = 0; v < n_vec; ++v) {
    for (std::size_t u = 0; u < v; ++u) {
      double dot = 0.0;
      for (std::size_t d = 0; d < dim; ++d) dot += at(v, d) * at(u, d);
      for (std::size_t d = 0; d < dim; ++d) at(v, d) -= dot * at(u, d);
    }
    double norm = 0.0;
    for (std::size_t d = 0; d < dim; ++d) norm += at(v, d) * at(v, d);
    norm = std::sqrt(norm);
    if (norm < 1e-12) norm = 1.0;  // degenerate draw, keep direction
    for (std::size_t d = 0; d < dim; ++d) at(v, d) /= norm;
  }
  for (double& v : w) v *= gain;
}

}  // namespace

ParamVector init_mlp_params(const MlpSpec& spec, Rng& rng, std::span<const double> gains) {
  spec.validate();
  if (gains.empty()) throw std::invalid_argument("init_mlp_params: need at least one gain");
  ParamVector p = ParamVector::zeros(spec.shapes());
  for (std::size_t l = 0; l < spec.layer_count(); ++l) {
    double gain = gains[std::min(l, gains.size() - 1)];
    orthogonal_fill(p.block(2 * l), spec.layer_out(l), spec.layer_in(l), gain, rng);
    // biases stay zero
  }
  return p;
}

ParamVector init_mlp_params(const MlpSpec& spec, Rng& rng, double hidden_gain, double output_gain) {
  std::vector<double> gains(spec.layer_count(), hidden_gain);
  gains.back() = output_gain;
  return init_mlp_params(spec, rng, gains);
}

std::vector<double> mlp_forward(const MlpSpec& spec, const ParamVector& params,
                                std::span<const double> input, MlpTape* tape) {
  spec.validate();
  if (input.size() != spec.input_dim) {
    std::ostringstream msg;
    msg << "mlp_forward: input length " << input.size() << " does not match input_dim "
        << spec.input_dim;
    throw std::invalid_argument(msg.str());
  }
  if (params.size() != spec.param_count()) {
    std::ostringstream msg;
    msg << "mlp_forward: params hold " << params.size() << " values, spec needs "
        << spec.param_count();
    throw std::invalid_argument(msg.str());
  }

  if (tape) {
    tape->spec = &spec;
    tape->params = &params;
    tape->input.assign(input.begin(), input.end());
    tape->pre.clear();
    tape->post.clear();
    tape->consumed = false;
  }

  std::vector<double> act(input.begin(), input.end());
  const double* p = params.values.data();
  for (std::size_t l = 0; l < spec.layer_count(); ++l) {
    std::size_t in = spec.layer_in(l);
    std::size_t out = spec.layer_out(l);
    const double* w = p;
    const double* b = p + in * out;
    p += out * (in + 1);

    std::vector<double> z(out);
    for (std::size_t r = 0; r < out; ++r) {
      double s = b[r];
      const double* wr = w + r * in;
      for (std::size_t c = 0; c < in; ++c) s += wr[c] * act[c];
      z[r] = s;
    }
    bool last = (l + 1 == spec.layer_count());
    std::vector<double> a(out);
    for (std::size_t r = 0; r < out; ++r) a[r] = last ? z[r] : elu(z[r]);
    if (tape) {
      tape->pre.push_back(z);
      tape->post.push_back(a);
    }
    act = std::move(a);
  }
  return act;
}

void mlp_backward_accum(MlpTape& tape, std::span<const double> output_grad, ParamVector& param_acc,
                        std::vector<double>* input_grad) {
  if (!tape.spec || tape.consumed) {
    throw std::runtime_error("mlp_backward: tape already consumed or never filled");
  }
  const MlpSpec& spec = *tape.spec;
  const ParamVector& params = *tape.params;
  if (output_grad.size() != spec.output_dim) {
    throw std::invalid_argument("mlp_backward: output gradient length mismatch");
  }
  if (param_acc.size() != spec.param_count()) {
    throw std::invalid_argument("mlp_backward: accumulator size mismatch");
  }
  tape.consumed = true;

  std::vector<double> delta(output_grad.begin(), output_grad.end());
  for (std::size_t l = spec.layer_count(); l-- > 0;) {
    std::size_t in = spec.layer_in(l);
    std::size_t out = spec.layer_out(l);
    bool last = (l + 1 == spec.layer_count());

    if (!last) {
      const std::vector<double>& z = tape.pre[l];
      for (std::size_t r = 0; r < out; ++r) delta[r] *= elu_grad(z[r]);
    }

    std::size_t offset = 0;
    for (std::size_t k = 0; k < l; ++k) {
      offset += spec.layer_out(k) * (spec.layer_in(k) + 1);
    }
    const std::vector<double>& below = (l == 0) ? tape.input : tape.post[l - 1];
    double* gw = param_acc.values.data() + offset;
    double* gb = gw + in * out;
    const double* w = params.values.data() + offset;

    for (std::size_t r = 0; r < out; ++r) {
      double d = delta[r];
      gb[r] += d;
      double* gwr = gw + r * in;
      for (std::size_t c = 0; c < in; ++c) gwr[c] += d * below[c];
    }

    std::vector<double> next(in, 0.0);
    for (std::size_t r = 0; r < out; ++r) {
      double d = delta[r];
      const double* wr = w + r * in;
      for (std::size_t c = 0; c < in; ++c) next[c] += d * wr[c];
    }
    delta = std::move(next);
  }
  if (input_grad) {
    if (input_grad->size() != spec.input_dim) input_grad->assign(spec.input_dim, 0.0);
    for (std::size_t i = 0; i < spec.input_dim; ++i) (*input_grad)[i] += delta[i];
  }
}

MlpGrad mlp_backward(MlpTape& tape, std::span<const double> output_grad) {
  if (!tape.spec) throw std::runtime_error("mlp_backward: empty tape");
  MlpGrad g;
  g.params = ParamVector::zeros(tape.spec->shapes());
  g.input.assign(tape.spec->input_dim, 0.0);
  std::vector<double> in_grad(tape.spec->input_dim, 0.0);
  mlp_backward_accum(tape, output_grad, g.params, &in_grad);
  g.input = std::move(in_grad);
  return g;
}

AdamState AdamState::init(std::size_t n, double lr) {
  AdamState s;
  s.first_moment.assign(n, 0.0);
  s.second_moment.assign(n, 0.0);
  s.lr = lr;
  return s;
}

void adam_step(ParamVector& params, const ParamVector& grad, AdamState& state) {
  if (grad.values.size() != params.values.size() ||
      state.first_moment.size() != params.values.size()) {
    throw std::invalid_argument("adam_step: length mismatch");
  }
  if (!(state.beta1 > 0.0 && state.beta1 < 1.0 && state.beta2 > 0.0 && state.beta2 < 1.0)) {
    throw std::invalid_argument("adam_step: betas must lie in (0, 1)");
  }
  for (std::size_t i = 0; i < grad.values.size(); ++i) {
    if (!std::isfinite(grad.values[i])) {
      throw std::runtime_error("adam_step: non-finite gradient in block " +
                               params.block_name_at(i));
    }
  }
  state.step_count += 1;
  double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step_count));
  double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step_count));
  for (std::size_t i = 0; i < params.values.size(); ++i) {
    double g = grad.values[i];
    state.first_moment[i] = state.beta1 * state.first_moment[i] + (1.0 - state.beta1) * g;
    state.second_moment[i] = state.beta2 * state.second_moment[i] + (1.0 - state.beta2) * g * g;
    double m_hat = state.first_moment[i] / bc1;
    double v_hat = state.second_moment[i] / bc2;
    params.values[i] -= state.lr * m_hat / (std::sqrt(v_hat) + state.epsilon);
  }
}

double finite_diff_check(ParamVector& params, const std::function<double()>& loss,
                         const ParamVector& analytic, double eps) {
  if (eps <= 0.0) throw std::invalid_argument("finite_diff_check: eps must be positive");
  if (analytic.values.size() != params.values.size()) {
    throw std::invalid_argument("finite_diff_check: gradient length mismatch");
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < params.values.size(); ++i) {
    double saved = params.values[i];
    params.values[i] = saved + eps;
    double up = loss();
    params.values[i] = saved - eps;
    double down = loss();
    params.values[i] = saved;
    double numeric = (up - down) / (2.0 * eps);
    double a = analytic.values[i];
    double rel = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
    worst = std::max(worst, rel);
  }
  return worst;
}

}  // namespace geogsl
