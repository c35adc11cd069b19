#include "geogsl/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace geogsl {

void PointCloud::validate() const {
  if (points.empty()) throw std::invalid_argument("PointCloud: must hold at least one point");
  if (!labels.empty() && labels.size() != points.size()) {
    throw std::invalid_argument("PointCloud: label count does not match point count");
  }
  for (const auto& p : points) {
    if (!std::isfinite(p[0]) || !std::isfinite(p[1])) {
      throw std::invalid_argument("PointCloud: non-finite coordinate");
    }
  }
}

namespace {

double sq_dist(const Point2& a, const Point2& b) {
  double dx = a[0] - b[0];
  double dy = a[1] - b[1];
  return dx * dx + dy * dy;
}

std::size_t nearest(const Point2& p, const std::vector<Point2>& pts, double* best_out) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < pts.size(); ++j) {
    double d = sq_dist(p, pts[j]);
    if (d < best_d) {
      best_d = d;
      best = j;
    }
  }
  if (best_out) *best_out = best_d;
  return best;
}

}  // namespace

ChamferMatches chamfer_with_matches(const PointCloud& a, const PointCloud& b) {
  a.validate();
  b.validate();
  ChamferMatches m;
  m.nearest_in_b.resize(a.size());
  m.nearest_in_a.resize(b.size());
  double sum_ab = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double d = 0.0;
    m.nearest_in_b[i] = nearest(a.points[i], b.points, &d);
    sum_ab += d;
  }
  double sum_ba = 0.0;
  for (std::size_t j = 0; j < b.size(); ++j) {
    double d = 0.0;
    m.nearest_in_a[j] = nearest(b.points[j], a.points, &d);
    sum_ba += d;
  }
  m.value = sum_ab / static_cast<double>(a.size()) + sum_ba / static_cast<double>(b.size());
  return m;
}

double chamfer(const PointCloud& a, const PointCloud& b) { return chamfer_with_matches(a, b).value; }

void SetEncoder::validate() const {
  point_spec.validate();
  head_spec.validate();
  if (point_spec.output_dim != head_spec.input_dim) {
    throw std::invalid_argument("SetEncoder: pooled dim does not feed the head");
  }
  if (point_params.size() != point_spec.param_count() ||
      head_params.size() != head_spec.param_count()) {
    throw std::invalid_argument("SetEncoder: parameter count mismatch");
  }
}

SetEncoder make_set_encoder(std::size_t point_input_dim, std::size_t point_hidden,
                            std::size_t pooled_dim, std::size_t out_dim, Rng& rng) {
  SetEncoder enc;
  enc.point_spec = {point_input_dim, {point_hidden}, pooled_dim};
  enc.head_spec = {pooled_dim, {}, out_dim};
  enc.point_params = init_mlp_params(enc.point_spec, rng);
  enc.head_params = init_mlp_params(enc.head_spec, rng);
  return enc;
}

std::vector<double> set_encode(const SetEncoder& enc, const PointCloud& cloud,
                               SetEncodeTape* tape) {
  enc.validate();
  cloud.validate();
  std::size_t in_dim = enc.point_spec.input_dim;
  if (in_dim != 2 && in_dim != 3) {
    throw std::invalid_argument("set_encode: point input dim must be 2 or 3");
  }
  std::size_t pooled_dim = enc.point_spec.output_dim;
  std::vector<double> pooled(pooled_dim, -std::numeric_limits<double>::infinity());
  std::vector<std::size_t> argmax(pooled_dim, 0);
  if (tape) tape->point_tapes.assign(cloud.size(), MlpTape{});

  std::vector<double> in(in_dim);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    in[0] = cloud.points[i][0];
    in[1] = cloud.points[i][1];
    if (in_dim == 3) in[2] = cloud.labels.empty() ? 0.0 : static_cast<double>(cloud.labels[i]);
    MlpTape* pt = tape ? &tape->point_tapes[i] : nullptr;
    std::vector<double> out = mlp_forward(enc.point_spec, enc.point_params, in, pt);
    for (std::size_t c = 0; c < pooled_dim; ++c) {
      if (out[c] > pooled[c]) {
        pooled[c] = out[c];
        argmax[c] = i;
      }
    }
  }
  MlpTape* ht = tape ? &tape->head_tape : nullptr;
  std::vector<double> feature = mlp_forward(enc.head_spec, enc.head_params, pooled, ht);
  if (tape) {
    tape->argmax = std::move(argmax);
    tape->pooled = std::move(pooled);
  }
  return feature;
}

SetEncoderGrad SetEncoderGrad::zeros_like(const SetEncoder& enc) {
  SetEncoderGrad g;
  g.point_params = ParamVector::zeros(enc.point_spec.shapes());
  g.head_params = ParamVector::zeros(enc.head_spec.shapes());
  return g;
}

void SetEncoderGrad::add_scaled(const SetEncoderGrad& other, double s) {
  point_params.add_scaled(other.point_params, s);
  head_params.add_scaled(other.head_params, s);
}

void set_encode_backward(SetEncodeTape& tape, const SetEncoder& enc,
                         std::span<const double> out_grad, SetEncoderGrad& acc) {
  std::vector<double> pooled_grad(enc.head_spec.input_dim, 0.0);
  mlp_backward_accum(tape.head_tape, out_grad, acc.head_params, &pooled_grad);

  // Route each pooled channel's gradient to the winning point, then run one
  // backward pass per point that won at least one channel.
  std::size_t pooled_dim = enc.point_spec.output_dim;
  std::vector<std::vector<double>> per_point;
  std::vector<std::size_t> point_of;
  for (std::size_t c = 0; c < pooled_dim; ++c) {
    if (pooled_grad[c] == 0.0) continue;
    std::size_t i = tape.argmax[c];
    std::size_t slot = point_of.size();
    for (std::size_t k = 0; k < point_of.size(); ++k) {
      if (point_of[k] == i) {
        slot = k;
        break;
      }
    }
    if (slot == point_of.size()) {
      point_of.push_back(i);
      per_point.emplace_back(pooled_dim, 0.0);
    }
    per_point[slot][c] += pooled_grad[c];
  }
  for (std::size_t k = 0; k < point_of.size(); ++k) {
    mlp_backward_accum(tape.point_tapes[point_of[k]], per_point[k], acc.point_params, nullptr);
  }
}

void AutoencoderParams::validate() const {
  encoder.validate();
  decoder_spec.validate();
  if (encoder.out_dim() != latent_dim) {
    throw std::invalid_argument("AutoencoderParams: encoder output is not latent_dim");
  }
  if (decoder_spec.input_dim != latent_dim) {
    throw std::invalid_argument("AutoencoderParams: decoder input is not latent_dim");
  }
  if (decoder_spec.output_dim != 2 * output_point_count) {
    throw std::invalid_argument("AutoencoderParams: decoder output is not 2 * point count");
  }
  if (decoder_params.size() != decoder_spec.param_count()) {
    throw std::invalid_argument("AutoencoderParams: decoder parameter count mismatch");
  }
}

AutoencoderParams make_autoencoder(std::size_t latent_dim, std::size_t output_point_count,
                                   Rng& rng) {
  AutoencoderParams ae;
  ae.encoder = make_set_encoder(2, 64, 64, latent_dim, rng);
  ae.decoder_spec = {latent_dim, {128}, 2 * output_point_count};
  ae.decoder_params = init_mlp_params(ae.decoder_spec, rng);
  ae.latent_dim = latent_dim;
  ae.output_point_count = output_point_count;
  return ae;
}

std::vector<double> encode(const AutoencoderParams& ae, const PointCloud& cloud) {
  ae.validate();
  return set_encode(ae.encoder, cloud);
}

PointCloud decode(const AutoencoderParams& ae, std::span<const double> latent) {
  ae.validate();
  if (latent.size() != ae.latent_dim) {
    throw std::invalid_argument("decode: latent length does not match latent_dim");
  }
  std::vector<double> flat = mlp_forward(ae.decoder_spec, ae.decoder_params, latent);
  PointCloud out;
  out.points.resize(ae.output_point_count);
  for (std::size_t j = 0; j < ae.output_point_count; ++j) {
    out.points[j] = {flat[2 * j], flat[2 * j + 1]};
  }
  return out;
}

double reconstruction_loss(const AutoencoderParams& ae, const PointCloud& cloud) {
  std::vector<double> z = encode(ae, cloud);
  return chamfer(cloud, decode(ae, z));
}

double reconstruction_loss_grad(const AutoencoderParams& ae, const PointCloud& cloud,
                                AeGrads& acc) {
  ae.validate();
  SetEncodeTape enc_tape;
  std::vector<double> z = set_encode(ae.encoder, cloud, &enc_tape);
  MlpTape dec_tape;
  std::vector<double> flat = mlp_forward(ae.decoder_spec, ae.decoder_params, z, &dec_tape);

  PointCloud rec;
  rec.points.resize(ae.output_point_count);
  for (std::size_t j = 0; j < ae.output_point_count; ++j) {
    rec.points[j] = {flat[2 * j], flat[2 * j + 1]};
  }
  ChamferMatches m = chamfer_with_matches(cloud, rec);

  // d chamfer / d reconstructed point, correspondences fixed.
  std::vector<double> flat_grad(flat.size(), 0.0);
  double inv_p = 1.0 / static_cast<double>(cloud.size());
  double inv_q = 1.0 / static_cast<double>(rec.points.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    std::size_t j = m.nearest_in_b[i];
    flat_grad[2 * j] += 2.0 * (rec.points[j][0] - cloud.points[i][0]) * inv_p;
    flat_grad[2 * j + 1] += 2.0 * (rec.points[j][1] - cloud.points[i][1]) * inv_p;
  }
  for (std::size_t j = 0; j < rec.points.size(); ++j) {
    std::size_t i = m.nearest_in_a[j];
    flat_grad[2 * j] += 2.0 * (rec.points[j][0] - cloud.points[i][0]) * inv_q;
    flat_grad[2 * j + 1] += 2.0 * (rec.points[j][1] - cloud.points[i][1]) * inv_q;
  }

  std::vector<double> latent_grad(ae.latent_dim, 0.0);
  mlp_backward_accum(dec_tape, flat_grad, acc.decoder, &latent_grad);
  set_encode_backward(enc_tape, ae.encoder, latent_grad, acc.encoder);
  return m.value;
}

AeTrainResult train_autoencoder(const std::vector<PointCloud>& dataset, std::size_t latent_dim,
                                std::size_t output_point_count, const AeTrainConfig& config) {
  if (dataset.empty()) throw std::invalid_argument("train_autoencoder: dataset is empty");
  Rng rng(derive_seed(config.seed, "ae-init"));
  AeTrainResult result;
  result.params = make_autoencoder(latent_dim, output_point_count, rng);
  AutoencoderParams& ae = result.params;

  AdamState opt_point = AdamState::init(ae.encoder.point_params.size(), config.lr);
  AdamState opt_head = AdamState::init(ae.encoder.head_params.size(), config.lr);
  AdamState opt_dec = AdamState::init(ae.decoder_params.size(), config.lr);

  Rng shuffle_rng(derive_seed(config.seed, "ae-shuffle"));
  std::vector<std::size_t> order(dataset.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    // Fisher-Yates with our own rng for determinism.
    for (std::size_t i = order.size(); i > 1; --i) {
      std::size_t j = shuffle_rng.uniform_index(i);
      std::swap(order[i - 1], order[j]);
    }
    double epoch_loss = 0.0;
    std::size_t cursor = 0;
    while (cursor < order.size()) {
      std::size_t batch = std::min(config.batch_size, order.size() - cursor);
      AeGrads grads{SetEncoderGrad::zeros_like(ae.encoder),
                    ParamVector::zeros(ae.decoder_spec.shapes())};
      double batch_loss = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        batch_loss += reconstruction_loss_grad(ae, dataset[order[cursor + b]], grads);
      }
      epoch_loss += batch_loss;
      double inv = 1.0 / static_cast<double>(batch);
      grads.encoder.point_params.scale(inv);
      grads.encoder.head_params.scale(inv);
      grads.decoder.scale(inv);
      adam_step(ae.encoder.point_params, grads.encoder.point_params, opt_point);
      adam_step(ae.encoder.head_params, grads.encoder.head_params, opt_head);
      adam_step(ae.decoder_params, grads.decoder, opt_dec);
      cursor += batch;
    }
    double mean_loss = epoch_loss / static_cast<double>(dataset.size());
    if (!std::isfinite(mean_loss)) {
      throw std::runtime_error("train_autoencoder: loss diverged at epoch " +
                               std::to_string(epoch));
    }
    result.loss_curve.push_back(mean_loss);
  }
  return result;
}

}  // namespace geogsl
