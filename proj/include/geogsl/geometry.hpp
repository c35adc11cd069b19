#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "geogsl/nn.hpp"
#include "geogsl/rng.hpp"

namespace geogsl {

using Point2 = std::array<double, 2>;

// Unordered 2-D point set with optional per-point segment labels
// (0 = object, 1 = gripper). Labels are either empty or one per point.
struct PointCloud {
  std::vector<Point2> points;
  std::vector<std::uint8_t> labels;

  std::size_t size() const { return points.size(); }
  void validate() const;
};

// Symmetric mean of squared nearest-neighbor distances.
double chamfer(const PointCloud& a, const PointCloud& b);

// Chamfer value plus the nearest-neighbor matches used, for gradients that
// hold the correspondences fixed within one step.
struct ChamferMatches {
  double value = 0.0;
  std::vector<std::size_t> nearest_in_b;  // per point of a
  std::vector<std::size_t> nearest_in_a;  // per point of b
};
ChamferMatches chamfer_with_matches(const PointCloud& a, const PointCloud& b);

// Permutation-invariant set encoder: per-point MLP, max pool, head MLP.
// point_spec.input_dim of 2 consumes coordinates only; 3 appends the segment
// label as a third channel.
struct SetEncoder {
  MlpSpec point_spec;
  MlpSpec head_spec;
  ParamVector point_params;
  ParamVector head_params;

  std::size_t out_dim() const { return head_spec.output_dim; }
  void validate() const;
};

SetEncoder make_set_encoder(std::size_t point_input_dim, std::size_t point_hidden,
                            std::size_t pooled_dim, std::size_t out_dim, Rng& rng);

struct SetEncodeTape {
  std::vector<MlpTape> point_tapes;
  std::vector<std::size_t> argmax;  // winning point per pooled channel
  std::vector<double> pooled;
  MlpTape head_tape;
};

std::vector<double> set_encode(const SetEncoder& enc, const PointCloud& cloud,
                               SetEncodeTape* tape = nullptr);

struct SetEncoderGrad {
  ParamVector point_params;
  ParamVector head_params;

  static SetEncoderGrad zeros_like(const SetEncoder& enc);
  void add_scaled(const SetEncoderGrad& other, double s);
};

// Accumulates gradients of <out_grad, feature> into `acc`. Max-pool routes
// each channel's gradient to its winning point.
void set_encode_backward(SetEncodeTape& tape, const SetEncoder& enc,
                         std::span<const double> out_grad, SetEncoderGrad& acc);

// Point-cloud autoencoder: SetEncoder to a latent code, MLP decoder back to
// a fixed-cardinality cloud.
struct AutoencoderParams {
  SetEncoder encoder;
  MlpSpec decoder_spec;
  ParamVector decoder_params;
  std::size_t latent_dim = 0;
  std::size_t output_point_count = 0;

  void validate() const;
};

AutoencoderParams make_autoencoder(std::size_t latent_dim, std::size_t output_point_count,
                                   Rng& rng);

std::vector<double> encode(const AutoencoderParams& ae, const PointCloud& cloud);
PointCloud decode(const AutoencoderParams& ae, std::span<const double> latent);

// Reconstruction loss for one cloud: chamfer(P, decode(encode(P))).
double reconstruction_loss(const AutoencoderParams& ae, const PointCloud& cloud);

struct AeGrads {
  SetEncoderGrad encoder;
  ParamVector decoder;
};

// Loss value plus gradients w.r.t. all autoencoder parameters, with the
// Chamfer correspondences and pooling argmax held fixed.
double reconstruction_loss_grad(const AutoencoderParams& ae, const PointCloud& cloud,
                                AeGrads& acc);

struct AeTrainConfig {
  std::size_t epochs = 60;
  std::size_t batch_size = 16;
  double lr = 1e-3;
  std::uint64_t seed = 0;
};

struct AeTrainResult {
  AutoencoderParams params;
  std::vector<double> loss_curve;  // mean reconstruction loss per epoch
};

AeTrainResult train_autoencoder(const std::vector<PointCloud>& dataset, std::size_t latent_dim,
                                std::size_t output_point_count, const AeTrainConfig& config);

}  // namespace geogsl
