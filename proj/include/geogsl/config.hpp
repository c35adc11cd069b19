#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "geogsl/distill.hpp"
#include "geogsl/env.hpp"
#include "geogsl/rl.hpp"

#include "json.hpp"

namespace geogsl {

// Configuration problem with the JSON path of the offending field.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string field, const std::string& what)
      : std::runtime_error(field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

struct CorpusConfig {
  std::vector<std::string> families = {"ellipse", "polygon", "star"};
  std::string held_out_family = "star";
  std::size_t n_train = 96;
  std::size_t n_unseen_object = 32;
  std::size_t n_unseen_family = 32;
  std::uint64_t seed = 0;
};

struct AeSection {
  std::size_t latent_dim = 16;
  std::size_t output_points = 64;
  std::size_t epochs = 30;
  std::size_t batch_size = 16;
  double lr = 1e-3;
  std::size_t dataset_size = 256;
  std::uint64_t seed = 0;
};

struct CurriculumSection {
  std::size_t n_level = 3;
  std::size_t n_sub = 4;
  std::vector<std::size_t> level_sizes;  // optional explicit override of the n_sub^l law
  std::uint64_t seed = 0;
};

struct EnvSection {
  int episode_length = 200;  // paper: episode length 200
  int cloud_points = 64;
  double w_r = 0.5;        // paper: omega_r 0.5
  double w_l = 0.1;        // paper: omega_l 0.1
  double w_m = 2.0;        // paper: omega_m 2
  double w_b = 10.0;       // paper: omega_b 10
  double lambda_f1 = 0.1;  // fingertip-sum threshold (artifact choice)
  double lambda_0 = 0.05;  // success threshold (artifact choice)
};

struct IgslSection {
  std::size_t n_clu = 4;  // paper runs 20 clusters at full scale
  double saturation_threshold = 0.005;  // paper: saturation threshold 0.005
  std::size_t max_iterations = 3;
  std::size_t max_iterations_vision = 2;
  std::size_t n_sample = 2000;  // paper samples ~270,000
  std::uint64_t seed = 0;
};

struct BackboneSection {
  std::size_t feature_dim = 16;
  std::size_t point_hidden = 32;
  std::size_t pooled_dim = 32;
};

struct BudgetSection {
  std::size_t curriculum_updates_per_level = 400;
  std::size_t specialist_updates = 250;
  std::size_t dagger_updates = 500;
  std::size_t crossmodal_updates = 700;
  std::size_t vision_specialist_updates = 150;
  std::size_t vision_dagger_updates = 400;
  std::size_t eval_episodes_per_task = 4;
  std::size_t history_eval_episodes = 2;
  std::size_t metrics_every = 10;
};

struct RunConfig {
  std::uint64_t seed = 1;
  std::string out_dir = "runs/default";
  CorpusConfig corpus;
  AeSection ae;
  CurriculumSection curriculum;
  PpoConfig rl;
  EnvSection env;
  DistillConfig distill;
  IgslSection igsl;
  BackboneSection backbone;
  BudgetSection budget;

  // Fills section seeds not given explicitly by deriving them from `seed`.
  void finalize_seeds();
  void validate() const;
  EnvConfig env_config() const;

  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig from_file(const std::string& path);
};

// Distillation rollout phase uses the rl env count; kept in sync here.
DistillConfig distill_config_of(const RunConfig& cfg);

}  // namespace geogsl
