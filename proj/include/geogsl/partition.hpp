#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "geogsl/env.hpp"
#include "geogsl/geometry.hpp"

namespace geogsl {

enum class FeatureMode { ae_latent, backbone };

std::string feature_mode_name(FeatureMode m);
FeatureMode feature_mode_from_name(const std::string& name);

struct KmeansResult {
  std::vector<std::vector<double>> centers;
  std::vector<std::size_t> assignments;
  double inertia = 0.0;
  std::vector<double> inertia_history;  // one entry per Lloyd assignment pass
};

// Lloyd's algorithm with k-means++ seeding. Nearest-center ties break toward
// the lowest index; an emptied cluster is re-seeded at the point farthest
// from its former center.
KmeansResult kmeans(const std::vector<std::vector<double>>& features, std::size_t k,
                    std::size_t max_iters, std::uint64_t rng_seed);

struct ClusterModel {
  std::vector<std::vector<double>> centers;
  FeatureMode feature_mode = FeatureMode::ae_latent;
  std::size_t feature_dim = 0;

  void validate() const;
  std::string to_json() const;
  static ClusterModel from_json(const std::string& text);
};

// Maps a task to the feature vector used for clustering and assignment:
// the configured encoder applied to the task's first-frame object cloud.
struct TaskFeaturizer {
  FeatureMode mode = FeatureMode::ae_latent;
  const AutoencoderParams* ae = nullptr;
  const SetEncoder* backbone = nullptr;
  std::size_t cloud_points = 64;

  std::size_t feature_dim() const;
  std::vector<double> operator()(const Task& task) const;
};

ClusterModel geo_clustering(const std::vector<Task>& task_sample, const TaskFeaturizer& featurizer,
                            std::size_t n_clu, std::uint64_t rng_seed);

// Index of the nearest center under squared Euclidean distance; ties break
// toward the lowest index.
std::size_t assign_task(const ClusterModel& model, std::span<const double> task_feature);

struct CurriculumLevels {
  std::vector<std::vector<std::int64_t>> levels;  // task ids, level 0 .. n_level
  std::size_t n_sub = 0;
  std::size_t n_level = 0;

  std::string to_json() const;
  static CurriculumLevels from_json(const std::string& text);
};

// Hierarchical curriculum: level 0 is the task nearest the global feature
// mean; level l splits each level l-1 cluster into n_sub sub-clusters and
// picks each sub-cluster's nearest task; the last level is the full set.
CurriculumLevels geo_curriculum(const std::vector<Task>& train_tasks,
                                const TaskFeaturizer& featurizer, std::size_t n_level,
                                std::size_t n_sub, std::uint64_t rng_seed);

// Same construction from explicit level sizes (|C_1|, ..., |C_{n-1}|); the
// per-level branching is derived from consecutive size ratios.
CurriculumLevels geo_curriculum_sizes(const std::vector<Task>& train_tasks,
                                      const TaskFeaturizer& featurizer,
                                      const std::vector<std::size_t>& level_sizes,
                                      std::uint64_t rng_seed);

}  // namespace geogsl
