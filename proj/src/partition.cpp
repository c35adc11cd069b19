#include "geogsl/partition.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "geogsl/parallel.hpp"
#include "json.hpp"

namespace geogsl {

namespace {

double sq_dist(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

std::size_t nearest_center(const std::vector<std::vector<double>>& centers,
                           std::span<const double> x) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < centers.size(); ++j) {
    double d = sq_dist(centers[j], x);
    if (d < best_d) {
      best_d = d;
      best = j;
    }
  }
  return best;
}

std::vector<std::vector<double>> kmeanspp_seed(const std::vector<std::vector<double>>& features,
                                               std::size_t k, Rng& rng) {
  std::vector<std::vector<double>> centers;
  centers.reserve(k);
  centers.push_back(features[rng.uniform_index(features.size())]);
  std::vector<double> d2(features.size());
  while (centers.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < features.size(); ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& c : centers) best = std::min(best, sq_dist(c, features[i]));
      d2[i] = best;
      total += best;
    }
    std::size_t pick;
    if (total <= 0.0) {
      pick = rng.uniform_index(features.size());
    } else {
      double u = rng.uniform01() * total;
      double acc = 0.0;
      pick = features.size() - 1;
      for (std::size_t i = 0; i < features.size(); ++i) {
        acc += d2[i];
        if (u < acc) {
          pick = i;
          break;
        }
      }
    }
    centers.push_back(features[pick]);
  }
  return centers;
}

}  // namespace

KmeansResult kmeans(const std::vector<std::vector<double>>& features, std::size_t k,
                    std::size_t max_iters, std::uint64_t rng_seed) {
  if (k < 1) throw std::invalid_argument("kmeans: k must be >= 1");
  if (features.empty()) throw std::invalid_argument("kmeans: feature list is empty");
  if (k > features.size()) {
    std::ostringstream msg;
    msg << "kmeans: k=" << k << " exceeds feature count " << features.size();
    throw std::invalid_argument(msg.str());
  }
  std::size_t dim = features[0].size();
  for (const auto& f : features) {
    if (f.size() != dim) throw std::invalid_argument("kmeans: inconsistent feature dims");
  }

  Rng rng(derive_seed(rng_seed, "kmeans"));
  KmeansResult res;
  res.centers = kmeanspp_seed(features, k, rng);
  res.assignments.assign(features.size(), 0);
  std::vector<std::size_t> prev;

  for (std::size_t iter = 0; iter < std::max<std::size_t>(max_iters, 1); ++iter) {
    for (std::size_t i = 0; i < features.size(); ++i) {
      res.assignments[i] = nearest_center(res.centers, features[i]);
    }

    // Re-seed emptied clusters at the point farthest from the old center.
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t a : res.assignments) counts[a] += 1;
    bool repaired = false;
    for (std::size_t j = 0; j < k; ++j) {
      if (counts[j] != 0) continue;
      std::size_t far = 0;
      double far_d = -1.0;
      for (std::size_t i = 0; i < features.size(); ++i) {
        double d = sq_dist(res.centers[j], features[i]);
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      res.centers[j] = features[far];
      repaired = true;
    }
    if (repaired) {
      for (std::size_t i = 0; i < features.size(); ++i) {
        res.assignments[i] = nearest_center(res.centers, features[i]);
      }
    }

    double inertia = 0.0;
    for (std::size_t i = 0; i < features.size(); ++i) {
      inertia += sq_dist(res.centers[res.assignments[i]], features[i]);
    }
    res.inertia_history.push_back(inertia);
    res.inertia = inertia;

    // Means of the current assignment.
    std::vector<std::vector<double>> sums(k, std::vector<double>(dim, 0.0));
    counts.assign(k, 0);
    for (std::size_t i = 0; i < features.size(); ++i) {
      std::size_t a = res.assignments[i];
      counts[a] += 1;
      for (std::size_t d = 0; d < dim; ++d) sums[a][d] += features[i][d];
    }
    for (std::size_t j = 0; j < k; ++j) {
      if (counts[j] == 0) continue;  // degenerate duplicates; keep the re-seeded center
      for (std::size_t d = 0; d < dim; ++d) {
        res.centers[j][d] = sums[j][d] / static_cast<double>(counts[j]);
      }
    }

    if (res.assignments == prev) break;
    prev = res.assignments;
  }
  // Final inertia against the mean-updated centers.
  double inertia = 0.0;
  for (std::size_t i = 0; i < features.size(); ++i) {
    inertia += sq_dist(res.centers[res.assignments[i]], features[i]);
  }
  res.inertia = inertia;
  return res;
}

std::string feature_mode_name(FeatureMode m) {
  return m == FeatureMode::ae_latent ? "ae_latent" : "backbone";
}

FeatureMode feature_mode_from_name(const std::string& name) {
  if (name == "ae_latent") return FeatureMode::ae_latent;
  if (name == "backbone") return FeatureMode::backbone;
  throw std::invalid_argument("unknown feature mode: " + name);
}

void ClusterModel::validate() const {
  if (centers.empty()) throw std::invalid_argument("ClusterModel: needs at least one center");
  for (const auto& c : centers) {
    if (c.size() != feature_dim) {
      throw std::invalid_argument("ClusterModel: center dim does not match feature_dim");
    }
    for (double v : c) {
      if (!std::isfinite(v)) throw std::invalid_argument("ClusterModel: non-finite center");
    }
  }
}

std::string ClusterModel::to_json() const {
  nlohmann::json j;
  j["centers"] = centers;
  j["feature_mode"] = feature_mode_name(feature_mode);
  j["feature_dim"] = feature_dim;
  return j.dump(2);
}

ClusterModel ClusterModel::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  ClusterModel m;
  m.centers = j.at("centers").get<std::vector<std::vector<double>>>();
  m.feature_mode = feature_mode_from_name(j.at("feature_mode").get<std::string>());
  m.feature_dim = j.at("feature_dim").get<std::size_t>();
  m.validate();
  return m;
}

std::size_t TaskFeaturizer::feature_dim() const {
  if (mode == FeatureMode::ae_latent) {
    if (!ae) throw std::invalid_argument("TaskFeaturizer: ae_latent mode needs an autoencoder");
    return ae->latent_dim;
  }
  if (!backbone) throw std::invalid_argument("TaskFeaturizer: backbone mode needs a backbone");
  return backbone->out_dim();
}

std::vector<double> TaskFeaturizer::operator()(const Task& task) const {
  PointCloud cloud =
      render_object_cloud(task, {0.0, 0.0, task.initial_rotation}, cloud_points, 0);
  if (mode == FeatureMode::ae_latent) {
    if (!ae) throw std::invalid_argument("TaskFeaturizer: ae_latent mode needs an autoencoder");
    return encode(*ae, cloud);
  }
  if (!backbone) throw std::invalid_argument("TaskFeaturizer: backbone mode needs a backbone");
  return set_encode(*backbone, cloud);
}

namespace {

std::vector<std::vector<double>> featurize_all(const std::vector<Task>& tasks,
                                               const TaskFeaturizer& featurizer) {
  std::vector<std::vector<double>> features(tasks.size());
  parallel_for(tasks.size(), [&](std::size_t i) { features[i] = featurizer(tasks[i]); });
  return features;
}

}  // namespace

ClusterModel geo_clustering(const std::vector<Task>& task_sample, const TaskFeaturizer& featurizer,
                            std::size_t n_clu, std::uint64_t rng_seed) {
  if (task_sample.empty()) throw std::invalid_argument("geo_clustering: empty task sample");
  std::vector<std::vector<double>> features = featurize_all(task_sample, featurizer);
  KmeansResult km = kmeans(features, n_clu, 100, rng_seed);
  ClusterModel model;
  model.centers = std::move(km.centers);
  model.feature_mode = featurizer.mode;
  model.feature_dim = featurizer.feature_dim();
  model.validate();
  return model;
}

std::size_t assign_task(const ClusterModel& model, std::span<const double> task_feature) {
  model.validate();
  if (task_feature.size() != model.feature_dim) {
    throw std::invalid_argument("assign_task: feature dim mismatch");
  }
  return nearest_center(model.centers, task_feature);
}

std::string CurriculumLevels::to_json() const {
  nlohmann::json j;
  j["levels"] = levels;
  j["n_sub"] = n_sub;
  j["n_level"] = n_level;
  return j.dump(2);
}

CurriculumLevels CurriculumLevels::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  CurriculumLevels c;
  c.levels = j.at("levels").get<std::vector<std::vector<std::int64_t>>>();
  c.n_sub = j.at("n_sub").get<std::size_t>();
  c.n_level = j.at("n_level").get<std::size_t>();
  return c;
}

CurriculumLevels geo_curriculum_sizes(const std::vector<Task>& train_tasks,
                                      const TaskFeaturizer& featurizer,
                                      const std::vector<std::size_t>& level_sizes,
                                      std::uint64_t rng_seed) {
  if (train_tasks.empty()) throw std::invalid_argument("geo_curriculum: no train tasks");
  std::vector<std::size_t> sizes;
  sizes.push_back(1);
  for (std::size_t s : level_sizes) sizes.push_back(s);
  for (std::size_t l = 1; l < sizes.size(); ++l) {
    if (sizes[l] % sizes[l - 1] != 0 || sizes[l] <= sizes[l - 1]) {
      throw std::invalid_argument(
          "geo_curriculum: each level size must be a proper multiple of the previous");
    }
  }
  if (sizes.back() > train_tasks.size()) {
    throw std::invalid_argument("geo_curriculum: level size exceeds train task count");
  }

  std::vector<std::vector<double>> features = featurize_all(train_tasks, featurizer);
  std::size_t dim = features[0].size();

  CurriculumLevels out;
  out.n_level = sizes.size();
  out.n_sub = sizes.size() >= 2 ? sizes[1] : 0;

  // Level 0: task nearest the global feature mean.
  std::vector<double> mean(dim, 0.0);
  for (const auto& f : features) {
    for (std::size_t d = 0; d < dim; ++d) mean[d] += f[d];
  }
  for (double& v : mean) v /= static_cast<double>(features.size());
  std::size_t center_task = 0;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < features.size(); ++i) {
    double d = sq_dist(mean, features[i]);
    if (d < best) {
      best = d;
      center_task = i;
    }
  }
  out.levels.push_back({train_tasks[center_task].task_id});

  // Recursive splitting on member features.
  std::vector<std::vector<std::size_t>> clusters;
  {
    std::vector<std::size_t> all(train_tasks.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    clusters.push_back(std::move(all));
  }
  for (std::size_t level = 1; level < sizes.size(); ++level) {
    std::size_t branch = sizes[level] / sizes[level - 1];
    std::vector<std::vector<std::size_t>> next_clusters;
    std::vector<std::int64_t> level_ids;
    for (std::size_t c = 0; c < clusters.size(); ++c) {
      const std::vector<std::size_t>& members = clusters[c];
      if (members.size() < branch) {
        std::ostringstream msg;
        msg << "geo_curriculum: cluster " << c << " at level " << level << " has "
            << members.size() << " tasks, needs " << branch;
        throw std::invalid_argument(msg.str());
      }
      std::vector<std::vector<double>> member_features;
      member_features.reserve(members.size());
      for (std::size_t i : members) member_features.push_back(features[i]);
      KmeansResult km = kmeans(member_features, branch, 100,
                               derive_seed(rng_seed, "curriculum-split", level * 131 + c));
      for (std::size_t j = 0; j < branch; ++j) {
        std::vector<std::size_t> sub;
        std::size_t repr = members.size();
        double repr_d = std::numeric_limits<double>::infinity();
        for (std::size_t m = 0; m < members.size(); ++m) {
          if (km.assignments[m] != j) continue;
          sub.push_back(members[m]);
          double d = sq_dist(km.centers[j], member_features[m]);
          if (d < repr_d) {
            repr_d = d;
            repr = members[m];
          }
        }
        if (sub.empty()) {
          std::ostringstream msg;
          msg << "geo_curriculum: sub-cluster " << j << " of cluster " << c << " at level "
              << level << " received no tasks";
          throw std::invalid_argument(msg.str());
        }
        level_ids.push_back(train_tasks[repr].task_id);
        next_clusters.push_back(std::move(sub));
      }
    }
    out.levels.push_back(std::move(level_ids));
    clusters = std::move(next_clusters);
  }

  // Final level: the full training set.
  std::vector<std::int64_t> all_ids;
  all_ids.reserve(train_tasks.size());
  for (const Task& t : train_tasks) all_ids.push_back(t.task_id);
  out.levels.push_back(std::move(all_ids));
  return out;
}

CurriculumLevels geo_curriculum(const std::vector<Task>& train_tasks,
                                const TaskFeaturizer& featurizer, std::size_t n_level,
                                std::size_t n_sub, std::uint64_t rng_seed) {
  if (n_level < 2) throw std::invalid_argument("geo_curriculum: n_level must be >= 2");
  if (n_sub < 2) throw std::invalid_argument("geo_curriculum: n_sub must be >= 2");
  std::vector<std::size_t> sizes;
  std::size_t s = 1;
  for (std::size_t l = 1; l < n_level; ++l) {
    s *= n_sub;
    sizes.push_back(s);
  }
  CurriculumLevels out = geo_curriculum_sizes(train_tasks, featurizer, sizes, rng_seed);
  out.n_sub = n_sub;
  out.n_level = n_level;
  return out;
}

}  // namespace geogsl
