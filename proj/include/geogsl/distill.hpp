#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <unordered_set>
#include <vector>

#include "geogsl/partition.hpp"
#include "geogsl/rl.hpp"

namespace geogsl {

// Per-task teacher pool: a task is labeled by the specialist owning the
// nearest cluster center of its geometry feature.
struct TeacherEnsemble {
  std::vector<PolicyCheckpoint> teachers;
  ClusterModel cluster_model;
  TaskFeaturizer featurizer;

  void validate() const;
  std::size_t teacher_for(const Task& task) const;
};

struct DistillConfig {
  std::size_t buffer_size = 2000;
  std::size_t steps_per_update = 1;
  std::size_t epochs = 5;  // minibatches drawn per update
  double lr = 3e-4;
  double value_coef = 1.0;
  std::size_t batch_size = 256;
  std::size_t num_envs = 16;

  void validate() const;
};

// One student-visited transition with the teacher's label. State-mode
// students store ready observations; vision-mode students store the raw
// robot state and scene cloud so features follow the training backbone.
struct DistillSample {
  std::vector<double> state_obs;
  std::vector<double> next_state_obs;
  std::vector<double> robot_state;
  std::vector<double> next_robot_state;
  PointCloud cloud;
  PointCloud next_cloud;
  std::array<double, kActionDim> teacher_action{};
  double reward = 0.0;
  bool done = false;
};

// FIFO replay buffer with strict oldest-first eviction.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);
  void push(DistillSample sample);
  std::size_t size() const { return samples_.size(); }
  std::size_t capacity() const { return capacity_; }
  const DistillSample& at(std::size_t i) const { return samples_[i]; }

 private:
  std::size_t capacity_;
  std::deque<DistillSample> samples_;
};

struct DistillStats {
  double action_mse = 0.0;  // mean over samples and action dims, bounded space
  double value_mse = 0.0;
  std::size_t buffer_fill = 0;
};

struct DistillOptions {
  std::size_t updates = 0;
  std::uint64_t seed = 0;
  double gamma = 0.96;
  const std::unordered_set<std::int64_t>* forbidden_ids = nullptr;
  std::function<void(std::size_t, const DistillStats&)> on_update;
};

// DAgger-based distillation (actor + critic). The student rolls out its own
// policy; every visited state is labeled with the assigned teacher's
// deterministic action; the critic regresses bootstrapped returns recomputed
// with the student's current critic. Vision-mode students train their
// backbone end to end.
DistillStats dagger_distill(const TeacherEnsemble& teachers, PolicyCheckpoint& student,
                            TaskSampler& sampler, const DistillConfig& cfg,
                            const EnvConfig& env_cfg, const ObsContext& ctx,
                            const DistillOptions& opts);

// Same two-term loss on fixed teacher-generated transitions, never on
// student rollouts.
DistillStats bc_value_distill(const std::vector<DistillSample>& demonstrations,
                              PolicyCheckpoint& student, const DistillConfig& cfg,
                              const DistillOptions& opts);

// Teacher trajectories for bc_value_distill, recorded with deterministic
// teacher actions on their assigned tasks.
std::vector<DistillSample> record_demonstrations(const TeacherEnsemble& teachers,
                                                 TaskSampler& sampler, const DistillConfig& cfg,
                                                 const EnvConfig& env_cfg, const ObsContext& ctx,
                                                 std::size_t n_transitions,
                                                 const DistillOptions& opts);

// State-to-vision distillation: state teachers label their oracle view of
// the timesteps the vision student visits.
DistillStats crossmodal_distill(const TeacherEnsemble& state_teachers,
                                PolicyCheckpoint& vision_student, TaskSampler& sampler,
                                const DistillConfig& cfg, const EnvConfig& env_cfg,
                                const ObsContext& ctx, const DistillOptions& opts);

// Mean squared bounded-action gap between student and its assigned teachers
// on fresh student-driven episodes.
double fresh_rollout_action_mse(const TeacherEnsemble& teachers, const PolicyCheckpoint& student,
                                TaskSampler& sampler, const EnvConfig& env_cfg,
                                const ObsContext& ctx, std::size_t episodes, std::uint64_t seed);

// MSE between the policy's value predictions and GAE returns on fresh
// rollouts of its own policy.
double critic_return_mse(const PolicyCheckpoint& policy, TaskSampler& sampler,
                         const EnvConfig& env_cfg, const ObsContext& ctx, double gamma,
                         double gae_lambda, std::size_t steps, std::uint64_t seed);

}  // namespace geogsl
