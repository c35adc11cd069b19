#pragma once

#include <array>
#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include "geogsl/env.hpp"
#include "geogsl/geometry.hpp"
#include "geogsl/nn.hpp"
#include "geogsl/partition.hpp"

namespace geogsl {

constexpr std::size_t kActionDim = 4;
constexpr std::size_t kGripperStateDim = 8;  // pose + per-step velocity
constexpr std::size_t kObjectStateDim = 6;   // pose + per-step velocity

enum class ObsMode { state, vision };
std::string obs_mode_name(ObsMode m);
ObsMode obs_mode_from_name(const std::string& name);

// Actor-critic parameters plus the bounded-Gaussian noise scale. Vision-mode
// policies carry their own point-cloud backbone.
struct PolicyCheckpoint {
  MlpSpec actor_spec;
  MlpSpec critic_spec;
  ParamVector actor;
  ParamVector critic;
  std::vector<double> log_std;  // per action dim
  ObsMode obs_mode = ObsMode::state;
  std::optional<SetEncoder> backbone;

  std::size_t obs_dim() const { return actor_spec.input_dim; }
  void validate() const;
};

struct PpoConfig {
  double gamma = 0.96;        // discount factor
  double gae_lambda = 0.95;   // GAE parameter
  double clip_range = 0.2;    // PPO clip range
  double entropy_coef = 0.0;  // entropy coefficient
  double value_coef = 1.0;    // value loss coefficient
  double lr = 3e-4;           // learning rate
  double desired_kl = 0.16;   // adaptive-lr target
  double max_grad_norm = 1.0;
  std::size_t rollout_steps = 8;
  std::size_t epochs = 5;       // learning epochs
  std::size_t minibatches = 4;  // batches per agent
  std::size_t num_envs = 16;
  double init_noise_std = 0.8;
  double obs_clip = 5.0;
  std::vector<std::size_t> hidden_dims = {64, 64};

  void validate() const;
};

// Inputs needed to turn an EnvState into a policy observation.
struct ObsContext {
  const AutoencoderParams* ae = nullptr;  // state mode: frozen first-frame encoder
  const EnvConfig* env_cfg = nullptr;
  double obs_clip = 5.0;
};

// State mode: gripper pose+velocity, object pose+velocity, first-frame
// latent. Vision mode: gripper pose+velocity, backbone feature of the
// current scene cloud. All components clipped to +-obs_clip.
std::vector<double> build_observation(const PolicyCheckpoint& policy, const EnvState& state,
                                      const ObsContext& ctx,
                                      const std::vector<double>& first_frame_latent);

PolicyCheckpoint make_state_policy(std::size_t latent_dim, const PpoConfig& cfg, Rng& rng);
PolicyCheckpoint make_vision_policy(SetEncoder backbone, const PpoConfig& cfg, Rng& rng);

struct ActionSample {
  std::array<double, kActionDim> action;    // tanh-bounded
  std::array<double, kActionDim> pre_tanh;  // Gaussian draw before bounding
  std::array<double, kActionDim> mean;      // actor output
  double log_prob = 0.0;
};

ActionSample sample_action(const PolicyCheckpoint& policy, std::span<const double> obs, Rng& rng);
std::array<double, kActionDim> deterministic_action(const PolicyCheckpoint& policy,
                                                    std::span<const double> obs);

// log pi(a|s) of a stored pre-tanh draw under (mean, log_std), including the
// tanh change-of-variables term.
double bounded_gaussian_log_prob(const std::array<double, kActionDim>& pre_tanh,
                                 std::span<const double> mean, std::span<const double> log_std);

// ---------------------------------------------------------------------------
// Task sampling
// ---------------------------------------------------------------------------

class TaskSampler {
 public:
  virtual ~TaskSampler() = default;
  virtual Task next(Rng& rng) = 0;
};

class FixedSetSampler final : public TaskSampler {
 public:
  explicit FixedSetSampler(std::vector<Task> tasks);
  Task next(Rng& rng) override;

 private:
  std::vector<Task> tasks_;
};

// Ids of tasks generated on the fly (never part of a persisted split) carry
// this bit so they cannot collide with corpus ids.
constexpr std::int64_t kStreamTaskBit = std::int64_t{1} << 62;

// Draws a training shape uniformly and redraws its initial rotation, the
// online analog of sampling fresh tasks from the task space.
class RotationStreamSampler final : public TaskSampler {
 public:
  explicit RotationStreamSampler(std::vector<Task> base_tasks);
  Task next(Rng& rng) override;

 private:
  std::vector<Task> base_;
};

// Restricts a base sampler to tasks routed to one specialist.
class ClusterFilterSampler final : public TaskSampler {
 public:
  ClusterFilterSampler(TaskSampler& base, const ClusterModel& model,
                       const TaskFeaturizer& featurizer, std::size_t cluster_index);
  Task next(Rng& rng) override;

 private:
  TaskSampler& base_;
  const ClusterModel& model_;
  const TaskFeaturizer& featurizer_;
  std::size_t index_;
};

// Routes tasks to a fixed number of bins by task id hash, ignoring geometry.
// Used by the random-assignment ablation.
class HashFilterSampler final : public TaskSampler {
 public:
  HashFilterSampler(TaskSampler& base, std::size_t n_bins, std::size_t bin,
                    std::uint64_t salt);
  Task next(Rng& rng) override;
  static std::size_t bin_of(std::int64_t task_id, std::size_t n_bins, std::uint64_t salt);

 private:
  TaskSampler& base_;
  std::size_t n_bins_;
  std::size_t bin_;
  std::uint64_t salt_;
};

// ---------------------------------------------------------------------------
// Environment pool and rollouts
// ---------------------------------------------------------------------------

struct EnvSlot {
  EnvState state;
  std::vector<double> latent;  // first-frame AE latent, state mode
  double episode_return = 0.0;
  Rng action_rng;
  Rng task_rng;

  EnvSlot() : action_rng(0), task_rng(0) {}
};

class EnvPool {
 public:
  EnvPool(const EnvConfig& env_cfg, const ObsContext& ctx, TaskSampler& sampler,
          std::size_t n_envs, std::uint64_t seed,
          const std::unordered_set<std::int64_t>* forbidden_ids = nullptr);

  void reset_slot(std::size_t i);
  std::size_t size() const { return slots_.size(); }
  EnvSlot& slot(std::size_t i) { return slots_[i]; }
  const EnvConfig& env_config() const { return env_cfg_; }
  const ObsContext& obs_context() const { return ctx_; }
  std::size_t episodes_started() const { return episodes_started_; }

 private:
  EnvConfig env_cfg_;
  ObsContext ctx_;
  TaskSampler* sampler_;
  std::vector<EnvSlot> slots_;
  const std::unordered_set<std::int64_t>* forbidden_ids_;
  std::atomic<std::size_t> episodes_started_{0};  // reset_slot may run per-slot in parallel
};

struct RolloutBatch {
  std::size_t n_envs = 0;
  std::size_t n_steps = 0;
  std::size_t obs_dim = 0;

  std::vector<double> observations;  // row (e * n_steps + t)
  std::vector<std::array<double, kActionDim>> actions;
  std::vector<std::array<double, kActionDim>> pre_tanh;
  std::vector<std::array<double, kActionDim>> old_means;
  std::array<double, kActionDim> old_log_std{};
  std::vector<double> log_probs;
  std::vector<double> rewards;
  std::vector<double> values;
  std::vector<std::uint8_t> dones;
  std::vector<double> bootstrap_values;  // per env
  std::vector<double> advantages;
  std::vector<double> returns;

  std::vector<double> finished_returns;
  std::vector<std::uint8_t> finished_successes;

  std::size_t rows() const { return n_envs * n_steps; }
  std::size_t index(std::size_t e, std::size_t t) const { return e * n_steps + t; }
  std::span<const double> obs_row(std::size_t row) const {
    return {observations.data() + row * obs_dim, obs_dim};
  }
};

RolloutBatch collect_rollouts(const PolicyCheckpoint& policy, EnvPool& pool, std::size_t steps);

// Fills advantages (raw GAE) and returns; normalization happens inside
// ppo_update so these match the textbook recursion exactly.
void compute_gae(RolloutBatch& batch, double gamma, double lambda);

struct PpoOptimizer {
  AdamState actor;
  AdamState critic;
  AdamState log_std;
  double lr = 3e-4;  // adapted between minibatches

  static PpoOptimizer init(const PolicyCheckpoint& policy, double lr);
};

struct PpoStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double kl = 0.0;
  double lr = 0.0;
  double mean_return = 0.0;
  double success_rate = 0.0;
  std::size_t episodes = 0;
};

// Clipped-surrogate PPO epoch loop with KL-adaptive learning rate. Restores
// the incoming policy and throws on non-finite loss.
PpoStats ppo_update(PolicyCheckpoint& policy, PpoOptimizer& opt, RolloutBatch& batch,
                    const PpoConfig& cfg, Rng& rng);

struct TrainPolicyOptions {
  std::size_t updates = 0;
  std::uint64_t seed = 0;
  const std::unordered_set<std::int64_t>* forbidden_ids = nullptr;
  std::function<void(std::size_t, const PpoStats&)> on_update;
};

void train_policy_ppo(PolicyCheckpoint& policy, const PpoConfig& cfg, const EnvConfig& env_cfg,
                      const ObsContext& ctx, TaskSampler& sampler,
                      const TrainPolicyOptions& options);

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct EvalOptions {
  std::size_t episodes_per_task = 4;
  bool deterministic = true;
  bool redraw_rotations = true;
  std::uint64_t seed = 0;
};

double evaluate(const PolicyCheckpoint& policy, const std::vector<Task>& tasks,
                const EnvConfig& env_cfg, const ObsContext& ctx, const EvalOptions& opts);

using Controller = std::function<std::array<double, kActionDim>(const EnvState&)>;

double evaluate_controller(const Controller& controller, const std::vector<Task>& tasks,
                           const EnvConfig& env_cfg, const EvalOptions& opts);

}  // namespace geogsl
