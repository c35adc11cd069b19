#include "geogsl/rl.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "geogsl/parallel.hpp"

namespace geogsl {

namespace {

constexpr double kHalfLog2Pi = 0.9189385332046727;  // 0.5 * log(2*pi)

double clip(double v, double lo, double hi) { return std::min(hi, std::max(lo, v)); }

// log(1 - tanh(u)^2) without cancellation.
double log_one_minus_tanh_sq(double u) {
  return 2.0 * (std::log(2.0) - u - std::log1p(std::exp(-2.0 * u)));
}

}  // namespace

std::string obs_mode_name(ObsMode m) { return m == ObsMode::state ? "state" : "vision"; }

ObsMode obs_mode_from_name(const std::string& name) {
  if (name == "state") return ObsMode::state;
  if (name == "vision") return ObsMode::vision;
  throw std::invalid_argument("unknown obs mode: " + name);
}

void PolicyCheckpoint::validate() const {
  actor_spec.validate();
  critic_spec.validate();
  if (actor_spec.output_dim != kActionDim) {
    throw std::invalid_argument("PolicyCheckpoint: actor output dim must equal the action dim");
  }
  if (critic_spec.output_dim != 1) {
    throw std::invalid_argument("PolicyCheckpoint: critic output dim must be 1");
  }
  if (actor_spec.input_dim != critic_spec.input_dim) {
    throw std::invalid_argument("PolicyCheckpoint: actor and critic observe different dims");
  }
  if (log_std.size() != kActionDim) {
    throw std::invalid_argument("PolicyCheckpoint: log_std size must equal the action dim");
  }
  if (obs_mode == ObsMode::vision && !backbone.has_value()) {
    throw std::invalid_argument("PolicyCheckpoint: vision mode requires a backbone");
  }
  actor.validate();
  critic.validate();
}

void PpoConfig::validate() const {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw std::invalid_argument("PpoConfig: gamma in (0, 1]");
  if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) {
    throw std::invalid_argument("PpoConfig: gae_lambda in [0, 1]");
  }
  if (clip_range <= 0.0) throw std::invalid_argument("PpoConfig: clip_range must be positive");
  if (rollout_steps < 1 || epochs < 1 || minibatches < 1 || num_envs < 1) {
    throw std::invalid_argument("PpoConfig: counts must be >= 1");
  }
}

std::vector<double> build_observation(const PolicyCheckpoint& policy, const EnvState& state,
                                      const ObsContext& ctx,
                                      const std::vector<double>& first_frame_latent) {
  std::vector<double> obs;
  obs.reserve(policy.obs_dim());
  for (double v : state.gripper_pose) obs.push_back(v);
  for (double v : state.gripper_velocity) obs.push_back(v);
  if (policy.obs_mode == ObsMode::state) {
    for (double v : state.object_pose) obs.push_back(v);
    for (double v : state.object_velocity) obs.push_back(v);
    obs.insert(obs.end(), first_frame_latent.begin(), first_frame_latent.end());
  } else {
    if (!ctx.env_cfg) throw std::invalid_argument("build_observation: vision mode needs env cfg");
    PointCloud cloud = render_pointcloud(state, *ctx.env_cfg,
                                         static_cast<std::size_t>(ctx.env_cfg->cloud_points));
    std::vector<double> feature = set_encode(*policy.backbone, cloud);
    obs.insert(obs.end(), feature.begin(), feature.end());
  }
  if (obs.size() != policy.obs_dim()) {
    std::ostringstream msg;
    msg << "build_observation: built " << obs.size() << " dims, policy expects "
        << policy.obs_dim();
    throw std::invalid_argument(msg.str());
  }
  for (double& v : obs) v = clip(v, -ctx.obs_clip, ctx.obs_clip);
  return obs;
}

PolicyCheckpoint make_state_policy(std::size_t latent_dim, const PpoConfig& cfg, Rng& rng) {
  PolicyCheckpoint p;
  std::size_t obs_dim = kGripperStateDim + kObjectStateDim + latent_dim;
  p.actor_spec = {obs_dim, cfg.hidden_dims, kActionDim};
  p.critic_spec = {obs_dim, cfg.hidden_dims, 1};
  std::vector<double> actor_gains(p.actor_spec.layer_count(), std::sqrt(2.0));
  actor_gains.back() = 0.1;  // small initial action means
  p.actor = init_mlp_params(p.actor_spec, rng, actor_gains);
  p.critic = init_mlp_params(p.critic_spec, rng);
  p.log_std.assign(kActionDim, std::log(cfg.init_noise_std));
  p.obs_mode = ObsMode::state;
  return p;
}

PolicyCheckpoint make_vision_policy(SetEncoder backbone, const PpoConfig& cfg, Rng& rng) {
  PolicyCheckpoint p;
  std::size_t obs_dim = kGripperStateDim + backbone.out_dim();
  p.actor_spec = {obs_dim, cfg.hidden_dims, kActionDim};
  p.critic_spec = {obs_dim, cfg.hidden_dims, 1};
  std::vector<double> actor_gains(p.actor_spec.layer_count(), std::sqrt(2.0));
  actor_gains.back() = 0.1;
  p.actor = init_mlp_params(p.actor_spec, rng, actor_gains);
  p.critic = init_mlp_params(p.critic_spec, rng);
  p.log_std.assign(kActionDim, std::log(cfg.init_noise_std));
  p.obs_mode = ObsMode::vision;
  p.backbone = std::move(backbone);
  return p;
}

double bounded_gaussian_log_prob(const std::array<double, kActionDim>& pre_tanh,
                                 std::span<const double> mean, std::span<const double> log_std) {
  double lp = 0.0;
  for (std::size_t i = 0; i < kActionDim; ++i) {
    double sigma = std::exp(log_std[i]);
    double z = (pre_tanh[i] - mean[i]) / sigma;
    lp += -0.5 * z * z - log_std[i] - kHalfLog2Pi;
    lp -= log_one_minus_tanh_sq(pre_tanh[i]);
  }
  return lp;
}

ActionSample sample_action(const PolicyCheckpoint& policy, std::span<const double> obs, Rng& rng) {
  ActionSample s;
  std::vector<double> mean = mlp_forward(policy.actor_spec, policy.actor, obs);
  for (double m : mean) {
    if (!std::isfinite(m)) throw std::runtime_error("sample_action: non-finite actor output");
  }
  for (std::size_t i = 0; i < kActionDim; ++i) {
    double sigma = std::exp(policy.log_std[i]);
    s.mean[i] = mean[i];
    s.pre_tanh[i] = mean[i] + sigma * rng.normal();
    s.action[i] = std::tanh(s.pre_tanh[i]);
  }
  s.log_prob = bounded_gaussian_log_prob(s.pre_tanh, mean, policy.log_std);
  return s;
}

std::array<double, kActionDim> deterministic_action(const PolicyCheckpoint& policy,
                                                    std::span<const double> obs) {
  std::vector<double> mean = mlp_forward(policy.actor_spec, policy.actor, obs);
  std::array<double, kActionDim> a{};
  for (std::size_t i = 0; i < kActionDim; ++i) {
    if (!std::isfinite(mean[i])) {
      throw std::runtime_error("deterministic_action: non-finite actor output");
    }
    a[i] = std::tanh(mean[i]);
  }
  return a;
}

// ---------------------------------------------------------------------------
// Task samplers
// ---------------------------------------------------------------------------

FixedSetSampler::FixedSetSampler(std::vector<Task> tasks) : tasks_(std::move(tasks)) {
  if (tasks_.empty()) throw std::invalid_argument("FixedSetSampler: empty task set");
}

Task FixedSetSampler::next(Rng& rng) { return tasks_[rng.uniform_index(tasks_.size())]; }

RotationStreamSampler::RotationStreamSampler(std::vector<Task> base_tasks)
    : base_(std::move(base_tasks)) {
  if (base_.empty()) throw std::invalid_argument("RotationStreamSampler: empty base set");
}

Task RotationStreamSampler::next(Rng& rng) {
  Task t = base_[rng.uniform_index(base_.size())];
  t.initial_rotation = rng.uniform(0.0, 2.0 * M_PI);
  if (t.initial_rotation >= 2.0 * M_PI) t.initial_rotation = 0.0;
  t.task_id = kStreamTaskBit | static_cast<std::int64_t>(rng.bits() >> 2);
  return t;
}

ClusterFilterSampler::ClusterFilterSampler(TaskSampler& base, const ClusterModel& model,
                                           const TaskFeaturizer& featurizer,
                                           std::size_t cluster_index)
    : base_(base), model_(model), featurizer_(featurizer), index_(cluster_index) {
  if (cluster_index >= model.centers.size()) {
    throw std::invalid_argument("ClusterFilterSampler: cluster index out of range");
  }
}

Task ClusterFilterSampler::next(Rng& rng) {
  for (int attempt = 0; attempt < 10000; ++attempt) {
    Task t = base_.next(rng);
    std::vector<double> f = featurizer_(t);
    if (assign_task(model_, f) == index_) return t;
  }
  throw std::runtime_error("ClusterFilterSampler: cluster " + std::to_string(index_) +
                           " received no tasks in 10000 draws");
}

HashFilterSampler::HashFilterSampler(TaskSampler& base, std::size_t n_bins, std::size_t bin,
                                     std::uint64_t salt)
    : base_(base), n_bins_(n_bins), bin_(bin), salt_(salt) {
  if (bin >= n_bins) throw std::invalid_argument("HashFilterSampler: bin out of range");
}

std::size_t HashFilterSampler::bin_of(std::int64_t task_id, std::size_t n_bins,
                                      std::uint64_t salt) {
  return static_cast<std::size_t>(mix_seed(static_cast<std::uint64_t>(task_id), salt) % n_bins);
}

Task HashFilterSampler::next(Rng& rng) {
  for (int attempt = 0; attempt < 10000; ++attempt) {
    Task t = base_.next(rng);
    if (bin_of(t.task_id, n_bins_, salt_) == bin_) return t;
  }
  throw std::runtime_error("HashFilterSampler: bin starved");
}

// ---------------------------------------------------------------------------
// Environment pool
// ---------------------------------------------------------------------------

EnvPool::EnvPool(const EnvConfig& env_cfg, const ObsContext& ctx, TaskSampler& sampler,
                 std::size_t n_envs, std::uint64_t seed,
                 const std::unordered_set<std::int64_t>* forbidden_ids)
    : env_cfg_(env_cfg), ctx_(ctx), sampler_(&sampler), forbidden_ids_(forbidden_ids) {
  if (n_envs < 1) throw std::invalid_argument("EnvPool: need at least one environment");
  ctx_.env_cfg = &env_cfg_;
  slots_.resize(n_envs);
  for (std::size_t i = 0; i < n_envs; ++i) {
    slots_[i].action_rng = Rng(derive_seed(seed, "env-action", i));
    slots_[i].task_rng = Rng(derive_seed(seed, "env-task", i));
    reset_slot(i);
  }
}

void EnvPool::reset_slot(std::size_t i) {
  EnvSlot& slot = slots_[i];
  Task task = sampler_->next(slot.task_rng);
  if (forbidden_ids_ && forbidden_ids_->count(task.task_id)) {
    throw std::runtime_error("EnvPool: task " + std::to_string(task.task_id) +
                             " is reserved for evaluation");
  }
  slot.state = reset(task, env_cfg_);
  slot.episode_return = 0.0;
  episodes_started_ += 1;
  if (ctx_.ae) {
    slot.latent = encode(*ctx_.ae, slot.state.first_frame_cloud);
  } else {
    slot.latent.clear();
  }
}

// ---------------------------------------------------------------------------
// Rollouts and GAE
// ---------------------------------------------------------------------------

RolloutBatch collect_rollouts(const PolicyCheckpoint& policy, EnvPool& pool, std::size_t steps) {
  if (steps < 1) throw std::invalid_argument("collect_rollouts: steps must be >= 1");
  policy.validate();
  const ObsContext& ctx = pool.obs_context();
  const EnvConfig& env_cfg = pool.env_config();

  RolloutBatch batch;
  batch.n_envs = pool.size();
  batch.n_steps = steps;
  batch.obs_dim = policy.obs_dim();
  std::size_t rows = batch.rows();
  batch.observations.assign(rows * batch.obs_dim, 0.0);
  batch.actions.resize(rows);
  batch.pre_tanh.resize(rows);
  batch.old_means.resize(rows);
  batch.log_probs.resize(rows);
  batch.rewards.resize(rows);
  batch.values.resize(rows);
  batch.dones.assign(rows, 0);
  batch.bootstrap_values.assign(batch.n_envs, 0.0);
  for (std::size_t i = 0; i < kActionDim; ++i) batch.old_log_std[i] = policy.log_std[i];

  std::vector<std::vector<double>> env_returns(batch.n_envs);
  std::vector<std::vector<std::uint8_t>> env_successes(batch.n_envs);

  auto run_env = [&](std::size_t e) {
    EnvSlot& slot = pool.slot(e);
    for (std::size_t t = 0; t < steps; ++t) {
      std::size_t row = batch.index(e, t);
      std::vector<double> obs = build_observation(policy, slot.state, ctx, slot.latent);
      std::copy(obs.begin(), obs.end(), batch.observations.begin() + row * batch.obs_dim);

      ActionSample s = sample_action(policy, obs, slot.action_rng);
      std::vector<double> v = mlp_forward(policy.critic_spec, policy.critic, obs);

      StepResult result = step(slot.state, s.action, env_cfg);
      slot.episode_return += result.reward.total;

      batch.actions[row] = s.action;
      batch.pre_tanh[row] = s.pre_tanh;
      batch.old_means[row] = s.mean;
      batch.log_probs[row] = s.log_prob;
      batch.rewards[row] = result.reward.total;
      batch.values[row] = v[0];
      batch.dones[row] = result.done ? 1 : 0;

      if (result.done) {
        env_returns[e].push_back(slot.episode_return);
        env_successes[e].push_back(is_success(slot.state, env_cfg) ? 1 : 0);
        pool.reset_slot(e);
      }
    }
    std::vector<double> obs = build_observation(policy, slot.state, ctx, slot.latent);
    std::vector<double> v = mlp_forward(policy.critic_spec, policy.critic, obs);
    batch.bootstrap_values[e] = v[0];
  };

  // Slots are independent; EnvPool::reset_slot touches only slot-local state
  // plus a counter, so guard the counter by running resets inline per slot.
  parallel_for(batch.n_envs, run_env);

  for (std::size_t e = 0; e < batch.n_envs; ++e) {
    batch.finished_returns.insert(batch.finished_returns.end(), env_returns[e].begin(),
                                  env_returns[e].end());
    batch.finished_successes.insert(batch.finished_successes.end(), env_successes[e].begin(),
                                    env_successes[e].end());
  }
  return batch;
}

void compute_gae(RolloutBatch& batch, double gamma, double lambda) {
  if (batch.values.size() != batch.rows() || batch.bootstrap_values.size() != batch.n_envs) {
    throw std::invalid_argument("compute_gae: batch is missing values or bootstraps");
  }
  batch.advantages.assign(batch.rows(), 0.0);
  batch.returns.assign(batch.rows(), 0.0);
  for (std::size_t e = 0; e < batch.n_envs; ++e) {
    double next_advantage = 0.0;
    double next_value = batch.bootstrap_values[e];
    for (std::size_t t = batch.n_steps; t-- > 0;) {
      std::size_t row = batch.index(e, t);
      double not_done = batch.dones[row] ? 0.0 : 1.0;
      double delta = batch.rewards[row] + gamma * next_value * not_done - batch.values[row];
      double adv = delta + gamma * lambda * not_done * next_advantage;
      batch.advantages[row] = adv;
      batch.returns[row] = adv + batch.values[row];
      next_advantage = adv;
      next_value = batch.values[row];
    }
  }
}

// ---------------------------------------------------------------------------
// PPO update
// ---------------------------------------------------------------------------

PpoOptimizer PpoOptimizer::init(const PolicyCheckpoint& policy, double lr) {
  PpoOptimizer o;
  o.actor = AdamState::init(policy.actor.size(), lr);
  o.critic = AdamState::init(policy.critic.size(), lr);
  o.log_std = AdamState::init(policy.log_std.size(), lr);
  o.lr = lr;
  return o;
}

PpoStats ppo_update(PolicyCheckpoint& policy, PpoOptimizer& opt, RolloutBatch& batch,
                    const PpoConfig& cfg, Rng& rng) {
  cfg.validate();
  policy.validate();
  if (batch.advantages.size() != batch.rows()) {
    throw std::invalid_argument("ppo_update: run compute_gae first");
  }

  // Normalize advantages over the update batch.
  std::size_t n = batch.rows();
  double mean = std::accumulate(batch.advantages.begin(), batch.advantages.end(), 0.0) /
                static_cast<double>(n);
  double var = 0.0;
  for (double a : batch.advantages) var += (a - mean) * (a - mean);
  double stddev = std::sqrt(var / static_cast<double>(n));
  std::vector<double> norm_adv(n);
  for (std::size_t i = 0; i < n; ++i) {
    norm_adv[i] = (batch.advantages[i] - mean) / (stddev + 1e-8);
  }

  ParamVector saved_actor = policy.actor;
  ParamVector saved_critic = policy.critic;
  std::vector<double> saved_log_std = policy.log_std;

  ParamVector log_std_params;
  log_std_params.values = policy.log_std;
  log_std_params.shapes = {{"log_std", kActionDim, 0}};

  PpoStats stats;
  std::size_t minibatch_count = 0;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  auto fail = [&](const std::string& what) {
    policy.actor = saved_actor;
    policy.critic = saved_critic;
    policy.log_std = saved_log_std;
    throw std::runtime_error("ppo_update: " + what + " (policy restored)");
  };

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = n; i > 1; --i) {
      std::size_t j = rng.uniform_index(i);
      std::swap(order[i - 1], order[j]);
    }
    for (std::size_t mb = 0; mb < cfg.minibatches; ++mb) {
      std::size_t lo = n * mb / cfg.minibatches;
      std::size_t hi = n * (mb + 1) / cfg.minibatches;
      if (hi == lo) continue;
      double inv_m = 1.0 / static_cast<double>(hi - lo);

      ParamVector actor_grad = ParamVector::zeros(policy.actor_spec.shapes());
      ParamVector critic_grad = ParamVector::zeros(policy.critic_spec.shapes());
      ParamVector log_std_grad = ParamVector::zeros_like(log_std_params);
      double policy_loss = 0.0, value_loss = 0.0, kl_sum = 0.0;

      for (std::size_t k = lo; k < hi; ++k) {
        std::size_t row = order[k];
        std::span<const double> obs = batch.obs_row(row);

        MlpTape actor_tape;
        std::vector<double> mu = mlp_forward(policy.actor_spec, policy.actor, obs, &actor_tape);
        MlpTape critic_tape;
        std::vector<double> v = mlp_forward(policy.critic_spec, policy.critic, obs, &critic_tape);

        double new_logp = bounded_gaussian_log_prob(batch.pre_tanh[row], mu, policy.log_std);
        double ratio = std::exp(new_logp - batch.log_probs[row]);
        double adv = norm_adv[row];
        double surr_plain = ratio * adv;
        double surr_clipped = clip(ratio, 1.0 - cfg.clip_range, 1.0 + cfg.clip_range) * adv;
        policy_loss += -std::min(surr_plain, surr_clipped);

        // d(-min)/d logp: zero on the clipped plateau.
        double dl_dlogp = (surr_plain <= surr_clipped) ? -adv * ratio : 0.0;

        std::vector<double> mu_grad(kActionDim, 0.0);
        for (std::size_t d = 0; d < kActionDim; ++d) {
          double sigma = std::exp(policy.log_std[d]);
          double z = (batch.pre_tanh[row][d] - mu[d]) / sigma;
          // d logp / d mu = z / sigma ; d logp / d log_std = z^2 - 1
          mu_grad[d] = dl_dlogp * (z / sigma) * inv_m;
          log_std_grad.values[d] += dl_dlogp * (z * z - 1.0) * inv_m;
          // entropy bonus: d(-coef * H)/d log_std = -coef
          log_std_grad.values[d] += -cfg.entropy_coef * inv_m;
        }
        mlp_backward_accum(actor_tape, mu_grad, actor_grad);

        double verr = v[0] - batch.returns[row];
        value_loss += verr * verr;
        std::vector<double> v_grad = {cfg.value_coef * 2.0 * verr * inv_m};
        mlp_backward_accum(critic_tape, v_grad, critic_grad);

        // Analytic diagonal-Gaussian KL(old || new).
        for (std::size_t d = 0; d < kActionDim; ++d) {
          double lo_std = batch.old_log_std[d];
          double ln_std = policy.log_std[d];
          double so2 = std::exp(2.0 * lo_std);
          double sn2 = std::exp(2.0 * ln_std);
          double dmu = batch.old_means[row][d] - mu[d];
          kl_sum += (ln_std - lo_std) + (so2 + dmu * dmu) / (2.0 * sn2) - 0.5;
        }
      }

      policy_loss *= inv_m;
      value_loss *= inv_m;
      double kl = kl_sum * inv_m;
      if (!std::isfinite(policy_loss) || !std::isfinite(value_loss) || !std::isfinite(kl)) {
        fail("non-finite loss");
      }

      // KL-adaptive learning rate.
      if (cfg.desired_kl > 0.0) {
        if (kl > 2.0 * cfg.desired_kl) {
          opt.lr = std::max(1e-6, opt.lr / 2.0);
        } else if (kl < cfg.desired_kl / 2.0) {
          opt.lr = std::min(1e-2, opt.lr * 1.5);
        }
      }

      double sq = actor_grad.squared_norm() + critic_grad.squared_norm() +
                  log_std_grad.squared_norm();
      if (!std::isfinite(sq)) fail("non-finite gradient");
      double norm = std::sqrt(sq);
      if (norm > cfg.max_grad_norm) {
        double s = cfg.max_grad_norm / norm;
        actor_grad.scale(s);
        critic_grad.scale(s);
        log_std_grad.scale(s);
      }

      opt.actor.lr = opt.lr;
      opt.critic.lr = opt.lr;
      opt.log_std.lr = opt.lr;
      adam_step(policy.actor, actor_grad, opt.actor);
      adam_step(policy.critic, critic_grad, opt.critic);
      log_std_params.values = policy.log_std;
      adam_step(log_std_params, log_std_grad, opt.log_std);
      policy.log_std = log_std_params.values;

      stats.policy_loss += policy_loss;
      stats.value_loss += value_loss;
      stats.kl += kl;
      minibatch_count += 1;
    }
  }

  if (minibatch_count > 0) {
    stats.policy_loss /= static_cast<double>(minibatch_count);
    stats.value_loss /= static_cast<double>(minibatch_count);
    stats.kl /= static_cast<double>(minibatch_count);
  }
  stats.lr = opt.lr;
  stats.episodes = batch.finished_returns.size();
  if (stats.episodes > 0) {
    stats.mean_return =
        std::accumulate(batch.finished_returns.begin(), batch.finished_returns.end(), 0.0) /
        static_cast<double>(stats.episodes);
    double s = 0.0;
    for (std::uint8_t x : batch.finished_successes) s += x;
    stats.success_rate = s / static_cast<double>(stats.episodes);
  }
  if (!policy.actor.all_finite() || !policy.critic.all_finite()) fail("non-finite parameters");
  return stats;
}

void train_policy_ppo(PolicyCheckpoint& policy, const PpoConfig& cfg, const EnvConfig& env_cfg,
                      const ObsContext& ctx, TaskSampler& sampler,
                      const TrainPolicyOptions& options) {
  EnvPool pool(env_cfg, ctx, sampler, cfg.num_envs, derive_seed(options.seed, "pool"),
               options.forbidden_ids);
  PpoOptimizer opt = PpoOptimizer::init(policy, cfg.lr);
  Rng update_rng(derive_seed(options.seed, "ppo-update"));
  for (std::size_t u = 0; u < options.updates; ++u) {
    RolloutBatch batch = collect_rollouts(policy, pool, cfg.rollout_steps);
    compute_gae(batch, cfg.gamma, cfg.gae_lambda);
    PpoStats stats = ppo_update(policy, opt, batch, cfg, update_rng);
    if (options.on_update) options.on_update(u, stats);
  }
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

namespace {

struct EpisodeJob {
  Task task;
  std::uint64_t seed;
};

std::vector<EpisodeJob> make_jobs(const std::vector<Task>& tasks, const EvalOptions& opts) {
  if (tasks.empty()) throw std::invalid_argument("evaluate: empty task set");
  std::vector<EpisodeJob> jobs;
  jobs.reserve(tasks.size() * opts.episodes_per_task);
  for (const Task& task : tasks) {
    for (std::size_t e = 0; e < opts.episodes_per_task; ++e) {
      EpisodeJob job;
      job.task = task;
      job.seed = derive_seed(opts.seed, "eval-episode",
                             mix_seed(static_cast<std::uint64_t>(task.task_id), e));
      if (opts.redraw_rotations) {
        Rng rot_rng(job.seed);
        job.task.initial_rotation = rot_rng.uniform(0.0, 2.0 * M_PI);
        if (job.task.initial_rotation >= 2.0 * M_PI) job.task.initial_rotation = 0.0;
      }
      jobs.push_back(std::move(job));
    }
  }
  return jobs;
}

}  // namespace

double evaluate(const PolicyCheckpoint& policy, const std::vector<Task>& tasks,
                const EnvConfig& env_cfg, const ObsContext& ctx, const EvalOptions& opts) {
  policy.validate();
  std::vector<EpisodeJob> jobs = make_jobs(tasks, opts);
  std::vector<std::uint8_t> success(jobs.size(), 0);
  ObsContext local_ctx = ctx;
  local_ctx.env_cfg = &env_cfg;

  parallel_for(jobs.size(), [&](std::size_t j) {
    EnvState state = reset(jobs[j].task, env_cfg);
    std::vector<double> latent;
    if (local_ctx.ae) latent = encode(*local_ctx.ae, state.first_frame_cloud);
    Rng rng(derive_seed(jobs[j].seed, "action"));
    while (!state.done) {
      std::vector<double> obs = build_observation(policy, state, local_ctx, latent);
      std::array<double, kActionDim> action =
          opts.deterministic ? deterministic_action(policy, obs)
                             : sample_action(policy, obs, rng).action;
      step(state, action, env_cfg);
    }
    success[j] = is_success(state, env_cfg) ? 1 : 0;
  });

  double total = 0.0;
  for (std::uint8_t s : success) total += s;
  return total / static_cast<double>(jobs.size());
}

double evaluate_controller(const Controller& controller, const std::vector<Task>& tasks,
                           const EnvConfig& env_cfg, const EvalOptions& opts) {
  std::vector<EpisodeJob> jobs = make_jobs(tasks, opts);
  std::vector<std::uint8_t> success(jobs.size(), 0);
  parallel_for(jobs.size(), [&](std::size_t j) {
    EnvState state = reset(jobs[j].task, env_cfg);
    while (!state.done) {
      step(state, controller(state), env_cfg);
    }
    success[j] = is_success(state, env_cfg) ? 1 : 0;
  });
  double total = 0.0;
  for (std::uint8_t s : success) total += s;
  return total / static_cast<double>(jobs.size());
}

}  // namespace geogsl
