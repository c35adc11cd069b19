#include "geogsl/distill.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "geogsl/parallel.hpp"

namespace geogsl {

namespace {

double clip(double v, double lo, double hi) { return std::min(hi, std::max(lo, v)); }

std::vector<double> clipped_robot_state(const EnvState& state, double obs_clip) {
  std::vector<double> out;
  out.reserve(kGripperStateDim);
  for (double v : state.gripper_pose) out.push_back(clip(v, -obs_clip, obs_clip));
  for (double v : state.gripper_velocity) out.push_back(clip(v, -obs_clip, obs_clip));
  return out;
}

}  // namespace

void TeacherEnsemble::validate() const {
  if (teachers.empty()) throw std::invalid_argument("TeacherEnsemble: no teachers");
  cluster_model.validate();
  if (teachers.size() != cluster_model.centers.size()) {
    throw std::invalid_argument("TeacherEnsemble: teacher count must equal center count");
  }
  if (featurizer.mode != cluster_model.feature_mode) {
    throw std::invalid_argument("TeacherEnsemble: featurizer mode does not match cluster model");
  }
  for (const auto& t : teachers) t.validate();
}

std::size_t TeacherEnsemble::teacher_for(const Task& task) const {
  std::vector<double> f = featurizer(task);
  return assign_task(cluster_model, f);
}

void DistillConfig::validate() const {
  if (buffer_size < steps_per_update) {
    throw std::invalid_argument("DistillConfig: buffer_size must be >= steps_per_update");
  }
  if (steps_per_update < 1 || epochs < 1 || batch_size < 1 || num_envs < 1) {
    throw std::invalid_argument("DistillConfig: counts must be >= 1");
  }
  if (lr <= 0.0) throw std::invalid_argument("DistillConfig: lr must be positive");
}

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity < 1) throw std::invalid_argument("ReplayBuffer: capacity must be >= 1");
}

void ReplayBuffer::push(DistillSample sample) {
  if (samples_.size() == capacity_) samples_.pop_front();
  samples_.push_back(std::move(sample));
}

namespace {

// Gradient accumulators and optimizer state for one distillation run.
struct StudentTrainer {
  PolicyCheckpoint* student;
  bool vision;
  double obs_clip;
  AdamState opt_actor;
  AdamState opt_critic;
  AdamState opt_point;
  AdamState opt_head;

  StudentTrainer(PolicyCheckpoint& s, const DistillConfig& cfg)
      : student(&s),
        vision(s.obs_mode == ObsMode::vision),
        obs_clip(5.0),
        opt_actor(AdamState::init(s.actor.size(), cfg.lr)),
        opt_critic(AdamState::init(s.critic.size(), cfg.lr)),
        opt_point(AdamState::init(vision ? s.backbone->point_params.size() : 0, cfg.lr)),
        opt_head(AdamState::init(vision ? s.backbone->head_params.size() : 0, cfg.lr)) {}

  // Student observation of a buffered sample under the current backbone.
  // When a tape is supplied the backbone forward is recorded for training.
  std::vector<double> sample_obs(const DistillSample& s, bool next, SetEncodeTape* tape,
                                 std::vector<bool>* feature_clipped) const {
    if (!vision) return next ? s.next_state_obs : s.state_obs;
    const std::vector<double>& robot = next ? s.next_robot_state : s.robot_state;
    const PointCloud& cloud = next ? s.next_cloud : s.cloud;
    std::vector<double> feature = set_encode(*student->backbone, cloud, tape);
    std::vector<double> obs = robot;
    if (feature_clipped) feature_clipped->assign(feature.size(), false);
    for (std::size_t i = 0; i < feature.size(); ++i) {
      double f = feature[i];
      double c = clip(f, -obs_clip, obs_clip);
      if (feature_clipped && c != f) (*feature_clipped)[i] = true;
      obs.push_back(c);
    }
    return obs;
  }

  double value_of(const DistillSample& s, bool next) const {
    std::vector<double> obs = sample_obs(s, next, nullptr, nullptr);
    return mlp_forward(student->critic_spec, student->critic, obs)[0];
  }

  // One minibatch of the two-term loss. Returns (action_mse, value_mse).
  std::pair<double, double> update(const std::function<const DistillSample&(std::size_t)>& at,
                                   std::size_t count, const DistillConfig& cfg, double gamma,
                                   Rng& rng) {
    ParamVector actor_grad = ParamVector::zeros(student->actor_spec.shapes());
    ParamVector critic_grad = ParamVector::zeros(student->critic_spec.shapes());
    SetEncoderGrad backbone_grad;
    if (vision) backbone_grad = SetEncoderGrad::zeros_like(*student->backbone);

    double action_mse = 0.0;
    double value_mse = 0.0;
    std::size_t batch = std::min(cfg.batch_size, count);
    double inv = 1.0 / static_cast<double>(batch);

    for (std::size_t b = 0; b < batch; ++b) {
      const DistillSample& s = at(rng.uniform_index(count));

      SetEncodeTape enc_tape;
      std::vector<bool> feature_clipped;
      std::vector<double> obs =
          sample_obs(s, false, vision ? &enc_tape : nullptr, &feature_clipped);

      MlpTape actor_tape;
      std::vector<double> mu =
          mlp_forward(student->actor_spec, student->actor, obs, &actor_tape);
      MlpTape critic_tape;
      std::vector<double> v =
          mlp_forward(student->critic_spec, student->critic, obs, &critic_tape);

      // Bootstrapped return target, treated as a constant.
      double target = s.reward;
      if (!s.done) target += gamma * value_of(s, true);

      std::vector<double> mu_grad(kActionDim, 0.0);
      for (std::size_t d = 0; d < kActionDim; ++d) {
        double bounded = std::tanh(mu[d]);
        double err = bounded - s.teacher_action[d];
        action_mse += err * err / static_cast<double>(kActionDim);
        mu_grad[d] = 2.0 * err * (1.0 - bounded * bounded) * inv / static_cast<double>(kActionDim);
      }
      double verr = v[0] - target;
      value_mse += verr * verr;
      std::vector<double> v_grad = {cfg.value_coef * 2.0 * verr * inv};

      if (vision) {
        std::vector<double> actor_in(obs.size(), 0.0);
        std::vector<double> critic_in(obs.size(), 0.0);
        mlp_backward_accum(actor_tape, mu_grad, actor_grad, &actor_in);
        mlp_backward_accum(critic_tape, v_grad, critic_grad, &critic_in);
        std::size_t fdim = student->backbone->out_dim();
        std::vector<double> feature_grad(fdim, 0.0);
        for (std::size_t i = 0; i < fdim; ++i) {
          if (feature_clipped[i]) continue;  // clipped obs components pass no gradient
          feature_grad[i] = actor_in[kGripperStateDim + i] + critic_in[kGripperStateDim + i];
        }
        set_encode_backward(enc_tape, *student->backbone, feature_grad, backbone_grad);
      } else {
        mlp_backward_accum(actor_tape, mu_grad, actor_grad);
        mlp_backward_accum(critic_tape, v_grad, critic_grad);
      }
    }

    adam_step(student->actor, actor_grad, opt_actor);
    adam_step(student->critic, critic_grad, opt_critic);
    if (vision) {
      // mu/v grads already carry the batch mean, so the backbone grads do too
      adam_step(student->backbone->point_params, backbone_grad.point_params, opt_point);
      adam_step(student->backbone->head_params, backbone_grad.head_params, opt_head);
    }
    return {action_mse * inv, value_mse * inv};
  }
};

DistillStats run_updates(StudentTrainer& trainer,
                         const std::function<const DistillSample&(std::size_t)>& at,
                         const std::function<std::size_t()>& count,
                         const std::function<void(std::size_t)>& collect,
                         const DistillConfig& cfg, const DistillOptions& opts) {
  Rng batch_rng(derive_seed(opts.seed, "distill-batch"));
  DistillStats stats;
  for (std::size_t u = 0; u < opts.updates; ++u) {
    if (collect) collect(u);
    if (count() == 0) continue;
    double a_mse = 0.0, v_mse = 0.0;
    for (std::size_t e = 0; e < cfg.epochs; ++e) {
      auto [a, v] = trainer.update(at, count(), cfg, opts.gamma, batch_rng);
      a_mse += a;
      v_mse += v;
    }
    stats.action_mse = a_mse / static_cast<double>(cfg.epochs);
    stats.value_mse = v_mse / static_cast<double>(cfg.epochs);
    stats.buffer_fill = count();
    if (opts.on_update) opts.on_update(u, stats);
  }
  return stats;
}

}  // namespace

DistillStats dagger_distill(const TeacherEnsemble& teachers, PolicyCheckpoint& student,
                            TaskSampler& sampler, const DistillConfig& cfg,
                            const EnvConfig& env_cfg, const ObsContext& ctx,
                            const DistillOptions& opts) {
  teachers.validate();
  student.validate();
  cfg.validate();
  for (const auto& t : teachers.teachers) {
    if (t.obs_mode == ObsMode::state && student.obs_mode == ObsMode::state) continue;
    if (student.obs_mode == ObsMode::vision && !student.backbone.has_value()) {
      throw std::invalid_argument("dagger_distill: vision student without backbone");
    }
  }

  ObsContext local_ctx = ctx;
  local_ctx.env_cfg = &env_cfg;
  EnvPool pool(env_cfg, local_ctx, sampler, cfg.num_envs, derive_seed(opts.seed, "dagger-pool"),
               opts.forbidden_ids);
  std::vector<std::size_t> teacher_of(pool.size());
  for (std::size_t e = 0; e < pool.size(); ++e) {
    teacher_of[e] = teachers.teacher_for(pool.slot(e).state.task);
  }

  ReplayBuffer buffer(cfg.buffer_size);
  StudentTrainer trainer(student, cfg);
  trainer.obs_clip = local_ctx.obs_clip;
  bool vision = student.obs_mode == ObsMode::vision;

  auto student_view = [&](const EnvSlot& slot, DistillSample& s, bool next) {
    if (vision) {
      auto& robot = next ? s.next_robot_state : s.robot_state;
      auto& cloud = next ? s.next_cloud : s.cloud;
      robot = clipped_robot_state(slot.state, local_ctx.obs_clip);
      cloud = render_pointcloud(slot.state, env_cfg,
                                static_cast<std::size_t>(env_cfg.cloud_points));
    } else {
      auto& obs = next ? s.next_state_obs : s.state_obs;
      obs = build_observation(student, slot.state, local_ctx, slot.latent);
    }
  };

  auto collect = [&](std::size_t) {
    for (std::size_t k = 0; k < cfg.steps_per_update; ++k) {
      std::vector<DistillSample> step_samples(pool.size());
      parallel_for(pool.size(), [&](std::size_t e) {
        EnvSlot& slot = pool.slot(e);
        DistillSample& s = step_samples[e];
        student_view(slot, s, false);

        const PolicyCheckpoint& teacher = teachers.teachers[teacher_of[e]];
        std::vector<double> tobs = build_observation(teacher, slot.state, local_ctx, slot.latent);
        s.teacher_action = deterministic_action(teacher, tobs);

        std::vector<double> sobs = build_observation(student, slot.state, local_ctx, slot.latent);
        ActionSample act = sample_action(student, sobs, slot.action_rng);
        StepResult result = step(slot.state, act.action, env_cfg);
        s.reward = result.reward.total;
        s.done = result.done;
        student_view(slot, s, true);
      });
      for (std::size_t e = 0; e < pool.size(); ++e) {
        buffer.push(std::move(step_samples[e]));
        if (pool.slot(e).state.done) {
          pool.reset_slot(e);
          teacher_of[e] = teachers.teacher_for(pool.slot(e).state.task);
        }
      }
    }
  };

  auto at = [&](std::size_t i) -> const DistillSample& { return buffer.at(i); };
  auto count = [&]() { return buffer.size(); };
  return run_updates(trainer, at, count, collect, cfg, opts);
}

DistillStats bc_value_distill(const std::vector<DistillSample>& demonstrations,
                              PolicyCheckpoint& student, const DistillConfig& cfg,
                              const DistillOptions& opts) {
  if (demonstrations.empty()) {
    throw std::invalid_argument("bc_value_distill: no demonstrations");
  }
  student.validate();
  cfg.validate();
  StudentTrainer trainer(student, cfg);
  auto at = [&](std::size_t i) -> const DistillSample& { return demonstrations[i]; };
  auto count = [&]() { return demonstrations.size(); };
  return run_updates(trainer, at, count, nullptr, cfg, opts);
}

std::vector<DistillSample> record_demonstrations(const TeacherEnsemble& teachers,
                                                 TaskSampler& sampler, const DistillConfig& cfg,
                                                 const EnvConfig& env_cfg, const ObsContext& ctx,
                                                 std::size_t n_transitions,
                                                 const DistillOptions& opts) {
  teachers.validate();
  ObsContext local_ctx = ctx;
  local_ctx.env_cfg = &env_cfg;
  EnvPool pool(env_cfg, local_ctx, sampler, cfg.num_envs, derive_seed(opts.seed, "demo-pool"),
               opts.forbidden_ids);
  std::vector<std::size_t> teacher_of(pool.size());
  for (std::size_t e = 0; e < pool.size(); ++e) {
    teacher_of[e] = teachers.teacher_for(pool.slot(e).state.task);
  }

  std::vector<DistillSample> demos;
  demos.reserve(n_transitions);
  while (demos.size() < n_transitions) {
    std::vector<DistillSample> step_samples(pool.size());
    parallel_for(pool.size(), [&](std::size_t e) {
      EnvSlot& slot = pool.slot(e);
      const PolicyCheckpoint& teacher = teachers.teachers[teacher_of[e]];
      DistillSample& s = step_samples[e];
      s.state_obs = build_observation(teacher, slot.state, local_ctx, slot.latent);
      s.teacher_action = deterministic_action(teacher, s.state_obs);
      StepResult result = step(slot.state, s.teacher_action, env_cfg);
      s.reward = result.reward.total;
      s.done = result.done;
      s.next_state_obs = build_observation(teacher, slot.state, local_ctx, slot.latent);
    });
    for (std::size_t e = 0; e < pool.size() && demos.size() < n_transitions; ++e) {
      demos.push_back(std::move(step_samples[e]));
      if (pool.slot(e).state.done) {
        pool.reset_slot(e);
        teacher_of[e] = teachers.teacher_for(pool.slot(e).state.task);
      }
    }
  }
  return demos;
}

DistillStats crossmodal_distill(const TeacherEnsemble& state_teachers,
                                PolicyCheckpoint& vision_student, TaskSampler& sampler,
                                const DistillConfig& cfg, const EnvConfig& env_cfg,
                                const ObsContext& ctx, const DistillOptions& opts) {
  for (const auto& t : state_teachers.teachers) {
    if (t.obs_mode != ObsMode::state) {
      throw std::invalid_argument("crossmodal_distill: teachers must be state-based");
    }
  }
  if (vision_student.obs_mode != ObsMode::vision || !vision_student.backbone.has_value()) {
    throw std::invalid_argument("crossmodal_distill: student must be vision-based with backbone");
  }
  return dagger_distill(state_teachers, vision_student, sampler, cfg, env_cfg, ctx, opts);
}

double fresh_rollout_action_mse(const TeacherEnsemble& teachers, const PolicyCheckpoint& student,
                                TaskSampler& sampler, const EnvConfig& env_cfg,
                                const ObsContext& ctx, std::size_t episodes, std::uint64_t seed) {
  teachers.validate();
  student.validate();
  ObsContext local_ctx = ctx;
  local_ctx.env_cfg = &env_cfg;
  Rng task_rng(derive_seed(seed, "mse-tasks"));
  double total = 0.0;
  std::size_t steps = 0;
  for (std::size_t ep = 0; ep < episodes; ++ep) {
    Task task = sampler.next(task_rng);
    std::size_t teacher_idx = teachers.teacher_for(task);
    const PolicyCheckpoint& teacher = teachers.teachers[teacher_idx];
    EnvState state = reset(task, env_cfg);
    std::vector<double> latent;
    if (local_ctx.ae) latent = encode(*local_ctx.ae, state.first_frame_cloud);
    while (!state.done) {
      std::vector<double> sobs = build_observation(student, state, local_ctx, latent);
      std::array<double, kActionDim> sa = deterministic_action(student, sobs);
      std::vector<double> tobs = build_observation(teacher, state, local_ctx, latent);
      std::array<double, kActionDim> ta = deterministic_action(teacher, tobs);
      for (std::size_t d = 0; d < kActionDim; ++d) {
        double err = sa[d] - ta[d];
        total += err * err / static_cast<double>(kActionDim);
      }
      steps += 1;
      step(state, sa, env_cfg);
    }
  }
  return total / static_cast<double>(steps);
}

double critic_return_mse(const PolicyCheckpoint& policy, TaskSampler& sampler,
                         const EnvConfig& env_cfg, const ObsContext& ctx, double gamma,
                         double gae_lambda, std::size_t steps, std::uint64_t seed) {
  ObsContext local_ctx = ctx;
  local_ctx.env_cfg = &env_cfg;
  EnvPool pool(env_cfg, local_ctx, sampler, 4, derive_seed(seed, "critic-mse"));
  RolloutBatch batch = collect_rollouts(policy, pool, steps);
  compute_gae(batch, gamma, gae_lambda);
  double total = 0.0;
  for (std::size_t i = 0; i < batch.rows(); ++i) {
    double err = batch.values[i] - batch.returns[i];
    total += err * err;
  }
  return total / static_cast<double>(batch.rows());
}

}  // namespace geogsl
