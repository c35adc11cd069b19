#include "geogsl/env.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace geogsl {

namespace {

constexpr double kTwoPi = 2.0 * M_PI;

double clip(double v, double lo, double hi) { return std::min(hi, std::max(lo, v)); }

double wrap_angle(double a) {
  a = std::fmod(a, kTwoPi);
  if (a < 0.0) a += kTwoPi;
  return a;
}

// Wrap to [-pi/2, pi/2); jaw directions are symmetric under half turns.
double wrap_half(double a) {
  a = std::fmod(a, M_PI);
  if (a < -M_PI / 2.0) a += M_PI;
  if (a >= M_PI / 2.0) a -= M_PI;
  return a;
}

Point2 rotate(const Point2& p, double angle) {
  double c = std::cos(angle), s = std::sin(angle);
  return {c * p[0] - s * p[1], s * p[0] + c * p[1]};
}

double norm2(const Point2& p) { return std::hypot(p[0], p[1]); }

}  // namespace

std::string family_name(ShapeFamily f) {
  switch (f) {
    case ShapeFamily::ellipse: return "ellipse";
    case ShapeFamily::polygon: return "polygon";
    case ShapeFamily::star: return "star";
  }
  throw std::invalid_argument("family_name: unknown family");
}

ShapeFamily family_from_name(const std::string& name) {
  if (name == "ellipse") return ShapeFamily::ellipse;
  if (name == "polygon") return ShapeFamily::polygon;
  if (name == "star") return ShapeFamily::star;
  throw std::invalid_argument("unknown shape family: " + name);
}

void Task::validate() const {
  if (!(initial_rotation >= 0.0 && initial_rotation < kTwoPi)) {
    throw std::invalid_argument("Task: rotation must lie in [0, 2pi)");
  }
  switch (family) {
    case ShapeFamily::ellipse:
      if (shape_params.size() != 2 || shape_params[0] <= 0.0 || shape_params[1] <= 0.0) {
        throw std::invalid_argument("Task: ellipse needs two positive axes");
      }
      break;
    case ShapeFamily::polygon:
      if (shape_params.size() < 3) {
        throw std::invalid_argument("Task: polygon needs at least three vertex radii");
      }
      for (double r : shape_params) {
        if (r <= 0.0) throw std::invalid_argument("Task: polygon radii must be positive");
      }
      break;
    case ShapeFamily::star:
      if (shape_params.size() != 3 || shape_params[0] < 3.0 || shape_params[1] <= 0.0 ||
          shape_params[2] <= 0.0 || shape_params[2] >= 1.0) {
        throw std::invalid_argument("Task: star needs (spikes >= 3, outer radius, inner ratio)");
      }
      break;
  }
}

std::vector<Point2> shape_outline(const Task& task, std::size_t samples) {
  task.validate();
  std::vector<Point2> out;
  switch (task.family) {
    case ShapeFamily::ellipse: {
      double a = task.shape_params[0], b = task.shape_params[1];
      out.reserve(samples);
      for (std::size_t i = 0; i < samples; ++i) {
        double ang = kTwoPi * static_cast<double>(i) / static_cast<double>(samples);
        out.push_back({a * std::cos(ang), b * std::sin(ang)});
      }
      break;
    }
    case ShapeFamily::polygon: {
      std::size_t k = task.shape_params.size();
      out.reserve(k);
      for (std::size_t i = 0; i < k; ++i) {
        double ang = kTwoPi * static_cast<double>(i) / static_cast<double>(k);
        out.push_back({task.shape_params[i] * std::cos(ang), task.shape_params[i] * std::sin(ang)});
      }
      break;
    }
    case ShapeFamily::star: {
      auto n = static_cast<std::size_t>(task.shape_params[0]);
      double r_out = task.shape_params[1];
      double r_in = r_out * task.shape_params[2];
      out.reserve(2 * n);
      for (std::size_t i = 0; i < 2 * n; ++i) {
        double ang = kTwoPi * static_cast<double>(i) / static_cast<double>(2 * n);
        double r = (i % 2 == 0) ? r_out : r_in;
        out.push_back({r * std::cos(ang), r * std::sin(ang)});
      }
      break;
    }
  }
  return out;
}

double support_width(const Task& task, double rotation, double dir) {
  if (task.family == ShapeFamily::ellipse) {
    double a = task.shape_params[0], b = task.shape_params[1];
    double rel = dir - rotation;
    double ca = std::cos(rel), sa = std::sin(rel);
    return 2.0 * std::sqrt(a * a * ca * ca + b * b * sa * sa);
  }
  // Polyline support is attained at a vertex.
  std::vector<Point2> verts = shape_outline(task);
  double ux = std::cos(dir), uy = std::sin(dir);
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (const auto& v : verts) {
    Point2 w = rotate(v, rotation);
    double proj = w[0] * ux + w[1] * uy;
    lo = std::min(lo, proj);
    hi = std::max(hi, proj);
  }
  return hi - lo;
}

double narrowest_grasp_angle(const Task& task, double rotation, std::size_t samples) {
  double best_angle = 0.0;
  double best_width = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < samples; ++i) {
    double ang = M_PI * static_cast<double>(i) / static_cast<double>(samples);
    double w = support_width(task, rotation, ang);
    if (w < best_width) {
      best_width = w;
      best_angle = ang;
    }
  }
  return best_angle;
}

void RewardConfig::validate() const {
  if (w_r <= 0.0 || w_l <= 0.0 || w_m <= 0.0 || w_b <= 0.0) {
    throw std::invalid_argument("RewardConfig: weights must be positive");
  }
  if (lambda_f1 <= 0.0 || lambda_0 <= 0.0) {
    throw std::invalid_argument("RewardConfig: thresholds must be positive");
  }
}

std::array<Point2, 2> fingertip_positions(const EnvState& state, const EnvConfig& cfg) {
  double theta = state.gripper_pose[2];
  double reach = state.gripper_pose[3] * cfg.finger_span;
  Point2 jaw = {std::cos(theta), std::sin(theta)};
  Point2 center = {state.gripper_pose[0], state.gripper_pose[1]};
  return {Point2{center[0] + reach * jaw[0], center[1] + reach * jaw[1]},
          Point2{center[0] - reach * jaw[0], center[1] - reach * jaw[1]}};
}

Task sample_task(const std::array<double, 3>& family_mix, std::uint64_t rng_seed,
                 std::int64_t task_id) {
  double total = family_mix[0] + family_mix[1] + family_mix[2];
  if (family_mix[0] < 0.0 || family_mix[1] < 0.0 || family_mix[2] < 0.0 || total <= 0.0) {
    throw std::invalid_argument("sample_task: weights must be non-negative and not all zero");
  }
  Rng rng(derive_seed(rng_seed, "task"));
  double u = rng.uniform01() * total;
  ShapeFamily family = ShapeFamily::star;
  if (u < family_mix[0]) {
    family = ShapeFamily::ellipse;
  } else if (u < family_mix[0] + family_mix[1]) {
    family = ShapeFamily::polygon;
  }

  Task task;
  task.family = family;
  task.task_id = task_id;
  switch (family) {
    case ShapeFamily::ellipse: {
      double b = rng.uniform(0.04, 0.10);
      double a = rng.uniform(b, 0.15);
      task.shape_params = {a, b};
      break;
    }
    case ShapeFamily::polygon: {
      auto k = static_cast<std::size_t>(3 + rng.uniform_index(4));
      task.shape_params.resize(k);
      for (std::size_t i = 0; i < k; ++i) task.shape_params[i] = rng.uniform(0.06, 0.12);
      break;
    }
    case ShapeFamily::star: {
      auto n = static_cast<double>(4 + rng.uniform_index(4));
      double r_out = rng.uniform(0.08, 0.14);
      double ratio = rng.uniform(0.35, 0.6);
      task.shape_params = {n, r_out, ratio};
      break;
    }
  }
  task.initial_rotation = rng.uniform(0.0, kTwoPi);
  // uniform(0, 2pi) can return 2pi-eps exactly at the boundary; renormalize
  task.initial_rotation = wrap_angle(task.initial_rotation);
  return task;
}

PointCloud render_object_cloud(const Task& task, const std::array<double, 3>& object_pose,
                               std::size_t n_points, std::uint64_t salt) {
  if (n_points < 1) throw std::invalid_argument("render_object_cloud: need at least one point");
  std::vector<Point2> outline = shape_outline(task);
  std::size_t edges = outline.size();
  Rng rng(derive_seed(static_cast<std::uint64_t>(task.task_id), "object-cloud", salt));
  PointCloud cloud;
  cloud.points.reserve(n_points);
  cloud.labels.assign(n_points, 0);
  for (std::size_t i = 0; i < n_points; ++i) {
    // Stratified along the outline parameter.
    double s = (static_cast<double>(i) + rng.uniform01()) / static_cast<double>(n_points);
    double scaled = s * static_cast<double>(edges);
    auto e = static_cast<std::size_t>(scaled);
    if (e >= edges) e = edges - 1;
    double frac = scaled - static_cast<double>(e);
    const Point2& p0 = outline[e];
    const Point2& p1 = outline[(e + 1) % edges];
    Point2 local = {p0[0] + frac * (p1[0] - p0[0]), p0[1] + frac * (p1[1] - p0[1])};
    Point2 world = rotate(local, object_pose[2]);
    cloud.points.push_back({world[0] + object_pose[0], world[1] + object_pose[1]});
  }
  return cloud;
}

EnvState reset(const Task& task, const EnvConfig& cfg) {
  task.validate();
  cfg.reward.validate();
  EnvState state;
  state.task = task;
  state.gripper_pose = cfg.gripper_start;
  state.gripper_velocity = {0.0, 0.0, 0.0, 0.0};
  state.object_pose = {0.0, 0.0, task.initial_rotation};
  state.object_velocity = {0.0, 0.0, 0.0};
  state.attached = false;
  state.t = 0;
  state.done = false;
  state.target_position = cfg.target_position;
  state.first_frame_cloud =
      render_object_cloud(task, state.object_pose, static_cast<std::size_t>(cfg.cloud_points), 0);
  return state;
}

RewardBreakdown compute_reward(const EnvState& state, const std::array<double, 4>& action,
                               const EnvConfig& cfg) {
  const RewardConfig& rw = cfg.reward;
  auto tips = fingertip_positions(state, cfg);
  Point2 obj = {state.object_pose[0], state.object_pose[1]};
  double finger_sum = std::hypot(tips[0][0] - obj[0], tips[0][1] - obj[1]) +
                      std::hypot(tips[1][0] - obj[0], tips[1][1] - obj[1]);
  double d_obj =
      std::hypot(obj[0] - state.target_position[0], obj[1] - state.target_position[1]);

  RewardBreakdown r;
  r.lift_flag_f = (finger_sum < rw.lambda_f1 ? 1 : 0) + (d_obj > rw.lambda_0 ? 1 : 0);
  r.r_reach = -rw.w_r * finger_sum;
  double a_z = clip(action[1], -1.0, 1.0);
  r.r_lift = (r.lift_flag_f == 2) ? rw.w_l * (1.0 + a_z) : 0.0;
  r.r_move = -rw.w_m * d_obj;
  if (d_obj < rw.lambda_0) r.r_move += 1.0 / (1.0 + rw.w_b * d_obj);
  r.total = r.r_reach + r.r_lift + r.r_move;
  return r;
}

StepResult step(EnvState& state, std::array<double, 4> action, const EnvConfig& cfg) {
  if (state.done) throw std::runtime_error("step: episode already finished");
  for (double& a : action) a = clip(a, -1.0, 1.0);

  std::array<double, 4> old_grip = state.gripper_pose;
  std::array<double, 3> old_obj = state.object_pose;

  state.gripper_pose[0] += action[0] * cfg.max_translation;
  state.gripper_pose[1] += action[1] * cfg.max_translation;
  state.gripper_pose[2] += action[2] * cfg.max_rotation;
  state.gripper_pose[3] = clip(state.gripper_pose[3] + action[3] * cfg.max_aperture_rate, 0.0, 1.0);
  for (std::size_t i = 0; i < 4; ++i) {
    state.gripper_velocity[i] = state.gripper_pose[i] - old_grip[i];
  }

  if (state.attached) {
    Point2 carried = rotate(state.attach_offset, state.gripper_pose[2]);
    state.object_pose[0] = state.gripper_pose[0] + carried[0];
    state.object_pose[1] = state.gripper_pose[1] + carried[1];
    state.object_pose[2] = state.gripper_pose[2] + state.attach_rotation_offset;
  }
  for (std::size_t i = 0; i < 3; ++i) {
    state.object_velocity[i] = state.object_pose[i] - old_obj[i];
  }

  RewardBreakdown reward = compute_reward(state, action, cfg);

  if (!state.attached && reward.lift_flag_f == 2 && action[3] < 0.0) {
    double width = support_width(state.task, state.object_pose[2], state.gripper_pose[2]);
    if (width <= cfg.grasp_width_max) {
      state.attached = true;
      Point2 rel = {state.object_pose[0] - state.gripper_pose[0],
                    state.object_pose[1] - state.gripper_pose[1]};
      state.attach_offset = rotate(rel, -state.gripper_pose[2]);
      state.attach_rotation_offset = state.object_pose[2] - state.gripper_pose[2];
    }
  }

  state.t += 1;
  state.done = state.t >= cfg.episode_length;
  return {reward, state.done};
}

bool is_success(const EnvState& state, const EnvConfig& cfg) {
  double d = std::hypot(state.object_pose[0] - state.target_position[0],
                        state.object_pose[1] - state.target_position[1]);
  return d < cfg.reward.lambda_0;
}

PointCloud render_pointcloud(const EnvState& state, const EnvConfig& cfg, std::size_t n_points) {
  if (n_points < 8) throw std::invalid_argument("render_pointcloud: need n_points >= 8");
  std::size_t n_grip = n_points / 4;
  std::size_t n_obj = n_points - n_grip;
  PointCloud cloud = render_object_cloud(state.task, state.object_pose, n_obj,
                                         static_cast<std::uint64_t>(state.t));

  // Finger pads: short segments through each fingertip, perpendicular to the
  // jaw axis.
  Rng rng(derive_seed(static_cast<std::uint64_t>(state.task.task_id), "gripper-cloud",
                      static_cast<std::uint64_t>(state.t)));
  auto tips = fingertip_positions(state, cfg);
  double theta = state.gripper_pose[2];
  Point2 pad_dir = {-std::sin(theta), std::cos(theta)};
  const double pad_half = 0.025;
  for (std::size_t i = 0; i < n_grip; ++i) {
    const Point2& tip = tips[i % 2];
    double offset = pad_half * (2.0 * rng.uniform01() - 1.0);
    cloud.points.push_back({tip[0] + offset * pad_dir[0], tip[1] + offset * pad_dir[1]});
    cloud.labels.push_back(1);
  }
  return cloud;
}

std::array<double, 4> scripted_expert_action(const EnvState& state, const EnvConfig& cfg) {
  std::array<double, 4> action = {0.0, 0.0, 0.0, 0.0};
  Point2 obj = {state.object_pose[0], state.object_pose[1]};
  if (!state.attached) {
    double desired = narrowest_grasp_angle(state.task, state.object_pose[2]);
    double dtheta = wrap_half(desired - state.gripper_pose[2]);
    action[2] = clip(dtheta / cfg.max_rotation, -1.0, 1.0);
    double dx = obj[0] - state.gripper_pose[0];
    double dy = obj[1] - state.gripper_pose[1];
    action[0] = clip(dx / cfg.max_translation, -1.0, 1.0);
    action[1] = clip(dy / cfg.max_translation, -1.0, 1.0);
    bool positioned = std::hypot(dx, dy) < 0.01 && std::abs(dtheta) < 0.05;
    action[3] = positioned ? -1.0 : 1.0;
  } else {
    double dx = state.target_position[0] - obj[0];
    double dy = state.target_position[1] - obj[1];
    action[3] = -1.0;
    if (std::hypot(dx, dy) >= 0.4 * cfg.reward.lambda_0) {
      action[0] = clip(dx / cfg.max_translation, -1.0, 1.0);
      action[1] = clip(dy / cfg.max_translation, -1.0, 1.0);
    }
  }
  return action;
}

std::string tasks_to_json(const std::vector<Task>& tasks) {
  nlohmann::json arr = nlohmann::json::array();
  for (const Task& t : tasks) {
    arr.push_back({{"task_id", t.task_id},
                   {"family", family_name(t.family)},
                   {"params", t.shape_params},
                   {"rotation", t.initial_rotation}});
  }
  return arr.dump(2);
}

std::vector<Task> tasks_from_json(const std::string& text) {
  nlohmann::json arr = nlohmann::json::parse(text);
  if (!arr.is_array()) throw std::invalid_argument("tasks_from_json: expected a JSON array");
  std::vector<Task> tasks;
  tasks.reserve(arr.size());
  for (const auto& item : arr) {
    Task t;
    t.task_id = item.at("task_id").get<std::int64_t>();
    t.family = family_from_name(item.at("family").get<std::string>());
    t.shape_params = item.at("params").get<std::vector<double>>();
    t.initial_rotation = item.at("rotation").get<double>();
    t.validate();
    tasks.push_back(std::move(t));
  }
  return tasks;
}

}  // namespace geogsl
