#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "geogsl/geometry.hpp"
#include "geogsl/rng.hpp"

namespace geogsl {

enum class ShapeFamily { ellipse, polygon, star };

std::string family_name(ShapeFamily f);
ShapeFamily family_from_name(const std::string& name);

// One grasping problem: a procedurally generated shape plus its initial
// planar rotation.
struct Task {
  ShapeFamily family = ShapeFamily::ellipse;
  std::vector<double> shape_params;
  double initial_rotation = 0.0;  // radians in [0, 2pi)
  std::int64_t task_id = 0;

  void validate() const;
};

// Vertices of the shape outline in the object's local frame. Polygons and
// stars return their corner vertices; ellipses are sampled at `samples`
// boundary angles.
std::vector<Point2> shape_outline(const Task& task, std::size_t samples = 48);

// Width of the shape's support along unit direction angle `dir`, with the
// object rotated by `rotation`.
double support_width(const Task& task, double rotation, double dir);

// Jaw angle minimizing the support width, scanned over `samples` candidate
// angles in [0, pi).
double narrowest_grasp_angle(const Task& task, double rotation, std::size_t samples = 72);

struct RewardConfig {
  double w_r = 0.5;        // reach weight
  double w_l = 0.1;        // lift weight
  double w_m = 2.0;        // move weight
  double w_b = 10.0;       // bonus sharpness
  double lambda_f1 = 0.1;  // fingertip-sum threshold for the lift flag
  double lambda_0 = 0.05;  // target-distance threshold (success and bonus)

  void validate() const;
};

struct EnvConfig {
  int episode_length = 200;
  int cloud_points = 64;
  RewardConfig reward;

  // Per-step actuation limits; actions in [-1, 1] scale these.
  double max_translation = 0.04;
  double max_rotation = 0.2;
  double max_aperture_rate = 0.25;

  double finger_span = 0.12;      // fingertip offset from center at aperture 1
  double grasp_width_max = 0.20;  // widest object cross-section the jaws accept
  std::array<double, 2> target_position = {0.0, 0.6};
  std::array<double, 4> gripper_start = {0.0, -0.4, 0.0, 1.0};  // x, y, theta, aperture
};

struct RewardBreakdown {
  double r_reach = 0.0;
  double r_lift = 0.0;
  double r_move = 0.0;
  double total = 0.0;
  int lift_flag_f = 0;
};

struct EnvState {
  std::array<double, 4> gripper_pose{};      // x, y, theta, aperture
  std::array<double, 4> gripper_velocity{};  // per-step deltas
  std::array<double, 3> object_pose{};       // x, y, theta
  std::array<double, 3> object_velocity{};
  bool attached = false;
  int t = 0;
  PointCloud first_frame_cloud;
  std::array<double, 2> target_position{};
  bool done = false;

  Task task;
  // Object pose in the gripper frame, frozen at the moment of attachment.
  std::array<double, 2> attach_offset{};
  double attach_rotation_offset = 0.0;
};

// Both fingertips in world coordinates.
std::array<Point2, 2> fingertip_positions(const EnvState& state, const EnvConfig& cfg);

Task sample_task(const std::array<double, 3>& family_mix, std::uint64_t rng_seed,
                 std::int64_t task_id);

EnvState reset(const Task& task, const EnvConfig& cfg);

RewardBreakdown compute_reward(const EnvState& state, const std::array<double, 4>& action,
                               const EnvConfig& cfg);

struct StepResult {
  RewardBreakdown reward;
  bool done = false;
};

// Kinematic step. Actions outside [-1, 1] are clipped, not rejected.
// Stepping a done state throws.
StepResult step(EnvState& state, std::array<double, 4> action, const EnvConfig& cfg);

bool is_success(const EnvState& state, const EnvConfig& cfg);

// Scene cloud (object + gripper points, labeled), deterministic given
// (task_id, t, n_points).
PointCloud render_pointcloud(const EnvState& state, const EnvConfig& cfg, std::size_t n_points);

// Object-only cloud at a given pose; used for the first frame and features.
PointCloud render_object_cloud(const Task& task, const std::array<double, 3>& object_pose,
                               std::size_t n_points, std::uint64_t salt);

// Hand-crafted controller that solves the task analytically. Used as the
// environment sanity gate and as a distillation teacher in tests.
std::array<double, 4> scripted_expert_action(const EnvState& state, const EnvConfig& cfg);

// Corpus persistence: JSON array of task records.
std::string tasks_to_json(const std::vector<Task>& tasks);
std::vector<Task> tasks_from_json(const std::string& text);

}  // namespace geogsl
