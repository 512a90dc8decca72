#pragma once

#include "cnp3o/constraints.hpp"
#include "cnp3o/primitives.hpp"

#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace cnp3o {

/// Three-revolute planar chain operating in the (x, y) plane.
struct PlanarArm {
  Eigen::Vector3d link_lengths{0.4, 0.4, 0.2};
  Eigen::Vector3d q_limits{2.97, 2.09, 2.97};    // symmetric bounds, rad
  Eigen::Vector3d dq_limits{1.48, 1.48, 1.75};   // rad/s
  Eigen::Vector3d ddq_limits{10.0, 10.0, 10.0};  // rad/s^2
};

struct FkResult {
  Eigen::Vector2d ee;
  double phi = 0.0;  // end-effector orientation, sum of joint angles
  Eigen::Matrix<double, 2, 3> jacobian;
};

FkResult forward_kinematics(const PlanarArm& arm, const Eigen::Vector3d& q);

/// Position and Jacobian of a point at fraction `t` along link `link`
/// (0 = proximal joint, 1 = distal end). Used by body-collision checks.
FkResult link_point_kinematics(const PlanarArm& arm, const Eigen::Vector3d& q,
                               int link, double t);

/// Analytic inverse kinematics for an end-effector pose (position +
/// orientation). Picks the elbow-up branch (higher elbow point). Returns
/// nothing when the wrist point is outside the two-link annulus or the
/// solution violates joint limits.
std::optional<Eigen::Vector3d> inverse_kinematics(const PlanarArm& arm,
                                                  const Eigen::Vector2d& target,
                                                  double phi);

struct TaskContext {
  Eigen::Vector3d q_init = Eigen::Vector3d::Zero();
  Eigen::Vector3d dq_init = Eigen::Vector3d::Zero();
  // Hit: puck position and velocity. Reach: goal position in the head,
  // start object position in the tail.
  Eigen::Vector4d aux = Eigen::Vector4d::Zero();
};

struct EventLog {
  int step = 0;
  std::string name;
};

struct RolloutResult {
  Eigen::VectorXd rewards;
  double discounted_return = 0.0;
  bool success = false;
  std::string event = "timeout";
  double aux_metric = 0.0;  // hit: max puck speed; reach: final distance
  std::vector<EventLog> events;
};

/// Analytic end-of-motion prior; doubles as the latent center in
/// no-prior mode (hold the start configuration, end at rest).
struct PriorBias {
  Eigen::Vector3d end_q = Eigen::Vector3d::Zero();
  Eigen::Vector3d end_dq = Eigen::Vector3d::Zero();
  Eigen::Vector3d end_ddq = Eigen::Vector3d::Zero();
};

class Env {
 public:
  virtual ~Env() = default;
  virtual const PlanarArm& arm() const = 0;
  virtual int task_dim() const = 0;
  virtual Eigen::VectorXd task_features(const TaskContext& task) const = 0;
  virtual TaskContext sample_task(std::mt19937_64& rng) const = 0;
  virtual RolloutResult rollout(const TaskContext& task, const Trajectory& traj,
                                double gamma) const = 0;
  virtual std::vector<ConstraintDef> constraint_suite() const = 0;
  /// Analytic bias toward task completion, used by prior mode.
  virtual PriorBias compute_bias(const TaskContext& task,
                                 double predicted_duration) const = 0;
  virtual int horizon() const = 0;
};

struct HitWorldParams {
  double table_length = 2.0;
  double table_halfwidth = 0.5;
  double own_band_x = 0.1;
  double goal_halfwidth = 0.1;
  double puck_radius = 0.03;
  double mallet_radius = 0.05;
  double restitution = 0.9;
  double damping = 0.3;  // 1/s, straight-line puck decay
  double puck_x_min = 0.55;
  double puck_x_max = 0.85;
  double puck_speed_max = 0.3;
  int horizon = 150;
  double dt = 0.02;
  double goal_bonus = 1.5;
  double band_bonus = 0.5;  // graded down as the crossing point leaves the goal
  double side_bonus = 0.3;
  double hit_bias_overlap = 0.03;   // puck/mallet overlap aimed for at contact
  double hit_speed_fraction = 0.8;  // of the max reachable speed along the aim
  // Behind the puck region, with the stick orientation of a hitting pose:
  // the ready wrist then sits on the same line as contact-pose wrists and
  // the stroke costs little joint travel.
  Eigen::Vector2d ready_ee{0.38, 0.0};
  double ready_phi = -1.6;
  double joint_pos_budget = 1e-3;
  double joint_vel_budget = 1e-3;
  double band_budget = 1e-4;
  double surface_budget = 1e-3;
};

/// Puck-hitting task on a planar table strip. The end-effector (a mallet
/// disc) must stay on the table line y=0, between the side bands, and in
/// front of its own band; the puck is a damped free particle that takes
/// the mallet velocity (normal part scaled by the restitution) on contact.
class HitWorld final : public Env {
 public:
  explicit HitWorld(HitWorldParams params = {}, PlanarArm arm = {});

  const PlanarArm& arm() const override { return arm_; }
  int task_dim() const override { return 4; }
  Eigen::VectorXd task_features(const TaskContext& task) const override;
  TaskContext sample_task(std::mt19937_64& rng) const override;
  RolloutResult rollout(const TaskContext& task, const Trajectory& traj,
                        double gamma) const override;
  std::vector<ConstraintDef> constraint_suite() const override;
  PriorBias compute_bias(const TaskContext& task,
                         double predicted_duration) const override;
  int horizon() const override { return params_.horizon; }

  const HitWorldParams& params() const { return params_; }
  const Eigen::Vector3d& ready_configuration() const { return q_ready_; }

 private:
  HitWorldParams params_;
  PlanarArm arm_;
  Eigen::Vector3d q_ready_;
};

struct ReachWorldParams {
  double pedestal_x = 0.45;       // pedestals mirrored at +/- this x
  double pedestal_height = 0.25;  // segments from y=0 up to this height
  // Payload disc carried at the end effector. Large enough that with the
  // last link vertical the wrist stays above the pedestal tops.
  double payload_radius = 0.25;
  double clearance = 0.01;  // resting gap between payload and pedestal top
  double sample_abs_min = 0.44;  // |x| range the object positions are drawn from
  double sample_abs_max = 0.60;
  int horizon = 100;
  double dt = 0.02;
  double success_distance = 0.05;
  double settle_distance = 0.01;  // inner radius of the stop-and-hold reward
  double body_point_spacing = 0.1;
  double body_radius = 0.05;
  double joint_pos_budget = 1e-3;
  double joint_vel_budget = 1e-3;
  double orientation_budget = 1e-3;
  double collision_budget = 1e-4;
};

/// Carry a payload disc from a resting pose above one pedestal to a goal
/// above the other while keeping it vertically oriented and clear of both
/// pedestals.
struct BodyPoint {
  int link = 0;
  double fraction = 0.0;
  double radius = 0.0;
};

class ReachWorld final : public Env {
 public:
  explicit ReachWorld(ReachWorldParams params = {}, PlanarArm arm = {});

  const PlanarArm& arm() const override { return arm_; }
  int task_dim() const override { return 4; }
  Eigen::VectorXd task_features(const TaskContext& task) const override;
  TaskContext sample_task(std::mt19937_64& rng) const override;
  RolloutResult rollout(const TaskContext& task, const Trajectory& traj,
                        double gamma) const override;
  std::vector<ConstraintDef> constraint_suite() const override;
  PriorBias compute_bias(const TaskContext& task,
                         double predicted_duration) const override;
  int horizon() const override { return params_.horizon; }

  const ReachWorldParams& params() const { return params_; }

 private:
  ReachWorldParams params_;
  PlanarArm arm_;
  std::vector<BodyPoint> body_points_;  // arm collision discs + the payload
};

/// Joint position/velocity box constraints shared by both worlds.
std::vector<ConstraintDef> joint_limit_constraints(const PlanarArm& arm,
                                                   double pos_budget = 1e-3,
                                                   double vel_budget = 1e-3);

/// State of the executed 50 Hz control grid: trajectory values linearly
/// interpolated in time, final configuration held after the end.
struct ExecState {
  Eigen::Vector3d q, dq, ddq;
};
ExecState sample_executed(const Trajectory& traj, double t);

}  // namespace cnp3o
