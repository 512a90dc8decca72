#include "cnp3o/envs.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cnp3o {

namespace {

double clip(double v, double lo, double hi) { return std::min(hi, std::max(lo, v)); }

double wrap_pi(double a) {
  while (a > M_PI) a -= 2.0 * M_PI;
  while (a < -M_PI) a += 2.0 * M_PI;
  return a;
}

bool within_limits(const PlanarArm& arm, const Eigen::Vector3d& q) {
  return (q.cwiseAbs().array() <= arm.q_limits.array()).all();
}

// Damped pseudo-inverse of the 2x3 task Jacobian; damping engages only
// near singularities (manipulability below 1e-6).
Eigen::Matrix<double, 3, 2> pinv(const Eigen::Matrix<double, 2, 3>& j) {
  Eigen::Matrix2d jjt = j * j.transpose();
  const double manip = std::sqrt(std::max(0.0, jjt.determinant()));
  if (manip < 1e-6) jjt += 1e-6 * Eigen::Matrix2d::Identity();
  return j.transpose() * jjt.inverse();
}

}  // namespace

FkResult forward_kinematics(const PlanarArm& arm, const Eigen::Vector3d& q) {
  FkResult r;
  r.ee.setZero();
  r.jacobian.setZero();
  double c = 0.0;
  Eigen::Vector3d cum_angles;
  for (int i = 0; i < 3; ++i) {
    c += q[i];
    cum_angles[i] = c;
    r.ee.x() += arm.link_lengths[i] * std::cos(c);
    r.ee.y() += arm.link_lengths[i] * std::sin(c);
  }
  r.phi = c;
  for (int k = 0; k < 3; ++k) {
    for (int i = k; i < 3; ++i) {
      r.jacobian(0, k) -= arm.link_lengths[i] * std::sin(cum_angles[i]);
      r.jacobian(1, k) += arm.link_lengths[i] * std::cos(cum_angles[i]);
    }
  }
  return r;
}

FkResult link_point_kinematics(const PlanarArm& arm, const Eigen::Vector3d& q,
                               int link, double t) {
  FkResult r;
  r.ee.setZero();
  r.jacobian.setZero();
  double c = 0.0;
  Eigen::Vector3d cum_angles = Eigen::Vector3d::Zero();
  Eigen::Vector3d eff_len = Eigen::Vector3d::Zero();
  for (int i = 0; i <= link; ++i) {
    c += q[i];
    cum_angles[i] = c;
    eff_len[i] = (i == link ? t : 1.0) * arm.link_lengths[i];
    r.ee.x() += eff_len[i] * std::cos(c);
    r.ee.y() += eff_len[i] * std::sin(c);
  }
  r.phi = c;
  for (int k = 0; k <= link; ++k) {
    for (int i = k; i <= link; ++i) {
      r.jacobian(0, k) -= eff_len[i] * std::sin(cum_angles[i]);
      r.jacobian(1, k) += eff_len[i] * std::cos(cum_angles[i]);
    }
  }
  return r;
}

std::optional<Eigen::Vector3d> inverse_kinematics(const PlanarArm& arm,
                                                  const Eigen::Vector2d& target,
                                                  double phi) {
  const double l1 = arm.link_lengths[0], l2 = arm.link_lengths[1];
  const Eigen::Vector2d wrist =
      target - arm.link_lengths[2] * Eigen::Vector2d(std::cos(phi), std::sin(phi));
  const double d2 = wrist.squaredNorm();
  const double c2 = (d2 - l1 * l1 - l2 * l2) / (2.0 * l1 * l2);
  if (c2 < -1.0 - 1e-9 || c2 > 1.0 + 1e-9) return std::nullopt;
  const double q2_mag = std::acos(clip(c2, -1.0, 1.0));

  // Both branches, then keep the one with the higher elbow point.
  std::optional<Eigen::Vector3d> best;
  double best_elbow_y = -1e300;
  for (const double q2 : {q2_mag, -q2_mag}) {
    const double q1 = wrap_pi(std::atan2(wrist.y(), wrist.x()) -
                              std::atan2(l2 * std::sin(q2), l1 + l2 * std::cos(q2)));
    const double q3 = wrap_pi(phi - q1 - q2);
    const Eigen::Vector3d q(q1, q2, q3);
    if (!within_limits(arm, q)) continue;
    const double elbow_y = l1 * std::sin(q1);
    if (elbow_y > best_elbow_y) {
      best_elbow_y = elbow_y;
      best = q;
    }
  }
  return best;
}

ExecState sample_executed(const Trajectory& traj, double t) {
  ExecState st;
  const Eigen::Index last = traj.times.size() - 1;
  if (t <= 0.0) {
    st.q = traj.q.row(0);
    st.dq = traj.dq.row(0);
    st.ddq = traj.ddq.row(0);
    return st;
  }
  if (t >= traj.duration) {
    st.q = traj.q.row(last);
    st.dq.setZero();
    st.ddq.setZero();
    return st;
  }
  const double* begin = traj.times.data();
  const Eigen::Index hi =
      std::upper_bound(begin, begin + last + 1, t) - begin;  // first time > t
  const Eigen::Index j = hi - 1;
  const double w = (t - traj.times[j]) / (traj.times[hi] - traj.times[j]);
  st.q = (1.0 - w) * traj.q.row(j) + w * traj.q.row(hi);
  st.dq = (1.0 - w) * traj.dq.row(j) + w * traj.dq.row(hi);
  st.ddq = (1.0 - w) * traj.ddq.row(j) + w * traj.ddq.row(hi);
  return st;
}

std::vector<ConstraintDef> joint_limit_constraints(const PlanarArm& arm,
                                                   double pos_budget,
                                                   double vel_budget) {
  std::vector<ConstraintDef> defs;
  for (int j = 0; j < 3; ++j) {
    ConstraintDef pos;
    pos.name = "joint_pos_" + std::to_string(j);
    pos.kind = ConstraintKind::inequality;
    pos.budget = pos_budget;
    const double lim = arm.q_limits[j];
    pos.evaluator = [j, lim](const Trajectory& traj) {
      ConstraintEval ev;
      const Eigen::Index n_s = traj.q.rows();
      ev.raw.resize(n_s);
      ev.wrt_q = Eigen::MatrixXd::Zero(n_s, traj.q.cols());
      for (Eigen::Index t = 0; t < n_s; ++t) {
        const double v = traj.q(t, j);
        ev.raw[t] = std::abs(v) - lim;
        ev.wrt_q(t, j) = v >= 0 ? 1.0 : -1.0;
      }
      return ev;
    };
    defs.push_back(std::move(pos));
  }
  for (int j = 0; j < 3; ++j) {
    ConstraintDef vel;
    vel.name = "joint_vel_" + std::to_string(j);
    vel.kind = ConstraintKind::inequality;
    vel.budget = vel_budget;
    const double lim = arm.dq_limits[j];
    vel.evaluator = [j, lim](const Trajectory& traj) {
      ConstraintEval ev;
      const Eigen::Index n_s = traj.dq.rows();
      ev.raw.resize(n_s);
      ev.wrt_dq = Eigen::MatrixXd::Zero(n_s, traj.dq.cols());
      for (Eigen::Index t = 0; t < n_s; ++t) {
        const double v = traj.dq(t, j);
        ev.raw[t] = std::abs(v) - lim;
        ev.wrt_dq(t, j) = v >= 0 ? 1.0 : -1.0;
      }
      return ev;
    };
    defs.push_back(std::move(vel));
  }
  return defs;
}

HitWorld::HitWorld(HitWorldParams params, PlanarArm arm)
    : params_(std::move(params)), arm_(std::move(arm)) {
  const auto q = inverse_kinematics(arm_, params_.ready_ee, params_.ready_phi);
  if (!q)
    throw std::runtime_error("hit world: ready end-effector pose is unreachable");
  q_ready_ = *q;
}

Eigen::VectorXd HitWorld::task_features(const TaskContext& task) const {
  return task.aux;
}

TaskContext HitWorld::sample_task(std::mt19937_64& rng) const {
  std::uniform_real_distribution<double> ux(params_.puck_x_min, params_.puck_x_max);
  std::uniform_real_distribution<double> uspeed(0.0, params_.puck_speed_max);
  std::uniform_int_distribution<int> usign(0, 1);
  TaskContext task;
  task.q_init = q_ready_;
  task.dq_init.setZero();
  const double speed = uspeed(rng) * (usign(rng) == 0 ? 1.0 : -1.0);
  task.aux << ux(rng), 0.0, speed, 0.0;
  return task;
}

RolloutResult HitWorld::rollout(const TaskContext& task, const Trajectory& traj,
                                double gamma) const {
  const HitWorldParams& w = params_;
  const double bonus_scale =
      (1.0 - std::pow(gamma, w.horizon)) / (1.0 - gamma);
  RolloutResult res;
  Eigen::Vector2d p = task.aux.head<2>();
  Eigen::Vector2d v = task.aux.tail<2>();

  double d_min =
      (forward_kinematics(arm_, task.q_init).ee - p).norm();
  std::vector<double> rewards;
  rewards.reserve(static_cast<size_t>(w.horizon));
  bool hit_logged = false;

  for (int k = 0; k < w.horizon; ++k) {
    const ExecState st = sample_executed(traj, k * w.dt);
    const FkResult fk = forward_kinematics(arm_, st.q);
    const Eigen::Vector2d m = fk.ee;
    const Eigen::Vector2d vm = fk.jacobian * st.dq;
    double r = 0.0;

    // Mallet-puck contact: puck takes the mallet's tangential velocity
    // and the restitution-scaled normal component.
    const Eigen::Vector2d diff = p - m;
    const double dist = diff.norm();
    if (dist <= w.mallet_radius + w.puck_radius && dist > 1e-12) {
      const Eigen::Vector2d n = diff / dist;
      if ((vm - v).dot(n) > 0.0) {
        const double vn = vm.dot(n);
        v = w.restitution * std::max(0.0, vn) * n + (vm - vn * n);
        if (!hit_logged) {
          res.events.push_back({k, "hit"});
          hit_logged = true;
        }
      }
    }

    // Straight-line puck motion with linear damping.
    if (w.damping > 0.0) {
      const double decay = std::exp(-w.damping * w.dt);
      p += v * (1.0 - decay) / w.damping;
      v *= decay;
    } else {
      p += v * w.dt;
    }

    std::string event;
    double bonus = 0.0;
    if (p.x() + w.puck_radius >= w.table_length) {
      if (std::abs(p.y()) <= w.goal_halfwidth) {
        event = "goal";
        bonus = w.goal_bonus - 5.0 * clip(std::abs(p.y()), 0.0, 0.1);
      } else {
        event = "opponent_band";
        bonus = w.band_bonus *
                (1.0 - 2.0 * clip(std::abs(p.y()) - w.goal_halfwidth, 0.0, 0.35));
      }
    } else if (std::abs(p.y()) + w.puck_radius >= w.table_halfwidth) {
      event = "side_band";
      bonus = w.side_bonus * (1.0 - clip(w.table_length - p.x(), 0.0, 1.0));
      const double lim = w.table_halfwidth - w.puck_radius;
      p.y() = (p.y() > 0 ? 1.0 : -1.0) * (2.0 * lim - std::abs(p.y()));
      v.y() = -w.restitution * v.y();
    } else if (p.x() - w.puck_radius <= w.own_band_x && v.x() < 0.0) {
      const double lim = w.own_band_x + w.puck_radius;
      p.x() = 2.0 * lim - p.x();
      v.x() = -w.restitution * v.x();
      res.events.push_back({k, "own_band"});
    }

    const double d = (p - m).norm();
    if (d < d_min) {
      r += 10.0 * (d_min - d);
      d_min = d;
    }
    if (p.x() > w.table_length / 2.0) r += 1.5 * clip(v.x(), 0.0, 3.0);
    res.aux_metric = std::max(res.aux_metric, v.norm());

    if (!event.empty()) {
      r += bonus * bonus_scale;
      rewards.push_back(r);
      res.event = event;
      res.events.push_back({k, event});
      res.success = (event == "goal");
      break;
    }
    rewards.push_back(r);
  }

  res.rewards = Eigen::Map<Eigen::VectorXd>(rewards.data(),
                                            static_cast<Eigen::Index>(rewards.size()));
  double disc = 1.0;
  for (double r : rewards) {
    res.discounted_return += disc * r;
    disc *= gamma;
  }
  return res;
}

std::vector<ConstraintDef> HitWorld::constraint_suite() const {
  std::vector<ConstraintDef> defs = joint_limit_constraints(
      arm_, params_.joint_pos_budget, params_.joint_vel_budget);
  const PlanarArm arm = arm_;
  const HitWorldParams w = params_;

  auto ee_rows = [arm](const Trajectory& traj) {
    const Eigen::Index n_s = traj.q.rows();
    Eigen::MatrixXd ee(n_s, 2);
    std::vector<Eigen::Matrix<double, 2, 3>> jac(static_cast<size_t>(n_s));
    for (Eigen::Index t = 0; t < n_s; ++t) {
      const FkResult fk = forward_kinematics(arm, traj.q.row(t));
      ee.row(t) = fk.ee.transpose();
      jac[static_cast<size_t>(t)] = fk.jacobian;
    }
    return std::make_pair(ee, jac);
  };

  ConstraintDef own;
  own.name = "own_band";
  own.kind = ConstraintKind::inequality;
  own.budget = w.band_budget;
  own.evaluator = [ee_rows, w](const Trajectory& traj) {
    ConstraintEval ev;
    const auto [ee, jac] = ee_rows(traj);
    const Eigen::Index n_s = ee.rows();
    ev.raw.resize(n_s);
    ev.wrt_q = Eigen::MatrixXd::Zero(n_s, 3);
    for (Eigen::Index t = 0; t < n_s; ++t) {
      ev.raw[t] = (w.own_band_x + w.mallet_radius) - ee(t, 0);
      ev.wrt_q.row(t) = -jac[static_cast<size_t>(t)].row(0);
    }
    return ev;
  };
  defs.push_back(std::move(own));

  for (const int side : {+1, -1}) {
    ConstraintDef band;
    band.name = side > 0 ? "left_band" : "right_band";
    band.kind = ConstraintKind::inequality;
    band.budget = w.band_budget;
    band.evaluator = [ee_rows, w, side](const Trajectory& traj) {
      ConstraintEval ev;
      const auto [ee, jac] = ee_rows(traj);
      const Eigen::Index n_s = ee.rows();
      ev.raw.resize(n_s);
      ev.wrt_q = Eigen::MatrixXd::Zero(n_s, 3);
      for (Eigen::Index t = 0; t < n_s; ++t) {
        ev.raw[t] = side * ee(t, 1) + w.mallet_radius - w.table_halfwidth;
        ev.wrt_q.row(t) = side * jac[static_cast<size_t>(t)].row(1);
      }
      return ev;
    };
    defs.push_back(std::move(band));
  }

  ConstraintDef surface;
  surface.name = "surface";
  surface.kind = ConstraintKind::equality;
  surface.budget = w.surface_budget;
  surface.evaluator = [ee_rows](const Trajectory& traj) {
    ConstraintEval ev;
    const auto [ee, jac] = ee_rows(traj);
    const Eigen::Index n_s = ee.rows();
    ev.raw = ee.col(1);
    ev.wrt_q = Eigen::MatrixXd::Zero(n_s, 3);
    for (Eigen::Index t = 0; t < n_s; ++t) {
      ev.wrt_q.row(t) = jac[static_cast<size_t>(t)].row(1);
    }
    return ev;
  };
  defs.push_back(std::move(surface));
  return defs;
}

PriorBias HitWorld::compute_bias(const TaskContext& task,
                                 double predicted_duration) const {
  const HitWorldParams& w = params_;
  const Eigen::Vector2d p0 = task.aux.head<2>();
  const Eigen::Vector2d v0 = task.aux.tail<2>();
  Eigen::Vector2d p = p0;
  if (w.damping > 0.0) {
    p += v0 * (1.0 - std::exp(-w.damping * predicted_duration)) / w.damping;
  } else {
    p += v0 * predicted_duration;
  }
  p.x() = clip(p.x(), w.own_band_x + w.puck_radius, w.table_length - w.puck_radius);

  const Eigen::Vector2d goal_center(w.table_length, 0.0);
  Eigen::Vector2d u = goal_center - p;
  u.normalize();
  const double back = w.mallet_radius + w.puck_radius - w.hit_bias_overlap;
  const Eigen::Vector2d desired = p - back * u;
  // Mallet stick held perpendicular to the stroke (wrist above the table
  // line, like the ready pose): the wrist's Jacobian column then acts
  // fully along the hit direction instead of being orthogonal to it.
  const double psi = std::atan2(u.y(), u.x());

  // Slide along the puck-goal line until the contact pose is reachable;
  // fall back to the mirrored and aligned stick orientations.
  std::optional<Eigen::Vector3d> q_d;
  for (const double phi_d : {psi - M_PI / 2.0, psi + M_PI / 2.0, psi}) {
    for (double off = 0.0; off <= 0.5 + 1e-12 && !q_d; off += 0.001) {
      for (const double s : {-off, off}) {
        q_d = inverse_kinematics(arm_, desired + s * u, phi_d);
        if (q_d) break;
      }
    }
    if (q_d) break;
  }

  PriorBias bias;
  if (!q_d) {
    bias.end_q = task.q_init;
    return bias;
  }
  bias.end_q = *q_d;
  const FkResult fk = forward_kinematics(arm_, *q_d);
  const Eigen::Vector3d along = fk.jacobian.transpose() * u;
  const double v_hit = w.hit_speed_fraction *
                       along.cwiseAbs().dot(arm_.dq_limits);
  bias.end_dq = pinv(fk.jacobian) * (v_hit * u);
  // The minimum-norm solution can leave the joint-velocity box even
  // though the commanded speed is achievable; scale it back so the bias
  // itself never asks for an illegal stroke.
  const double ratio =
      (bias.end_dq.cwiseAbs().cwiseQuotient(arm_.dq_limits)).maxCoeff();
  if (ratio > 0.95) bias.end_dq *= 0.95 / ratio;
  return bias;
}

ReachWorld::ReachWorld(ReachWorldParams params, PlanarArm arm)
    : params_(std::move(params)), arm_(std::move(arm)) {
  for (int link = 0; link < 3; ++link) {
    const double len = arm_.link_lengths[link];
    const int n_seg = std::max(1, static_cast<int>(
                                      std::ceil(len / params_.body_point_spacing)));
    for (int j = (link == 0 ? 0 : 1); j <= n_seg; ++j) {
      body_points_.push_back(
          {link, static_cast<double>(j) / n_seg, params_.body_radius});
    }
  }
  body_points_.back().radius = params_.payload_radius;  // the carried disc
}

Eigen::VectorXd ReachWorld::task_features(const TaskContext& task) const {
  return task.aux;
}

TaskContext ReachWorld::sample_task(std::mt19937_64& rng) const {
  const ReachWorldParams& w = params_;
  const double rest_y = w.pedestal_height + w.payload_radius + w.clearance;
  std::uniform_real_distribution<double> ur(w.sample_abs_min, w.sample_abs_max);
  for (int attempt = 0; attempt < 100; ++attempt) {
    const double sx = -ur(rng);
    const double gx = ur(rng);
    const auto q0 = inverse_kinematics(arm_, {sx, rest_y}, M_PI / 2.0);
    if (!q0) continue;
    if (!inverse_kinematics(arm_, {gx, rest_y}, M_PI / 2.0)) continue;
    TaskContext task;
    task.q_init = *q0;
    task.dq_init.setZero();
    task.aux << gx, rest_y, sx, rest_y;
    return task;
  }
  throw std::runtime_error("reach world: no valid task after 100 attempts");
}

RolloutResult ReachWorld::rollout(const TaskContext& task, const Trajectory& traj,
                                  double gamma) const {
  const ReachWorldParams& w = params_;
  const Eigen::Vector2d goal = task.aux.head<2>();
  RolloutResult res;
  res.rewards.resize(w.horizon);
  double disc = 1.0;
  double d = 0.0;
  for (int k = 0; k < w.horizon; ++k) {
    const ExecState st = sample_executed(traj, k * w.dt);
    const FkResult fk = forward_kinematics(arm_, st.q);
    d = (fk.ee - goal).norm();
    double r = 1.0 / (10.0 * d + 1.0) - 1e-6 * st.ddq.squaredNorm();
    if (d < w.settle_distance) r += 0.01 / (st.dq.norm() + 0.01);
    res.rewards[k] = r;
    res.discounted_return += disc * r;
    disc *= gamma;
  }
  res.aux_metric = d;
  res.success = d <= w.success_distance;
  return res;
}

std::vector<ConstraintDef> ReachWorld::constraint_suite() const {
  std::vector<ConstraintDef> defs = joint_limit_constraints(
      arm_, params_.joint_pos_budget, params_.joint_vel_budget);
  const PlanarArm arm = arm_;
  const ReachWorldParams w = params_;

  ConstraintDef orient;
  orient.name = "orientation";
  orient.kind = ConstraintKind::equality;
  orient.budget = params_.orientation_budget;
  orient.evaluator = [](const Trajectory& traj) {
    ConstraintEval ev;
    const Eigen::Index n_s = traj.q.rows();
    ev.raw.resize(n_s);
    ev.wrt_q = Eigen::MatrixXd::Zero(n_s, 3);
    for (Eigen::Index t = 0; t < n_s; ++t) {
      const double a = traj.q.row(t).sum() - M_PI / 2.0;
      ev.raw[t] = 1.0 - std::cos(a);
      ev.wrt_q.row(t).setConstant(std::sin(a));
    }
    return ev;
  };
  defs.push_back(std::move(orient));

  ConstraintDef coll;
  coll.name = "collision";
  coll.kind = ConstraintKind::inequality;
  coll.budget = params_.collision_budget;
  const auto body = body_points_;
  coll.evaluator = [arm, w, body](const Trajectory& traj) {
    ConstraintEval ev;
    const Eigen::Index n_s = traj.q.rows();
    ev.raw = Eigen::VectorXd::Zero(n_s);
    ev.wrt_q = Eigen::MatrixXd::Zero(n_s, 3);
    const double seg_x[2] = {-w.pedestal_x, w.pedestal_x};
    for (Eigen::Index t = 0; t < n_s; ++t) {
      const Eigen::Vector3d q = traj.q.row(t);
      for (const auto& bp : body) {
        const FkResult fk = link_point_kinematics(arm, q, bp.link, bp.fraction);
        for (const double sx : seg_x) {
          const Eigen::Vector2d closest(sx,
                                        clip(fk.ee.y(), 0.0, w.pedestal_height));
          const Eigen::Vector2d delta = fk.ee - closest;
          const double dist = delta.norm();
          const double depth = bp.radius - dist;
          if (depth > 0.0) {
            ev.raw[t] += depth;
            if (dist > 1e-12) {
              ev.wrt_q.row(t) -= (delta / dist).transpose() * fk.jacobian;
            }
          }
        }
      }
    }
    return ev;
  };
  defs.push_back(std::move(coll));
  return defs;
}

PriorBias ReachWorld::compute_bias(const TaskContext& task,
                                   double /*predicted_duration*/) const {
  PriorBias bias;
  const auto q = inverse_kinematics(arm_, task.aux.head<2>(), M_PI / 2.0);
  bias.end_q = q ? *q : task.q_init;
  return bias;
}

}  // namespace cnp3o
