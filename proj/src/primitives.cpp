#include "cnp3o/primitives.hpp"

#include <json.hpp>

#include <cmath>
#include <ostream>
#include <stdexcept>

namespace cnp3o {

namespace {

constexpr double kSingularTol = 1e-12;

void check_joint_vec(const std::optional<Eigen::VectorXd>& v, Eigen::Index n_q,
                     const char* what) {
  if (v && v->size() != n_q)
    throw std::invalid_argument(std::string(what) + ": joint dimension mismatch");
}

}  // namespace

int BoundarySpec::deriv_order() const {
  const Eigen::Index n_q = q0.size();
  if (qd.size() != n_q)
    throw std::invalid_argument("boundary spec: joint dimension mismatch");
  check_joint_vec(dq0, n_q, "boundary spec dq0");
  check_joint_vec(dqd, n_q, "boundary spec dqd");
  check_joint_vec(ddq0, n_q, "boundary spec ddq0");
  check_joint_vec(ddqd, n_q, "boundary spec ddqd");
  if (dq0.has_value() != dqd.has_value() || ddq0.has_value() != ddqd.has_value())
    throw std::invalid_argument("boundary spec: one-sided derivative level");
  if (ddq0 && !dq0)
    throw std::invalid_argument("boundary spec: acceleration without velocity");
  if (ddq0) return 2;
  if (dq0) return 1;
  return 0;
}

BasisProvider make_bspline_provider(int order, int num_ctrl, int n_s) {
  BasisProvider p;
  p.kind = BasisKind::bspline;
  p.kv = make_clamped_knots(order, num_ctrl);
  p.tensor = precompute_tensor(p.kv, n_s);
  return p;
}

BasisProvider make_promp_rbf_provider(int num_ctrl, int n_s) {
  if (num_ctrl < 2) throw std::invalid_argument("rbf basis needs at least 2 centers");
  if (n_s < 2) throw std::invalid_argument("phase grid needs at least 2 points");
  const double sigma = 0.7 / (num_ctrl - 1);
  const double inv_s2 = 1.0 / (sigma * sigma);

  BasisProvider p;
  p.kind = BasisKind::promp_rbf;
  BasisTensor& t = p.tensor;
  t.phase.resize(n_s);
  t.values.resize(n_s, num_ctrl);
  t.d1.resize(n_s, num_ctrl);
  t.d2.resize(n_s, num_ctrl);
  t.d3.resize(n_s, num_ctrl);

  Eigen::VectorXd centers(num_ctrl);
  for (int i = 0; i < num_ctrl; ++i)
    centers[i] = static_cast<double>(i) / (num_ctrl - 1);

  Eigen::VectorXd u(num_ctrl), u1(num_ctrl), u2(num_ctrl), u3(num_ctrl);
  for (int j = 0; j < n_s; ++j) {
    const double s = static_cast<double>(j) / (n_s - 1);
    t.phase[j] = s;
    for (int i = 0; i < num_ctrl; ++i) {
      const double z = (s - centers[i]) * inv_s2;
      u[i] = std::exp(-0.5 * (s - centers[i]) * z);
      u1[i] = -z * u[i];
      u2[i] = (z * z - inv_s2) * u[i];
      u3[i] = (-z * z * z + 3.0 * z * inv_s2) * u[i];
    }
    const double S = u.sum(), S1 = u1.sum(), S2 = u2.sum(), S3 = u3.sum();
    // From phi*S = u, differentiate repeatedly and solve for phi^(m).
    Eigen::VectorXd phi = u / S;
    Eigen::VectorXd phi1 = (u1 - phi * S1) / S;
    Eigen::VectorXd phi2 = (u2 - 2.0 * phi1 * S1 - phi * S2) / S;
    Eigen::VectorXd phi3 = (u3 - 3.0 * phi2 * S1 - 3.0 * phi1 * S2 - phi * S3) / S;
    t.values.row(j) = phi.transpose();
    t.d1.row(j) = phi1.transpose();
    t.d2.row(j) = phi2.transpose();
    t.d3.row(j) = phi3.transpose();
  }
  return p;
}

BasisTensor make_constant_basis_tensor(int n_s) {
  if (n_s < 2) throw std::invalid_argument("phase grid needs at least 2 points");
  BasisTensor t;
  t.phase.resize(n_s);
  for (int j = 0; j < n_s; ++j) t.phase[j] = static_cast<double>(j) / (n_s - 1);
  t.values = Eigen::MatrixXd::Ones(n_s, 1);
  t.d1 = Eigen::MatrixXd::Zero(n_s, 1);
  t.d2 = Eigen::MatrixXd::Zero(n_s, 1);
  t.d3 = Eigen::MatrixXd::Zero(n_s, 1);
  return t;
}

BoundaryColumns solve_boundary_weights(const BoundarySpec& spec,
                                       const KnotVector& kv,
                                       const std::array<double, 4>& time_boundaries) {
  const int d = spec.deriv_order();
  const int n_b = kv.num_ctrl;
  const Eigen::Index n_q = spec.q0.size();
  if (n_b < 2 * (d + 1))
    throw std::invalid_argument("boundary solve: too few control points for both ends");

  const double r0 = time_boundaries[0], p0 = time_boundaries[1];
  const double r1 = time_boundaries[2], p1 = time_boundaries[3];
  if (d >= 1 && (r0 <= 0.0 || r1 <= 0.0))
    throw std::invalid_argument("boundary solve: nonpositive endpoint time scaling");

  BoundaryColumns out;
  out.first.resize(n_q, d + 1);
  out.last.resize(n_q, d + 1);
  out.first.col(0) = spec.q0;
  out.last.col(d) = spec.qd;
  if (d == 0) return out;

  const Eigen::VectorXd d1s = eval_basis_derivative(kv, 0.0, 1);
  const Eigen::VectorXd d1e = eval_basis_derivative(kv, 1.0, 1);
  const double e1 = d1s[1];
  const double g1 = d1e[n_b - 1];
  if (std::abs(e1) < kSingularTol || std::abs(g1) < kSingularTol)
    throw std::invalid_argument("invalid knots: singular endpoint derivative");

  // qdot = q_s * r, so the phase-derivative targets are qdot / r.
  const Eigen::VectorXd v0 = *spec.dq0 / r0;
  const Eigen::VectorXd v1 = *spec.dqd / r1;
  out.first.col(1) = out.first.col(0) + v0 / e1;
  out.last.col(d - 1) = out.last.col(d) - v1 / g1;
  if (d == 1) return out;

  const Eigen::VectorXd d2s = eval_basis_derivative(kv, 0.0, 2);
  const Eigen::VectorXd d2e = eval_basis_derivative(kv, 1.0, 2);
  const double f2 = d2s[2];
  const double h0 = d2e[n_b - 3];
  if (std::abs(f2) < kSingularTol || std::abs(h0) < kSingularTol)
    throw std::invalid_argument("invalid knots: singular endpoint curvature");

  // qddot = q_ss * r^2 + q_s * (r_s * r) isolates q_ss at each end.
  const Eigen::VectorXd a0 = (*spec.ddq0 - v0 * p0) / (r0 * r0);
  const Eigen::VectorXd a1 = (*spec.ddqd - v1 * p1) / (r1 * r1);
  out.first.col(2) =
      (a0 - d2s[0] * out.first.col(0) - d2s[1] * out.first.col(1)) / f2;
  out.last.col(0) =
      (a1 - d2e[n_b - 2] * out.last.col(1) - d2e[n_b - 1] * out.last.col(2)) / h0;
  return out;
}

BoundarySolveGrads solve_boundary_weights_vjp(
    const BoundarySpec& spec, const KnotVector& kv,
    const std::array<double, 4>& time_boundaries, const Eigen::MatrixXd& dfirst,
    const Eigen::MatrixXd& dlast) {
  const int d = spec.deriv_order();
  const int n_b = kv.num_ctrl;
  const Eigen::Index n_q = spec.q0.size();
  if (dfirst.rows() != n_q || dfirst.cols() != d + 1 || dlast.rows() != n_q ||
      dlast.cols() != d + 1)
    throw std::invalid_argument("boundary vjp: gradient shape mismatch");

  BoundarySolveGrads g;
  if (d == 0) {
    g.q0 = dfirst.col(0);
    g.qd = dlast.col(0);
    return g;
  }

  const double r0 = time_boundaries[0], p0 = time_boundaries[1];
  const double r1 = time_boundaries[2], p1 = time_boundaries[3];
  const Eigen::VectorXd d1s = eval_basis_derivative(kv, 0.0, 1);
  const Eigen::VectorXd d1e = eval_basis_derivative(kv, 1.0, 1);
  const double e1 = d1s[1];
  const double g1 = d1e[n_b - 1];
  const Eigen::VectorXd v0 = *spec.dq0 / r0;
  const Eigen::VectorXd v1 = *spec.dqd / r1;

  Eigen::VectorXd c0bar = dfirst.col(0);
  Eigen::VectorXd c1bar = dfirst.col(1);
  Eigen::VectorXd cL2bar = dlast.col(d);
  Eigen::VectorXd cL1bar = dlast.col(d - 1);
  Eigen::VectorXd v0bar = Eigen::VectorXd::Zero(n_q);
  Eigen::VectorXd v1bar = Eigen::VectorXd::Zero(n_q);
  double r0bar = 0.0, p0bar = 0.0, r1bar = 0.0, p1bar = 0.0;

  if (d == 2) {
    const Eigen::VectorXd d2s = eval_basis_derivative(kv, 0.0, 2);
    const Eigen::VectorXd d2e = eval_basis_derivative(kv, 1.0, 2);
    const double f2 = d2s[2];
    const double h0 = d2e[n_b - 3];
    const Eigen::VectorXd a0 = (*spec.ddq0 - v0 * p0) / (r0 * r0);
    const Eigen::VectorXd a1 = (*spec.ddqd - v1 * p1) / (r1 * r1);

    // first.col(2) = (a0 - d2s[0]*c0 - d2s[1]*c1) / f2
    const Eigen::VectorXd a0bar = dfirst.col(2) / f2;
    c0bar -= (d2s[0] / f2) * dfirst.col(2);
    c1bar -= (d2s[1] / f2) * dfirst.col(2);
    g.ddq0 = a0bar / (r0 * r0);
    v0bar -= a0bar * (p0 / (r0 * r0));
    r0bar += a0bar.dot((-2.0 / r0) * a0);
    p0bar -= a0bar.dot(v0) / (r0 * r0);

    // last.col(0) = (a1 - d2e[n-2]*last.col(1) - d2e[n-1]*last.col(2)) / h0
    const Eigen::VectorXd a1bar = dlast.col(0) / h0;
    cL1bar -= (d2e[n_b - 2] / h0) * dlast.col(0);
    cL2bar -= (d2e[n_b - 1] / h0) * dlast.col(0);
    g.ddqd = a1bar / (r1 * r1);
    v1bar -= a1bar * (p1 / (r1 * r1));
    r1bar += a1bar.dot((-2.0 / r1) * a1);
    p1bar -= a1bar.dot(v1) / (r1 * r1);
  }

  // first.col(1) = first.col(0) + v0/e1;  last.col(d-1) = last.col(d) - v1/g1
  c0bar += c1bar;
  v0bar += c1bar / e1;
  cL2bar += cL1bar;
  v1bar -= cL1bar / g1;

  // v = dq / r at each end
  g.dq0 = v0bar / r0;
  r0bar -= v0bar.dot(v0) / r0;
  g.dqd = v1bar / r1;
  r1bar -= v1bar.dot(v1) / r1;

  g.q0 = c0bar;
  g.qd = cL2bar;
  g.time_boundaries = {r0bar, p0bar, r1bar, p1bar};
  return g;
}

double first_weight_from_rest(const Eigen::VectorXd& phi_at_0,
                              const Eigen::VectorXd& w_rest, double target) {
  if (phi_at_0.size() != w_rest.size() + 1)
    throw std::invalid_argument("first weight solve: basis/weight size mismatch");
  if (std::abs(phi_at_0[0]) < kSingularTol)
    throw std::invalid_argument("first weight solve: vanishing leading basis value");
  const double rest = phi_at_0.tail(w_rest.size()).dot(w_rest);
  return (target - rest) / phi_at_0[0];
}

TimeScaling phase_to_time(const Eigen::VectorXd& time_weights,
                          const BasisTensor& time_tensor) {
  if (time_weights.size() != time_tensor.num_basis())
    throw std::invalid_argument("time weights do not match basis tensor");
  TimeScaling ts;
  ts.r = time_tensor.values * time_weights;
  if ((ts.r.array() <= 0.0).any())
    throw std::invalid_argument("invalid time scaling: r(s) not strictly positive");
  ts.r_s = time_tensor.d1 * time_weights;

  const int n_s = time_tensor.num_phase();
  const double ds = 1.0 / (n_s - 1);
  ts.times.resize(n_s);
  ts.times[0] = 0.0;
  for (int j = 1; j < n_s; ++j) {
    ts.times[j] =
        ts.times[j - 1] + 0.5 * ds * (1.0 / ts.r[j - 1] + 1.0 / ts.r[j]);
  }
  ts.duration = ts.times[n_s - 1];
  return ts;
}

Trajectory eval_trajectory(const TrajectoryHead& head,
                           const BasisTensor& cfg_tensor,
                           const BasisTensor& time_tensor) {
  if (head.config_weights.cols() != cfg_tensor.num_basis())
    throw std::invalid_argument("config weights do not match basis tensor");
  const TimeScaling ts = phase_to_time(head.time_weights, time_tensor);

  const Eigen::MatrixXd wt = head.config_weights.transpose();
  const Eigen::MatrixXd q_s = cfg_tensor.d1 * wt;
  const Eigen::MatrixXd q_ss = cfg_tensor.d2 * wt;

  Trajectory traj;
  traj.times = ts.times;
  traj.duration = ts.duration;
  traj.q = cfg_tensor.values * wt;
  traj.dq = q_s.array().colwise() * ts.r.array();
  traj.ddq = (q_ss.array().colwise() * ts.r.array() +
              q_s.array().colwise() * ts.r_s.array())
                 .colwise() *
             ts.r.array();
  return traj;
}

Trajectory compose_two_segments(const TrajectoryHead& head_hit,
                                const TrajectoryHead& head_stop,
                                const BasisTensor& cfg_tensor,
                                const BasisTensor& time_tensor) {
  if (!head_hit.boundary_spec || !head_stop.boundary_spec)
    throw std::invalid_argument("composition requires boundary specs on both segments");
  const BoundarySpec& a = *head_hit.boundary_spec;
  const BoundarySpec& b = *head_stop.boundary_spec;
  constexpr double tol = 1e-6;
  auto mismatch = [](const std::optional<Eigen::VectorXd>& x,
                     const std::optional<Eigen::VectorXd>& y) {
    if (x.has_value() != y.has_value()) return true;
    if (!x) return false;
    return ((*x - *y).cwiseAbs().maxCoeff() > tol);
  };
  if ((a.qd - b.q0).cwiseAbs().maxCoeff() > tol || mismatch(a.dqd, b.dq0) ||
      mismatch(a.ddqd, b.ddq0))
    throw std::invalid_argument("composition: junction boundary mismatch");

  const Trajectory t1 = eval_trajectory(head_hit, cfg_tensor, time_tensor);
  const Trajectory t2 = eval_trajectory(head_stop, cfg_tensor, time_tensor);

  const Eigen::Index n1 = t1.times.size(), n2 = t2.times.size();
  Trajectory out;
  out.times.resize(n1 + n2 - 1);
  out.q.resize(n1 + n2 - 1, t1.q.cols());
  out.dq.resizeLike(out.q);
  out.ddq.resizeLike(out.q);
  out.times.head(n1) = t1.times;
  out.times.tail(n2 - 1) = t2.times.tail(n2 - 1).array() + t1.duration;
  out.q.topRows(n1) = t1.q;
  out.q.bottomRows(n2 - 1) = t2.q.bottomRows(n2 - 1);
  out.dq.topRows(n1) = t1.dq;
  out.dq.bottomRows(n2 - 1) = t2.dq.bottomRows(n2 - 1);
  out.ddq.topRows(n1) = t1.ddq;
  out.ddq.bottomRows(n2 - 1) = t2.ddq.bottomRows(n2 - 1);
  out.duration = t1.duration + t2.duration;
  return out;
}

void write_trajectory_jsonl(std::ostream& os, const Trajectory& traj) {
  nlohmann::json rec;
  rec["times"] = std::vector<double>(traj.times.begin(), traj.times.end());
  auto mat = [](const Eigen::MatrixXd& m) {
    std::vector<std::vector<double>> rows(m.rows());
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      rows[i].assign(m.row(i).begin(), m.row(i).end());
    }
    return rows;
  };
  rec["q"] = mat(traj.q);
  rec["dq"] = mat(traj.dq);
  rec["ddq"] = mat(traj.ddq);
  rec["duration"] = traj.duration;
  os << rec.dump() << '\n';
}

}  // namespace cnp3o
