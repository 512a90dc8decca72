#pragma once

#include "cnp3o/splines.hpp"

#include <array>
#include <iosfwd>
#include <optional>

namespace cnp3o {

/// Boundary conditions of a trajectory segment, in joint space.
/// The derivative order d is implied by which levels are supplied:
/// positions only -> d=0, +velocities -> d=1, +accelerations -> d=2.
/// Acceleration without velocity is rejected, as is supplying a level
/// on one end only.
struct BoundarySpec {
  Eigen::VectorXd q0, qd;
  std::optional<Eigen::VectorXd> dq0, dqd;
  std::optional<Eigen::VectorXd> ddq0, ddqd;

  /// Validates consistency and returns d in {0, 1, 2}.
  int deriv_order() const;
};

/// Weights of one motion primitive: per-joint configuration control
/// points plus the control points of the time-scaling function r(s).
struct TrajectoryHead {
  Eigen::MatrixXd config_weights;  // n_q x n_b_q
  Eigen::VectorXd time_weights;    // n_b_t, strictly positive
  std::optional<BoundarySpec> boundary_spec;
};

/// A trajectory sampled on the phase grid, expressed in time.
struct Trajectory {
  Eigen::VectorXd times;  // strictly increasing, times[0] = 0
  Eigen::MatrixXd q, dq, ddq;  // n_s x n_q
  double duration = 0.0;
};

enum class BasisKind { bspline, promp_rbf };

/// A basis family with its precomputed phase-grid tensor. The knot
/// vector is meaningful for the bspline kind only.
struct BasisProvider {
  BasisKind kind = BasisKind::bspline;
  KnotVector kv;
  BasisTensor tensor;
};

BasisProvider make_bspline_provider(int order, int num_ctrl, int n_s);

/// Normalized Gaussian radial basis functions with centers on an
/// equidistant grid over [0,1] and analytic first to third derivatives.
/// Rows of the value tensor sum to one.
BasisProvider make_promp_rbf_provider(int num_ctrl, int n_s);

/// Single basis function identically equal to one. Used as the time
/// tensor of the linear-time variant: with one weight 1/T the scaling
/// r(s) is constant and the duration is exactly T.
BasisTensor make_constant_basis_tensor(int n_s);

/// First and last d+1 columns of config_weights fixed by a boundary solve.
struct BoundaryColumns {
  Eigen::MatrixXd first;  // n_q x (d+1)
  Eigen::MatrixXd last;   // n_q x (d+1)
};

/// Solves for the boundary control points of a clamped B-spline so the
/// time-domain trajectory meets the spec at both ends. time_boundaries
/// packs (r(0), r_s(0)*r(0), r(1), r_s(1)*r(1)); the chain rule gives
/// qdot = q_s*r and qddot = (q_ss*r + q_s*r_s)*r, so each level reduces
/// to one new unknown column and the solve is triangular.
BoundaryColumns solve_boundary_weights(const BoundarySpec& spec,
                                       const KnotVector& kv,
                                       const std::array<double, 4>& time_boundaries);

/// Reverse-mode companion of solve_boundary_weights: pulls gradients at
/// the solved boundary columns back to the boundary values and the four
/// packed time boundaries. Levels absent from the spec stay empty.
struct BoundarySolveGrads {
  Eigen::VectorXd q0, dq0, ddq0, qd, dqd, ddqd;
  std::array<double, 4> time_boundaries{};
};

BoundarySolveGrads solve_boundary_weights_vjp(
    const BoundarySpec& spec, const KnotVector& kv,
    const std::array<double, 4>& time_boundaries, const Eigen::MatrixXd& dfirst,
    const Eigen::MatrixXd& dlast);

/// Solves phi_at_0[0]*w1 + phi_at_0[1:].dot(w_rest) = target for w1.
/// Exact for clamped B-splines; for normalized RBFs this pins the start
/// of the primitive without touching the remaining weights.
double first_weight_from_rest(const Eigen::VectorXd& phi_at_0,
                              const Eigen::VectorXd& w_rest, double target);

/// Time scaling evaluated on the phase grid.
struct TimeScaling {
  Eigen::VectorXd times;  // trapezoid integral of 1/r
  Eigen::VectorXd r;      // r(s_j)
  Eigen::VectorXd r_s;    // dr/ds at s_j
  double duration = 0.0;
};

TimeScaling phase_to_time(const Eigen::VectorXd& time_weights,
                          const BasisTensor& time_tensor);

Trajectory eval_trajectory(const TrajectoryHead& head,
                           const BasisTensor& cfg_tensor,
                           const BasisTensor& time_tensor);

/// Concatenates a primary segment and a stopping segment whose boundary
/// specs agree at the junction (within 1e-6), producing one trajectory
/// with continuous q, qdot, qddot.
Trajectory compose_two_segments(const TrajectoryHead& head_hit,
                                const TrajectoryHead& head_stop,
                                const BasisTensor& cfg_tensor,
                                const BasisTensor& time_tensor);

/// One JSON-lines record: {"times":[...],"q":[[...]],...,"duration":x}.
void write_trajectory_jsonl(std::ostream& os, const Trajectory& traj);

}  // namespace cnp3o
