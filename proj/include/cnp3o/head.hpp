#pragma once

#include "cnp3o/envs.hpp"
#include "cnp3o/policy.hpp"
#include "cnp3o/primitives.hpp"

#include <optional>

namespace cnp3o {

/// Static description of how latent vectors become trajectory heads.
struct HeadSettings {
  BasisKind primitive = BasisKind::bspline;
  bool two_segment = false;
  int n_q = 3;
  int n_cfg_weights = 11;
  int n_time_weights = 10;  // forced to 1 for the normalized-RBF variant
  int order = 3;            // spline polynomial degree
  int n_phase = 128;        // phase-grid resolution of evaluated trajectories
  TransformScales scales;
};

/// Deterministic map from one latent vector to a trajectory, plus its
/// exact reverse-mode pull-back.
///
/// B-spline variant: both ends carry full (q, qdot, qddot) boundary
/// conditions; the start comes from the task, the end is an analytic
/// bias plus bounded latent deviations. Interior columns are latent
/// deviations around a straight line in weight space between the two
/// innermost solved boundary columns. Latent order inside the free
/// block is joint-major: index = joint * n_free + column.
///
/// Normalized-RBF variant: only the start position is enforced (by
/// solving the first weight); every other column is a latent deviation
/// around a weight-space line from the start configuration to the bias
/// configuration, and the constant time basis makes the duration exactly
/// the reciprocal of the single time weight.
class HeadAssembler {
 public:
  HeadAssembler(const HeadSettings& settings, const Eigen::VectorXd& dq_max,
                const Eigen::VectorXd& ddq_max);

  const HeadSettings& settings() const { return settings_; }
  const LatentLayout& layout() const { return layout_; }
  const SampleTransform& transform() const { return transform_; }
  const BasisProvider& config_basis() const { return cfg_basis_; }
  const BasisTensor& time_tensor() const { return time_tensor_; }

  struct Forward {
    Eigen::VectorXd zeta;
    Eigen::VectorXd rho;
    TrajectoryHead main;
    std::optional<TrajectoryHead> stop;
    Trajectory traj;
  };

  /// bias supplies the end-value centers; in no-bias operation pass
  /// hold_bias(task) so the latent origin holds the start configuration.
  Forward assemble(const Eigen::VectorXd& zeta, const TaskContext& task,
                   const PriorBias& bias) const;

  /// Pulls trajectory-space gradients (w.r.t. the q, dq and ddq arrays;
  /// empty matrices mean zero) back to the latent vector.
  Eigen::VectorXd backward(const Forward& fwd, const TaskContext& task,
                           const PriorBias& bias, const Eigen::MatrixXd& grad_q,
                           const Eigen::MatrixXd& grad_dq,
                           const Eigen::MatrixXd& grad_ddq) const;

  /// Duration of the main segment implied by a latent vector's time
  /// block alone (the config weights never affect timing). Used to
  /// predict when the motion ends before assembling a trajectory.
  double predicted_main_duration(const Eigen::VectorXd& zeta) const;

  /// End-of-motion center used when no analytic bias is available:
  /// hold the start configuration at rest.
  static PriorBias hold_bias(const TaskContext& task);

 private:
  struct SegmentGrads;  // gradients w.r.t. a segment's boundary values

  TrajectoryHead build_bspline_segment(const Eigen::VectorXd& rho, int ofs_free,
                                       int n_free, int ofs_time, int n_time,
                                       const BoundarySpec& spec) const;
  SegmentGrads backward_bspline_segment(const TrajectoryHead& head,
                                        const Eigen::MatrixXd& grad_q,
                                        const Eigen::MatrixXd& grad_dq,
                                        const Eigen::MatrixXd& grad_ddq,
                                        int ofs_free, int n_free, int ofs_time,
                                        int n_time,
                                        Eigen::VectorXd& rho_bar) const;

  HeadSettings settings_;
  BasisProvider cfg_basis_;
  BasisTensor time_tensor_;
  LatentLayout layout_;
  SampleTransform transform_;
};

}  // namespace cnp3o
