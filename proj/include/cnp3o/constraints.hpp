#pragma once

#include "cnp3o/primitives.hpp"

#include <functional>
#include <string>
#include <vector>

namespace cnp3o {

enum class ConstraintKind { equality, inequality };

/// Raw per-timestep constraint values and their derivatives w.r.t. the
/// trajectory rows they read. wrt_q and wrt_dq are n_s x n_q; a
/// constraint that ignores velocities leaves wrt_dq zero.
struct ConstraintEval {
  Eigen::VectorXd raw;
  Eigen::MatrixXd wrt_q;
  Eigen::MatrixXd wrt_dq;
};

struct ConstraintDef {
  std::string name;
  ConstraintKind kind = ConstraintKind::inequality;
  double budget = 1e-3;
  std::function<ConstraintEval(const Trajectory&)> evaluator;
};

/// Scalar violation of one constraint over a trajectory: mean |g| for
/// equalities, mean max(0, h) for inequalities. Zero iff satisfied at
/// every sampled timestep.
double violation(const ConstraintDef& def, const Trajectory& traj);

/// Violation plus its subgradient w.r.t. the trajectory's q and dq rows.
struct ViolationWithGrad {
  double c = 0.0;
  Eigen::MatrixXd dc_dq;
  Eigen::MatrixXd dc_ddq_rows;  // derivative w.r.t. dq rows
};
ViolationWithGrad violation_with_grad(const ConstraintDef& def,
                                      const Trajectory& traj);

Eigen::VectorXd all_violations(const std::vector<ConstraintDef>& defs,
                               const Trajectory& traj);

/// Learnable diagonal metric Lambda = diag(exp(eta)) with the budget
/// vector the multiplier update measures violations against.
struct ManifoldMetric {
  Eigen::VectorXd eta;
  Eigen::VectorXd budgets;
  double alpha = 0.01;
  double beta = 0.1;

  Eigen::VectorXd lambdas() const { return eta.array().exp(); }
};

ManifoldMetric make_metric(const std::vector<ConstraintDef>& defs,
                           double alpha = 0.01, double beta = 0.1);

/// L_Lambda = sum_i exp(eta_i) * c_i^2.
double manifold_loss(const ManifoldMetric& metric, const Eigen::VectorXd& c);

/// dL_Lambda/dc_i = 2 * exp(eta_i) * c_i.
Eigen::VectorXd manifold_loss_grad(const ManifoldMetric& metric,
                                   const Eigen::VectorXd& c);

/// eta_i += alpha * log((c_i + beta * budget_i) / budget_i). Fixed point
/// at c_i = (1 - beta) * budget_i; decline rate bounded by alpha*log(beta).
void update_metric(ManifoldMetric& metric, const Eigen::VectorXd& mean_violations);

}  // namespace cnp3o
