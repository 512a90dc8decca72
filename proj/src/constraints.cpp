#include "cnp3o/constraints.hpp"

#include <cmath>
#include <stdexcept>

namespace cnp3o {

double violation(const ConstraintDef& def, const Trajectory& traj) {
  const ConstraintEval ev = def.evaluator(traj);
  if (def.kind == ConstraintKind::equality) return ev.raw.cwiseAbs().mean();
  return ev.raw.cwiseMax(0.0).mean();
}

ViolationWithGrad violation_with_grad(const ConstraintDef& def,
                                      const Trajectory& traj) {
  const ConstraintEval ev = def.evaluator(traj);
  const Eigen::Index n_s = ev.raw.size();
  // Per-timestep outer derivative: sign for |g|, step for max(0, h);
  // zero subgradient at the kink.
  Eigen::VectorXd outer(n_s);
  double c = 0.0;
  for (Eigen::Index t = 0; t < n_s; ++t) {
    const double v = ev.raw[t];
    if (def.kind == ConstraintKind::equality) {
      c += std::abs(v);
      outer[t] = v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0);
    } else {
      c += std::max(0.0, v);
      outer[t] = v > 0 ? 1.0 : 0.0;
    }
  }
  outer /= static_cast<double>(n_s);

  ViolationWithGrad out;
  out.c = c / static_cast<double>(n_s);
  if (ev.wrt_q.size() > 0) {
    out.dc_dq = ev.wrt_q.array().colwise() * outer.array();
  } else {
    out.dc_dq = Eigen::MatrixXd::Zero(n_s, traj.q.cols());
  }
  if (ev.wrt_dq.size() > 0) {
    out.dc_ddq_rows = ev.wrt_dq.array().colwise() * outer.array();
  } else {
    out.dc_ddq_rows = Eigen::MatrixXd::Zero(n_s, traj.q.cols());
  }
  return out;
}

Eigen::VectorXd all_violations(const std::vector<ConstraintDef>& defs,
                               const Trajectory& traj) {
  Eigen::VectorXd c(defs.size());
  for (size_t i = 0; i < defs.size(); ++i) c[i] = violation(defs[i], traj);
  return c;
}

ManifoldMetric make_metric(const std::vector<ConstraintDef>& defs, double alpha,
                           double beta) {
  if (alpha <= 0.0) throw std::invalid_argument("constraint learning rate must be positive");
  if (beta <= 0.0 || beta >= 1.0)
    throw std::invalid_argument("decline bound must lie in (0, 1)");
  ManifoldMetric m;
  m.eta = Eigen::VectorXd::Zero(defs.size());
  m.budgets.resize(defs.size());
  for (size_t i = 0; i < defs.size(); ++i) {
    if (defs[i].budget <= 0.0)
      throw std::invalid_argument("constraint budget must be positive: " + defs[i].name);
    m.budgets[static_cast<Eigen::Index>(i)] = defs[i].budget;
  }
  m.alpha = alpha;
  m.beta = beta;
  return m;
}

double manifold_loss(const ManifoldMetric& metric, const Eigen::VectorXd& c) {
  return (metric.eta.array().exp() * c.array().square()).sum();
}

Eigen::VectorXd manifold_loss_grad(const ManifoldMetric& metric,
                                   const Eigen::VectorXd& c) {
  return 2.0 * (metric.eta.array().exp() * c.array()).matrix();
}

void update_metric(ManifoldMetric& metric, const Eigen::VectorXd& mean_violations) {
  if (mean_violations.size() != metric.eta.size())
    throw std::invalid_argument("violation vector does not match metric size");
  if ((mean_violations.array() < 0.0).any())
    throw std::invalid_argument("violations must be nonnegative");
  metric.eta.array() +=
      metric.alpha *
      ((mean_violations.array() + metric.beta * metric.budgets.array()) /
       metric.budgets.array())
          .log();
}

}  // namespace cnp3o
