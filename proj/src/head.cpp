#include "cnp3o/head.hpp"

#include <stdexcept>

namespace cnp3o {

namespace {

std::array<double, 4> time_boundaries_of(const Eigen::VectorXd& w_t,
                                         const BasisTensor& tt) {
  const Eigen::Index last = tt.values.rows() - 1;
  const double r0 = tt.values.row(0).dot(w_t);
  const double rs0 = tt.d1.row(0).dot(w_t);
  const double r1 = tt.values.row(last).dot(w_t);
  const double rs1 = tt.d1.row(last).dot(w_t);
  return {r0, rs0 * r0, r1, rs1 * r1};
}

struct TrajVjp {
  Eigen::MatrixXd w_bar;   // n_q x n_b, gradient at the config weights
  Eigen::VectorXd wt_bar;  // gradient at the time weights (r / r_s paths)
};

// Pull-back through q = values*W^T, dq = (d1*W^T) o r,
// ddq = ((d2*W^T) o r + (d1*W^T) o r_s) o r, row-wise in the phase grid.
TrajVjp trajectory_vjp(const BasisTensor& cfg, const BasisTensor& tt,
                       const TrajectoryHead& head, const Eigen::MatrixXd& gq,
                       const Eigen::MatrixXd& gdq, const Eigen::MatrixXd& gddq) {
  const Eigen::VectorXd r = tt.values * head.time_weights;
  const Eigen::VectorXd r_s = tt.d1 * head.time_weights;
  const Eigen::MatrixXd wt = head.config_weights.transpose();
  const Eigen::MatrixXd a = cfg.d1 * wt;  // phase-derivative of q
  const Eigen::MatrixXd b = cfg.d2 * wt;
  const Eigen::Index n_s = cfg.values.rows();

  TrajVjp out;
  out.w_bar = gq.transpose() * cfg.values;
  Eigen::VectorXd r_bar = Eigen::VectorXd::Zero(n_s);
  Eigen::VectorXd rs_bar = Eigen::VectorXd::Zero(n_s);

  if (gdq.size() != 0) {
    out.w_bar +=
        (gdq.array().colwise() * r.array()).matrix().transpose() * cfg.d1;
    r_bar += (gdq.array() * a.array()).rowwise().sum().matrix();
  }
  if (gddq.size() != 0) {
    const Eigen::ArrayXd r2 = r.array().square();
    const Eigen::ArrayXd rsr = r_s.array() * r.array();
    out.w_bar += (gddq.array().colwise() * rsr).matrix().transpose() * cfg.d1;
    out.w_bar += (gddq.array().colwise() * r2).matrix().transpose() * cfg.d2;
    r_bar += (gddq.array() * (b.array().colwise() * (2.0 * r.array()) +
                              a.array().colwise() * r_s.array()))
                 .rowwise()
                 .sum()
                 .matrix();
    rs_bar += ((gddq.array() * a.array()).rowwise().sum() * r.array()).matrix();
  }
  out.wt_bar = tt.values.transpose() * r_bar + tt.d1.transpose() * rs_bar;
  return out;
}

}  // namespace

struct HeadAssembler::SegmentGrads {
  Eigen::VectorXd q0, dq0, ddq0, qd, dqd, ddqd;
};

double HeadAssembler::predicted_main_duration(
    const Eigen::VectorXd& zeta) const {
  if (zeta.size() != layout_.dim)
    throw std::invalid_argument("head: latent size mismatch");
  const Eigen::VectorXd rho = transform_.apply(zeta);
  const Eigen::VectorXd w_t = rho.segment(layout_.ofs_time, layout_.n_time);
  return phase_to_time(w_t, time_tensor_).duration;
}

PriorBias HeadAssembler::hold_bias(const TaskContext& task) {
  PriorBias b;
  b.end_q = task.q_init;
  return b;
}

HeadAssembler::HeadAssembler(const HeadSettings& settings,
                             const Eigen::VectorXd& dq_max,
                             const Eigen::VectorXd& ddq_max)
    : settings_(settings) {
  const int n_q = settings_.n_q;
  if (settings_.primitive == BasisKind::bspline) {
    cfg_basis_ = make_bspline_provider(settings_.order, settings_.n_cfg_weights,
                                       settings_.n_phase);
    time_tensor_ = make_bspline_provider(settings_.order,
                                         settings_.n_time_weights,
                                         settings_.n_phase)
                       .tensor;
    const int n_free = settings_.n_cfg_weights - 6;  // d=2 at both ends
    if (n_free < 0)
      throw std::invalid_argument(
          "head: spline needs at least six configuration weights");
    layout_ =
        LatentLayout::make(n_q, n_free, settings_.n_time_weights,
                           settings_.two_segment, n_free,
                           settings_.n_time_weights, true);
  } else {
    if (settings_.two_segment)
      throw std::invalid_argument(
          "head: two-segment mode requires the spline basis");
    if (settings_.n_cfg_weights < 2)
      throw std::invalid_argument("head: too few basis weights");
    settings_.n_time_weights = 1;
    cfg_basis_ =
        make_promp_rbf_provider(settings_.n_cfg_weights, settings_.n_phase);
    time_tensor_ = make_constant_basis_tensor(settings_.n_phase);
    layout_ = LatentLayout::make(n_q, settings_.n_cfg_weights - 1, 1, false, 0,
                                 0, false);
  }
  transform_ = make_transform(layout_, settings_.scales, dq_max, ddq_max);
}

TrajectoryHead HeadAssembler::build_bspline_segment(
    const Eigen::VectorXd& rho, int ofs_free, int n_free, int ofs_time,
    int n_time, const BoundarySpec& spec) const {
  TrajectoryHead head;
  head.time_weights = rho.segment(ofs_time, n_time);
  const auto tb = time_boundaries_of(head.time_weights, time_tensor_);
  const BoundaryColumns cols = solve_boundary_weights(spec, cfg_basis_.kv, tb);

  const int n_q = settings_.n_q;
  const int n_b = settings_.n_cfg_weights;
  head.config_weights.resize(n_q, n_b);
  head.config_weights.leftCols(3) = cols.first;
  head.config_weights.rightCols(3) = cols.last;
  for (int i = 0; i < n_free; ++i) {
    const double frac = static_cast<double>(i + 1) / (n_free + 1);
    Eigen::VectorXd col =
        (1.0 - frac) * cols.first.col(2) + frac * cols.last.col(0);
    for (int j = 0; j < n_q; ++j) col[j] += rho[ofs_free + j * n_free + i];
    head.config_weights.col(3 + i) = col;
  }
  head.boundary_spec = spec;
  return head;
}

HeadAssembler::Forward HeadAssembler::assemble(const Eigen::VectorXd& zeta,
                                               const TaskContext& task,
                                               const PriorBias& bias) const {
  if (zeta.size() != layout_.dim)
    throw std::invalid_argument("head: latent size mismatch");
  Forward fwd;
  fwd.zeta = zeta;
  fwd.rho = transform_.apply(zeta);
  const int n_q = settings_.n_q;

  if (settings_.primitive == BasisKind::bspline) {
    BoundarySpec spec;
    spec.q0 = task.q_init;
    spec.dq0 = Eigen::VectorXd(task.dq_init);
    spec.ddq0 = Eigen::VectorXd::Zero(n_q);
    spec.qd =
        bias.end_q + Eigen::Vector3d(fwd.rho.segment(layout_.ofs_end_q, n_q));
    spec.dqd =
        Eigen::VectorXd(bias.end_dq) + fwd.rho.segment(layout_.ofs_end_dq, n_q);
    spec.ddqd = Eigen::VectorXd(bias.end_ddq) +
                fwd.rho.segment(layout_.ofs_end_ddq, n_q);
    fwd.main = build_bspline_segment(fwd.rho, layout_.ofs_cfg_free,
                                     layout_.n_free_cfg, layout_.ofs_time,
                                     layout_.n_time, spec);
    if (settings_.two_segment) {
      BoundarySpec stop;
      stop.q0 = spec.qd;
      stop.dq0 = *spec.dqd;
      stop.ddq0 = *spec.ddqd;
      stop.qd = Eigen::VectorXd(task.q_init) +
                fwd.rho.segment(layout_.ofs_retreat_q, n_q);
      stop.dqd = Eigen::VectorXd::Zero(n_q);
      stop.ddqd = Eigen::VectorXd::Zero(n_q);
      fwd.stop = build_bspline_segment(fwd.rho, layout_.ofs_stop_free,
                                       layout_.n_free_stop,
                                       layout_.ofs_stop_time,
                                       layout_.n_time_stop, stop);
      fwd.traj = compose_two_segments(fwd.main, *fwd.stop, cfg_basis_.tensor,
                                      time_tensor_);
    } else {
      fwd.traj = eval_trajectory(fwd.main, cfg_basis_.tensor, time_tensor_);
    }
    return fwd;
  }

  // Normalized-RBF variant: free columns around a weight-space line from
  // the start configuration to the bias configuration; the first column
  // pins the start position.
  const int n_b = settings_.n_cfg_weights;
  const int n_free = layout_.n_free_cfg;
  TrajectoryHead head;
  head.time_weights = fwd.rho.segment(layout_.ofs_time, 1);
  head.config_weights.resize(n_q, n_b);
  for (int k = 1; k < n_b; ++k) {
    const double frac =
        n_b > 2 ? static_cast<double>(k - 1) / (n_b - 2) : 1.0;
    Eigen::Vector3d col = task.q_init + frac * (bias.end_q - task.q_init);
    for (int j = 0; j < n_q; ++j)
      col[j] += fwd.rho[layout_.ofs_cfg_free + j * n_free + (k - 1)];
    head.config_weights.col(k) = col;
  }
  const Eigen::VectorXd phi0 = cfg_basis_.tensor.values.row(0).transpose();
  for (int j = 0; j < n_q; ++j) {
    head.config_weights(j, 0) = first_weight_from_rest(
        phi0, head.config_weights.row(j).tail(n_b - 1).transpose(),
        task.q_init[j]);
  }
  fwd.main = head;
  fwd.traj = eval_trajectory(fwd.main, cfg_basis_.tensor, time_tensor_);
  return fwd;
}

HeadAssembler::SegmentGrads HeadAssembler::backward_bspline_segment(
    const TrajectoryHead& head, const Eigen::MatrixXd& grad_q,
    const Eigen::MatrixXd& grad_dq, const Eigen::MatrixXd& grad_ddq,
    int ofs_free, int n_free, int ofs_time, int n_time,
    Eigen::VectorXd& rho_bar) const {
  const int n_q = settings_.n_q;
  TrajVjp vjp = trajectory_vjp(cfg_basis_.tensor, time_tensor_, head, grad_q,
                               grad_dq, grad_ddq);

  // Interior columns: deviations flow to the latents; the straight-line
  // centers flow to the innermost boundary columns.
  Eigen::VectorXd w3_bar = Eigen::VectorXd::Zero(n_q);
  Eigen::VectorXd wn2_bar = Eigen::VectorXd::Zero(n_q);
  for (int i = 0; i < n_free; ++i) {
    const double frac = static_cast<double>(i + 1) / (n_free + 1);
    const Eigen::VectorXd col_bar = vjp.w_bar.col(3 + i);
    for (int j = 0; j < n_q; ++j)
      rho_bar[ofs_free + j * n_free + i] += col_bar[j];
    w3_bar += (1.0 - frac) * col_bar;
    wn2_bar += frac * col_bar;
  }

  Eigen::MatrixXd dfirst = vjp.w_bar.leftCols(3);
  dfirst.col(2) += w3_bar;
  Eigen::MatrixXd dlast = vjp.w_bar.rightCols(3);
  dlast.col(0) += wn2_bar;

  const auto tb = time_boundaries_of(head.time_weights, time_tensor_);
  const BoundarySolveGrads bg = solve_boundary_weights_vjp(
      *head.boundary_spec, cfg_basis_.kv, tb, dfirst, dlast);

  // Time weights: r / r_s paths plus the endpoint boundary path through
  // (r(0), r_s(0) r(0), r(1), r_s(1) r(1)).
  const Eigen::Index last = time_tensor_.values.rows() - 1;
  const double rs0 = time_tensor_.d1.row(0).dot(head.time_weights);
  const double rs1 = time_tensor_.d1.row(last).dot(head.time_weights);
  Eigen::VectorXd wt_bar = vjp.wt_bar;
  wt_bar += bg.time_boundaries[0] * time_tensor_.values.row(0).transpose();
  wt_bar += bg.time_boundaries[1] *
            (rs0 * time_tensor_.values.row(0).transpose() +
             tb[0] * time_tensor_.d1.row(0).transpose());
  wt_bar += bg.time_boundaries[2] * time_tensor_.values.row(last).transpose();
  wt_bar += bg.time_boundaries[3] *
            (rs1 * time_tensor_.values.row(last).transpose() +
             tb[2] * time_tensor_.d1.row(last).transpose());
  rho_bar.segment(ofs_time, n_time) += wt_bar;

  return SegmentGrads{bg.q0, bg.dq0, bg.ddq0, bg.qd, bg.dqd, bg.ddqd};
}

Eigen::VectorXd HeadAssembler::backward(const Forward& fwd,
                                        const TaskContext& task,
                                        const PriorBias& bias,
                                        const Eigen::MatrixXd& grad_q,
                                        const Eigen::MatrixXd& grad_dq,
                                        const Eigen::MatrixXd& grad_ddq) const {
  (void)task;
  (void)bias;
  const int n_q = settings_.n_q;
  const Eigen::Index n_rows = fwd.traj.q.rows();
  auto filled = [&](const Eigen::MatrixXd& g) -> Eigen::MatrixXd {
    if (g.size() == 0) return Eigen::MatrixXd::Zero(n_rows, n_q);
    if (g.rows() != n_rows || g.cols() != n_q)
      throw std::invalid_argument("head backward: gradient shape mismatch");
    return g;
  };
  const Eigen::MatrixXd gq = filled(grad_q);
  const Eigen::MatrixXd gdq = filled(grad_dq);
  const Eigen::MatrixXd gddq = filled(grad_ddq);

  Eigen::VectorXd rho_bar = Eigen::VectorXd::Zero(layout_.dim);

  if (settings_.primitive == BasisKind::bspline) {
    const int n_s = settings_.n_phase;
    if (settings_.two_segment) {
      auto split_tail = [&](const Eigen::MatrixXd& g) {
        Eigen::MatrixXd g2 = Eigen::MatrixXd::Zero(n_s, n_q);
        g2.bottomRows(n_s - 1) = g.bottomRows(n_s - 1);
        return g2;
      };
      SegmentGrads sg1 = backward_bspline_segment(
          fwd.main, gq.topRows(n_s), gdq.topRows(n_s), gddq.topRows(n_s),
          layout_.ofs_cfg_free, layout_.n_free_cfg, layout_.ofs_time,
          layout_.n_time, rho_bar);
      SegmentGrads sg2 = backward_bspline_segment(
          *fwd.stop, split_tail(gq), split_tail(gdq), split_tail(gddq),
          layout_.ofs_stop_free, layout_.n_free_stop, layout_.ofs_stop_time,
          layout_.n_time_stop, rho_bar);
      // The stop segment starts at the main segment's end values.
      sg1.qd += sg2.q0;
      sg1.dqd += sg2.dq0;
      sg1.ddqd += sg2.ddq0;
      rho_bar.segment(layout_.ofs_retreat_q, n_q) += sg2.qd;
      rho_bar.segment(layout_.ofs_end_q, n_q) += sg1.qd;
      rho_bar.segment(layout_.ofs_end_dq, n_q) += sg1.dqd;
      rho_bar.segment(layout_.ofs_end_ddq, n_q) += sg1.ddqd;
    } else {
      const SegmentGrads sg = backward_bspline_segment(
          fwd.main, gq, gdq, gddq, layout_.ofs_cfg_free, layout_.n_free_cfg,
          layout_.ofs_time, layout_.n_time, rho_bar);
      rho_bar.segment(layout_.ofs_end_q, n_q) += sg.qd;
      rho_bar.segment(layout_.ofs_end_dq, n_q) += sg.dqd;
      rho_bar.segment(layout_.ofs_end_ddq, n_q) += sg.ddqd;
    }
  } else {
    TrajVjp vjp = trajectory_vjp(cfg_basis_.tensor, time_tensor_, fwd.main, gq,
                                 gdq, gddq);
    const int n_b = settings_.n_cfg_weights;
    const int n_free = layout_.n_free_cfg;
    const Eigen::VectorXd phi0 = cfg_basis_.tensor.values.row(0).transpose();
    // First column is solved from the rest: its gradient redistributes.
    for (int j = 0; j < n_q; ++j) {
      const double w0_bar = vjp.w_bar(j, 0);
      vjp.w_bar.row(j).tail(n_b - 1) -=
          (w0_bar / phi0[0]) * phi0.tail(n_b - 1).transpose();
    }
    for (int k = 1; k < n_b; ++k) {
      for (int j = 0; j < n_q; ++j)
        rho_bar[layout_.ofs_cfg_free + j * n_free + (k - 1)] +=
            vjp.w_bar(j, k);
    }
    rho_bar.segment(layout_.ofs_time, 1) += vjp.wt_bar;
  }

  return rho_bar.cwiseProduct(transform_.jacobian_diag(fwd.zeta));
}

}  // namespace cnp3o
