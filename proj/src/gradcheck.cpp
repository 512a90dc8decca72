#include "cnp3o/gradcheck.hpp"

#include "cnp3o/constraints.hpp"
#include "cnp3o/envs.hpp"
#include "cnp3o/head.hpp"
#include "cnp3o/policy.hpp"
#include "cnp3o/primitives.hpp"
#include "cnp3o/splines.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace cnp3o {
namespace {

constexpr double kFdStep = 1e-5;

/// Relative error floored at unit scale so entries far below the working
/// magnitude of a stage cannot dominate through finite-difference noise.
double compare(double analytic, double numeric, bool fault) {
  if (fault) analytic += 0.05 * (1.0 + std::abs(analytic));
  const double denom = std::max({1.0, std::abs(analytic), std::abs(numeric)});
  return std::abs(analytic - numeric) / denom;
}

/// Central difference of `objective` along the in-place coordinate `x`.
double central_diff(const std::function<double()>& objective, double& x,
                    double h = kFdStep) {
  const double saved = x;
  x = saved + h;
  const double hi = objective();
  x = saved - h;
  const double lo = objective();
  x = saved;
  return (hi - lo) / (2.0 * h);
}

Eigen::VectorXd randn_vec(int n, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = nd(rng);
  return v;
}

Eigen::MatrixXd randn_mat(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng,
                          double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = nd(rng);
  return m;
}

void add_param_noise(std::vector<NamedParam> params, std::mt19937_64& rng,
                     double scale) {
  std::normal_distribution<double> nd(0.0, scale);
  for (auto& p : params)
    for (Eigen::Index i = 0; i < p.tensor->size(); ++i)
      *(p.tensor->data() + i) += nd(rng);
}

/// Analytic basis derivatives of orders one to three against central
/// differences of the next-lower order, away from knots (the third
/// derivative of a cubic is discontinuous there).
double stage_basis_derivatives(bool fault) {
  const KnotVector kv = make_clamped_knots(3, 11);
  std::mt19937_64 rng(101);
  std::uniform_real_distribution<double> us(0.02, 0.98);
  const double h = 1e-6;
  const int spans = kv.num_ctrl - kv.order;  // interior knot spacing = 1/spans
  double worst = 0.0;
  int used = 0;
  while (used < 60) {
    const double s = us(rng);
    const double t = s * spans;
    if (std::abs(t - std::round(t)) * (1.0 / spans) < 1e-3) continue;
    ++used;
    for (int k = 1; k <= kv.order; ++k) {
      const Eigen::VectorXd lo =
          k == 1 ? eval_basis(kv, s - h) : eval_basis_derivative(kv, s - h, k - 1);
      const Eigen::VectorXd hi =
          k == 1 ? eval_basis(kv, s + h) : eval_basis_derivative(kv, s + h, k - 1);
      const Eigen::VectorXd numeric = (hi - lo) / (2.0 * h);
      const Eigen::VectorXd analytic = eval_basis_derivative(kv, s, k);
      for (Eigen::Index i = 0; i < analytic.size(); ++i)
        worst = std::max(worst, compare(analytic[i], numeric[i], fault));
    }
  }
  return worst;
}

/// dq and ddq of an evaluated trajectory against centered differences of
/// q and dq on the (nonuniform) time grid, at a fine phase resolution.
/// Stencils straddling an interior knot are skipped: the third phase
/// derivative of a cubic spline genuinely jumps there, so a centered
/// difference of dq is first-order accurate across it.
double stage_trajectory_time_derivatives(const RunConfig& cfg, bool fault) {
  const bool rbf = cfg.head.primitive == BasisKind::promp_rbf;
  const int n_s = 32001;
  const BasisProvider basis =
      rbf ? make_promp_rbf_provider(cfg.head.n_cfg_weights, n_s)
          : make_bspline_provider(cfg.head.order, cfg.head.n_cfg_weights, n_s);
  const BasisProvider time_basis =
      rbf ? BasisProvider{}
          : make_bspline_provider(cfg.head.order, cfg.head.n_time_weights, n_s);
  const BasisTensor time_tensor =
      rbf ? make_constant_basis_tensor(n_s) : time_basis.tensor;

  std::vector<double> interior_knots;
  if (!rbf) {
    for (const auto* kv : {&basis.kv, &time_basis.kv})
      for (Eigen::Index k = 0; k < kv->knots.size(); ++k)
        if (kv->knots[k] > 0.0 && kv->knots[k] < 1.0)
          interior_knots.push_back(kv->knots[k]);
  }
  const double ds = 1.0 / (n_s - 1);
  const auto stencil_clear = [&](double s) {
    for (const double k : interior_knots)
      if (std::abs(s - k) < 2.5 * ds) return false;
    return true;
  };

  std::mt19937_64 rng(202);
  TrajectoryHead head;
  head.config_weights = randn_mat(cfg.head.n_q, cfg.head.n_cfg_weights, rng, 0.6);
  head.time_weights =
      randn_vec(time_tensor.num_basis(), rng, 0.4).array().exp();
  const Trajectory tr = eval_trajectory(head, basis.tensor, time_tensor);

  double worst = 0.0;
  for (int i = 1; i + 1 < n_s; ++i) {
    if (!stencil_clear(i * ds)) continue;
    const double span = tr.times[i + 1] - tr.times[i - 1];
    for (int j = 0; j < cfg.head.n_q; ++j) {
      const double dq_num = (tr.q(i + 1, j) - tr.q(i - 1, j)) / span;
      worst = std::max(worst, compare(tr.dq(i, j), dq_num, fault));
      const double ddq_num = (tr.dq(i + 1, j) - tr.dq(i - 1, j)) / span;
      worst = std::max(worst, compare(tr.ddq(i, j), ddq_num, fault));
    }
  }
  return worst;
}

/// Pull-back of the boundary-condition solve against differences over
/// every boundary value and the four packed time boundaries.
double stage_boundary_solve(bool fault) {
  const KnotVector kv = make_clamped_knots(3, 11);
  std::mt19937_64 rng(303);
  std::uniform_real_distribution<double> ur(0.5, 2.0);
  double worst = 0.0;
  for (int trial = 0; trial < 9; ++trial) {
    const int d = trial % 3;
    const int n_q = 2;
    BoundarySpec spec;
    spec.q0 = randn_vec(n_q, rng);
    spec.qd = randn_vec(n_q, rng);
    if (d >= 1) {
      spec.dq0 = randn_vec(n_q, rng);
      spec.dqd = randn_vec(n_q, rng);
    }
    if (d == 2) {
      spec.ddq0 = randn_vec(n_q, rng);
      spec.ddqd = randn_vec(n_q, rng);
    }
    std::array<double, 4> tb{ur(rng), randn_vec(1, rng)[0], ur(rng),
                             randn_vec(1, rng)[0]};
    const Eigen::MatrixXd dfirst = randn_mat(n_q, d + 1, rng);
    const Eigen::MatrixXd dlast = randn_mat(n_q, d + 1, rng);

    const auto objective = [&]() {
      const BoundaryColumns bc = solve_boundary_weights(spec, kv, tb);
      return dfirst.cwiseProduct(bc.first).sum() +
             dlast.cwiseProduct(bc.last).sum();
    };
    const BoundarySolveGrads g =
        solve_boundary_weights_vjp(spec, kv, tb, dfirst, dlast);

    const auto check_vec = [&](Eigen::VectorXd& values,
                               const Eigen::VectorXd& analytic) {
      for (Eigen::Index i = 0; i < values.size(); ++i)
        worst = std::max(
            worst, compare(analytic[i], central_diff(objective, values[i]), fault));
    };
    check_vec(spec.q0, g.q0);
    check_vec(spec.qd, g.qd);
    if (spec.dq0) check_vec(*spec.dq0, g.dq0);
    if (spec.dqd) check_vec(*spec.dqd, g.dqd);
    if (spec.ddq0) check_vec(*spec.ddq0, g.ddq0);
    if (spec.ddqd) check_vec(*spec.ddqd, g.ddqd);
    for (int k = 0; k < 4; ++k)
      worst = std::max(worst, compare(g.time_boundaries[k],
                                      central_diff(objective, tb[k]), fault));
  }
  return worst;
}

/// Elementwise latent-to-head map (exp on time dims, bounded tanh on
/// configuration dims) against differences of apply().
double stage_sample_transform(const HeadAssembler& head, bool fault) {
  const SampleTransform& tf = head.transform();
  std::mt19937_64 rng(404);
  double worst = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    Eigen::VectorXd zeta = randn_vec(static_cast<int>(tf.scale.size()), rng);
    const Eigen::VectorXd jac = tf.jacobian_diag(zeta);
    for (Eigen::Index i = 0; i < zeta.size(); ++i) {
      const auto objective = [&]() { return tf.apply(zeta)[i]; };
      worst = std::max(
          worst, compare(jac[i], central_diff(objective, zeta[i]), fault));
    }
  }
  return worst;
}

/// Single linear layer: parameter and input gradients of a probe
/// functional against differences.
double stage_linear_layer(bool fault) {
  std::mt19937_64 rng(505);
  Mlp net = make_mlp(4, {}, 3, rng);
  net.layers[0].W = randn_mat(3, 4, rng);
  net.layers[0].b = randn_mat(3, 1, rng);
  Eigen::MatrixXd x = randn_mat(2, 4, rng);
  const Eigen::MatrixXd probe = randn_mat(2, 3, rng);

  const auto objective = [&]() {
    return probe.cwiseProduct(mlp_forward(net, x, nullptr)).sum();
  };
  MlpCache cache;
  mlp_forward(net, x, &cache);
  MlpGrads grads;
  grads.init_like(net);
  grads.zero();
  const Eigen::MatrixXd dx = mlp_backward(net, cache, probe, grads);

  double worst = 0.0;
  const auto sweep = [&](Eigen::MatrixXd& values, const Eigen::MatrixXd& analytic) {
    for (Eigen::Index r = 0; r < values.rows(); ++r)
      for (Eigen::Index c = 0; c < values.cols(); ++c)
        worst = std::max(worst, compare(analytic(r, c),
                                        central_diff(objective, values(r, c)),
                                        fault));
  };
  sweep(net.layers[0].W, grads.W[0]);
  sweep(net.layers[0].b, grads.b[0]);
  sweep(x, dx);
  return worst;
}

/// Two tanh layers: parameter and input gradients against differences,
/// including saturated units.
double stage_tanh_stack(bool fault) {
  std::mt19937_64 rng(606);
  Mlp net = make_tanh_stack(4, {5, 4}, rng);
  Eigen::MatrixXd x = randn_mat(2, 4, rng, 1.5);
  const Eigen::MatrixXd probe = randn_mat(2, 4, rng);

  const auto objective = [&]() {
    return probe.cwiseProduct(mlp_forward(net, x, nullptr)).sum();
  };
  MlpCache cache;
  mlp_forward(net, x, &cache);
  MlpGrads grads;
  grads.init_like(net);
  grads.zero();
  const Eigen::MatrixXd dx = mlp_backward(net, cache, probe, grads);

  double worst = 0.0;
  const auto sweep = [&](Eigen::MatrixXd& values, const Eigen::MatrixXd& analytic) {
    for (Eigen::Index r = 0; r < values.rows(); ++r)
      for (Eigen::Index c = 0; c < values.cols(); ++c)
        worst = std::max(worst, compare(analytic(r, c),
                                        central_diff(objective, values(r, c)),
                                        fault));
  };
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    sweep(net.layers[l].W, grads.W[l]);
    sweep(net.layers[l].b, grads.b[l]);
  }
  sweep(x, dx);
  return worst;
}

/// Diagonal-Gaussian log density: mean and log-std gradients against
/// differences.
double stage_gaussian_logp(bool fault) {
  std::mt19937_64 rng(707);
  double worst = 0.0;
  for (int trial = 0; trial < 8; ++trial) {
    const int n = 6;
    const Eigen::VectorXd z = randn_vec(n, rng);
    Eigen::VectorXd mu = randn_vec(n, rng, 0.5);
    Eigen::VectorXd log_std = randn_vec(n, rng, 0.4);
    Eigen::VectorXd dmu, dlog_std;
    gaussian_logp_grad(z, mu, log_std, dmu, dlog_std);
    const auto objective = [&]() { return gaussian_logp(z, mu, log_std); };
    for (int i = 0; i < n; ++i) {
      worst = std::max(worst,
                       compare(dmu[i], central_diff(objective, mu[i]), fault));
      worst = std::max(
          worst, compare(dlog_std[i], central_diff(objective, log_std[i]), fault));
    }
  }
  return worst;
}

/// Full latent-to-trajectory pull-back: a random linear probe of the
/// q/dq/ddq arrays, differentiated w.r.t. every latent coordinate.
double stage_head_chain(const RunConfig& cfg, const Env& env,
                        const HeadAssembler& head, bool fault) {
  std::mt19937_64 rng(808);
  const TaskContext task = env.sample_task(rng);
  Eigen::VectorXd zeta = randn_vec(head.layout().dim, rng, 0.7);
  const PriorBias bias =
      cfg.prior_mode()
          ? env.compute_bias(task, head.predicted_main_duration(zeta))
          : HeadAssembler::hold_bias(task);

  const auto fwd = head.assemble(zeta, task, bias);
  const Eigen::Index rows = fwd.traj.q.rows();
  const Eigen::Index n_q = fwd.traj.q.cols();
  const Eigen::MatrixXd pq = randn_mat(rows, n_q, rng);
  const Eigen::MatrixXd pdq = randn_mat(rows, n_q, rng);
  const Eigen::MatrixXd pddq = randn_mat(rows, n_q, rng, 0.1);

  const auto objective = [&]() {
    const auto f = head.assemble(zeta, task, bias);
    return pq.cwiseProduct(f.traj.q).sum() + pdq.cwiseProduct(f.traj.dq).sum() +
           pddq.cwiseProduct(f.traj.ddq).sum();
  };
  const Eigen::VectorXd analytic = head.backward(fwd, task, bias, pq, pdq, pddq);

  double worst = 0.0;
  for (Eigen::Index i = 0; i < zeta.size(); ++i)
    worst = std::max(
        worst, compare(analytic[i], central_diff(objective, zeta[i]), fault));
  return worst;
}

/// Smallest |raw| margin a constraint row may have, measured against its
/// sensitivity to the distribution mean, before a finite-difference step
/// could push it across the |.| or max(0, .) kink.
bool instance_clear_of_kinks(const std::vector<ConstraintDef>& defs,
                             const HeadAssembler& head, const TaskContext& task,
                             const PriorBias& bias, const Eigen::VectorXd& mu,
                             std::mt19937_64& rng) {
  std::vector<Eigen::VectorXd> raw0;
  const auto base = head.assemble(mu, task, bias);
  for (const auto& def : defs) raw0.push_back(def.evaluator(base.traj).raw);

  std::vector<Eigen::VectorXd> worst_sens(defs.size());
  for (std::size_t d = 0; d < defs.size(); ++d)
    worst_sens[d] = Eigen::VectorXd::Zero(raw0[d].size());

  const double probe_eps = 1e-3;
  for (int dir = 0; dir < 3; ++dir) {
    Eigen::VectorXd u = randn_vec(static_cast<int>(mu.size()), rng);
    u.normalize();
    const auto hi = head.assemble(mu + probe_eps * u, task, bias);
    const auto lo = head.assemble(mu - probe_eps * u, task, bias);
    for (std::size_t d = 0; d < defs.size(); ++d) {
      const Eigen::VectorXd rh = defs[d].evaluator(hi.traj).raw;
      const Eigen::VectorXd rl = defs[d].evaluator(lo.traj).raw;
      worst_sens[d] =
          worst_sens[d].cwiseMax((rh - rl).cwiseAbs() / (2.0 * probe_eps));
    }
  }
  // Rows the boundary conditions pin (sensitivity zero) cannot be pushed
  // across a kink no matter how close they sit to one.
  for (std::size_t d = 0; d < defs.size(); ++d)
    for (Eigen::Index i = 0; i < raw0[d].size(); ++i)
      if (worst_sens[d][i] > 1e-6 &&
          std::abs(raw0[d][i]) < 50.0 * kFdStep * worst_sens[d][i])
        return false;
  return true;
}

/// End-to-end constraint-penalty gradient: reduced policy -> mean latent
/// -> bounded transforms -> spline trajectory -> violations -> weighted
/// quadratic penalty, differentiated w.r.t. every network parameter.
double stage_manifold_chain(const RunConfig& cfg, const Env& env,
                            const HeadAssembler& head, bool fault) {
  const auto defs = env.constraint_suite();
  ManifoldMetric metric = make_metric(defs);
  metric.eta.setConstant(0.3);

  std::mt19937_64 task_rng(909);
  const TaskContext task = env.sample_task(task_rng);
  const Eigen::MatrixXd x = env.task_features(task).transpose();

  PolicyNet net;
  PriorBias bias;
  bool found = false;
  for (std::uint64_t attempt = 0; attempt < 64 && !found; ++attempt) {
    auto init_rng = make_stream(1010, attempt, 0);
    net = make_policy(env.task_dim(), head.layout(), init_rng, 8, 2);
    add_param_noise(policy_params(net), init_rng, 0.35);
    const PolicyForward pf = policy_forward(net, x);
    const Eigen::VectorXd mu = pf.mu.row(0).transpose();
    bias = cfg.prior_mode()
               ? env.compute_bias(task, head.predicted_main_duration(mu))
               : HeadAssembler::hold_bias(task);
    const auto fwd = head.assemble(mu, task, bias);
    const Eigen::VectorXd c = all_violations(defs, fwd.traj);
    if (c.maxCoeff() < 1e-3) continue;
    found = instance_clear_of_kinks(defs, head, task, bias, mu, init_rng);
  }
  if (!found)
    throw std::runtime_error(
        "gradcheck: no kink-free constraint instance found");

  const auto objective = [&]() {
    const PolicyForward p = policy_forward(net, x);
    const auto f = head.assemble(p.mu.row(0).transpose(), task, bias);
    return manifold_loss(metric, all_violations(defs, f.traj));
  };

  const PolicyForward pf = policy_forward(net, x);
  const auto fwd = head.assemble(pf.mu.row(0).transpose(), task, bias);
  const Eigen::VectorXd c = all_violations(defs, fwd.traj);
  const Eigen::VectorXd dl_dc = manifold_loss_grad(metric, c);
  Eigen::MatrixXd gq = Eigen::MatrixXd::Zero(fwd.traj.q.rows(), fwd.traj.q.cols());
  Eigen::MatrixXd gdq = gq;
  for (std::size_t i = 0; i < defs.size(); ++i) {
    const double w = dl_dc[static_cast<Eigen::Index>(i)];
    if (w == 0.0) continue;
    const auto vg = violation_with_grad(defs[i], fwd.traj);
    gq += w * vg.dc_dq;
    gdq += w * vg.dc_ddq_rows;
  }
  const Eigen::VectorXd zeta_bar =
      head.backward(fwd, task, bias, gq, gdq, Eigen::MatrixXd());
  PolicyGrads grads;
  grads.init_like(net);
  grads.zero();
  const Eigen::MatrixXd dlstd =
      Eigen::MatrixXd::Zero(1, head.layout().dim);
  policy_backward(net, pf, zeta_bar.transpose(), dlstd, grads);

  double worst = 0.0;
  const auto params = policy_params(net);
  const auto tensors = grads.tensors();
  for (std::size_t t = 0; t < params.size(); ++t) {
    Eigen::MatrixXd& p = *params[t].tensor;
    const Eigen::MatrixXd& g = *tensors[t];
    for (Eigen::Index r = 0; r < p.rows(); ++r)
      for (Eigen::Index col = 0; col < p.cols(); ++col)
        worst = std::max(worst, compare(g(r, col),
                                        central_diff(objective, p(r, col)),
                                        fault));
  }
  return worst;
}

/// Clipped-surrogate gradient through ratios, log densities and the
/// reduced policy, differentiated w.r.t. every network parameter. The
/// parameters are nudged off the collection point so the ratios spread
/// around one, retrying until every ratio is clear of the clip kinks.
double stage_ppo_surrogate(const RunConfig& cfg, const Env& env,
                           const HeadAssembler& head, bool fault) {
  const double eps = cfg.trainer.eps_ppo;
  const int batch = 4;
  Eigen::VectorXd adv(batch);
  adv << 1.2, -0.8, 0.5, -1.5;

  auto init_rng = make_stream(1212, 0, 0);
  PolicyNet net = make_policy(env.task_dim(), head.layout(), init_rng, 8, 2);
  add_param_noise(policy_params(net), init_rng, 0.3);

  std::mt19937_64 data_rng(1313);
  Eigen::MatrixXd x(batch, env.task_dim());
  for (int k = 0; k < batch; ++k)
    x.row(k) = env.task_features(env.sample_task(data_rng)).transpose();
  const PolicyForward pf0 = policy_forward(net, x);
  std::vector<Eigen::VectorXd> zetas(batch);
  Eigen::VectorXd logp_old(batch);
  for (int k = 0; k < batch; ++k) {
    const Eigen::VectorXd mu = pf0.mu.row(k).transpose();
    const Eigen::VectorXd ls = pf0.log_std.row(k).transpose();
    zetas[k] = sample_gaussian(mu, ls, data_rng);
    logp_old[k] = gaussian_logp(zetas[k], mu, ls);
  }

  const auto ratios_of = [&](const PolicyForward& p) {
    Eigen::VectorXd ratios(batch);
    for (int k = 0; k < batch; ++k)
      ratios[k] = std::exp(gaussian_logp(zetas[k], p.mu.row(k).transpose(),
                                         p.log_std.row(k).transpose()) -
                           logp_old[k]);
    return ratios;
  };

  bool found = false;
  for (std::uint64_t attempt = 0; attempt < 64 && !found; ++attempt) {
    auto nudge = make_stream(1414, attempt, 0);
    std::vector<Eigen::MatrixXd> saved;
    for (const auto& p : policy_params(net)) saved.push_back(*p.tensor);
    add_param_noise(policy_params(net), nudge, 0.004);
    const Eigen::VectorXd ratios = ratios_of(policy_forward(net, x));
    found = true;
    for (int k = 0; k < batch; ++k)
      if (std::abs(ratios[k] - (1.0 - eps)) < 2e-3 ||
          std::abs(ratios[k] - (1.0 + eps)) < 2e-3)
        found = false;
    if (!found) {
      auto params = policy_params(net);
      for (std::size_t t = 0; t < params.size(); ++t)
        *params[t].tensor = saved[t];
    }
  }
  if (!found)
    throw std::runtime_error("gradcheck: no clip-margin instance found");

  const auto objective = [&]() {
    return ppo_surrogate(ratios_of(policy_forward(net, x)), adv, eps);
  };

  const PolicyForward pf = policy_forward(net, x);
  const Eigen::VectorXd ratios = ratios_of(pf);
  Eigen::VectorXd d_ratio;
  ppo_surrogate(ratios, adv, eps, &d_ratio);
  Eigen::MatrixXd dmu(batch, head.layout().dim);
  Eigen::MatrixXd dlstd(batch, head.layout().dim);
  for (int k = 0; k < batch; ++k) {
    Eigen::VectorXd gmu, glstd;
    gaussian_logp_grad(zetas[k], pf.mu.row(k).transpose(),
                       pf.log_std.row(k).transpose(), gmu, glstd);
    const double w = d_ratio[k] * ratios[k];  // dL/dlogp_k
    dmu.row(k) = w * gmu.transpose();
    dlstd.row(k) = w * glstd.transpose();
  }
  PolicyGrads grads;
  grads.init_like(net);
  grads.zero();
  policy_backward(net, pf, dmu, dlstd, grads);

  double worst = 0.0;
  const auto params = policy_params(net);
  const auto tensors = grads.tensors();
  for (std::size_t t = 0; t < params.size(); ++t) {
    Eigen::MatrixXd& p = *params[t].tensor;
    const Eigen::MatrixXd& g = *tensors[t];
    for (Eigen::Index r = 0; r < p.rows(); ++r)
      for (Eigen::Index col = 0; col < p.cols(); ++col)
        worst = std::max(worst, compare(g(r, col),
                                        central_diff(objective, p(r, col)),
                                        fault));
  }
  return worst;
}

const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names = {
      "basis_derivatives", "trajectory_time_derivatives",
      "boundary_solve",    "sample_transform",
      "linear_layer",      "tanh_stack",
      "gaussian_logp",     "head_chain",
      "manifold_chain",    "ppo_surrogate"};
  return names;
}

}  // namespace

bool GradCheckReport::all_passed() const {
  return std::all_of(stages.begin(), stages.end(),
                     [](const GradCheckStage& s) { return s.passed; });
}

std::string GradCheckReport::first_failure() const {
  for (const auto& s : stages)
    if (!s.passed) return s.name;
  return {};
}

std::vector<std::string> gradient_check_stage_names() { return stage_names(); }

GradCheckReport run_gradient_checks(const RunConfig& cfg,
                                    const std::string& inject_fault) {
  const auto& names = stage_names();
  if (!inject_fault.empty() &&
      std::find(names.begin(), names.end(), inject_fault) == names.end())
    throw std::invalid_argument("gradcheck: unknown stage '" + inject_fault +
                                "'");

  const auto env = make_env(cfg);
  const HeadAssembler head(cfg.head, env->arm().dq_limits,
                           env->arm().ddq_limits);

  const std::vector<std::function<double(bool)>> runners = {
      [&](bool f) { return stage_basis_derivatives(f); },
      [&](bool f) { return stage_trajectory_time_derivatives(cfg, f); },
      [&](bool f) { return stage_boundary_solve(f); },
      [&](bool f) { return stage_sample_transform(head, f); },
      [&](bool f) { return stage_linear_layer(f); },
      [&](bool f) { return stage_tanh_stack(f); },
      [&](bool f) { return stage_gaussian_logp(f); },
      [&](bool f) { return stage_head_chain(cfg, *env, head, f); },
      [&](bool f) { return stage_manifold_chain(cfg, *env, head, f); },
      [&](bool f) { return stage_ppo_surrogate(cfg, *env, head, f); }};

  GradCheckReport report;
  for (std::size_t i = 0; i < names.size(); ++i) {
    GradCheckStage stage;
    stage.name = names[i];
    stage.max_rel_error = runners[i](names[i] == inject_fault);
    stage.passed = stage.max_rel_error < stage.tolerance;
    report.stages.push_back(std::move(stage));
  }
  return report;
}

}  // namespace cnp3o
