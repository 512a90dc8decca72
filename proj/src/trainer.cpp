#include "cnp3o/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <stdexcept>

namespace cnp3o {

namespace {

constexpr std::uint64_t kInitEpochTag = 0xFFFFFFFFULL;
constexpr std::uint64_t kEvalEpochTag = 0xFFFFFFFEULL;
constexpr std::uint64_t kBatchEpisodeBase = 1'000'000ULL;

TrainerConfig checked(TrainerConfig cfg) {
  cfg.validate();
  return cfg;
}

bool params_finite(const std::vector<NamedParam>& params) {
  for (const auto& p : params)
    if (!p.tensor->allFinite()) return false;
  return true;
}

}  // namespace

void TrainerConfig::validate() const {
  if (n_epochs <= 0 || n_episodes_per_epoch <= 0 || n_fits <= 0 ||
      n_batches <= 0 || batch_size <= 0 || checkpoint_every <= 0)
    throw std::invalid_argument("trainer config: counts must be positive");
  if (!(gamma > 0.0 && gamma <= 1.0))
    throw std::invalid_argument("trainer config: gamma must be in (0, 1]");
  if (!(eps_ppo > 0.0 && eps_ppo < 1.0))
    throw std::invalid_argument("trainer config: clip range must be in (0, 1)");
  if (lr_policy <= 0.0 || lr_value <= 0.0 || alpha <= 0.0 || beta <= 0.0)
    throw std::invalid_argument("trainer config: rates must be positive");
}

Eigen::VectorXd normalize_advantages(const Eigen::VectorXd& raw) {
  const Eigen::Index n = raw.size();
  if (n == 0) return raw;
  const double mean = raw.mean();
  const double var = (raw.array() - mean).square().sum() / n;
  const double std = std::sqrt(var);
  if (std < 1e-8) return Eigen::VectorXd::Zero(n);
  return (raw.array() - mean) / (std + 1e-8);
}

double ppo_surrogate(const Eigen::VectorXd& ratios,
                     const Eigen::VectorXd& advantages, double eps,
                     Eigen::VectorXd* d_ratio) {
  const Eigen::Index n = ratios.size();
  if (n == 0 || advantages.size() != n)
    throw std::invalid_argument("ppo surrogate: empty or mismatched batch");
  if (d_ratio) *d_ratio = Eigen::VectorXd::Zero(n);
  double loss = 0.0;
  for (Eigen::Index k = 0; k < n; ++k) {
    if (!std::isfinite(ratios[k]))
      throw std::runtime_error("ppo surrogate: non-finite probability ratio");
    const double a = advantages[k];
    const double clipped = std::clamp(ratios[k], 1.0 - eps, 1.0 + eps);
    const double t_free = ratios[k] * a;
    const double t_clip = clipped * a;
    loss -= std::min(t_free, t_clip) / n;
    if (d_ratio && t_free <= t_clip) (*d_ratio)[k] = -a / n;
  }
  return loss;
}

Trainer::Trainer(const Env& env, const HeadSettings& head_settings,
                 bool prior_mode, const TrainerConfig& config)
    : env_(env),
      head_(head_settings, env.arm().dq_limits, env.arm().ddq_limits),
      prior_(prior_mode),
      cfg_(checked(config)),
      defs_(env.constraint_suite()),
      metric_(make_metric(defs_, config.alpha, config.beta)),
      opt_policy_(config.lr_policy),
      opt_value_(config.lr_value) {
  auto rng = make_stream(cfg_.seed, kInitEpochTag, 0);
  policy_ = make_policy(env_.task_dim(), head_.layout(), rng);
  value_ = make_value_net(env_.task_dim(), rng);
}

PriorBias Trainer::bias_for(const TaskContext& task,
                            const Eigen::VectorXd& mu) const {
  if (!prior_) return HeadAssembler::hold_bias(task);
  return env_.compute_bias(task, head_.predicted_main_duration(mu));
}

std::vector<RolloutRecord> Trainer::collect_epoch(int epoch) {
  std::vector<RolloutRecord> records;
  records.reserve(cfg_.n_episodes_per_epoch);
  for (int i = 0; i < cfg_.n_episodes_per_epoch; ++i) {
    auto rng = make_stream(cfg_.seed, static_cast<std::uint64_t>(epoch),
                           static_cast<std::uint64_t>(i));
    RolloutRecord rec;
    rec.task = env_.sample_task(rng);
    Eigen::MatrixXd x = env_.task_features(rec.task).transpose();
    const PolicyForward pf = policy_forward(policy_, x);
    const Eigen::VectorXd mu = pf.mu.row(0).transpose();
    const Eigen::VectorXd log_std = pf.log_std.row(0).transpose();
    rec.zeta = sample_gaussian(mu, log_std, rng);
    rec.logp_old = gaussian_logp(rec.zeta, mu, log_std);
    rec.bias = bias_for(rec.task, mu);

    const auto fwd = head_.assemble(rec.zeta, rec.task, rec.bias);
    const RolloutResult rr = env_.rollout(rec.task, fwd.traj, cfg_.gamma);
    rec.j_task = rr.discounted_return;
    rec.success = rr.success;
    rec.aux_metric = rr.aux_metric;
    rec.env_steps = rr.rewards.size();

    const auto mean_fwd = head_.assemble(mu, rec.task, rec.bias);
    rec.violations_mean_traj = all_violations(defs_, mean_fwd.traj);
    rec.value_pred = mlp_forward(value_.net, x, nullptr)(0, 0);
    if (!std::isfinite(rec.logp_old) || !std::isfinite(rec.j_task))
      throw std::runtime_error("collect: non-finite record");
    env_steps_ += rec.env_steps;
    records.push_back(std::move(rec));
  }
  return records;
}

Trainer::MeanTrajGrad Trainer::manifold_step(const Eigen::VectorXd& mu,
                                             const TaskContext& task,
                                             const PriorBias& bias) const {
  const auto fwd = head_.assemble(mu, task, bias);
  const Eigen::VectorXd c = all_violations(defs_, fwd.traj);
  MeanTrajGrad out;
  out.loss = manifold_loss(metric_, c);
  const Eigen::VectorXd dl_dc = manifold_loss_grad(metric_, c);
  Eigen::MatrixXd gq = Eigen::MatrixXd::Zero(fwd.traj.q.rows(), fwd.traj.q.cols());
  Eigen::MatrixXd gdq = gq;
  for (std::size_t i = 0; i < defs_.size(); ++i) {
    const double w = dl_dc[static_cast<Eigen::Index>(i)];
    if (w == 0.0) continue;
    const auto vg = violation_with_grad(defs_[i], fwd.traj);
    gq += w * vg.dc_dq;
    gdq += w * vg.dc_ddq_rows;
  }
  out.zeta_bar = head_.backward(fwd, task, bias, gq, gdq, Eigen::MatrixXd());
  return out;
}

EpochStats Trainer::fit_epoch(int epoch,
                              const std::vector<RolloutRecord>& records) {
  if (records.empty()) throw std::invalid_argument("fit: no records");
  const int n = static_cast<int>(records.size());
  const Eigen::Index dim = head_.layout().dim;

  Eigen::MatrixXd features(n, env_.task_dim());
  Eigen::VectorXd returns(n), raw_adv(n);
  for (int k = 0; k < n; ++k) {
    features.row(k) = env_.task_features(records[k].task).transpose();
    returns[k] = records[k].j_task;
    raw_adv[k] = records[k].j_task - records[k].value_pred;
  }
  Eigen::VectorXd mean_viol =
      Eigen::VectorXd::Zero(records[0].violations_mean_traj.size());
  for (const auto& rec : records) mean_viol += rec.violations_mean_traj;
  mean_viol /= n;

  EpochStats stats;
  stats.epoch = epoch;
  stats.mean_violations = mean_viol;
  stats.mean_j = returns.mean();
  int successes = 0;
  for (const auto& rec : records) successes += rec.success ? 1 : 0;
  stats.success_rate = static_cast<double>(successes) / n;

  PolicyGrads pgrads;
  pgrads.init_like(policy_);
  MlpGrads vgrads;
  vgrads.init_like(value_.net);

  double grad_norm_sum = 0.0, value_loss_sum = 0.0;
  int updates = 0;

  for (int fit = 0; fit < cfg_.n_fits; ++fit) {
    for (int b = 0; b < cfg_.n_batches; ++b) {
      std::vector<int> idx(n);
      std::iota(idx.begin(), idx.end(), 0);
      if (cfg_.batch_size < n) {
        auto rng = make_stream(
            cfg_.seed, static_cast<std::uint64_t>(epoch),
            kBatchEpisodeBase +
                static_cast<std::uint64_t>(fit) * cfg_.n_batches + b);
        std::shuffle(idx.begin(), idx.end(), rng);
        idx.resize(cfg_.batch_size);
      }
      const int bn = static_cast<int>(idx.size());

      Eigen::MatrixXd xb(bn, features.cols());
      Eigen::VectorXd adv_raw(bn), jb(bn);
      for (int k = 0; k < bn; ++k) {
        xb.row(k) = features.row(idx[k]);
        adv_raw[k] = raw_adv[idx[k]];
        jb[k] = returns[idx[k]];
      }
      const Eigen::VectorXd adv = normalize_advantages(adv_raw);

      const PolicyForward pf = policy_forward(policy_, xb);
      Eigen::VectorXd ratios(bn);
      Eigen::MatrixXd gmu_logp(bn, dim), glstd_logp(bn, dim);
      for (int k = 0; k < bn; ++k) {
        const auto& rec = records[idx[k]];
        const Eigen::VectorXd mu = pf.mu.row(k).transpose();
        const Eigen::VectorXd lstd = pf.log_std.row(k).transpose();
        const double logp_new = gaussian_logp(rec.zeta, mu, lstd);
        ratios[k] = std::exp(logp_new - rec.logp_old);
        Eigen::VectorXd dmu, dlstd;
        gaussian_logp_grad(rec.zeta, mu, lstd, dmu, dlstd);
        gmu_logp.row(k) = dmu.transpose();
        glstd_logp.row(k) = dlstd.transpose();
      }
      Eigen::VectorXd d_ratio;
      const double l_task = ppo_surrogate(ratios, adv, cfg_.eps_ppo, &d_ratio);

      Eigen::MatrixXd dmu = Eigen::MatrixXd::Zero(bn, dim);
      Eigen::MatrixXd dlstd = Eigen::MatrixXd::Zero(bn, dim);
      for (int k = 0; k < bn; ++k) {
        const double dlogp = d_ratio[k] * ratios[k];
        dmu.row(k) = dlogp * gmu_logp.row(k);
        dlstd.row(k) = dlogp * glstd_logp.row(k);
      }

      // Constraint-manifold term on the batch's current mean trajectories;
      // the standard deviation takes no gradient from this path.
      double l_manifold = 0.0;
      for (int k = 0; k < bn; ++k) {
        const auto& rec = records[idx[k]];
        const MeanTrajGrad mg =
            manifold_step(pf.mu.row(k).transpose(), rec.task, rec.bias);
        l_manifold += mg.loss / bn;
        dmu.row(k) += mg.zeta_bar.transpose() / bn;
      }

      pgrads.zero();
      policy_backward(policy_, pf, dmu, dlstd, pgrads);
      grad_norm_sum += std::sqrt(pgrads.squared_norm());
      opt_policy_.step(policy_params(policy_), pgrads.tensors());

      MlpCache vcache;
      const Eigen::MatrixXd v = mlp_forward(value_.net, xb, &vcache);
      const Eigen::VectorXd err = v.col(0) - jb;
      const double v_loss = err.squaredNorm() / bn;
      value_loss_sum += v_loss;
      stats.value_losses.push_back(v_loss);
      vgrads.zero();
      mlp_backward(value_.net, vcache, (2.0 / bn) * err, vgrads);
      opt_value_.step(value_params(value_), vgrads.tensors());

      stats.task_losses.push_back(l_task);
      stats.manifold_losses.push_back(l_manifold);
      ++updates;
    }

    if (cfg_.metric_updates) update_metric(metric_, mean_viol);

    if (!params_finite(policy_params(policy_)) ||
        !params_finite(value_params(value_)) || !metric_.eta.allFinite())
      throw std::runtime_error("fit: non-finite parameters after iteration " +
                               std::to_string(fit));
  }

  stats.env_steps = env_steps_;
  stats.lambdas = metric_.lambdas();
  stats.policy_grad_norm = grad_norm_sum / updates;
  stats.value_loss = value_loss_sum / updates;
  return stats;
}

EvalMetrics Trainer::evaluate(int n_episodes) const {
  EvalMetrics metrics;
  metrics.mean_violations =
      Eigen::VectorXd::Zero(static_cast<Eigen::Index>(defs_.size()));
  std::vector<double> aux;
  aux.reserve(n_episodes);
  for (int i = 0; i < n_episodes; ++i) {
    auto rng = make_stream(cfg_.seed, kEvalEpochTag,
                           static_cast<std::uint64_t>(i));
    EvalEpisode ep;
    ep.task = env_.sample_task(rng);
    Eigen::MatrixXd x = env_.task_features(ep.task).transpose();
    const PolicyForward pf = policy_forward(policy_, x);
    const Eigen::VectorXd mu = pf.mu.row(0).transpose();
    const PriorBias bias = bias_for(ep.task, mu);
    ep.traj = head_.assemble(mu, ep.task, bias).traj;
    const RolloutResult rr = env_.rollout(ep.task, ep.traj, cfg_.gamma);
    ep.discounted_return = rr.discounted_return;
    ep.success = rr.success;
    ep.aux_metric = rr.aux_metric;
    ep.event = rr.event;
    ep.events = rr.events;
    ep.violations = all_violations(defs_, ep.traj);

    metrics.mean_return += ep.discounted_return / n_episodes;
    metrics.success_rate += ep.success ? 1.0 / n_episodes : 0.0;
    metrics.mean_violations += ep.violations / n_episodes;
    aux.push_back(ep.aux_metric);
    metrics.episodes.push_back(std::move(ep));
  }
  if (!aux.empty()) {
    metrics.aux_max = *std::max_element(aux.begin(), aux.end());
    metrics.aux_mean =
        std::accumulate(aux.begin(), aux.end(), 0.0) / aux.size();
    std::vector<double> sorted = aux;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t mid = sorted.size() / 2;
    metrics.aux_median = sorted.size() % 2 == 1
                             ? sorted[mid]
                             : 0.5 * (sorted[mid - 1] + sorted[mid]);
  }
  return metrics;
}

CsvLogger::CsvLogger(std::ostream& os, const std::vector<ConstraintDef>& defs)
    : os_(os), n_constraints_(defs.size()) {
  os_ << std::setprecision(12);
  os_ << "epoch,env_steps,mean_J,success_rate";
  for (const auto& def : defs) os_ << ",viol_" << def.name;
  for (const auto& def : defs) os_ << ",lambda_" << def.name;
  os_ << ",policy_grad_norm,value_loss\n";
}

void CsvLogger::write_row(const EpochStats& stats) {
  os_ << stats.epoch << ',' << stats.env_steps << ',' << stats.mean_j << ','
      << stats.success_rate;
  for (std::size_t i = 0; i < n_constraints_; ++i)
    os_ << ',' << stats.mean_violations[static_cast<Eigen::Index>(i)];
  for (std::size_t i = 0; i < n_constraints_; ++i)
    os_ << ',' << stats.lambdas[static_cast<Eigen::Index>(i)];
  os_ << ',' << stats.policy_grad_norm << ',' << stats.value_loss << '\n';
  os_.flush();
}

}  // namespace cnp3o
