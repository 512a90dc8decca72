#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "cnp3o/constraints.hpp"
#include "cnp3o/envs.hpp"
#include "cnp3o/head.hpp"
#include "cnp3o/policy.hpp"

namespace cnp3o {

struct TrainerConfig {
  int n_epochs = 300;
  int n_episodes_per_epoch = 64;
  int n_fits = 32;
  int n_batches = 1;
  int batch_size = 64;
  double gamma = 0.99;
  double eps_ppo = 0.05;
  double lr_policy = 5e-5;
  double lr_value = 5e-4;
  double alpha = 0.01;
  double beta = 0.1;
  int checkpoint_every = 25;
  /// When false the multipliers stay fixed at their initial values,
  /// turning the manifold term into a constant-penalty objective.
  bool metric_updates = true;
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument when a rate is non-positive, gamma is
  /// outside (0, 1], or the clip range is outside (0, 1).
  void validate() const;
};

/// One collected episode: the sampled latent with its log density, the
/// episode's discounted return, the value prediction at collection time,
/// and the constraint violations of that task's current mean trajectory.
/// The analytic bias is frozen here so refits stay well defined even
/// though the bias construction itself is not differentiable.
struct RolloutRecord {
  TaskContext task;
  Eigen::VectorXd zeta;
  double logp_old = 0.0;
  double j_task = 0.0;
  Eigen::VectorXd violations_mean_traj;
  double value_pred = 0.0;
  PriorBias bias;
  bool success = false;
  double aux_metric = 0.0;
  long env_steps = 0;
};

struct EpochStats {
  int epoch = 0;
  long env_steps = 0;  // cumulative environment steps so far
  double mean_j = 0.0;
  double success_rate = 0.0;
  Eigen::VectorXd mean_violations;
  Eigen::VectorXd lambdas;
  double policy_grad_norm = 0.0;  // mean over fit iterations
  double value_loss = 0.0;        // mean over fit iterations
  std::vector<double> task_losses;      // one entry per fit iteration
  std::vector<double> manifold_losses;  // one entry per fit iteration
  std::vector<double> value_losses;     // one entry per fit iteration
};

struct EvalEpisode {
  TaskContext task;
  Trajectory traj;
  double discounted_return = 0.0;
  bool success = false;
  double aux_metric = 0.0;
  std::string event;
  std::vector<EventLog> events;
  Eigen::VectorXd violations;
};

struct EvalMetrics {
  double mean_return = 0.0;
  double success_rate = 0.0;
  double aux_max = 0.0;
  double aux_mean = 0.0;
  double aux_median = 0.0;
  Eigen::VectorXd mean_violations;
  std::vector<EvalEpisode> episodes;
};

/// Maps per-episode returns minus value predictions to zero-mean,
/// unit-variance advantages; a numerically degenerate batch (near-zero
/// spread) maps to all zeros.
Eigen::VectorXd normalize_advantages(const Eigen::VectorXd& raw);

/// Clipped-ratio surrogate: loss = -mean(min(r*A, clip(r, 1-eps, 1+eps)*A)).
/// d_ratio receives the per-entry derivative of the loss w.r.t. each ratio.
double ppo_surrogate(const Eigen::VectorXd& ratios,
                     const Eigen::VectorXd& advantages, double eps,
                     Eigen::VectorXd* d_ratio = nullptr);

/// The training loop: collect episodes by sampling latents from the
/// policy, then alternate clipped-surrogate task steps with
/// constraint-manifold steps on recomputed mean trajectories, value
/// regression on raw returns, and multiplier updates from the stored
/// violation means.
class Trainer {
 public:
  Trainer(const Env& env, const HeadSettings& head_settings, bool prior_mode,
          const TrainerConfig& config);

  std::vector<RolloutRecord> collect_epoch(int epoch);
  /// Runs the fit iterations; throws std::runtime_error if any parameter
  /// becomes non-finite (training divergence is reported, never masked).
  EpochStats fit_epoch(int epoch, const std::vector<RolloutRecord>& records);
  /// Deterministic: tasks come from a fixed evaluation stream and the
  /// latent is the distribution mean.
  EvalMetrics evaluate(int n_episodes = 25) const;

  const Env& env() const { return env_; }
  const HeadAssembler& head() const { return head_; }
  const std::vector<ConstraintDef>& constraint_defs() const { return defs_; }
  bool prior_mode() const { return prior_; }
  const TrainerConfig& config() const { return cfg_; }

  PolicyNet& policy() { return policy_; }
  const PolicyNet& policy() const { return policy_; }
  ValueNet& value_net() { return value_; }
  const ValueNet& value_net() const { return value_; }
  ManifoldMetric& metric() { return metric_; }
  const ManifoldMetric& metric() const { return metric_; }
  long env_steps() const { return env_steps_; }
  void set_env_steps(long steps) { env_steps_ = steps; }

  /// Bias used for a task at the current policy mean: the environment's
  /// analytic bias in prior mode, otherwise hold-the-start.
  PriorBias bias_for(const TaskContext& task, const Eigen::VectorXd& mu) const;

 private:
  struct MeanTrajGrad {
    double loss = 0.0;
    Eigen::VectorXd zeta_bar;
  };
  MeanTrajGrad manifold_step(const Eigen::VectorXd& mu, const TaskContext& task,
                             const PriorBias& bias) const;

  const Env& env_;
  HeadAssembler head_;
  bool prior_ = false;
  TrainerConfig cfg_;
  std::vector<ConstraintDef> defs_;
  PolicyNet policy_;
  ValueNet value_;
  ManifoldMetric metric_;
  Adam opt_policy_;
  Adam opt_value_;
  long env_steps_ = 0;
};

/// Learning-curve writer: one row per epoch with per-constraint violation
/// and multiplier columns named after the constraint definitions.
class CsvLogger {
 public:
  CsvLogger(std::ostream& os, const std::vector<ConstraintDef>& defs);
  void write_row(const EpochStats& stats);

 private:
  std::ostream& os_;
  std::size_t n_constraints_ = 0;
};

}  // namespace cnp3o
