#include <doctest.h>

#include <Eigen/Dense>
#include <sstream>

#include "cnp3o/trainer.hpp"

using namespace cnp3o;

namespace {

TrainerConfig small_config(int episodes, int fits) {
  TrainerConfig cfg;
  cfg.n_episodes_per_epoch = episodes;
  cfg.n_fits = fits;
  cfg.batch_size = episodes;
  cfg.seed = 7;
  return cfg;
}

std::vector<Eigen::MatrixXd> snapshot(std::vector<NamedParam> params) {
  std::vector<Eigen::MatrixXd> out;
  for (const auto& p : params) out.push_back(*p.tensor);
  return out;
}

bool identical(const std::vector<Eigen::MatrixXd>& a,
               std::vector<NamedParam> params) {
  for (std::size_t i = 0; i < params.size(); ++i)
    if (a[i] != *params[i].tensor) return false;
  return true;
}

std::vector<RolloutRecord> synthetic_records(const Trainer& trainer, int n,
                                             double j_task,
                                             const Eigen::VectorXd& violations,
                                             const PriorBias* bias_override) {
  std::vector<RolloutRecord> records;
  auto rng = make_stream(99, 0, 0);
  const Eigen::Index dim = trainer.head().layout().dim;
  for (int i = 0; i < n; ++i) {
    RolloutRecord rec;
    rec.task = trainer.env().sample_task(rng);
    rec.zeta = Eigen::VectorXd::Zero(dim);
    rec.logp_old = gaussian_logp(rec.zeta, Eigen::VectorXd::Zero(dim),
                                 Eigen::VectorXd::Zero(dim));
    rec.j_task = j_task;
    rec.value_pred = 0.0;
    rec.violations_mean_traj = violations;
    rec.bias = bias_override ? *bias_override
                             : HeadAssembler::hold_bias(rec.task);
    records.push_back(std::move(rec));
  }
  return records;
}

}  // namespace

TEST_CASE("trainer config validation rejects bad values") {
  TrainerConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  auto expect_throw = [](auto mutate) {
    TrainerConfig c;
    mutate(c);
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  };
  expect_throw([](TrainerConfig& c) { c.gamma = 0.0; });
  expect_throw([](TrainerConfig& c) { c.gamma = 1.2; });
  expect_throw([](TrainerConfig& c) { c.eps_ppo = 0.0; });
  expect_throw([](TrainerConfig& c) { c.eps_ppo = 1.0; });
  expect_throw([](TrainerConfig& c) { c.lr_policy = -1e-5; });
  expect_throw([](TrainerConfig& c) { c.alpha = 0.0; });
  expect_throw([](TrainerConfig& c) { c.n_fits = 0; });
  expect_throw([](TrainerConfig& c) { c.batch_size = 0; });
}

TEST_CASE("advantage normalization maps degenerate batches to zero") {
  Eigen::VectorXd equal = Eigen::VectorXd::Constant(6, 3.25);
  CHECK(normalize_advantages(equal).cwiseAbs().maxCoeff() == 0.0);

  Eigen::VectorXd raw(5);
  raw << 1.0, -2.0, 0.5, 3.0, -0.5;
  const Eigen::VectorXd a = normalize_advantages(raw);
  CHECK(std::abs(a.mean()) < 1e-12);
  const double std_a = std::sqrt(a.squaredNorm() / a.size());
  CHECK(std_a == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("clipped surrogate evaluates and differentiates the ratio") {
  SUBCASE("single entry with ratio outside the clip band") {
    Eigen::VectorXd r(1), a(1);
    r << 1.2;
    a << 1.0;
    Eigen::VectorXd d;
    const double loss = ppo_surrogate(r, a, 0.05, &d);
    CHECK(loss == doctest::Approx(-1.05).epsilon(1e-12));
    CHECK(d[0] == 0.0);  // the clipped branch is active and saturated
  }
  SUBCASE("ratios at one recover minus the mean advantage") {
    Eigen::VectorXd r = Eigen::VectorXd::Ones(4);
    Eigen::VectorXd a(4);
    a << 0.3, -1.1, 0.7, 0.2;
    CHECK(ppo_surrogate(r, a, 0.05, nullptr) ==
          doctest::Approx(-a.mean()).epsilon(1e-12));
  }
  SUBCASE("pessimism keeps the unclipped branch for negative advantages") {
    Eigen::VectorXd r(1), a(1);
    r << 0.9;  // below 1 - eps
    a << -1.0;
    Eigen::VectorXd d;
    const double loss = ppo_surrogate(r, a, 0.05, &d);
    CHECK(loss == doctest::Approx(0.95).epsilon(1e-12));
    CHECK(d[0] == 0.0);  // min picks the saturated clipped term
  }
  SUBCASE("derivative matches finite differences away from kinks") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> ur(0.7, 1.3);
    std::normal_distribution<double> na;
    Eigen::VectorXd r(12), a(12);
    for (int i = 0; i < 12; ++i) {
      r[i] = ur(rng);
      a[i] = na(rng);
    }
    Eigen::VectorXd d;
    ppo_surrogate(r, a, 0.05, &d);
    const double h = 1e-7;
    for (int i = 0; i < 12; ++i) {
      if (std::abs(r[i] - 0.95) < 1e-3 || std::abs(r[i] - 1.05) < 1e-3)
        continue;
      Eigen::VectorXd rp = r, rm = r;
      rp[i] += h;
      rm[i] -= h;
      const double fd = (ppo_surrogate(rp, a, 0.05, nullptr) -
                         ppo_surrogate(rm, a, 0.05, nullptr)) /
                        (2 * h);
      CHECK(std::abs(d[i] - fd) < 1e-6);
    }
  }
  SUBCASE("non-finite ratios are reported") {
    Eigen::VectorXd r(1), a(1);
    r << std::numeric_limits<double>::infinity();
    a << 1.0;
    CHECK_THROWS_AS(ppo_surrogate(r, a, 0.05, nullptr), std::runtime_error);
  }
}

TEST_CASE("episode collection is seeded and reproducible") {
  HitWorld world;
  TrainerConfig cfg;  // default 64-episode epoch
  cfg.seed = 3;
  Trainer t1(world, HeadSettings{}, false, cfg);
  Trainer t2(world, HeadSettings{}, false, cfg);

  const auto r1 = t1.collect_epoch(0);
  const auto r2 = t2.collect_epoch(0);
  REQUIRE(r1.size() == 64);
  REQUIRE(r2.size() == 64);
  long steps = 0;
  for (std::size_t i = 0; i < r1.size(); ++i) {
    CHECK(r1[i].zeta == r2[i].zeta);
    CHECK(r1[i].logp_old == r2[i].logp_old);
    CHECK(r1[i].j_task == r2[i].j_task);
    CHECK(r1[i].value_pred == r2[i].value_pred);
    CHECK(r1[i].violations_mean_traj == r2[i].violations_mean_traj);
    CHECK(r1[i].success == r2[i].success);
    CHECK(std::isfinite(r1[i].logp_old));
    CHECK(std::isfinite(r1[i].j_task));
    steps += r1[i].env_steps;
  }
  CHECK(t1.env_steps() == steps);

  // An untrained policy's mean trajectory holds the feasible start pose.
  for (const auto& rec : r1)
    CHECK(rec.violations_mean_traj.maxCoeff() < 1e-12);

  cfg.seed = 4;
  Trainer t3(world, HeadSettings{}, false, cfg);
  const auto r3 = t3.collect_epoch(0);
  CHECK(r1[0].zeta != r3[0].zeta);
}

TEST_CASE("zero advantages and zero violations leave the policy fixed") {
  HitWorld world;
  Trainer trainer(world, HeadSettings{}, false, small_config(8, 4));
  const auto records = synthetic_records(
      trainer, 8, 0.0,
      Eigen::VectorXd::Zero(
          static_cast<Eigen::Index>(trainer.constraint_defs().size())),
      nullptr);

  const auto policy_before = snapshot(policy_params(trainer.policy()));
  const auto value_before = snapshot(value_params(trainer.value_net()));
  const auto stats = trainer.fit_epoch(0, records);

  // The hold trajectory sits on the surface constraint exactly, so its
  // violations are rounding noise (~1e-16); with the optimizer's epsilon
  // floor that allows parameter drift far below any learning-rate step.
  auto max_drift = [](const std::vector<Eigen::MatrixXd>& before,
                      std::vector<NamedParam> now) {
    double d = 0.0;
    for (std::size_t i = 0; i < now.size(); ++i)
      d = std::max(d, (before[i] - *now[i].tensor).cwiseAbs().maxCoeff());
    return d;
  };
  CHECK(max_drift(policy_before, policy_params(trainer.policy())) < 1e-9);
  CHECK(max_drift(value_before, value_params(trainer.value_net())) < 1e-9);
  CHECK(stats.task_losses.size() == 4);
  for (double l : stats.task_losses) CHECK(l == 0.0);
  for (double l : stats.manifold_losses) CHECK(l < 1e-20);
  // With zero observed violations every multiplier decays at the bounded
  // rate alpha*log(beta) per fit iteration.
  const double expected = 4 * 0.01 * std::log(0.1);
  for (int i = 0; i < trainer.metric().eta.size(); ++i)
    CHECK(trainer.metric().eta[i] == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("multipliers are stationary at the pinned violation level") {
  HitWorld world;
  Trainer trainer(world, HeadSettings{}, false, small_config(8, 3));
  const Eigen::VectorXd pinned = 0.9 * trainer.metric().budgets;
  const auto records = synthetic_records(trainer, 8, 0.0, pinned, nullptr);
  trainer.fit_epoch(0, records);
  CHECK(trainer.metric().eta.cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("value regression approaches a constant return") {
  HitWorld world;
  Trainer trainer(world, HeadSettings{}, false, small_config(16, 32));
  const auto records = synthetic_records(
      trainer, 16, 3.7,
      Eigen::VectorXd::Zero(
          static_cast<Eigen::Index>(trainer.constraint_defs().size())),
      nullptr);
  const auto stats = trainer.fit_epoch(0, records);
  REQUIRE(stats.value_losses.size() == 32);
  // Strictly decreasing while far from the target; near convergence the
  // constant-magnitude adaptive steps dither around the plateau.
  for (std::size_t i = 1; i <= 10; ++i)
    CHECK(stats.value_losses[i] < stats.value_losses[i - 1]);
  CHECK(stats.value_losses.back() < stats.value_losses.front() / 100.0);
  CHECK(stats.value_losses.back() < 0.05);
  CHECK(stats.value_losses.front() == doctest::Approx(3.7 * 3.7).epsilon(1e-9));
}

TEST_CASE("manifold loss tracks the current policy parameters") {
  HitWorld world;
  Trainer trainer(world, HeadSettings{}, false, small_config(8, 8));
  PriorBias bad_bias;
  bad_bias.end_q << 3.4, 0.0, 0.0;  // beyond the first joint limit
  // Stored violations pinned at the multiplier fixed point: the metric
  // stays constant, so any loss change must come from the policy mean.
  const auto records = synthetic_records(
      trainer, 8, 0.0, 0.9 * trainer.metric().budgets, &bad_bias);

  const auto before = snapshot(policy_params(trainer.policy()));
  const auto stats = trainer.fit_epoch(0, records);
  REQUIRE(stats.manifold_losses.size() == 8);
  CHECK(stats.manifold_losses.front() > 0.0);
  double lo = stats.manifold_losses[0], hi = stats.manifold_losses[0];
  for (double l : stats.manifold_losses) {
    lo = std::min(lo, l);
    hi = std::max(hi, l);
  }
  CHECK(hi - lo > 1e-12);  // refits recompute the loss under new parameters
  CHECK(stats.manifold_losses.back() < stats.manifold_losses.front());
  CHECK_FALSE(identical(before, policy_params(trainer.policy())));
  CHECK(stats.policy_grad_norm > 0.0);
}

TEST_CASE("evaluation is deterministic and matches the constraint module") {
  HitWorld world;
  TrainerConfig cfg;
  cfg.seed = 11;
  Trainer trainer(world, HeadSettings{}, false, cfg);

  const auto m1 = trainer.evaluate(5);
  const auto m2 = trainer.evaluate(5);
  REQUIRE(m1.episodes.size() == 5);
  CHECK(m1.mean_return == m2.mean_return);
  CHECK(m1.success_rate == m2.success_rate);
  CHECK(m1.mean_violations == m2.mean_violations);
  CHECK(std::isfinite(m1.mean_return));
  CHECK(m1.success_rate == 0.0);  // holding the ready pose never scores

  const auto defs = world.constraint_suite();
  for (const auto& ep : m1.episodes) {
    for (std::size_t i = 0; i < defs.size(); ++i)
      CHECK(ep.violations[static_cast<Eigen::Index>(i)] ==
            doctest::Approx(violation(defs[i], ep.traj)).epsilon(1e-12));
  }
}

TEST_CASE("prior mode freezes an analytic bias into each record") {
  HitWorld world;
  Trainer trainer(world, HeadSettings{}, true, small_config(4, 2));
  const auto records = trainer.collect_epoch(0);
  REQUIRE(records.size() == 4);
  bool any_velocity_bias = false;
  for (const auto& rec : records) {
    CHECK(rec.bias.end_q.allFinite());
    if (rec.bias.end_dq.norm() > 1e-3) any_velocity_bias = true;
  }
  CHECK(any_velocity_bias);  // reachable pucks produce a striking velocity
  CHECK_NOTHROW(trainer.fit_epoch(0, records));
}

TEST_CASE("learning-curve rows carry per-constraint columns") {
  HitWorld world;
  const auto defs = world.constraint_suite();
  std::ostringstream os;
  CsvLogger logger(os, defs);

  EpochStats stats;
  stats.epoch = 3;
  stats.env_steps = 1234;
  stats.mean_j = 0.5;
  stats.success_rate = 0.25;
  stats.mean_violations =
      Eigen::VectorXd::Constant(static_cast<Eigen::Index>(defs.size()), 1e-4);
  stats.lambdas =
      Eigen::VectorXd::Ones(static_cast<Eigen::Index>(defs.size()));
  stats.policy_grad_norm = 0.1;
  stats.value_loss = 0.2;
  logger.write_row(stats);

  std::istringstream is(os.str());
  std::string header, row;
  REQUIRE(std::getline(is, header));
  REQUIRE(std::getline(is, row));
  const auto count_fields = [](const std::string& line) {
    return 1 + std::count(line.begin(), line.end(), ',');
  };
  CHECK(count_fields(header) == 6 + 2 * static_cast<long>(defs.size()));
  CHECK(count_fields(row) == count_fields(header));
  CHECK(header.find("viol_surface") != std::string::npos);
  CHECK(header.find("lambda_surface") != std::string::npos);
  CHECK(row.rfind("3,1234,", 0) == 0);
}
