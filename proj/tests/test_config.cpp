#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "cnp3o/checkpoint.hpp"
#include "cnp3o/config.hpp"

using namespace cnp3o;
using nlohmann::json;

namespace {

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& p) : path(p) {}
  ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("empty document resolves to the standard values") {
  const RunConfig cfg = parse_run_config(json::object());
  CHECK(cfg.env == "planar_hit");
  CHECK(cfg.mode == "none");
  CHECK(cfg.primitive == "bspline");
  CHECK_FALSE(cfg.two_segment);
  CHECK(cfg.trainer.n_episodes_per_epoch == 64);
  CHECK(cfg.trainer.n_fits == 32);
  CHECK(cfg.trainer.batch_size == 64);
  CHECK(cfg.trainer.gamma == 0.99);
  CHECK(cfg.trainer.eps_ppo == 0.05);
  CHECK(cfg.trainer.lr_policy == 5e-5);
  CHECK(cfg.trainer.lr_value == 5e-4);
  CHECK(cfg.trainer.alpha == 0.01);
  CHECK(cfg.trainer.beta == 0.1);
  CHECK(cfg.trainer.checkpoint_every == 25);
  CHECK(cfg.trainer.metric_updates);
  CHECK(cfg.head.n_cfg_weights == 11);
  CHECK(cfg.head.n_time_weights == 10);
  CHECK(cfg.head.order == 3);
  CHECK(cfg.head.scales.a_time == 1.0);
  CHECK(cfg.head.scales.a_cfg_free == 0.02);
  CHECK(cfg.head.scales.a_end_q == 0.02);
  CHECK(cfg.head.scales.a_end_dq == 0.02);
  CHECK(cfg.head.scales.a_end_ddq == 1.0);
  CHECK(cfg.head.scales.xi_cfg == doctest::Approx(M_PI).epsilon(1e-15));
  CHECK(cfg.hit.band_bonus == 0.5);
  CHECK(cfg.reach.success_distance == 0.05);
}

TEST_CASE("scale defaults follow the mode and environment") {
  const RunConfig prior = parse_run_config(json{{"mode", "prior"}});
  CHECK(prior.head.scales.a_end_q == 0.007);

  const RunConfig reach = parse_run_config(json{{"env", "planar_reach"}});
  CHECK(reach.head.scales.xi_cfg == doctest::Approx(2 * M_PI).epsilon(1e-15));

  const RunConfig mixed = parse_run_config(
      json{{"mode", "prior"}, {"scales", {{"a_end_q", 0.05}}}});
  CHECK(mixed.head.scales.a_end_q == 0.05);
}

TEST_CASE("unknown keys are rejected with their path") {
  auto message_of = [](const json& doc) {
    try {
      parse_run_config(doc);
    } catch (const std::invalid_argument& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  CHECK(message_of({{"mystery", 1}}).find("mystery") != std::string::npos);
  CHECK(message_of({{"trainer", {{"warmup", 5}}}}).find("trainer.warmup") !=
        std::string::npos);
  CHECK(message_of({{"hit", {{"table", 1.0}}}}).find("hit.table") !=
        std::string::npos);
  CHECK(message_of({{"scales", {{"a", 1.0}}}}).find("scales.a") !=
        std::string::npos);
}

TEST_CASE("type and enumeration errors are diagnosed") {
  CHECK_THROWS_AS(parse_run_config(json{{"env", "lunar"}}),
                  std::invalid_argument);
  CHECK_THROWS_AS(parse_run_config(json{{"mode", "both"}}),
                  std::invalid_argument);
  CHECK_THROWS_AS(parse_run_config(json{{"trainer", {{"gamma", "high"}}}}),
                  std::invalid_argument);
  CHECK_THROWS_AS(parse_run_config(json{{"head", {{"order", 3.5}}}}),
                  std::invalid_argument);
  CHECK_THROWS_AS(parse_run_config(json{{"trainer", {{"gamma", 1.5}}}}),
                  std::invalid_argument);
  CHECK_THROWS_AS(parse_run_config(json{{"hit", {{"ready_ee", 1.0}}}}),
                  std::invalid_argument);
}

TEST_CASE("resolved documents round-trip exactly") {
  json doc = {{"env", "planar_reach"},
              {"mode", "prior"},
              {"trainer", {{"n_epochs", 7}, {"seed", 42}}},
              {"reach", {{"horizon", 60}}},
              {"scales", {{"a_cfg_free", 0.01}}}};
  const RunConfig cfg = parse_run_config(doc);
  const json resolved = resolved_config_json(cfg);
  const RunConfig again = parse_run_config(resolved);
  CHECK(resolved_config_json(again) == resolved);
  CHECK(again.trainer.n_epochs == 7);
  CHECK(again.trainer.seed == 42);
  CHECK(again.reach.horizon == 60);
  CHECK(again.head.scales.a_cfg_free == 0.01);
  CHECK(again.head.scales.a_end_q == 0.007);

  CHECK(config_hash(resolved) == config_hash(resolved_config_json(again)));
  json other = resolved;
  other["trainer"]["seed"] = 43;
  CHECK(config_hash(other) != config_hash(resolved));
}

TEST_CASE("environment construction honors overrides") {
  RunConfig cfg = parse_run_config(
      json{{"hit", {{"horizon", 42}, {"band_budget", 5e-4}}}});
  const auto env = make_env(cfg);
  CHECK(env->horizon() == 42);
  bool found = false;
  for (const auto& def : env->constraint_suite())
    if (def.name == "own_band") {
      found = true;
      CHECK(def.budget == 5e-4);
    }
  CHECK(found);

  RunConfig rcfg = parse_run_config(json{{"env", "planar_reach"}});
  CHECK(make_env(rcfg)->horizon() == 100);
}

TEST_CASE("checkpoints restore the exact parameter state") {
  const RunConfig cfg = parse_run_config(json{{"trainer", {{"seed", 5}}}});
  const auto env = make_env(cfg);
  Trainer trainer(*env, cfg.head, cfg.prior_mode(), cfg.trainer);
  // Leave the initial state slightly trained so the file is nontrivial.
  trainer.metric().eta.setConstant(0.25);
  trainer.set_env_steps(777);

  TempFile file("/tmp/ckpt_roundtrip.json");
  save_checkpoint(file.path, trainer, resolved_config_json(cfg), 3);

  const CheckpointInfo info = read_checkpoint_info(file.path);
  CHECK(info.epoch == 3);
  CHECK(info.env_steps == 777);
  CHECK(info.config.env == "planar_hit");
  CHECK(info.config.trainer.seed == 5);

  const auto env2 = make_env(info.config);
  Trainer restored(*env2, info.config.head, info.config.prior_mode(),
                   info.config.trainer);
  restored.policy().trunk.layers[0].W.setZero();  // scramble before loading
  load_checkpoint_params(file.path, restored);

  auto p1 = policy_params(trainer.policy());
  auto p2 = policy_params(restored.policy());
  REQUIRE(p1.size() == p2.size());
  for (std::size_t i = 0; i < p1.size(); ++i)
    CHECK(*p1[i].tensor == *p2[i].tensor);
  CHECK(restored.metric().eta == trainer.metric().eta);
  CHECK(restored.env_steps() == 777);

  const auto m1 = trainer.evaluate(3);
  const auto m2 = restored.evaluate(3);
  CHECK(m1.mean_return == m2.mean_return);
  CHECK(m1.mean_violations == m2.mean_violations);
}

TEST_CASE("checkpoints reject architecture mismatches") {
  const RunConfig cfg = parse_run_config(json::object());
  const auto env = make_env(cfg);
  Trainer trainer(*env, cfg.head, cfg.prior_mode(), cfg.trainer);
  TempFile file("/tmp/ckpt_mismatch.json");
  save_checkpoint(file.path, trainer, resolved_config_json(cfg), 0);

  const RunConfig smaller =
      parse_run_config(json{{"head", {{"n_cfg_weights", 9}}}});
  const auto env2 = make_env(smaller);
  Trainer other(*env2, smaller.head, smaller.prior_mode(), smaller.trainer);
  try {
    load_checkpoint_params(file.path, other);
    FAIL("expected a shape mismatch");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("shape mismatch") != std::string::npos);
  }

  CHECK_THROWS_AS(read_checkpoint_info("/tmp/no_such_checkpoint.json"),
                  std::runtime_error);
}
