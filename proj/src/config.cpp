#include "cnp3o/config.hpp"

#include <cmath>
#include <fstream>
#include <initializer_list>
#include <stdexcept>

namespace cnp3o {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& msg) {
  throw std::invalid_argument("config: " + msg);
}

void expect_object(const json& j, const std::string& path) {
  if (!j.is_object()) fail("'" + path + "' must be an object");
}

void reject_unknown(const json& j, const std::string& path,
                    std::initializer_list<const char*> allowed) {
  for (const auto& item : j.items()) {
    bool known = false;
    for (const char* k : allowed)
      if (item.key() == k) {
        known = true;
        break;
      }
    if (!known) fail("unknown key '" + path + item.key() + "'");
  }
}

double get_num(const json& j, const std::string& path, const char* key,
               double dflt) {
  if (!j.contains(key)) return dflt;
  const json& v = j.at(key);
  if (!v.is_number()) fail("'" + path + key + "' must be a number");
  return v.get<double>();
}

int get_int(const json& j, const std::string& path, const char* key,
            int dflt) {
  if (!j.contains(key)) return dflt;
  const json& v = j.at(key);
  if (!v.is_number_integer()) fail("'" + path + key + "' must be an integer");
  return v.get<int>();
}

bool get_bool(const json& j, const std::string& path, const char* key,
              bool dflt) {
  if (!j.contains(key)) return dflt;
  const json& v = j.at(key);
  if (!v.is_boolean()) fail("'" + path + key + "' must be a boolean");
  return v.get<bool>();
}

std::string get_str(const json& j, const std::string& path, const char* key,
                    const std::string& dflt) {
  if (!j.contains(key)) return dflt;
  const json& v = j.at(key);
  if (!v.is_string()) fail("'" + path + key + "' must be a string");
  return v.get<std::string>();
}

std::uint64_t get_u64(const json& j, const std::string& path, const char* key,
                      std::uint64_t dflt) {
  if (!j.contains(key)) return dflt;
  const json& v = j.at(key);
  if (!v.is_number_integer()) fail("'" + path + key + "' must be an integer");
  return v.get<std::uint64_t>();
}

void parse_head(const json& j, HeadSettings& head) {
  expect_object(j, "head");
  reject_unknown(j, "head.",
                 {"n_cfg_weights", "n_time_weights", "order", "n_phase"});
  head.n_cfg_weights = get_int(j, "head.", "n_cfg_weights", head.n_cfg_weights);
  head.n_time_weights =
      get_int(j, "head.", "n_time_weights", head.n_time_weights);
  head.order = get_int(j, "head.", "order", head.order);
  head.n_phase = get_int(j, "head.", "n_phase", head.n_phase);
}

void parse_scales(const json& j, TransformScales& s) {
  expect_object(j, "scales");
  reject_unknown(j, "scales.",
                 {"a_time", "a_cfg_free", "a_end_q", "a_end_dq", "a_end_ddq",
                  "xi_cfg"});
  s.a_time = get_num(j, "scales.", "a_time", s.a_time);
  s.a_cfg_free = get_num(j, "scales.", "a_cfg_free", s.a_cfg_free);
  s.a_end_q = get_num(j, "scales.", "a_end_q", s.a_end_q);
  s.a_end_dq = get_num(j, "scales.", "a_end_dq", s.a_end_dq);
  s.a_end_ddq = get_num(j, "scales.", "a_end_ddq", s.a_end_ddq);
  s.xi_cfg = get_num(j, "scales.", "xi_cfg", s.xi_cfg);
}

void parse_trainer(const json& j, TrainerConfig& t) {
  expect_object(j, "trainer");
  reject_unknown(j, "trainer.",
                 {"n_epochs", "n_episodes_per_epoch", "n_fits", "n_batches",
                  "batch_size", "gamma", "eps_ppo", "lr_policy", "lr_value",
                  "alpha", "beta", "checkpoint_every", "metric_updates",
                  "seed"});
  t.n_epochs = get_int(j, "trainer.", "n_epochs", t.n_epochs);
  t.n_episodes_per_epoch =
      get_int(j, "trainer.", "n_episodes_per_epoch", t.n_episodes_per_epoch);
  t.n_fits = get_int(j, "trainer.", "n_fits", t.n_fits);
  t.n_batches = get_int(j, "trainer.", "n_batches", t.n_batches);
  t.batch_size = get_int(j, "trainer.", "batch_size", t.batch_size);
  t.gamma = get_num(j, "trainer.", "gamma", t.gamma);
  t.eps_ppo = get_num(j, "trainer.", "eps_ppo", t.eps_ppo);
  t.lr_policy = get_num(j, "trainer.", "lr_policy", t.lr_policy);
  t.lr_value = get_num(j, "trainer.", "lr_value", t.lr_value);
  t.alpha = get_num(j, "trainer.", "alpha", t.alpha);
  t.beta = get_num(j, "trainer.", "beta", t.beta);
  t.checkpoint_every =
      get_int(j, "trainer.", "checkpoint_every", t.checkpoint_every);
  t.metric_updates =
      get_bool(j, "trainer.", "metric_updates", t.metric_updates);
  t.seed = get_u64(j, "trainer.", "seed", t.seed);
}

void parse_hit(const json& j, HitWorldParams& w) {
  expect_object(j, "hit");
  reject_unknown(
      j, "hit.",
      {"table_length", "table_halfwidth", "own_band_x", "goal_halfwidth",
       "puck_radius", "mallet_radius", "restitution", "damping", "puck_x_min",
       "puck_x_max", "puck_speed_max", "horizon", "dt", "goal_bonus",
       "band_bonus", "side_bonus", "hit_bias_overlap", "hit_speed_fraction",
       "ready_ee", "ready_phi", "joint_pos_budget", "joint_vel_budget",
       "band_budget", "surface_budget"});
  w.table_length = get_num(j, "hit.", "table_length", w.table_length);
  w.table_halfwidth = get_num(j, "hit.", "table_halfwidth", w.table_halfwidth);
  w.own_band_x = get_num(j, "hit.", "own_band_x", w.own_band_x);
  w.goal_halfwidth = get_num(j, "hit.", "goal_halfwidth", w.goal_halfwidth);
  w.puck_radius = get_num(j, "hit.", "puck_radius", w.puck_radius);
  w.mallet_radius = get_num(j, "hit.", "mallet_radius", w.mallet_radius);
  w.restitution = get_num(j, "hit.", "restitution", w.restitution);
  w.damping = get_num(j, "hit.", "damping", w.damping);
  w.puck_x_min = get_num(j, "hit.", "puck_x_min", w.puck_x_min);
  w.puck_x_max = get_num(j, "hit.", "puck_x_max", w.puck_x_max);
  w.puck_speed_max = get_num(j, "hit.", "puck_speed_max", w.puck_speed_max);
  w.horizon = get_int(j, "hit.", "horizon", w.horizon);
  w.dt = get_num(j, "hit.", "dt", w.dt);
  w.goal_bonus = get_num(j, "hit.", "goal_bonus", w.goal_bonus);
  w.band_bonus = get_num(j, "hit.", "band_bonus", w.band_bonus);
  w.side_bonus = get_num(j, "hit.", "side_bonus", w.side_bonus);
  w.hit_bias_overlap =
      get_num(j, "hit.", "hit_bias_overlap", w.hit_bias_overlap);
  w.hit_speed_fraction =
      get_num(j, "hit.", "hit_speed_fraction", w.hit_speed_fraction);
  if (j.contains("ready_ee")) {
    const json& v = j.at("ready_ee");
    if (!v.is_array() || v.size() != 2 || !v[0].is_number() ||
        !v[1].is_number())
      fail("'hit.ready_ee' must be an array of two numbers");
    w.ready_ee << v[0].get<double>(), v[1].get<double>();
  }
  w.ready_phi = get_num(j, "hit.", "ready_phi", w.ready_phi);
  w.joint_pos_budget =
      get_num(j, "hit.", "joint_pos_budget", w.joint_pos_budget);
  w.joint_vel_budget =
      get_num(j, "hit.", "joint_vel_budget", w.joint_vel_budget);
  w.band_budget = get_num(j, "hit.", "band_budget", w.band_budget);
  w.surface_budget = get_num(j, "hit.", "surface_budget", w.surface_budget);
}

void parse_reach(const json& j, ReachWorldParams& w) {
  expect_object(j, "reach");
  reject_unknown(j, "reach.",
                 {"pedestal_x", "pedestal_height", "payload_radius",
                  "clearance", "sample_abs_min", "sample_abs_max", "horizon",
                  "dt", "success_distance", "settle_distance",
                  "body_point_spacing", "body_radius", "joint_pos_budget",
                  "joint_vel_budget", "orientation_budget",
                  "collision_budget"});
  w.pedestal_x = get_num(j, "reach.", "pedestal_x", w.pedestal_x);
  w.pedestal_height = get_num(j, "reach.", "pedestal_height", w.pedestal_height);
  w.payload_radius = get_num(j, "reach.", "payload_radius", w.payload_radius);
  w.clearance = get_num(j, "reach.", "clearance", w.clearance);
  w.sample_abs_min = get_num(j, "reach.", "sample_abs_min", w.sample_abs_min);
  w.sample_abs_max = get_num(j, "reach.", "sample_abs_max", w.sample_abs_max);
  w.horizon = get_int(j, "reach.", "horizon", w.horizon);
  w.dt = get_num(j, "reach.", "dt", w.dt);
  w.success_distance =
      get_num(j, "reach.", "success_distance", w.success_distance);
  w.settle_distance =
      get_num(j, "reach.", "settle_distance", w.settle_distance);
  w.body_point_spacing =
      get_num(j, "reach.", "body_point_spacing", w.body_point_spacing);
  w.body_radius = get_num(j, "reach.", "body_radius", w.body_radius);
  w.joint_pos_budget =
      get_num(j, "reach.", "joint_pos_budget", w.joint_pos_budget);
  w.joint_vel_budget =
      get_num(j, "reach.", "joint_vel_budget", w.joint_vel_budget);
  w.orientation_budget =
      get_num(j, "reach.", "orientation_budget", w.orientation_budget);
  w.collision_budget =
      get_num(j, "reach.", "collision_budget", w.collision_budget);
}

}  // namespace

RunConfig parse_run_config(const nlohmann::json& doc) {
  expect_object(doc, "(root)");
  reject_unknown(doc, "",
                 {"env", "mode", "primitive", "two_segment", "out_dir", "head",
                  "scales", "trainer", "hit", "reach"});
  RunConfig cfg;
  cfg.env = get_str(doc, "", "env", cfg.env);
  if (cfg.env != "planar_hit" && cfg.env != "planar_reach")
    fail("'env' must be planar_hit or planar_reach");
  cfg.mode = get_str(doc, "", "mode", cfg.mode);
  if (cfg.mode != "none" && cfg.mode != "prior")
    fail("'mode' must be none or prior");
  cfg.primitive = get_str(doc, "", "primitive", cfg.primitive);
  if (cfg.primitive != "bspline" && cfg.primitive != "promp_rbf")
    fail("'primitive' must be bspline or promp_rbf");
  cfg.two_segment = get_bool(doc, "", "two_segment", cfg.two_segment);
  cfg.out_dir = get_str(doc, "", "out_dir", cfg.out_dir);

  cfg.head.primitive =
      cfg.primitive == "bspline" ? BasisKind::bspline : BasisKind::promp_rbf;
  cfg.head.two_segment = cfg.two_segment;
  if (doc.contains("head")) parse_head(doc.at("head"), cfg.head);

  // Mode- and environment-dependent scale defaults, then explicit values.
  cfg.head.scales.a_end_q = cfg.mode == "prior" ? 0.007 : 0.02;
  cfg.head.scales.xi_cfg = cfg.env == "planar_hit" ? M_PI : 2.0 * M_PI;
  if (doc.contains("scales")) parse_scales(doc.at("scales"), cfg.head.scales);

  if (doc.contains("trainer")) parse_trainer(doc.at("trainer"), cfg.trainer);
  cfg.trainer.validate();
  if (doc.contains("hit")) parse_hit(doc.at("hit"), cfg.hit);
  if (doc.contains("reach")) parse_reach(doc.at("reach"), cfg.reach);
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open '" + path + "'");
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    fail("'" + path + "' is not valid JSON: " + e.what());
  }
  return parse_run_config(doc);
}

nlohmann::json resolved_config_json(const RunConfig& cfg) {
  nlohmann::json doc;
  doc["env"] = cfg.env;
  doc["mode"] = cfg.mode;
  doc["primitive"] = cfg.primitive;
  doc["two_segment"] = cfg.two_segment;
  doc["out_dir"] = cfg.out_dir;
  doc["head"] = {{"n_cfg_weights", cfg.head.n_cfg_weights},
                 {"n_time_weights", cfg.head.n_time_weights},
                 {"order", cfg.head.order},
                 {"n_phase", cfg.head.n_phase}};
  const TransformScales& s = cfg.head.scales;
  doc["scales"] = {{"a_time", s.a_time},       {"a_cfg_free", s.a_cfg_free},
                   {"a_end_q", s.a_end_q},     {"a_end_dq", s.a_end_dq},
                   {"a_end_ddq", s.a_end_ddq}, {"xi_cfg", s.xi_cfg}};
  const TrainerConfig& t = cfg.trainer;
  doc["trainer"] = {{"n_epochs", t.n_epochs},
                    {"n_episodes_per_epoch", t.n_episodes_per_epoch},
                    {"n_fits", t.n_fits},
                    {"n_batches", t.n_batches},
                    {"batch_size", t.batch_size},
                    {"gamma", t.gamma},
                    {"eps_ppo", t.eps_ppo},
                    {"lr_policy", t.lr_policy},
                    {"lr_value", t.lr_value},
                    {"alpha", t.alpha},
                    {"beta", t.beta},
                    {"checkpoint_every", t.checkpoint_every},
                    {"metric_updates", t.metric_updates},
                    {"seed", t.seed}};
  const HitWorldParams& h = cfg.hit;
  doc["hit"] = {{"table_length", h.table_length},
                {"table_halfwidth", h.table_halfwidth},
                {"own_band_x", h.own_band_x},
                {"goal_halfwidth", h.goal_halfwidth},
                {"puck_radius", h.puck_radius},
                {"mallet_radius", h.mallet_radius},
                {"restitution", h.restitution},
                {"damping", h.damping},
                {"puck_x_min", h.puck_x_min},
                {"puck_x_max", h.puck_x_max},
                {"puck_speed_max", h.puck_speed_max},
                {"horizon", h.horizon},
                {"dt", h.dt},
                {"goal_bonus", h.goal_bonus},
                {"band_bonus", h.band_bonus},
                {"side_bonus", h.side_bonus},
                {"hit_bias_overlap", h.hit_bias_overlap},
                {"hit_speed_fraction", h.hit_speed_fraction},
                {"ready_ee", {h.ready_ee.x(), h.ready_ee.y()}},
                {"ready_phi", h.ready_phi},
                {"joint_pos_budget", h.joint_pos_budget},
                {"joint_vel_budget", h.joint_vel_budget},
                {"band_budget", h.band_budget},
                {"surface_budget", h.surface_budget}};
  const ReachWorldParams& r = cfg.reach;
  doc["reach"] = {{"pedestal_x", r.pedestal_x},
                  {"pedestal_height", r.pedestal_height},
                  {"payload_radius", r.payload_radius},
                  {"clearance", r.clearance},
                  {"sample_abs_min", r.sample_abs_min},
                  {"sample_abs_max", r.sample_abs_max},
                  {"horizon", r.horizon},
                  {"dt", r.dt},
                  {"success_distance", r.success_distance},
                  {"settle_distance", r.settle_distance},
                  {"body_point_spacing", r.body_point_spacing},
                  {"body_radius", r.body_radius},
                  {"joint_pos_budget", r.joint_pos_budget},
                  {"joint_vel_budget", r.joint_vel_budget},
                  {"orientation_budget", r.orientation_budget},
                  {"collision_budget", r.collision_budget}};
  return doc;
}

std::uint64_t config_hash(const nlohmann::json& doc) {
  const std::string dump = doc.dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : dump) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::unique_ptr<Env> make_env(const RunConfig& cfg) {
  if (cfg.env == "planar_hit") return std::make_unique<HitWorld>(cfg.hit);
  return std::make_unique<ReachWorld>(cfg.reach);
}

}  // namespace cnp3o
