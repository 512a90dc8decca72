#pragma once

#include <json.hpp>

#include <cstdint>
#include <memory>
#include <string>

#include "cnp3o/envs.hpp"
#include "cnp3o/head.hpp"
#include "cnp3o/trainer.hpp"

namespace cnp3o {

/// Complete description of one run. Every field defaults to the standard
/// value; a JSON file overrides any subset. Unknown keys anywhere in the
/// document are rejected with the offending path named.
struct RunConfig {
  std::string env = "planar_hit";        // planar_hit | planar_reach
  std::string mode = "none";             // none | prior
  std::string primitive = "bspline";     // bspline | promp_rbf
  bool two_segment = false;
  std::string out_dir = "runs/out";
  HeadSettings head;  // scales resolved from env/mode unless overridden
  TrainerConfig trainer;
  HitWorldParams hit;
  ReachWorldParams reach;

  bool prior_mode() const { return mode == "prior"; }
};

/// Parses and validates; env/mode-dependent scale defaults (end-value
/// scale in prior mode, the configuration bound per environment) are
/// applied before explicit "scales" entries override them.
RunConfig parse_run_config(const nlohmann::json& doc);
RunConfig load_run_config(const std::string& path);

/// Fully keyed-out document: feeding it back to parse_run_config yields
/// the identical configuration.
nlohmann::json resolved_config_json(const RunConfig& cfg);

/// FNV-1a over the compact dump of a document.
std::uint64_t config_hash(const nlohmann::json& doc);

std::unique_ptr<Env> make_env(const RunConfig& cfg);

}  // namespace cnp3o
