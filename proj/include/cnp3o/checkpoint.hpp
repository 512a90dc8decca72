#pragma once

#include <json.hpp>

#include <string>

#include "cnp3o/config.hpp"
#include "cnp3o/trainer.hpp"

namespace cnp3o {

/// Checkpoints embed the resolved run configuration, so a file is enough
/// to rebuild the matching environment, head, and networks.
struct CheckpointInfo {
  int epoch = 0;
  long env_steps = 0;
  RunConfig config;
  nlohmann::json config_doc;
};

void save_checkpoint(const std::string& path, Trainer& trainer,
                     const nlohmann::json& resolved_config, int epoch);

CheckpointInfo read_checkpoint_info(const std::string& path);

/// Restores every named parameter tensor and the metric multipliers.
/// Throws std::runtime_error naming the tensor on any shape mismatch or
/// missing/extra entry.
void load_checkpoint_params(const std::string& path, Trainer& trainer);

}  // namespace cnp3o
