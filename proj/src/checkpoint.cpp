#include "cnp3o/checkpoint.hpp"

#include <fstream>
#include <stdexcept>

namespace cnp3o {

namespace {

using nlohmann::json;

json tensor_to_json(const Eigen::MatrixXd& m) {
  json entry;
  entry["shape"] = {m.rows(), m.cols()};
  json data = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
  entry["data"] = std::move(data);
  return entry;
}

void tensor_from_json(const json& entry, const std::string& name,
                      Eigen::MatrixXd& m) {
  if (!entry.contains("shape") || !entry.contains("data"))
    throw std::runtime_error("checkpoint: malformed tensor '" + name + "'");
  const auto& shape = entry.at("shape");
  if (!shape.is_array() || shape.size() != 2)
    throw std::runtime_error("checkpoint: malformed shape for '" + name + "'");
  const Eigen::Index rows = shape[0].get<Eigen::Index>();
  const Eigen::Index cols = shape[1].get<Eigen::Index>();
  if (rows != m.rows() || cols != m.cols())
    throw std::runtime_error(
        "checkpoint: shape mismatch for '" + name + "': file has " +
        std::to_string(rows) + "x" + std::to_string(cols) + ", model needs " +
        std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
  const auto& data = entry.at("data");
  if (static_cast<Eigen::Index>(data.size()) != rows * cols)
    throw std::runtime_error("checkpoint: data length mismatch for '" + name +
                             "'");
  Eigen::Index k = 0;
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = data[k++].get<double>();
}

json read_document(const std::string& path) {
  std::ifstream in(path);
  if (!in)
    throw std::runtime_error("checkpoint: cannot open '" + path + "'");
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw std::runtime_error("checkpoint: '" + path +
                             "' is not valid JSON: " + e.what());
  }
  return doc;
}

}  // namespace

void save_checkpoint(const std::string& path, Trainer& trainer,
                     const nlohmann::json& resolved_config, int epoch) {
  json doc;
  doc["format"] = "constrained-primitive-policy-1";
  doc["epoch"] = epoch;
  doc["env_steps"] = trainer.env_steps();
  doc["config"] = resolved_config;
  doc["config_hash"] = config_hash(resolved_config);

  json params = json::object();
  for (const auto& p : policy_params(trainer.policy()))
    params["policy." + p.name] = tensor_to_json(*p.tensor);
  for (const auto& p : value_params(trainer.value_net()))
    params["value." + p.name] = tensor_to_json(*p.tensor);
  doc["params"] = std::move(params);

  json eta = json::array();
  for (Eigen::Index i = 0; i < trainer.metric().eta.size(); ++i)
    eta.push_back(trainer.metric().eta[i]);
  doc["metric_eta"] = std::move(eta);

  std::ofstream out(path);
  if (!out)
    throw std::runtime_error("checkpoint: cannot write '" + path + "'");
  out << doc.dump() << '\n';
}

CheckpointInfo read_checkpoint_info(const std::string& path) {
  const json doc = read_document(path);
  if (!doc.contains("config"))
    throw std::runtime_error("checkpoint: '" + path +
                             "' carries no embedded config");
  CheckpointInfo info;
  info.config_doc = doc.at("config");
  info.config = parse_run_config(info.config_doc);
  info.epoch = doc.value("epoch", 0);
  info.env_steps = doc.value("env_steps", 0L);
  return info;
}

void load_checkpoint_params(const std::string& path, Trainer& trainer) {
  const json doc = read_document(path);
  if (!doc.contains("params"))
    throw std::runtime_error("checkpoint: '" + path + "' carries no params");
  const json& params = doc.at("params");

  std::size_t consumed = 0;
  auto restore = [&](const std::string& name, Eigen::MatrixXd& tensor) {
    if (!params.contains(name))
      throw std::runtime_error("checkpoint: missing tensor '" + name + "'");
    tensor_from_json(params.at(name), name, tensor);
    ++consumed;
  };
  for (const auto& p : policy_params(trainer.policy()))
    restore("policy." + p.name, *p.tensor);
  for (const auto& p : value_params(trainer.value_net()))
    restore("value." + p.name, *p.tensor);
  if (consumed != params.size())
    throw std::runtime_error(
        "checkpoint: file contains tensors the model does not declare");

  if (!doc.contains("metric_eta"))
    throw std::runtime_error("checkpoint: missing metric multipliers");
  const auto& eta = doc.at("metric_eta");
  if (static_cast<Eigen::Index>(eta.size()) != trainer.metric().eta.size())
    throw std::runtime_error("checkpoint: metric multiplier count mismatch");
  for (Eigen::Index i = 0; i < trainer.metric().eta.size(); ++i)
    trainer.metric().eta[i] = eta[i].get<double>();
  trainer.set_env_steps(doc.value("env_steps", 0L));
}

}  // namespace cnp3o
