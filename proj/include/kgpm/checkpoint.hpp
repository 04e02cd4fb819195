#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "kgpm/error.hpp"
#include "kgpm/model.hpp"
#include "kgpm/rng.hpp"

namespace kgpm {

inline nlohmann::ordered_json config_to_json(const ModelConfig& c) {
  nlohmann::ordered_json j;
  j["method"] = to_string(c.method);
  j["embedding_dim"] = c.embedding_dim;
  j["loss"] = to_string(c.loss);
  j["margin"] = c.margin;
  j["negatives_per_positive"] = c.negatives_per_positive;
  j["learning_rate"] = c.learning_rate;
  j["epochs"] = c.epochs;
  j["seed"] = c.seed;
  j["optimizer"] = to_string(c.optimizer);
  j["l2_weight"] = c.l2_weight;
  j["init_scale"] = c.init_scale;
  j["filtered_negatives"] = c.filtered_negatives;
  return j;
}

// Missing keys keep the values of `defaults`; unknown keys are rejected.
template <typename Json>
ModelConfig config_from_json(const Json& j, ModelConfig defaults = {}) {
  if (!j.is_object()) throw ConfigError("model config must be an object");
  ModelConfig c = defaults;
  try {
    for (auto it = j.begin(); it != j.end(); ++it) {
      const std::string& k = it.key();
      const auto& v = it.value();
      if (k == "method") c.method = parse_method(v.template get<std::string>());
      else if (k == "embedding_dim") c.embedding_dim = v.template get<int>();
      else if (k == "loss") c.loss = parse_loss(v.template get<std::string>());
      else if (k == "margin") c.margin = v.template get<double>();
      else if (k == "negatives_per_positive") c.negatives_per_positive = v.template get<int>();
      else if (k == "learning_rate") c.learning_rate = v.template get<double>();
      else if (k == "epochs") c.epochs = v.template get<int>();
      else if (k == "seed") c.seed = v.template get<std::uint64_t>();
      else if (k == "optimizer") c.optimizer = parse_optimizer(v.template get<std::string>());
      else if (k == "l2_weight") c.l2_weight = v.template get<double>();
      else if (k == "init_scale") c.init_scale = v.template get<double>();
      else if (k == "filtered_negatives") c.filtered_negatives = v.template get<bool>();
      else throw ConfigError("unknown model config key '" + k + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

/// Self-describing JSON container: config, tables, and the hash of the graph
/// the model was trained on. Serialization is deterministic, so equal models
/// produce equal bytes.
inline std::string serialize_checkpoint(const EmbeddingModel& m) {
  nlohmann::ordered_json j;
  j["format"] = "kgpm-checkpoint";
  j["version"] = 1;
  j["dataset_hash"] = m.dataset_hash;
  j["config"] = config_to_json(m.config);
  j["trained_epochs"] = m.trained_epochs;
  j["final_loss"] = m.final_loss;
  auto table = [](const Matrix& t) {
    nlohmann::ordered_json o;
    o["rows"] = t.rows();
    o["cols"] = t.cols();
    o["data"] = t.data();
    return o;
  };
  j["entities"] = table(m.entities);
  j["relations"] = table(m.relations);
  return j.dump() + "\n";
}

inline std::string checkpoint_hash(const EmbeddingModel& m) { return hex64(fnv1a(serialize_checkpoint(m))); }

inline EmbeddingModel parse_checkpoint(const std::string& text) {
  EmbeddingModel m;
  try {
    const auto j = nlohmann::json::parse(text);
    if (j.at("format") != "kgpm-checkpoint") throw DataError("not a kgpm checkpoint");
    if (j.at("version") != 1) throw DataError("unsupported checkpoint version");
    m.config = config_from_json(j.at("config"));
    m.dataset_hash = j.at("dataset_hash").get<std::string>();
    m.trained_epochs = j.at("trained_epochs").get<int>();
    m.final_loss = j.at("final_loss").get<double>();
    auto table = [](const nlohmann::json& o) {
      Matrix t(o.at("rows").get<std::size_t>(), o.at("cols").get<std::size_t>());
      t.data() = o.at("data").get<std::vector<double>>();
      if (t.data().size() != t.rows() * t.cols()) throw DataError("checkpoint table size mismatch");
      return t;
    };
    m.entities = table(j.at("entities"));
    m.relations = table(j.at("relations"));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed checkpoint: ") + e.what());
  }
  const auto d = static_cast<std::size_t>(m.config.embedding_dim);
  if (m.entities.cols() != entity_width(m.config.method, d) ||
      m.relations.cols() != relation_width(m.config.method, d)) {
    throw DataError("checkpoint table widths do not match its config");
  }
  if (!m.all_finite()) throw DataError("checkpoint contains non-finite parameters");
  return m;
}

inline void save_checkpoint(const EmbeddingModel& m, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  out << serialize_checkpoint(m);
}

// Loads a checkpoint and verifies it belongs to `graph`.
inline EmbeddingModel load_checkpoint(const std::string& path, const KnowledgeGraph& graph) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  auto m = parse_checkpoint(ss.str());
  check_compatible(m, graph);
  return m;
}

}  // namespace kgpm
