#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <fstream>
#include <string>

#include "dp3d/error.hpp"
#include "dp3d/networks.hpp"
#include "dp3d/params.hpp"

#include <nlohmann/json.hpp>

namespace dp3d {

// FNV-1a over the raw file bytes; ties a checkpoint to the exact template
// mesh it was trained against.
inline std::string file_content_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("io_open", "cannot open file for hashing: " + path);
  std::uint64_t h = 1469598103934665603ULL;
  char c = 0;
  while (in.get(c)) {
    h ^= std::uint8_t(c);
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace detail {

inline nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
  nlohmann::json data = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) data.push_back(m(i, j));
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

inline Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
  Eigen::MatrixXd m(j.at("rows").get<Eigen::Index>(), j.at("cols").get<Eigen::Index>());
  const auto& data = j.at("data");
  if (Eigen::Index(data.size()) != m.size())
    throw Error("checkpoint_parse", "matrix payload size mismatch");
  Eigen::Index idx = 0;
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j2 = 0; j2 < m.cols(); ++j2) m(i, j2) = data[size_t(idx++)].get<double>();
  return m;
}

}  // namespace detail

// Everything needed to reload a trained model: the segmentation parameters,
// network weights, batch-norm statistics, and the identity of the mesh.
struct Checkpoint {
  std::string variant = "parts";
  int m_parts = 0;
  int n_u = 0;
  int blend_shapes = 0;
  bool heteroscedastic = false;
  bool camera_scale = false;
  std::string mesh_path;
  std::string mesh_hash;
  MlpConfig phi_cfg, psi_cfg;
  ParamSet params;
  BatchNormState batchnorm;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["format"] = "dp3d-checkpoint-v1";
    j["variant"] = variant;
    j["m_parts"] = m_parts;
    j["n_u"] = n_u;
    j["blend_shapes"] = blend_shapes;
    j["heteroscedastic"] = heteroscedastic;
    j["camera_scale"] = camera_scale;
    j["mesh_path"] = mesh_path;
    j["mesh_hash"] = mesh_hash;
    for (const auto* cfg : {&phi_cfg, &psi_cfg}) {
      nlohmann::json c;
      c["input_dim"] = cfg->input_dim;
      c["output_dim"] = cfg->output_dim;
      c["width"] = cfg->width;
      c["hidden"] = cfg->hidden;
      c["blocks"] = cfg->blocks;
      j[cfg == &phi_cfg ? "phi" : "psi"] = c;
    }
    auto& p = j["params"] = nlohmann::json::array();
    for (const auto& e : params.entries())
      p.push_back({{"name", e.name},
                   {"trainable", e.trainable},
                   {"weight_decay", e.weight_decay},
                   {"tensor", detail::matrix_to_json(e.value)}});
    auto& bn = j["batchnorm"] = nlohmann::json::array();
    for (const auto& [name, row] : batchnorm) {
      nlohmann::json data = nlohmann::json::array();
      for (Eigen::Index i = 0; i < row.size(); ++i) data.push_back(row[i]);
      bn.push_back({{"name", name}, {"data", data}});
    }
    return j;
  }

  static Checkpoint from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "dp3d-checkpoint-v1")
      throw Error("checkpoint_parse", "unrecognized checkpoint format");
    Checkpoint ck;
    ck.variant = j.at("variant").get<std::string>();
    ck.m_parts = j.at("m_parts").get<int>();
    ck.n_u = j.at("n_u").get<int>();
    ck.blend_shapes = j.at("blend_shapes").get<int>();
    ck.heteroscedastic = j.at("heteroscedastic").get<bool>();
    ck.camera_scale = j.at("camera_scale").get<bool>();
    ck.mesh_path = j.at("mesh_path").get<std::string>();
    ck.mesh_hash = j.at("mesh_hash").get<std::string>();
    for (const char* key : {"phi", "psi"}) {
      const auto& c = j.at(key);
      MlpConfig cfg;
      cfg.input_dim = c.at("input_dim").get<int>();
      cfg.output_dim = c.at("output_dim").get<int>();
      cfg.width = c.at("width").get<int>();
      cfg.hidden = c.at("hidden").get<int>();
      cfg.blocks = c.at("blocks").get<int>();
      (key[1] == 'h' ? ck.phi_cfg : ck.psi_cfg) = cfg;
    }
    for (const auto& e : j.at("params"))
      ck.params.add(e.at("name").get<std::string>(), detail::matrix_from_json(e.at("tensor")),
                    e.at("trainable").get<bool>(), e.value("weight_decay", true));
    for (const auto& e : j.at("batchnorm")) {
      const auto& data = e.at("data");
      Eigen::RowVectorXd row(Eigen::Index(data.size()));
      for (Eigen::Index i = 0; i < row.size(); ++i) row[i] = data[size_t(i)].get<double>();
      ck.batchnorm[e.at("name").get<std::string>()] = row;
    }
    return ck;
  }
};

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("io_open", "cannot open checkpoint for writing: " + path);
  out << ck.to_json().dump(1) << "\n";
  if (!out) throw Error("io_write", "failed writing checkpoint: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("io_open", "cannot open checkpoint: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error("checkpoint_parse", e.what());
  }
  return Checkpoint::from_json(j);
}

}  // namespace dp3d
