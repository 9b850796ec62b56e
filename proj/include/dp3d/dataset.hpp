#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "dp3d/error.hpp"
#include "dp3d/losses.hpp"
#include "dp3d/mesh.hpp"
#include "dp3d/rng.hpp"
#include "dp3d/se3.hpp"

#include <nlohmann/json.hpp>

namespace dp3d {

// One training/eval instance. gt_vertices are in the camera frame (image
// axes x,y plus depth), model units; keypoints are in normalized image units
// (template bounding-box diagonal = 1).
struct Instance {
  KeypointSet keypoints;
  std::optional<Eigen::MatrixXd> gt_vertices;
  std::optional<RigidTransform> gt_camera;
  std::string id;

  void validate() const {
    keypoints.validate();
    if (gt_vertices.has_value() != gt_camera.has_value())
      throw Error("instance_gt", "gt_vertices and gt_camera must be present together (" + id + ")");
  }
};

// Pixel-to-vertex matches from a dense correspondence detector.
struct PixelMatchSet {
  struct Match {
    Eigen::RowVector2d pixel;
    int vertex = 0;
  };
  std::vector<Match> matches;
};

// Mean pixel coordinate per matched vertex; unmatched vertices invisible.
inline KeypointSet extract_keypoints(const PixelMatchSet& matches, Eigen::Index k) {
  if (matches.matches.empty()) throw Error("matches_empty", "pixel match set is empty");
  KeypointSet kp;
  kp.y = Eigen::MatrixXd::Zero(k, 2);
  kp.z = Eigen::Array<bool, Eigen::Dynamic, 1>::Constant(k, false);
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(k);
  for (const auto& m : matches.matches) {
    if (m.vertex < 0 || m.vertex >= k)
      throw Error("matches_index", "match references vertex " + std::to_string(m.vertex) +
                                       " outside [0, " + std::to_string(k) + ")");
    kp.y.row(m.vertex) += m.pixel;
    counts[m.vertex] += 1.0;
    kp.z[m.vertex] = true;
  }
  for (Eigen::Index i = 0; i < k; ++i)
    if (kp.z[i]) kp.y.row(i) /= counts[i];
  return kp;
}

// ---- visibility by ray casting ----

namespace detail {

// Moller-Trumbore; returns true when the ray origin + t*dir (t > t_min)
// crosses the triangle.
inline bool ray_hits_triangle(const Eigen::RowVector3d& origin, const Eigen::RowVector3d& dir,
                              const Eigen::RowVector3d& a, const Eigen::RowVector3d& b,
                              const Eigen::RowVector3d& c, double t_min) {
  const Eigen::RowVector3d e1 = b - a, e2 = c - a;
  const Eigen::RowVector3d p = dir.cross(e2);
  const double det = p.dot(e1);
  if (std::abs(det) < 1e-14) return false;
  const double inv = 1.0 / det;
  const Eigen::RowVector3d s = origin - a;
  const double u = s.dot(p) * inv;
  if (u < 0.0 || u > 1.0) return false;
  const Eigen::RowVector3d q = s.cross(e1);
  const double v = dir.dot(q) * inv;
  if (v < 0.0 || u + v > 1.0) return false;
  return e2.dot(q) * inv > t_min;
}

}  // namespace detail

// A posed vertex is visible when the ray from it toward the (orthographic)
// camera clears every triangle of the posed mesh. The 1e-6 offset along the
// ray skips the surface at the source vertex itself.
inline Eigen::Array<bool, Eigen::Dynamic, 1> raycast_visibility(const Eigen::MatrixXd& posed,
                                                                const Eigen::MatrixXi& faces,
                                                                const Eigen::RowVector3d& toward_camera) {
  Eigen::Array<bool, Eigen::Dynamic, 1> visible(posed.rows());
  for (Eigen::Index k = 0; k < posed.rows(); ++k) {
    const Eigen::RowVector3d origin = posed.row(k);
    bool blocked = false;
    for (Eigen::Index f = 0; f < faces.rows() && !blocked; ++f) {
      blocked = detail::ray_hits_triangle(origin, toward_camera, posed.row(faces(f, 0)),
                                          posed.row(faces(f, 1)), posed.row(faces(f, 2)), 1e-6);
    }
    visible[k] = !blocked;
  }
  return visible;
}

// ---- synthetic dataset generation ----

struct PoseSamplerConfig {
  double theta_max_deg = 45.0;
  double theta_min_deg = 0.0;         // > 0 keeps every hinge visibly bent
  bool chain = true;                  // hinge parts sequentially along the label order
  std::string camera_mode = "haar";   // "haar" | "limited"
  double cam_yaw_max_deg = 180.0;     // limited mode: rotation about y
  double cam_pitch_max_deg = 30.0;    // limited mode: rotation about x
  std::vector<Eigen::RowVector3d> pivots;  // hinge pivots; derived from labels when empty
};

namespace detail {

inline Eigen::RowVector3d random_axis(Rng& rng) {
  Eigen::RowVector3d axis;
  double n = 0.0;
  do {
    axis << rng.gaussian(), rng.gaussian(), rng.gaussian();
    n = axis.norm();
  } while (n < 1e-9);
  return axis / n;
}

inline RigidTransform rotation_about(const Eigen::RowVector3d& axis, double angle,
                                     const Eigen::RowVector3d& pivot) {
  TwistVector tw;
  tw.omega = axis * angle;
  RigidTransform g = se3_exp(tw);
  g.T = pivot - pivot * g.R;
  return g;
}

inline RigidTransform sample_camera(const PoseSamplerConfig& cfg, Rng& rng) {
  if (cfg.camera_mode == "haar") return random_rotation(rng);
  if (cfg.camera_mode == "limited") {
    const double yaw = rng.uniform(-1.0, 1.0) * cfg.cam_yaw_max_deg * M_PI / 180.0;
    const double pitch = rng.uniform(-1.0, 1.0) * cfg.cam_pitch_max_deg * M_PI / 180.0;
    TwistVector ty, tx;
    ty.omega << 0.0, yaw, 0.0;
    tx.omega << pitch, 0.0, 0.0;
    return compose(se3_exp(ty), se3_exp(tx));
  }
  throw Error("config_invalid", "unknown camera_mode: " + cfg.camera_mode);
}

inline std::vector<Eigen::RowVector3d> default_pivots(const TriMesh& mesh, const std::vector<int>& labels,
                                                      int n_parts) {
  std::vector<Eigen::RowVector3d> centroid(size_t(n_parts), Eigen::RowVector3d::Zero());
  std::vector<int> count(size_t(n_parts), 0);
  for (Eigen::Index k = 0; k < mesh.vertex_count(); ++k) {
    centroid[size_t(labels[size_t(k)])] += mesh.vertices.row(k);
    ++count[size_t(labels[size_t(k)])];
  }
  for (int m = 0; m < n_parts; ++m) {
    if (count[size_t(m)] == 0) throw Error("labels_empty_part", "part " + std::to_string(m) + " has no vertices");
    centroid[size_t(m)] /= double(count[size_t(m)]);
  }
  std::vector<Eigen::RowVector3d> pivots;
  for (int m = 1; m < n_parts; ++m) pivots.push_back(0.5 * (centroid[size_t(m - 1)] + centroid[size_t(m)]));
  return pivots;
}

}  // namespace detail

struct SynthInstanceDebug {
  std::vector<RigidTransform> part_transforms;
  Eigen::MatrixXd posed_object_frame;
};

// Poses the template by hard-label blend of sampled per-part transforms,
// projects orthographically, ray-casts visibility, zero-centers the visible
// projections and scales them so the template bbox diagonal maps to 1.
inline std::vector<Instance> synth_dataset(const TriMesh& mesh, const std::vector<int>& labels,
                                           const PoseSamplerConfig& cfg, int n, Rng& rng,
                                           std::vector<SynthInstanceDebug>* debug = nullptr) {
  if (Eigen::Index(labels.size()) != mesh.vertex_count())
    throw Error("labels_shape", "label count does not match vertex count");
  const int n_parts = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
  for (int l : labels)
    if (l < 0) throw Error("labels_range", "negative part label");

  std::vector<Eigen::RowVector3d> pivots = cfg.pivots;
  if (pivots.empty() && n_parts > 1) pivots = detail::default_pivots(mesh, labels, n_parts);
  if (int(pivots.size()) != std::max(0, n_parts - 1))
    throw Error("config_invalid", "need one hinge pivot per part beyond the first");

  const double scale = 1.0 / bbox_diagonal(mesh);
  const double theta_max = cfg.theta_max_deg * M_PI / 180.0;
  const double theta_min = cfg.theta_min_deg * M_PI / 180.0;
  if (theta_min < 0.0 || theta_min > theta_max)
    throw Error("config_invalid", "theta_min_deg must lie in [0, theta_max_deg]");

  std::vector<Instance> out;
  out.reserve(size_t(n));
  for (int i = 0; i < n; ++i) {
    Rng inst_rng = rng.split(std::uint64_t(i));
    bool ok = false;
    for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
      const RigidTransform cam = detail::sample_camera(cfg, inst_rng);
      std::vector<RigidTransform> part(size_t(std::max(n_parts, 1)));
      part[0] = RigidTransform::identity();
      for (int m = 1; m < n_parts; ++m) {
        const Eigen::RowVector3d axis = detail::random_axis(inst_rng);
        const double magnitude = inst_rng.uniform(theta_min, theta_max);
        const double angle = inst_rng.uniform() < 0.5 ? magnitude : -magnitude;
        const RigidTransform hinge = detail::rotation_about(axis, angle, pivots[size_t(m - 1)]);
        part[size_t(m)] = cfg.chain ? compose(hinge, part[size_t(m - 1)]) : hinge;
      }

      Eigen::MatrixXd posed(mesh.vertex_count(), 3);
      for (Eigen::Index k = 0; k < mesh.vertex_count(); ++k)
        posed.row(k) = apply(part[size_t(labels[size_t(k)])], Eigen::RowVector3d(mesh.vertices.row(k)));

      const Eigen::RowVector3d toward_camera = -cam.R.col(2).transpose();
      const auto visible = raycast_visibility(posed, mesh.faces, toward_camera);
      if (visible.count() < 3) continue;  // degenerate pose, resample

      const Eigen::MatrixXd in_cam = posed * cam.R;
      Eigen::RowVector2d center = Eigen::RowVector2d::Zero();
      for (Eigen::Index k = 0; k < posed.rows(); ++k)
        if (visible[k]) center += in_cam.row(k).leftCols(2);
      center /= double(visible.count());

      Instance inst;
      inst.id = "inst_" + std::to_string(1000000 + i).substr(1);
      inst.keypoints.y.resize(mesh.vertex_count(), 2);
      inst.keypoints.z = visible;
      for (Eigen::Index k = 0; k < posed.rows(); ++k)
        inst.keypoints.y.row(k) = scale * (in_cam.row(k).leftCols(2) - center);
      RigidTransform full_cam = cam;
      full_cam.T << -center[0], -center[1], 0.0;
      inst.gt_camera = full_cam;
      inst.gt_vertices = apply(full_cam, posed);
      inst.validate();
      out.push_back(std::move(inst));
      if (debug) debug->push_back({part, posed});
      ok = true;
    }
    if (!ok)
      throw Error("synth_degenerate",
                  "instance " + std::to_string(i) + ": no pose with 3+ visible vertices in 100 tries");
  }
  return out;
}

// ---- corruptions ----

struct CorruptSpec {
  enum class Kind { gaussian_noise, sparsify, drop_lower_half } kind = Kind::gaussian_noise;
  double sigma = 0.0;          // gaussian_noise
  double keep_fraction = 1.0;  // sparsify
  double rate = 0.0;           // drop_lower_half: fraction of instances
  std::vector<bool> below_median;  // drop_lower_half: template mask
};

// Template-frame mask of vertices strictly below the median z.
inline std::vector<bool> below_median_mask(const TriMesh& mesh) {
  std::vector<double> zs(size_t(mesh.vertex_count()));
  for (Eigen::Index k = 0; k < mesh.vertex_count(); ++k) zs[size_t(k)] = mesh.vertices(k, 2);
  std::vector<double> sorted = zs;
  std::nth_element(sorted.begin(), sorted.begin() + sorted.size() / 2, sorted.end());
  const double median = sorted[sorted.size() / 2];
  std::vector<bool> mask(zs.size());
  for (size_t k = 0; k < zs.size(); ++k) mask[k] = zs[k] < median;
  return mask;
}

inline std::vector<Instance> corrupt(std::vector<Instance> dataset, const CorruptSpec& spec, Rng& rng) {
  if (spec.sigma < 0.0) throw Error("config_invalid", "noise sigma must be >= 0");
  if (spec.keep_fraction < 0.0 || spec.keep_fraction > 1.0)
    throw Error("config_invalid", "keep_fraction must be in [0,1]");
  if (spec.rate < 0.0 || spec.rate > 1.0) throw Error("config_invalid", "rate must be in [0,1]");

  for (size_t i = 0; i < dataset.size(); ++i) {
    Instance& inst = dataset[i];
    Rng inst_rng = rng.split(std::uint64_t(i));
    switch (spec.kind) {
      case CorruptSpec::Kind::gaussian_noise:
        for (Eigen::Index k = 0; k < inst.keypoints.count(); ++k)
          if (inst.keypoints.z[k]) {
            inst.keypoints.y(k, 0) += inst_rng.gaussian(0.0, spec.sigma);
            inst.keypoints.y(k, 1) += inst_rng.gaussian(0.0, spec.sigma);
          }
        break;
      case CorruptSpec::Kind::sparsify:
        for (Eigen::Index k = 0; k < inst.keypoints.count(); ++k)
          if (inst.keypoints.z[k] && inst_rng.uniform() >= spec.keep_fraction)
            inst.keypoints.z[k] = false;
        break;
      case CorruptSpec::Kind::drop_lower_half: {
        if (Eigen::Index(spec.below_median.size()) != inst.keypoints.count())
          throw Error("config_invalid", "below_median mask does not match keypoint count");
        if (inst_rng.uniform() < spec.rate)
          for (Eigen::Index k = 0; k < inst.keypoints.count(); ++k)
            if (spec.below_median[size_t(k)]) inst.keypoints.z[k] = false;
        break;
      }
    }
    Eigen::Index visible = inst.keypoints.z.count();
    if (visible < 3)
      throw Error("corrupt_too_few",
                  "corruption left instance " + inst.id + " with " + std::to_string(visible) +
                      " visible keypoints (< 3)");
  }
  return dataset;
}

// ---- JSON-lines I/O ----

inline nlohmann::json instance_to_json(const Instance& inst) {
  nlohmann::json j;
  j["id"] = inst.id;
  auto& y = j["y"] = nlohmann::json::array();
  for (Eigen::Index k = 0; k < inst.keypoints.count(); ++k)
    y.push_back({inst.keypoints.y(k, 0), inst.keypoints.y(k, 1)});
  auto& z = j["z"] = nlohmann::json::array();
  for (Eigen::Index k = 0; k < inst.keypoints.count(); ++k) z.push_back(inst.keypoints.z[k]);
  if (inst.gt_vertices) {
    auto& gx = j["gt_x"] = nlohmann::json::array();
    for (Eigen::Index k = 0; k < inst.gt_vertices->rows(); ++k)
      gx.push_back({(*inst.gt_vertices)(k, 0), (*inst.gt_vertices)(k, 1), (*inst.gt_vertices)(k, 2)});
    nlohmann::json cam;
    auto& r = cam["R"] = nlohmann::json::array();
    for (int i = 0; i < 3; ++i)
      for (int c = 0; c < 3; ++c) r.push_back(inst.gt_camera->R(i, c));
    cam["T"] = {inst.gt_camera->T[0], inst.gt_camera->T[1], inst.gt_camera->T[2]};
    j["gt_cam"] = cam;
  }
  return j;
}

inline Instance instance_from_json(const nlohmann::json& j) {
  Instance inst;
  inst.id = j.at("id").get<std::string>();
  const auto& y = j.at("y");
  const auto& z = j.at("z");
  inst.keypoints.y.resize(Eigen::Index(y.size()), 2);
  inst.keypoints.z.resize(Eigen::Index(z.size()));
  for (size_t k = 0; k < y.size(); ++k) {
    inst.keypoints.y(Eigen::Index(k), 0) = y[k][0].get<double>();
    inst.keypoints.y(Eigen::Index(k), 1) = y[k][1].get<double>();
  }
  for (size_t k = 0; k < z.size(); ++k) inst.keypoints.z[Eigen::Index(k)] = z[k].get<bool>();
  if (j.contains("gt_x")) {
    const auto& gx = j.at("gt_x");
    Eigen::MatrixXd v(Eigen::Index(gx.size()), 3);
    for (size_t k = 0; k < gx.size(); ++k)
      for (int c = 0; c < 3; ++c) v(Eigen::Index(k), c) = gx[k][size_t(c)].get<double>();
    inst.gt_vertices = std::move(v);
    RigidTransform cam;
    const auto& r = j.at("gt_cam").at("R");
    for (int i = 0; i < 3; ++i)
      for (int c = 0; c < 3; ++c) cam.R(i, c) = r[size_t(3 * i + c)].get<double>();
    const auto& t = j.at("gt_cam").at("T");
    cam.T << t[0].get<double>(), t[1].get<double>(), t[2].get<double>();
    inst.gt_camera = cam;
  }
  inst.validate();
  return inst;
}

inline void write_dataset(const std::string& path, const std::vector<Instance>& dataset) {
  std::ofstream out(path);
  if (!out) throw Error("io_open", "cannot open dataset file for writing: " + path);
  for (const auto& inst : dataset) out << instance_to_json(inst).dump() << "\n";
  if (!out) throw Error("io_write", "failed writing dataset: " + path);
}

inline std::vector<Instance> read_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("io_open", "cannot open dataset file: " + path);
  std::vector<Instance> dataset;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      dataset.push_back(instance_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw Error("dataset_parse", "line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return dataset;
}

}  // namespace dp3d
