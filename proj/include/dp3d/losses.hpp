#pragma once

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <cmath>
#include <functional>
#include <vector>

#include "dp3d/articulation.hpp"
#include "dp3d/error.hpp"
#include "dp3d/mesh.hpp"
#include "dp3d/rng.hpp"
#include "dp3d/se3.hpp"
#include "dp3d/tape.hpp"

namespace dp3d {

// Weak supervision for one instance: per-vertex 2D locations (zero-centered
// image units) and visibility flags.
struct KeypointSet {
  Eigen::MatrixXd y;                        // K x 2
  Eigen::Array<bool, Eigen::Dynamic, 1> z;  // K

  Eigen::Index count() const { return y.rows(); }
  Eigen::Index visible_count() const { return z.count(); }

  void validate() const {
    if (y.rows() != z.size()) throw Error("keypoints_shape", "y rows and z length differ");
    Eigen::Index visible = 0;
    for (Eigen::Index k = 0; k < z.size(); ++k)
      if (z[k]) {
        ++visible;
        if (!std::isfinite(y(k, 0)) || !std::isfinite(y(k, 1)))
          throw Error("keypoints_nonfinite", "visible keypoint " + std::to_string(k) + " is not finite");
      }
    if (visible < 3) throw Error("keypoints_too_few", "need at least 3 visible keypoints, have " +
                                                          std::to_string(visible));
  }

  Eigen::VectorXd visibility_column() const {
    Eigen::VectorXd c(z.size());
    for (Eigen::Index k = 0; k < z.size(); ++k) c[k] = z[k] ? 1.0 : 0.0;
    return c;
  }
};

struct LossWeights {
  double w_entropy = 0.001;
  double w_canon = 0.1;
  double w_arap = 0.3;
  double pseudo_huber_eps = 0.01;
  double b_min = 0.1;

  void validate() const {
    if (w_entropy < 0 || w_canon < 0 || w_arap < 0)
      throw Error("config_invalid", "loss weights must be >= 0");
    if (pseudo_huber_eps <= 0) throw Error("config_invalid", "pseudo_huber_eps must be > 0");
    if (b_min <= 0) throw Error("config_invalid", "b_min must be > 0");
  }
};

inline double pseudo_huber(double r, double eps) {
  return eps * (std::sqrt(1.0 + (r / eps) * (r / eps)) - 1.0);
}

// ---- orthographic projection ----

inline Eigen::MatrixXd project_ortho(const Eigen::MatrixXd& x, const RigidTransform& cam) {
  return (apply(cam, x)).leftCols(2);
}

inline ad::Value project_ortho_graph(ad::Value x, const TransformNode& cam) {
  return ad::slice_cols(apply_transform(x, cam), 0, 2);
}

// ---- reprojection ----

namespace detail {
// Normalized per-vertex weights z_k a_k / sum(z a); invisible entries zero.
inline Eigen::VectorXd reprojection_weights(const KeypointSet& kp, const Eigen::VectorXd& areas) {
  if ((areas.array() <= 0.0).any()) throw Error("areas_nonpositive", "barycell areas must be > 0");
  Eigen::VectorXd w = areas.cwiseProduct(kp.visibility_column());
  const double total = w.sum();
  if (total <= 0.0) throw Error("keypoints_none_visible", "no visible keypoints to reproject");
  return w / total;
}
}  // namespace detail

// Area- and visibility-weighted robust reprojection error. `projected` is
// the K x 2 image of the posed shape under the camera.
inline ad::Value loss_reprojection_graph(ad::Value projected, const KeypointSet& kp,
                                         const Eigen::VectorXd& areas, double eps) {
  ad::Tape& t = *projected.tape;
  const Eigen::VectorXd w = detail::reprojection_weights(kp, areas);
  Eigen::MatrixXd y_masked = kp.y;
  for (Eigen::Index k = 0; k < kp.count(); ++k)
    if (!kp.z[k]) y_masked.row(k).setZero();
  ad::Value masked_proj = ad::scale_rows(projected, ad::constant(t, kp.visibility_column()));
  ad::Value residual = ad::sub(ad::constant(t, y_masked), masked_proj);
  ad::Value per_vertex = ad::pseudo_huber_rownorm(residual, eps);
  return ad::sum(ad::cmul(per_vertex, ad::constant(t, w)));
}

inline double loss_reprojection(const Eigen::MatrixXd& x, const RigidTransform& cam,
                                const KeypointSet& kp, const Eigen::VectorXd& areas, double eps) {
  ad::Tape t;
  TransformNode cam_node{ad::constant(t, cam.R), ad::constant(t, cam.T)};
  return loss_reprojection_graph(project_ortho_graph(ad::constant(t, x), cam_node), kp, areas, eps)
      .scalar();
}

// Heteroscedastic variant: per-keypoint log b_k + rho_k / max(b_k, b_min),
// same area/visibility weighting. The clip applies to the denominator only.
inline ad::Value loss_reprojection_hetero_graph(ad::Value projected, ad::Value b, const KeypointSet& kp,
                                                const Eigen::VectorXd& areas, double eps, double b_min) {
  ad::Tape& t = *projected.tape;
  const Eigen::VectorXd w = detail::reprojection_weights(kp, areas);
  Eigen::MatrixXd y_masked = kp.y;
  for (Eigen::Index k = 0; k < kp.count(); ++k)
    if (!kp.z[k]) y_masked.row(k).setZero();
  ad::Value masked_proj = ad::scale_rows(projected, ad::constant(t, kp.visibility_column()));
  ad::Value residual = ad::sub(ad::constant(t, y_masked), masked_proj);
  ad::Value rho = ad::pseudo_huber_rownorm(residual, eps);
  ad::Value per_vertex = ad::add(ad::log(b), ad::cdiv(rho, ad::cwise_max_scalar(b, b_min)));
  return ad::sum(ad::cmul(per_vertex, ad::constant(t, w)));
}

inline double loss_reprojection_hetero(const Eigen::MatrixXd& x, const RigidTransform& cam,
                                       const KeypointSet& kp, const Eigen::VectorXd& areas,
                                       const Eigen::VectorXd& b, double eps, double b_min) {
  if ((b.array() <= 0.0).any()) throw Error("hetero_b_nonpositive", "scale predictions must be > 0");
  ad::Tape t;
  TransformNode cam_node{ad::constant(t, cam.R), ad::constant(t, cam.T)};
  return loss_reprojection_hetero_graph(project_ortho_graph(ad::constant(t, x), cam_node),
                                        ad::constant(t, b), kp, areas, eps, b_min)
      .scalar();
}

// ---- canonicalization ----

// Mean robust distance between x_hat and the canonicalizer's attempt at
// undoing a random rotation of it. `psi` builds the network subgraph.
inline ad::Value loss_canonicalization_graph(ad::Value x_hat,
                                             const std::function<ad::Value(ad::Value)>& psi,
                                             const Eigen::Matrix3d& random_rot, double eps) {
  ad::Tape& t = *x_hat.tape;
  ad::Value rotated = ad::matmul(x_hat, ad::constant(t, random_rot));
  ad::Value recovered = psi(rotated);
  ad::Value residual = ad::sub(x_hat, recovered);
  return ad::mean(ad::pseudo_huber_rownorm(residual, eps));
}

inline double loss_canonicalization(const Eigen::MatrixXd& x_hat,
                                    const std::function<Eigen::MatrixXd(const Eigen::MatrixXd&)>& psi,
                                    Rng& rng, double eps) {
  const RigidTransform rot = random_rotation(rng);
  ad::Tape t;
  auto psi_builder = [&](ad::Value v) { return ad::constant(t, psi(v.val())); };
  return loss_canonicalization_graph(ad::leaf(t, x_hat), psi_builder, rot.R, eps).scalar();
}

// ---- local rigidity (ARAP) ----

// Best-fit rotation per vertex one-ring, row convention: minimizes
// sum_q w_kq |V_kq - X_kq R|^2 over R in SO(3).
inline std::vector<Eigen::Matrix3d> arap_fit_rotations(const Eigen::MatrixXd& x,
                                                       const Eigen::MatrixXd& v, const OneRings& rings) {
  std::vector<Eigen::Matrix3d> rotations(size_t(x.rows()));
  for (Eigen::Index k = 0; k < x.rows(); ++k) {
    const auto& nbrs = rings.neighbors[size_t(k)];
    if (nbrs.size() < 2)
      throw Error("arap_ring", "vertex " + std::to_string(k) + " has fewer than 2 neighbors");
    Eigen::Matrix3d s = Eigen::Matrix3d::Zero();
    for (size_t e = 0; e < nbrs.size(); ++e) {
      const Eigen::RowVector3d vq = v.row(nbrs[e]) - v.row(k);
      const Eigen::RowVector3d xq = x.row(nbrs[e]) - x.row(k);
      s += rings.edge_weight[size_t(k)][e] * (xq.transpose() * vq);
    }
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(s, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Matrix3d r = svd.matrixU() * svd.matrixV().transpose();
    if (r.determinant() < 0.0) {
      Eigen::Matrix3d flip = Eigen::Matrix3d::Identity();
      flip(2, 2) = -1.0;
      r = svd.matrixU() * flip * svd.matrixV().transpose();
    }
    rotations[size_t(k)] = r;
  }
  return rotations;
}

// Fused node: fits the per-vertex rotations from the current values, then
// scores sum_k sum_q w_kq rho(|V_kq - X_kq R_k|). Gradients flow through X
// with the rotations held fixed. Pass `frozen` to score against externally
// fixed rotations (used by the stop-gradient finite-difference check).
inline ad::Value loss_arap_graph(ad::Value x, const Eigen::MatrixXd& v, const OneRings& rings,
                                 double eps, const std::vector<Eigen::Matrix3d>* frozen = nullptr) {
  ad::Tape& t = *x.tape;
  const Eigen::MatrixXd& xv = x.val();
  const std::vector<Eigen::Matrix3d> rotations = frozen ? *frozen : arap_fit_rotations(xv, v, rings);

  double loss = 0.0;
  Eigen::MatrixXd dx = Eigen::MatrixXd::Zero(xv.rows(), 3);
  for (Eigen::Index k = 0; k < xv.rows(); ++k) {
    const auto& nbrs = rings.neighbors[size_t(k)];
    const Eigen::Matrix3d& r = rotations[size_t(k)];
    for (size_t e = 0; e < nbrs.size(); ++e) {
      const double w = rings.edge_weight[size_t(k)][e];
      const Eigen::RowVector3d vq = v.row(nbrs[e]) - v.row(k);
      const Eigen::RowVector3d xq = xv.row(nbrs[e]) - xv.row(k);
      const Eigen::RowVector3d res = vq - xq * r;
      const double norm = res.norm();
      loss += w * pseudo_huber(norm, eps);
      const double phi = 1.0 / (eps * std::sqrt(1.0 + (norm / eps) * (norm / eps)));
      const Eigen::RowVector3d d_before_edge = -w * phi * (res * r.transpose());
      dx.row(nbrs[e]) += d_before_edge;
      dx.row(k) -= d_before_edge;
    }
  }

  const bool ng = x.needs_grad();
  const int out = t.next_id(), ix = x.id;
  std::function<void(ad::Tape&)> bw;
  if (ng)
    bw = [out, ix, dx](ad::Tape& tp) { tp.grad(ix) += tp.grad(out)(0, 0) * dx; };
  return {&t, t.push(Eigen::MatrixXd::Constant(1, 1, loss), ng, std::move(bw))};
}

inline double loss_arap(const Eigen::MatrixXd& x, const TriMesh& mesh, const OneRings& rings,
                        double eps) {
  ad::Tape t;
  return loss_arap_graph(ad::constant(t, x), mesh.vertices, rings, eps).scalar();
}

// ---- entropy ----

inline ad::Value loss_entropy_graph(ad::Value p) {
  return ad::scale(ad::sum(ad::xlogx(p)), -1.0 / double(p.val().rows()));
}

inline double loss_entropy(const Eigen::MatrixXd& p) {
  ad::Tape t;
  return loss_entropy_graph(ad::constant(t, p)).scalar();
}

// ---- weighted total ----

struct LossTerms {
  ad::Value rep;
  ad::Value canon;  // may be unset (id < 0)
  ad::Value arap;   // may be unset
  ad::Value entropy;  // may be unset
};

inline ad::Value loss_total_graph(ad::Tape& t, const LossTerms& terms, const LossWeights& weights) {
  ad::Value total = terms.rep;
  if (terms.entropy.id >= 0) total = ad::add(total, ad::scale(terms.entropy, weights.w_entropy));
  if (terms.canon.id >= 0) total = ad::add(total, ad::scale(terms.canon, weights.w_canon));
  if (terms.arap.id >= 0) total = ad::add(total, ad::scale(terms.arap, weights.w_arap));
  (void)t;
  return total;
}

}  // namespace dp3d
