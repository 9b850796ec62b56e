#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "dp3d/error.hpp"
#include "dp3d/mesh.hpp"
#include "dp3d/rng.hpp"
#include "dp3d/se3.hpp"
#include "dp3d/spectral.hpp"
#include "dp3d/tape.hpp"

namespace dp3d {

// Latent soft part segmentation over a spectral basis plus learned inverse
// rest poses. P = softmax(U W) row-wise; rest_logs row m parameterizes
// g_{0m}^{-1} = exp(rest_logs_m).
struct PartModel {
  Eigen::MatrixXd W;          // N_u x M
  Eigen::MatrixXd rest_logs;  // M x 6
  int n_parts = 0;
  SpectralBasis basis;
};

// Pose of one instance: twist row 0 is the camera, rows 1..M the parts.
// blend_coeffs holds optional blendshape coefficients.
struct PoseParams {
  Eigen::MatrixXd twists;  // (M+1) x 6
  Eigen::VectorXd blend_coeffs;

  static PoseParams identity(int n_parts) {
    PoseParams p;
    p.twists = Eigen::MatrixXd::Zero(n_parts + 1, 6);
    return p;
  }
};

// D linear displacement fields, each a linear image of the spectral basis.
// Block d of `coeffs` (rows [d*n_u, (d+1)*n_u)) maps basis functions to a
// per-vertex 3D displacement: shape_d = U * coeffs_d.
struct BlendshapeModel {
  Eigen::MatrixXd coeffs;  // (D * N_u) x 3
  int n_shapes = 0;

  Eigen::Index basis_size() const { return n_shapes > 0 ? coeffs.rows() / n_shapes : 0; }
};

// Decaying-magnitude initialization: W_im ~ N(0, sd = exp(-i/sigma_bar)/sqrt(M)),
// i the 0-based eigenfunction rank. Rest poses start at identity.
inline PartModel init_part_model(const SpectralBasis& basis, int m, double sigma_bar, Rng& rng) {
  if (m < 1) throw Error("part_model_m", "part count must be >= 1");
  if (sigma_bar <= 0.0) throw Error("part_model_sigma", "sigma_bar must be > 0");
  PartModel model;
  model.basis = basis;
  model.n_parts = m;
  model.W.resize(basis.size(), m);
  for (Eigen::Index i = 0; i < basis.size(); ++i) {
    const double sd = std::exp(-double(i) / sigma_bar) / std::sqrt(double(m));
    for (int c = 0; c < m; ++c) model.W(i, c) = rng.gaussian(0.0, sd);
  }
  model.rest_logs = Eigen::MatrixXd::Zero(m, 6);
  return model;
}

// ---- graph builders ----

inline ad::Value part_segmentation_graph(ad::Value U, ad::Value W) {
  return ad::rowwise_softmax(ad::matmul(U, W));
}

// Splits a 4x3 [R; T] node from se3_exp_op.
struct TransformNode {
  ad::Value R;  // 3 x 3
  ad::Value T;  // 1 x 3
};

inline TransformNode split_transform(ad::Value rt) {
  return {ad::slice_rows(rt, 0, 3), ad::slice_rows(rt, 3, 1)};
}

inline TransformNode exp_twist(ad::Value twist_row) { return split_transform(ad::se3_exp_op(twist_row)); }

// Applies a transform node to every row of points: points * R + T.
inline ad::Value apply_transform(ad::Value points, const TransformNode& g) {
  return ad::add_rowvec(ad::matmul(points, g.R), g.T);
}

// Linear blend skinning. `vertices` is the (possibly blendshaped) template,
// `p` the K x M segmentation, `rest_inv[m]` / `parts[m]` the inverse rest
// pose and the posed transform of part m. The camera is not applied here.
inline ad::Value skin_graph(ad::Value vertices, ad::Value p, const std::vector<TransformNode>& rest_inv,
                            const std::vector<TransformNode>& parts) {
  ad::Value x;  // accumulated
  for (size_t m = 0; m < parts.size(); ++m) {
    ad::Value q = apply_transform(vertices, rest_inv[m]);
    ad::Value z = apply_transform(q, parts[m]);
    ad::Value weighted = ad::scale_rows(z, ad::slice_cols(p, Eigen::Index(m), 1));
    x = (m == 0) ? weighted : ad::add(x, weighted);
  }
  return x;
}

// Blendshape displacement: V + sum_d alpha_d * (U * coeffs_d).
// `alpha` is 1 x D, `coeffs` is (D*N_u) x 3.
inline ad::Value blendshape_graph(ad::Value vertices, ad::Value basis_u, ad::Value coeffs, ad::Value alpha,
                                  int n_shapes) {
  const Eigen::Index n_u = coeffs.val().rows() / n_shapes;
  ad::Value mixed;  // N_u x 3
  for (int d = 0; d < n_shapes; ++d) {
    ad::Value term = ad::scale_by(ad::slice_rows(coeffs, Eigen::Index(d) * n_u, n_u),
                                  ad::slice_cols(alpha, d, 1));
    mixed = (d == 0) ? term : ad::add(mixed, term);
  }
  return ad::add(vertices, ad::matmul(basis_u, mixed));
}

// ---- plain evaluation (runs the graph builders on a local tape) ----

inline Eigen::MatrixXd part_segmentation(const PartModel& model) {
  ad::Tape tape;
  return part_segmentation_graph(ad::constant(tape, model.basis.U), ad::constant(tape, model.W)).val();
}

// Posed vertices in the object frame (Eq. of LBS over soft parts); the
// camera twist (row 0 of pose.twists) is deliberately not applied.
inline Eigen::MatrixXd skin(const TriMesh& mesh, const PartModel& model, const PoseParams& pose) {
  if (pose.twists.rows() != model.n_parts + 1)
    throw Error("pose_shape", "pose has " + std::to_string(pose.twists.rows()) + " twists, expected " +
                                  std::to_string(model.n_parts + 1));
  ad::Tape tape;
  ad::Value v = ad::constant(tape, mesh.vertices);
  ad::Value p = ad::constant(tape, part_segmentation(model));
  std::vector<TransformNode> rest_inv, parts;
  for (int m = 0; m < model.n_parts; ++m) {
    rest_inv.push_back(exp_twist(ad::constant(tape, model.rest_logs.row(m))));
    parts.push_back(exp_twist(ad::constant(tape, pose.twists.row(m + 1))));
  }
  return skin_graph(v, p, rest_inv, parts).val();
}

// Template-plus-displacement linear model (the no-parts baseline and the
// body-type blendshapes): X = V + sum_d alpha_d (U coeffs_d).
inline Eigen::MatrixXd skin_linear(const TriMesh& mesh, const SpectralBasis& basis,
                                   const BlendshapeModel& bs, const Eigen::VectorXd& alpha) {
  if (alpha.size() != bs.n_shapes)
    throw Error("blend_shape", "alpha has " + std::to_string(alpha.size()) + " coefficients, expected " +
                                   std::to_string(bs.n_shapes));
  if (bs.basis_size() != basis.size())
    throw Error("blend_shape", "blendshape table does not match the basis size");
  ad::Tape tape;
  return blendshape_graph(ad::constant(tape, mesh.vertices), ad::constant(tape, basis.U),
                          ad::constant(tape, bs.coeffs), ad::constant(tape, alpha.transpose()),
                          bs.n_shapes)
      .val();
}

}  // namespace dp3d
