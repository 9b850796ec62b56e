#pragma once

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "dp3d/error.hpp"

#include <nlohmann/json.hpp>

namespace dp3d {

// Mean per-vertex position error in camera coordinates after removing each
// set's mean depth. Uses all rows, not only visible ones.
inline double mpjpe(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& gt) {
  if (pred.rows() != gt.rows() || pred.cols() != 3 || gt.cols() != 3)
    throw Error("mpjpe_shape", "point sets must both be K x 3 with equal K");
  Eigen::MatrixXd p = pred, g = gt;
  p.col(2).array() -= p.col(2).mean();
  g.col(2).array() -= g.col(2).mean();
  return (p - g).rowwise().norm().mean();
}

struct SimilarityAlignment {
  double scale = 1.0;
  Eigen::Matrix3d R = Eigen::Matrix3d::Identity();  // row-acting
  Eigen::RowVector3d T = Eigen::RowVector3d::Zero();
};

// Closed-form weighted least-squares similarity (scale, rotation,
// translation) from src to dst, reflection disallowed. Row convention:
// aligned = s*src*R + T.
inline SimilarityAlignment umeyama_alignment(const Eigen::MatrixXd& src, const Eigen::MatrixXd& dst,
                                             const Eigen::VectorXd* weights = nullptr) {
  const Eigen::Index n = src.rows();
  if (n < 3 || dst.rows() != n) throw Error("align_shape", "need two equal sets of at least 3 points");
  const Eigen::VectorXd w =
      weights ? (*weights / weights->sum()).eval() : Eigen::VectorXd::Constant(n, 1.0 / double(n));
  const Eigen::RowVector3d mu_src = w.transpose() * src;
  const Eigen::RowVector3d mu_dst = w.transpose() * dst;
  const Eigen::MatrixXd xc = src.rowwise() - mu_src;
  const Eigen::MatrixXd yc = dst.rowwise() - mu_dst;
  const double var_src = (xc.array().square().rowwise().sum() * w.array()).sum();
  if (var_src < 1e-18) throw Error("align_degenerate", "source points are coincident");

  const Eigen::Matrix3d sigma = yc.transpose() * w.asDiagonal() * xc;
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(sigma, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Vector3d d = svd.singularValues();
  if (d[1] <= 1e-12 * std::max(d[0], 1e-300))
    throw Error("align_degenerate", "rank-deficient configuration: rotation is not unique");
  Eigen::Vector3d s_diag = Eigen::Vector3d::Ones();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) s_diag[2] = -1.0;
  const Eigen::Matrix3d r_col = svd.matrixU() * s_diag.asDiagonal() * svd.matrixV().transpose();

  SimilarityAlignment out;
  out.R = r_col.transpose();
  out.scale = (d.dot(s_diag)) / var_src;
  out.T = mu_dst - out.scale * mu_src * out.R;
  return out;
}

// Reconstruction error: minimum over similarities of the mean distance.
// The squared-error closed form seeds iteratively reweighted refits
// (Weiszfeld weights), which descend the mean-norm objective itself; the
// squared-optimal alignment alone can overshoot it.
inline double re_aligned(const Eigen::MatrixXd& pred_joints, const Eigen::MatrixXd& gt_joints) {
  SimilarityAlignment a = umeyama_alignment(pred_joints, gt_joints);
  const auto mean_norm = [&](const SimilarityAlignment& al) {
    const Eigen::MatrixXd aligned = (al.scale * pred_joints * al.R).rowwise() + al.T;
    return (aligned - gt_joints).rowwise().norm().mean();
  };
  double best = mean_norm(a);
  for (int iter = 0; iter < 200; ++iter) {
    const Eigen::MatrixXd aligned = (a.scale * pred_joints * a.R).rowwise() + a.T;
    const Eigen::VectorXd residuals = (aligned - gt_joints).rowwise().norm();
    const Eigen::VectorXd w = (residuals.array() + 1e-12).inverse();
    const SimilarityAlignment next = umeyama_alignment(pred_joints, gt_joints, &w);
    const double value = mean_norm(next);
    if (value >= best - 1e-15) break;
    best = value;
    a = next;
  }
  return best;
}

// ---- label-permutation agreement ----

namespace detail {

// Min-cost perfect assignment (potentials / shortest augmenting path).
// Returns for each row the assigned column.
inline std::vector<int> hungarian_min_cost(const Eigen::MatrixXd& cost) {
  const int n = int(cost.rows());
  std::vector<double> u(size_t(n) + 1, 0.0), v(size_t(n) + 1, 0.0);
  std::vector<int> p(size_t(n) + 1, 0), way(size_t(n) + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(size_t(n) + 1, std::numeric_limits<double>::infinity());
    std::vector<char> used(size_t(n) + 1, false);
    do {
      used[size_t(j0)] = true;
      const int i0 = p[size_t(j0)];
      double delta = std::numeric_limits<double>::infinity();
      int j1 = -1;
      for (int j = 1; j <= n; ++j) {
        if (used[size_t(j)]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[size_t(i0)] - v[size_t(j)];
        if (cur < minv[size_t(j)]) {
          minv[size_t(j)] = cur;
          way[size_t(j)] = j0;
        }
        if (minv[size_t(j)] < delta) {
          delta = minv[size_t(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[size_t(j)]) {
          u[size_t(p[size_t(j)])] += delta;
          v[size_t(j)] -= delta;
        } else {
          minv[size_t(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[size_t(j0)] != 0);
    do {
      const int j1 = way[size_t(j0)];
      p[size_t(j0)] = p[size_t(j1)];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> row_to_col(size_t(n), -1);
  for (int j = 1; j <= n; ++j)
    if (p[size_t(j)] != 0) row_to_col[size_t(p[size_t(j)] - 1)] = j - 1;
  return row_to_col;
}

}  // namespace detail

// Fraction of vertices whose argmax part matches the ground-truth label
// under the best label permutation. Argmax ties break to the lowest index.
inline double seg_agreement(const Eigen::MatrixXd& pred_p, const std::vector<int>& gt_labels) {
  const Eigen::Index k = pred_p.rows();
  const int m = int(pred_p.cols());
  if (Eigen::Index(gt_labels.size()) != k)
    throw Error("seg_shape", "label count does not match segmentation rows");
  int max_label = 0;
  for (int l : gt_labels) {
    if (l < 0) throw Error("seg_labels", "negative label");
    max_label = std::max(max_label, l);
  }
  if (max_label + 1 > m)
    throw Error("seg_labels", "ground truth has more distinct labels than predicted parts");

  Eigen::MatrixXd confusion = Eigen::MatrixXd::Zero(m, m);
  for (Eigen::Index i = 0; i < k; ++i) {
    int arg = 0;
    for (int c = 1; c < m; ++c)
      if (pred_p(i, c) > pred_p(i, arg)) arg = c;
    confusion(arg, gt_labels[size_t(i)]) += 1.0;
  }
  const Eigen::MatrixXd cost = confusion.maxCoeff() - confusion.array();
  const std::vector<int> assign = detail::hungarian_min_cost(cost);
  double matched = 0.0;
  for (int r = 0; r < m; ++r) matched += confusion(r, assign[size_t(r)]);
  return matched / double(k);
}

// ---- joint regression ----

// Row-stochastic map from mesh vertices to joints.
struct JointRegressor {
  Eigen::MatrixXd weights;  // N_J x K

  void validate() const {
    if ((weights.array() < 0.0).any())
      throw Error("regressor_invalid", "joint regressor entries must be nonnegative");
    for (Eigen::Index r = 0; r < weights.rows(); ++r)
      if (std::abs(weights.row(r).sum() - 1.0) > 1e-9)
        throw Error("regressor_invalid", "joint regressor row " + std::to_string(r) +
                                             " does not sum to 1 within 1e-9");
  }

  Eigen::MatrixXd joints(const Eigen::MatrixXd& vertices) const { return weights * vertices; }
};

// CSV matrix, one row per joint, comma or whitespace separated.
inline JointRegressor load_joint_regressor(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("io_open", "cannot open joint regressor: " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    for (char& c : line)
      if (c == ',') c = ' ';
    std::istringstream ss(line);
    std::vector<double> row;
    double value = 0.0;
    while (ss >> value) row.push_back(value);
    if (!row.empty()) rows.push_back(std::move(row));
  }
  if (rows.empty()) throw Error("regressor_invalid", "joint regressor file is empty");
  JointRegressor reg;
  reg.weights.resize(Eigen::Index(rows.size()), Eigen::Index(rows[0].size()));
  for (size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != rows[0].size())
      throw Error("regressor_invalid", "ragged row " + std::to_string(r) + " in joint regressor");
    for (size_t c = 0; c < rows[r].size(); ++c)
      reg.weights(Eigen::Index(r), Eigen::Index(c)) = rows[r][c];
  }
  reg.validate();
  return reg;
}

struct InstanceEval {
  std::string id;
  double mpjpe = 0.0;
  double re = 0.0;
  double rep_rel = 0.0;  // visible reprojection error / projected bbox diagonal
};

struct EvalReport {
  double mpjpe = 0.0;
  double re = 0.0;
  double rep_rel = 0.0;
  std::vector<InstanceEval> per_instance;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["mpjpe"] = mpjpe;
    j["re"] = re;
    j["rep_rel"] = rep_rel;
    auto& arr = j["per_instance"] = nlohmann::json::array();
    for (const auto& e : per_instance)
      arr.push_back({{"id", e.id}, {"mpjpe", e.mpjpe}, {"re", e.re}, {"rep_rel", e.rep_rel}});
    return j;
  }
};

}  // namespace dp3d
