#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "dp3d/error.hpp"
#include "dp3d/losses.hpp"
#include "dp3d/params.hpp"
#include "dp3d/rng.hpp"
#include "dp3d/tape.hpp"

namespace dp3d {

// Residual MLP: input FC to `width`, then `blocks` residual blocks of layout
// width-hidden-hidden-width (each layer followed by batch norm and ReLU),
// then a linear head. Parameters live in a ParamSet under `prefix`; batch
// norm running statistics live in BatchNormState.
struct MlpConfig {
  int input_dim = 0;
  int output_dim = 0;
  int width = 1024;
  int hidden = 256;
  int blocks = 6;
};

using BatchNormState = std::map<std::string, Eigen::RowVectorXd>;

namespace detail {
inline Eigen::MatrixXd he_init(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  const double sd = std::sqrt(2.0 / double(rows));
  Eigen::MatrixXd w(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) w(i, j) = rng.gaussian(0.0, sd);
  return w;
}
}  // namespace detail

inline void init_mlp_params(ParamSet& params, const std::string& prefix, const MlpConfig& cfg,
                            Rng& rng) {
  params.add(prefix + ".in.w", detail::he_init(cfg.input_dim, cfg.width, rng));
  params.add(prefix + ".in.b", Eigen::MatrixXd::Zero(1, cfg.width));
  const int dims[4] = {cfg.width, cfg.hidden, cfg.hidden, cfg.width};
  for (int b = 0; b < cfg.blocks; ++b) {
    const std::string bp = prefix + ".block" + std::to_string(b);
    for (int l = 0; l < 3; ++l) {
      params.add(bp + ".fc" + std::to_string(l) + ".w", detail::he_init(dims[l], dims[l + 1], rng));
      params.add(bp + ".fc" + std::to_string(l) + ".b", Eigen::MatrixXd::Zero(1, dims[l + 1]));
      params.add(bp + ".bn" + std::to_string(l) + ".gamma", Eigen::MatrixXd::Ones(1, dims[l + 1]));
      params.add(bp + ".bn" + std::to_string(l) + ".beta", Eigen::MatrixXd::Zero(1, dims[l + 1]));
    }
  }
  // small head keeps the initial twists near zero
  params.add(prefix + ".out.w", detail::he_init(cfg.width, cfg.output_dim, rng) * 0.01);
  params.add(prefix + ".out.b", Eigen::MatrixXd::Zero(1, cfg.output_dim));
}

inline void init_batchnorm_state(BatchNormState& state, const std::string& prefix, const MlpConfig& cfg) {
  const int dims[4] = {cfg.width, cfg.hidden, cfg.hidden, cfg.width};
  for (int b = 0; b < cfg.blocks; ++b) {
    const std::string bp = prefix + ".block" + std::to_string(b);
    for (int l = 0; l < 3; ++l) {
      state[bp + ".bn" + std::to_string(l) + ".mean"] = Eigen::RowVectorXd::Zero(dims[l + 1]);
      state[bp + ".bn" + std::to_string(l) + ".var"] = Eigen::RowVectorXd::Ones(dims[l + 1]);
    }
  }
}

constexpr double kBatchNormEps = 1e-5;
constexpr double kBatchNormMomentum = 0.1;

// Forward graph. In train mode batch statistics normalize the batch and
// `running` (when given) is updated in place; in eval mode the stored
// running statistics are used and nothing mutates.
inline ad::Value mlp_graph(ad::Tape& t, const ParamLeaves& leaves, const std::string& prefix,
                           const MlpConfig& cfg, ad::Value input, bool train_mode,
                           BatchNormState* running = nullptr) {
  const auto fc = [&](ad::Value x, const std::string& name) {
    return ad::add_rowvec(ad::matmul(x, leaves.at(name + ".w")), leaves.at(name + ".b"));
  };
  const auto bn = [&](ad::Value x, const std::string& name) {
    ad::Value gamma = leaves.at(name + ".gamma");
    ad::Value beta = leaves.at(name + ".beta");
    if (train_mode) {
      Eigen::RowVectorXd mu, var;
      ad::Value out = ad::batchnorm_train(x, gamma, beta, kBatchNormEps, &mu, &var);
      if (running) {
        Eigen::RowVectorXd& rm = running->at(name + ".mean");
        Eigen::RowVectorXd& rv = running->at(name + ".var");
        rm = (1.0 - kBatchNormMomentum) * rm + kBatchNormMomentum * mu;
        rv = (1.0 - kBatchNormMomentum) * rv + kBatchNormMomentum * var;
      }
      return out;
    }
    if (!running) throw Error("batchnorm_state", "eval-mode batch norm requires running statistics");
    const Eigen::RowVectorXd& rm = running->at(name + ".mean");
    const Eigen::RowVectorXd& rv = running->at(name + ".var");
    const Eigen::RowVectorXd inv_std = (rv.array() + kBatchNormEps).rsqrt();
    ad::Value scale = ad::mul_rowvec(gamma, ad::constant(t, inv_std));
    ad::Value centered = ad::add_rowvec(x, ad::constant(t, (-rm).eval()));
    return ad::add_rowvec(ad::mul_rowvec(centered, scale), beta);
  };

  ad::Value x = fc(input, prefix + ".in");
  for (int b = 0; b < cfg.blocks; ++b) {
    const std::string bp = prefix + ".block" + std::to_string(b);
    ad::Value h = x;
    for (int l = 0; l < 3; ++l) {
      h = fc(h, bp + ".fc" + std::to_string(l));
      h = ad::relu(bn(h, bp + ".bn" + std::to_string(l)));
    }
    x = ad::add(x, h);
  }
  return fc(x, prefix + ".out");
}

// ---- keypoint encoding for the pose regressor ----

// [u1 v1 u2 v2 ... uK vK | z1 ... zK], visible coordinates zero-centered by
// the mean of the visible subset, invisible coordinates zeroed.
inline Eigen::RowVectorXd encode_keypoints(const KeypointSet& kp) {
  const Eigen::Index k = kp.count();
  Eigen::RowVector2d mean = Eigen::RowVector2d::Zero();
  Eigen::Index visible = 0;
  for (Eigen::Index i = 0; i < k; ++i)
    if (kp.z[i]) {
      mean += kp.y.row(i);
      ++visible;
    }
  if (visible == 0) throw Error("keypoints_none_visible", "cannot encode a fully occluded instance");
  mean /= double(visible);
  Eigen::RowVectorXd enc = Eigen::RowVectorXd::Zero(3 * k);
  for (Eigen::Index i = 0; i < k; ++i) {
    if (kp.z[i]) {
      enc[2 * i] = kp.y(i, 0) - mean[0];
      enc[2 * i + 1] = kp.y(i, 1) - mean[1];
      enc[2 * k + i] = 1.0;
    }
  }
  return enc;
}

inline Eigen::RowVectorXd flatten_points(const Eigen::MatrixXd& x) {
  Eigen::RowVectorXd flat(x.size());
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < x.cols(); ++j) flat[i * x.cols() + j] = x(i, j);
  return flat;
}

// ---- plain forwards (eval mode) ----

// Pose regressor: keypoints -> (M+1) twists (camera first).
inline Eigen::MatrixXd phi_forward(const KeypointSet& kp, const ParamSet& params,
                                   const std::string& prefix, const MlpConfig& cfg,
                                   const BatchNormState& running) {
  if (cfg.input_dim != 3 * kp.count())
    throw Error("mlp_dims", "regressor expects input dim " + std::to_string(cfg.input_dim) +
                                ", keypoints give " + std::to_string(3 * kp.count()));
  if (cfg.output_dim % 6 != 0)
    throw Error("mlp_dims", "regressor output dim must be a multiple of 6");
  ad::Tape t;
  ParamLeaves leaves;
  for (const auto& e : params.entries()) leaves[e.name] = ad::constant(t, e.value);
  ad::Value out = mlp_graph(t, leaves, prefix, cfg, ad::constant(t, encode_keypoints(kp)), false,
                            const_cast<BatchNormState*>(&running));
  const Eigen::RowVectorXd row = out.val().row(0);
  Eigen::MatrixXd twists(cfg.output_dim / 6, 6);
  for (Eigen::Index i = 0; i < twists.rows(); ++i) twists.row(i) = row.segment(i * 6, 6);
  return twists;
}

// Canonicalization network: rotated shape -> canonical shape (K x 3 both ways).
inline Eigen::MatrixXd psi_forward(const Eigen::MatrixXd& x_rotated, const ParamSet& params,
                                   const std::string& prefix, const MlpConfig& cfg,
                                   const BatchNormState& running) {
  const Eigen::Index k = x_rotated.rows();
  if (cfg.input_dim != 3 * k || cfg.output_dim != 3 * k)
    throw Error("mlp_dims", "canonicalizer input/output dims must equal 3K");
  ad::Tape t;
  ParamLeaves leaves;
  for (const auto& e : params.entries()) leaves[e.name] = ad::constant(t, e.value);
  ad::Value out = mlp_graph(t, leaves, prefix, cfg, ad::constant(t, flatten_points(x_rotated)), false,
                            const_cast<BatchNormState*>(&running));
  Eigen::MatrixXd shaped(k, 3);
  const Eigen::RowVectorXd row = out.val().row(0);
  for (Eigen::Index i = 0; i < k; ++i) shaped.row(i) = row.segment(3 * i, 3);
  return shaped;
}

// ---- uncertainty head ----

struct UncertaintyConfig {
  int input_dim = 0;  // N_u + 6
  int hidden = 64;
};

inline void init_uncertainty_params(ParamSet& params, const std::string& prefix,
                                    const UncertaintyConfig& cfg, Rng& rng) {
  params.add(prefix + ".fc0.w", detail::he_init(cfg.input_dim, cfg.hidden, rng));
  params.add(prefix + ".fc0.b", Eigen::MatrixXd::Zero(1, cfg.hidden));
  params.add(prefix + ".fc1.w", detail::he_init(cfg.hidden, 1, rng));
  params.add(prefix + ".fc1.b", Eigen::MatrixXd::Zero(1, 1));
}

// Input rows: the vertex's basis descriptor concatenated with its blended
// twist. Softplus keeps the predicted scales strictly positive.
inline ad::Value uncertainty_graph(ad::Tape& t, const ParamLeaves& leaves, const std::string& prefix,
                                   ad::Value input) {
  ad::Value h = ad::add_rowvec(ad::matmul(input, leaves.at(prefix + ".fc0.w")), leaves.at(prefix + ".fc0.b"));
  h = ad::relu(h);
  h = ad::add_rowvec(ad::matmul(h, leaves.at(prefix + ".fc1.w")), leaves.at(prefix + ".fc1.b"));
  return ad::softplus(h);
}

inline Eigen::VectorXd uncertainty_forward(const Eigen::MatrixXd& lbo_rows,
                                           const Eigen::MatrixXd& vertex_transforms,
                                           const ParamSet& params, const std::string& prefix) {
  if (lbo_rows.rows() != vertex_transforms.rows())
    throw Error("mlp_dims", "descriptor and transform row counts differ");
  ad::Tape t;
  ParamLeaves leaves;
  for (const auto& e : params.entries()) leaves[e.name] = ad::constant(t, e.value);
  Eigen::MatrixXd input(lbo_rows.rows(), lbo_rows.cols() + vertex_transforms.cols());
  input << lbo_rows, vertex_transforms;
  return uncertainty_graph(t, leaves, prefix, ad::constant(t, input)).val().col(0);
}

}  // namespace dp3d
