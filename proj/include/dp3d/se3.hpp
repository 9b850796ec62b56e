#pragma once

#include <Eigen/Dense>
#include <cmath>

#include "dp3d/dual.hpp"
#include "dp3d/error.hpp"
#include "dp3d/rng.hpp"

namespace dp3d {

// Row-vector convention throughout: a point p (1x3) maps to p * R + T.
// Composition therefore reads left to right: apply(compose(g1, g2), p)
// equals apply(g2, apply(g1, p)).
struct RigidTransform {
  Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
  Eigen::RowVector3d T = Eigen::RowVector3d::Zero();

  static RigidTransform identity() { return {}; }

  bool is_valid(double tol = 1e-9) const {
    const double ortho = (R.transpose() * R - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
    return ortho < tol && std::abs(R.determinant() - 1.0) < tol && R.allFinite() && T.allFinite();
  }
};

struct TwistVector {
  Eigen::RowVector3d omega = Eigen::RowVector3d::Zero();  // rotation log, radians
  Eigen::RowVector3d v = Eigen::RowVector3d::Zero();      // translation log

  Eigen::Matrix<double, 1, 6> as_row() const {
    Eigen::Matrix<double, 1, 6> h;
    h << omega, v;
    return h;
  }
  static TwistVector from_row(const Eigen::Matrix<double, 1, 6>& h) {
    return {h.leftCols<3>(), h.rightCols<3>()};
  }
};

namespace detail {

// Rodrigues coefficients as smooth functions of s2 = theta^2, with a series
// branch below s2 = 1e-2 where the closed forms lose digits to cancellation.
// c1 = sin(t)/t, c2 = (1-cos(t))/t^2, c3 = (t-sin(t))/t^3.
template <class S>
void rodrigues_coeffs(const S& s2, S& c1, S& c2, S& c3) {
  using std::sin;
  using std::sqrt;
  if (value_of(s2) < 1e-2) {
    const S x = s2;
    c1 = S(1.0) - x * (S(1.0 / 6) - x * (S(1.0 / 120) - x * (S(1.0 / 5040) - x * S(1.0 / 362880))));
    c2 = S(0.5) - x * (S(1.0 / 24) - x * (S(1.0 / 720) - x * (S(1.0 / 40320) - x * S(1.0 / 3628800))));
    c3 = S(1.0 / 6) - x * (S(1.0 / 120) - x * (S(1.0 / 5040) - x * (S(1.0 / 362880) - x * S(1.0 / 39916800))));
  } else {
    const S t = sqrt(s2);
    c1 = sin(t) / t;
    const S sh = sin(t * S(0.5));
    c2 = S(2.0) * sh * sh / s2;
    c3 = (S(1.0) - c1) / s2;
  }
}

// out = 12 scalars: row-acting R in row-major order, then T.
template <class S>
void se3_exp_core(const S h[6], S out[12]) {
  const S &w0 = h[0], &w1 = h[1], &w2 = h[2];
  const S s2 = w0 * w0 + w1 * w1 + w2 * w2;
  S c1, c2, c3;
  rodrigues_coeffs(s2, c1, c2, c3);

  // K = [omega]_x, K2 = K*K = omega omega^T - s2*I
  const S K[9] = {S(0.0), -w2, w1, w2, S(0.0), -w0, -w1, w0, S(0.0)};
  S K2[9];
  const S w[3] = {w0, w1, w2};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) K2[3 * i + j] = w[i] * w[j] - (i == j ? s2 : S(0.0));

  // Row-acting rotation: transpose of I + c1*K + c2*K2.
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      out[3 * i + j] = (i == j ? S(1.0) : S(0.0)) - c1 * K[3 * i + j] + c2 * K2[3 * i + j];

  // T = (V v)^T with V = I + c2*K + c3*K2 acting on the column vector v.
  for (int i = 0; i < 3; ++i) {
    S acc = h[3 + i];
    for (int j = 0; j < 3; ++j) acc += (c2 * K[3 * i + j] + c3 * K2[3 * i + j]) * h[3 + j];
    out[9 + i] = acc;
  }
}

}  // namespace detail

inline RigidTransform se3_exp(const TwistVector& h) {
  double in[6] = {h.omega[0], h.omega[1], h.omega[2], h.v[0], h.v[1], h.v[2]};
  double out[12];
  detail::se3_exp_core(in, out);
  RigidTransform g;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) g.R(i, j) = out[3 * i + j];
  g.T << out[9], out[10], out[11];
  return g;
}

// d(9 rotation entries row-major, 3 translation entries)/d(h) via duals.
inline Eigen::Matrix<double, 12, 6> se3_exp_jacobian(const TwistVector& h) {
  using D = Dual<6>;
  D in[6];
  const Eigen::Matrix<double, 1, 6> row = h.as_row();
  for (int i = 0; i < 6; ++i) in[i] = D::seed(row[i], i);
  D out[12];
  detail::se3_exp_core(in, out);
  Eigen::Matrix<double, 12, 6> J;
  for (int r = 0; r < 12; ++r)
    for (int c = 0; c < 6; ++c) J(r, c) = out[r].d[c];
  return J;
}

inline TwistVector se3_log(const RigidTransform& g) {
  // Work in the column-acting picture: Rc = R^T.
  const Eigen::Matrix3d Rc = g.R.transpose();
  const Eigen::Vector3d a(0.5 * (Rc(2, 1) - Rc(1, 2)), 0.5 * (Rc(0, 2) - Rc(2, 0)),
                          0.5 * (Rc(1, 0) - Rc(0, 1)));  // sin(t) * axis
  const double cos_t = std::clamp(0.5 * (Rc.trace() - 1.0), -1.0, 1.0);
  const double sin_t = a.norm();
  const double theta = std::atan2(sin_t, cos_t);
  if (theta >= M_PI - 1e-6)
    throw Error("se3_log_branch", "rotation angle within 1e-6 of pi; logarithm branch is ambiguous");

  const double s2 = theta * theta;
  double factor;  // theta / sin(theta)
  if (s2 < 1e-2) {
    factor = 1.0 + s2 * (1.0 / 6 + s2 * (7.0 / 360 + s2 * 31.0 / 15120));
  } else {
    factor = theta / sin_t;
  }
  const Eigen::Vector3d omega = factor * a;

  // v = V^{-1} T_col, V^{-1} = I - K/2 + k K^2, k = (1 - c1/(2 c2)) / s2.
  double k;
  if (s2 < 1e-2) {
    k = 1.0 / 12 + s2 * (1.0 / 720 + s2 * (1.0 / 30240 + s2 * 1.0 / 1209600));
  } else {
    double c1, c2, c3;
    detail::rodrigues_coeffs(s2, c1, c2, c3);
    k = (1.0 - c1 / (2.0 * c2)) / s2;
  }
  Eigen::Matrix3d K;
  K << 0, -omega[2], omega[1], omega[2], 0, -omega[0], -omega[1], omega[0], 0;
  const Eigen::Matrix3d Vinv = Eigen::Matrix3d::Identity() - 0.5 * K + k * (K * K);
  const Eigen::Vector3d v = Vinv * g.T.transpose();

  TwistVector h;
  h.omega = omega.transpose();
  h.v = v.transpose();
  return h;
}

inline Eigen::RowVector3d apply(const RigidTransform& g, const Eigen::RowVector3d& p) {
  return p * g.R + g.T;
}

// Applies g to every row of a K x 3 matrix.
inline Eigen::MatrixXd apply(const RigidTransform& g, const Eigen::MatrixXd& points) {
  return (points * g.R).rowwise() + g.T;
}

inline RigidTransform compose(const RigidTransform& g1, const RigidTransform& g2) {
  return {g1.R * g2.R, g1.T * g2.R + g2.T};
}

inline RigidTransform invert(const RigidTransform& g) {
  RigidTransform inv;
  inv.R = g.R.transpose();
  inv.T = -g.T * inv.R;
  return inv;
}

// Haar-uniform rotation from a normalized 4D Gaussian quaternion; zero translation.
inline RigidTransform random_rotation(Rng& rng) {
  double q[4];
  double n2 = 0.0;
  do {
    n2 = 0.0;
    for (double& qi : q) {
      qi = rng.gaussian();
      n2 += qi * qi;
    }
  } while (n2 < 1e-12);
  const Eigen::Quaterniond quat(q[0], q[1], q[2], q[3]);
  RigidTransform g;
  g.R = quat.normalized().toRotationMatrix().transpose();
  return g;
}

}  // namespace dp3d
