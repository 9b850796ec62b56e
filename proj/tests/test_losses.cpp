#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>

#include "dp3d/losses.hpp"
#include "dp3d/primitives.hpp"
#include "dp3d/rng.hpp"

using namespace dp3d;

namespace {

KeypointSet all_visible(const Eigen::MatrixXd& y) {
  KeypointSet kp;
  kp.y = y;
  kp.z = Eigen::Array<bool, Eigen::Dynamic, 1>::Constant(y.rows(), true);
  return kp;
}

}  // namespace

TEST(ProjectOrtho, IdentityDropsDepth) {
  Eigen::MatrixXd x(1, 3);
  x << 1, 2, 3;
  const Eigen::MatrixXd p = project_ortho(x, RigidTransform::identity());
  EXPECT_EQ(p(0, 0), 1.0);
  EXPECT_EQ(p(0, 1), 2.0);
}

TEST(ProjectOrtho, DepthTranslationInvariant) {
  Eigen::MatrixXd x(2, 3);
  x << 1, 2, 3, -4, 0, 1;
  RigidTransform cam;
  cam.T << 0, 0, 100;
  EXPECT_EQ(project_ortho(x, cam), project_ortho(x, RigidTransform::identity()));
}

TEST(ProjectOrtho, ZRotationRowConvention) {
  Eigen::MatrixXd x(1, 3);
  x << 1, 0, 0;
  TwistVector h;
  h.omega << 0, 0, M_PI / 2;
  const Eigen::MatrixXd p = project_ortho(x, se3_exp(h));
  EXPECT_NEAR(p(0, 0), 0.0, 1e-15);
  EXPECT_NEAR(p(0, 1), 1.0, 1e-15);
}

TEST(LossReprojection, PerfectIsZero) {
  const Eigen::MatrixXd x = (Eigen::MatrixXd(3, 3) << 0, 0, 0, 1, 0, 2, 0, 1, -1).finished();
  const KeypointSet kp = all_visible(project_ortho(x, RigidTransform::identity()));
  const Eigen::VectorXd areas = Eigen::VectorXd::Ones(3);
  EXPECT_EQ(loss_reprojection(x, RigidTransform::identity(), kp, areas, 0.01), 0.0);
}

TEST(LossReprojection, AreaRescalingInvariance) {
  Rng rng(1);
  Eigen::MatrixXd x(5, 3);
  Eigen::MatrixXd y(5, 2);
  Eigen::VectorXd areas(5);
  for (Eigen::Index i = 0; i < 5; ++i) {
    x.row(i) << rng.gaussian(), rng.gaussian(), rng.gaussian();
    y.row(i) << rng.gaussian(), rng.gaussian();
    areas[i] = 0.1 + rng.uniform();
  }
  KeypointSet kp = all_visible(y);
  kp.z[3] = false;
  const double a = loss_reprojection(x, RigidTransform::identity(), kp, areas, 0.01);
  const double b = loss_reprojection(x, RigidTransform::identity(), kp, 7.0 * areas, 0.01);
  EXPECT_NEAR(a, b, 1e-12 * std::max(1.0, std::abs(a)));
}

TEST(LossReprojection, PseudoHuberQuadraticRegime) {
  // two keypoints, residual norms (0, 1), equal areas, eps = 1e3
  Eigen::MatrixXd x(2, 3);
  x << 0, 0, 0, 0, 0, 0;
  Eigen::MatrixXd y(2, 2);
  y << 0, 0, 1, 0;
  const KeypointSet kp = all_visible(y);
  const Eigen::VectorXd areas = Eigen::VectorXd::Ones(2);
  const double eps = 1e3;
  const double loss = loss_reprojection(x, RigidTransform::identity(), kp, areas, eps);
  EXPECT_NEAR(loss, 1.0 / (4.0 * eps), 1e-6);
  const double closed = 0.5 * eps * (std::sqrt(1.0 + 1.0 / (eps * eps)) - 1.0);
  EXPECT_NEAR(loss, closed, 1e-15);
}

TEST(LossReprojection, NoVisibleKeypointsErrors) {
  Eigen::MatrixXd x(3, 3);
  x.setZero();
  KeypointSet kp;
  kp.y = Eigen::MatrixXd::Zero(3, 2);
  kp.z = Eigen::Array<bool, Eigen::Dynamic, 1>::Constant(3, false);
  const Eigen::VectorXd areas = Eigen::VectorXd::Ones(3);
  EXPECT_THROW(loss_reprojection(x, RigidTransform::identity(), kp, areas, 0.01), Error);
}

TEST(LossHetero, DefaultClipIsTenth) { EXPECT_EQ(LossWeights{}.b_min, 0.1); }

TEST(LossHetero, MinimumAtResidualScale) {
  // single keypoint with rho ~ 0.5; scan b over [0.2, 2]
  const double eps = 0.01;
  const double target_rho = 0.5;
  const double r = eps * std::sqrt((target_rho / eps + 1.0) * (target_rho / eps + 1.0) - 1.0);
  Eigen::MatrixXd x(3, 3);
  x.setZero();
  Eigen::MatrixXd y(3, 2);
  y << r, 0, r, 0, r, 0;
  const KeypointSet kp = all_visible(y);
  const Eigen::VectorXd areas = Eigen::VectorXd::Ones(3);

  double best_b = 0.0, best_loss = 1e300;
  for (double b = 0.2; b <= 2.0 + 1e-12; b += 0.01) {
    const double loss = loss_reprojection_hetero(x, RigidTransform::identity(), kp, areas,
                                                 Eigen::VectorXd::Constant(3, b), eps, 0.1);
    if (loss < best_loss) {
      best_loss = loss;
      best_b = b;
    }
  }
  EXPECT_NEAR(best_b, 0.5, 0.011);  // argmin of log b + rho/b is b = rho
}

TEST(LossHetero, ClipAppliesToDenominatorOnly) {
  Eigen::MatrixXd x(3, 3);
  x.setZero();
  Eigen::MatrixXd y(3, 2);
  y << 1, 0, 1, 0, 1, 0;
  const KeypointSet kp = all_visible(y);
  const Eigen::VectorXd areas = Eigen::VectorXd::Ones(3);
  const double eps = 0.01, b_min = 0.1, b = 0.05;  // below the clip
  const double loss = loss_reprojection_hetero(x, RigidTransform::identity(), kp, areas,
                                               Eigen::VectorXd::Constant(3, b), eps, b_min);
  const double rho = eps * (std::sqrt(1.0 + 1.0 / (eps * eps)) - 1.0);
  EXPECT_NEAR(loss, std::log(b) + rho / b_min, 1e-12);
}

TEST(LossCanon, PerfectCanonicalizerIsZero) {
  Rng rng(2);
  Eigen::MatrixXd x(6, 3);
  for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = rng.gaussian();
  const RigidTransform rot = random_rotation(rng);
  ad::Tape t;
  const auto psi = [&](ad::Value v) {
    return ad::matmul(v, ad::constant(t, Eigen::Matrix3d(rot.R.transpose())));
  };
  const double loss =
      loss_canonicalization_graph(ad::constant(t, x), psi, rot.R, 0.01).scalar();
  EXPECT_LT(loss, 1e-9);
}

TEST(LossCanon, IdentityPsiIdentityRotationIsZero) {
  Eigen::MatrixXd x(4, 3);
  x << 1, 0, 0, 0, 1, 0, 0, 0, 1, 1, 1, 1;
  ad::Tape t;
  const auto psi = [](ad::Value v) { return v; };
  EXPECT_EQ(loss_canonicalization_graph(ad::constant(t, x), psi, Eigen::Matrix3d::Identity(), 0.01)
                .scalar(),
            0.0);
}

TEST(LossCanon, ZeroMapGivesMeanRho) {
  Rng rng(3);
  Eigen::MatrixXd x(5, 3);
  for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = rng.gaussian();
  const double eps = 0.01;
  ad::Tape t;
  const auto psi = [&](ad::Value v) {
    return ad::constant(t, Eigen::MatrixXd::Zero(v.val().rows(), 3));
  };
  const double loss =
      loss_canonicalization_graph(ad::constant(t, x), psi, random_rotation(rng).R, eps).scalar();
  double expected = 0.0;
  for (Eigen::Index i = 0; i < 5; ++i) expected += pseudo_huber(x.row(i).norm(), eps);
  EXPECT_NEAR(loss, expected / 5.0, 1e-12);
}

TEST(LossArap, RigidMotionIsZero) {
  const TriMesh mesh = make_icosphere(1);
  const OneRings rings = build_one_rings(mesh);
  Rng rng(4);
  const RigidTransform g{random_rotation(rng).R, Eigen::RowVector3d(0.3, 1.0, -2.0)};
  const Eigen::MatrixXd x = apply(g, mesh.vertices);
  EXPECT_LT(loss_arap(x, mesh, rings, 0.01), 1e-10);
}

TEST(LossArap, StretchIsPositive) {
  const TriMesh mesh = make_icosphere(1);
  const OneRings rings = build_one_rings(mesh);
  Eigen::MatrixXd x = mesh.vertices;
  x.col(0) *= 2.0;  // anisotropic stretch
  EXPECT_GT(loss_arap(x, mesh, rings, 0.01), 1e-4);
}

// one-ring rotated rigidly about its center: the fitted rotation recovers it
// and a 1-degree axis-angle grid search finds no better candidate
TEST(LossArap, FittedRotationMatchesGridSearch) {
  Eigen::MatrixXd v(4, 3);
  v << 0, 0, 0, 1, 0, 0, -0.5, 0.9, 0, -0.5, -0.9, 0.4;
  Eigen::MatrixXi f(3, 3);
  f << 0, 1, 2, 0, 2, 3, 0, 3, 1;
  const TriMesh mesh = make_mesh(v, f);
  const OneRings rings = build_one_rings(mesh);

  TwistVector tw;
  tw.omega << 0, 0, 45.0 * M_PI / 180.0;
  const RigidTransform rot = se3_exp(tw);
  Eigen::MatrixXd x = v;
  for (int q = 1; q < 4; ++q) x.row(q) = apply(rot, Eigen::RowVector3d(v.row(q) - v.row(0))) + v.row(0);

  const auto rotations = arap_fit_rotations(x, v, rings);
  // fitted rotation maps deformed edges back onto template edges
  double residual = 0.0;
  for (int q = 1; q < 4; ++q)
    residual += ((x.row(q) - x.row(0)) * rotations[0] - (v.row(q) - v.row(0))).norm();
  EXPECT_LT(residual, 1e-10);
  const double angle = std::acos(std::clamp((rotations[0].trace() - 1.0) / 2.0, -1.0, 1.0));
  EXPECT_NEAR(angle, 45.0 * M_PI / 180.0, 1e-9);

  // brute-force grid: icosphere axis directions x 1-degree angle steps
  const TriMesh dirs = make_icosphere(2);
  const auto objective = [&](const Eigen::Matrix3d& r) {
    double s = 0.0;
    for (size_t e = 0; e < rings.neighbors[0].size(); ++e) {
      const int q = rings.neighbors[0][e];
      s += rings.edge_weight[0][e] *
           ((v.row(q) - v.row(0)) - (x.row(q) - x.row(0)) * r).squaredNorm();
    }
    return s;
  };
  const double fitted_obj = objective(rotations[0]);
  double grid_best = 1e300;
  for (Eigen::Index d = 0; d < dirs.vertex_count(); ++d) {
    for (int deg = 0; deg <= 180; ++deg) {
      TwistVector g;
      g.omega = dirs.vertices.row(d) * (double(deg) * M_PI / 180.0);
      grid_best = std::min(grid_best, objective(se3_exp(g).R));
    }
  }
  EXPECT_LE(fitted_obj, grid_best + 1e-12);
}

TEST(LossArap, TooFewNeighborsErrors) {
  // two triangles sharing no edges with vertex 3... construct a vertex with 1 neighbor is
  // impossible in a valid triangle mesh; use a direct ring structure instead
  OneRings rings;
  rings.neighbors = {{1}, {0}};
  rings.edge_weight = {{1.0}, {1.0}};
  Eigen::MatrixXd x(2, 3), v(2, 3);
  x.setZero();
  v.setZero();
  ad::Tape t;
  EXPECT_THROW(loss_arap_graph(ad::constant(t, x), v, rings, 0.01), Error);
}

TEST(LossEntropy, UniformIsLogM) {
  const int m = 10;
  const Eigen::MatrixXd p = Eigen::MatrixXd::Constant(7, m, 1.0 / m);
  EXPECT_DOUBLE_EQ(loss_entropy(p), std::log(double(m)));
}

TEST(LossEntropy, OneHotIsZero) {
  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(5, 4);
  for (Eigen::Index i = 0; i < 5; ++i) p(i, i % 4) = 1.0;
  EXPECT_EQ(loss_entropy(p), 0.0);
}

TEST(LossEntropy, HalfHalfRowIsLog2) {
  Eigen::MatrixXd p(1, 4);
  p << 0.5, 0.5, 0, 0;
  EXPECT_DOUBLE_EQ(loss_entropy(p), std::log(2.0));
}

TEST(LossTotal, DefaultsMatchReportedValues) {
  const LossWeights w;
  EXPECT_EQ(w.w_entropy, 0.001);
  EXPECT_EQ(w.w_arap, 0.3);
  EXPECT_EQ(w.w_canon, 0.1);
}

TEST(LossTotal, ZeroWeightsGiveReprojectionOnly) {
  ad::Tape t;
  LossTerms terms;
  terms.rep = ad::constant_scalar(t, 1.25);
  terms.canon = ad::constant_scalar(t, 3.0);
  terms.arap = ad::constant_scalar(t, 4.0);
  terms.entropy = ad::constant_scalar(t, 5.0);
  LossWeights w;
  w.w_entropy = w.w_canon = w.w_arap = 0.0;
  EXPECT_EQ(loss_total_graph(t, terms, w).scalar(), 1.25);
}

TEST(LossTotal, LinearInArapWeight) {
  ad::Tape t;
  LossTerms terms;
  terms.rep = ad::constant_scalar(t, 1.0);
  terms.canon = ad::constant_scalar(t, 0.5);
  terms.arap = ad::constant_scalar(t, 2.0);
  terms.entropy = ad::constant_scalar(t, 0.25);
  LossWeights w;
  const double base = loss_total_graph(t, terms, w).scalar();
  LossWeights w2 = w;
  w2.w_arap *= 2.0;
  const double doubled = loss_total_graph(t, terms, w2).scalar();
  EXPECT_NEAR(doubled - base, w.w_arap * 2.0, 1e-15);
}

// gradient spot checks through the loss graphs
TEST(LossGradients, ReprojectionWrtShape) {
  Rng rng(5);
  Eigen::MatrixXd x(4, 3), y(4, 2);
  Eigen::VectorXd areas(4);
  for (Eigen::Index i = 0; i < 4; ++i) {
    x.row(i) << rng.gaussian(), rng.gaussian(), rng.gaussian();
    y.row(i) << rng.gaussian(), rng.gaussian();
    areas[i] = 0.5 + rng.uniform();
  }
  KeypointSet kp = all_visible(y);
  kp.z[2] = false;

  const auto loss_on = [&](ad::Tape& t, ad::Value xn) {
    TransformNode cam{ad::constant(t, Eigen::Matrix3d::Identity()),
                      ad::constant(t, Eigen::RowVector3d::Zero())};
    return loss_reprojection_graph(project_ortho_graph(xn, cam), kp, areas, 0.01);
  };
  ad::Tape t;
  ad::Value xn = ad::leaf(t, x);
  ad::Value root = loss_on(t, xn);
  t.backward(root.id);
  const Eigen::MatrixXd g = t.grad(xn.id);
  const double step = 1e-6;
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (int c = 0; c < 3; ++c) {
      Eigen::MatrixXd up = x, dn = x;
      up(i, c) += step;
      dn(i, c) -= step;
      ad::Tape tu, td;
      const double num =
          (loss_on(tu, ad::constant(tu, up)).scalar() - loss_on(td, ad::constant(td, dn)).scalar()) /
          (2 * step);
      EXPECT_NEAR(g(i, c), num, 1e-6 * std::max({1.0, std::abs(num)}));
    }
}

// stop-gradient semantics: analytic gradient matches finite differences of
// the loss with rotations frozen at their current fit
TEST(LossGradients, ArapFrozenRotationSemantics) {
  const TriMesh mesh = make_icosphere(1);
  const OneRings rings = build_one_rings(mesh);
  Rng rng(6);
  Eigen::MatrixXd x = mesh.vertices;
  for (Eigen::Index i = 0; i < x.size(); ++i) x(i) += 0.15 * rng.gaussian();

  ad::Tape t;
  ad::Value xn = ad::leaf(t, x);
  ad::Value loss = loss_arap_graph(xn, mesh.vertices, rings, 0.01);
  t.backward(loss.id);
  const Eigen::MatrixXd g = t.grad(xn.id);

  const auto frozen_rotations = arap_fit_rotations(x, mesh.vertices, rings);
  const double step = 1e-6;
  double worst_frozen = 0.0, worst_refit = 0.0;
  Rng pick(7);
  for (int trial = 0; trial < 60; ++trial) {
    const Eigen::Index i = Eigen::Index(pick.uniform_index(std::uint64_t(x.rows())));
    const int c = int(pick.uniform_index(3));
    Eigen::MatrixXd up = x, dn = x;
    up(i, c) += step;
    dn(i, c) -= step;
    ad::Tape tu, td, tu2, td2;
    const double num_frozen =
        (loss_arap_graph(ad::constant(tu, up), mesh.vertices, rings, 0.01, &frozen_rotations).scalar() -
         loss_arap_graph(ad::constant(td, dn), mesh.vertices, rings, 0.01, &frozen_rotations).scalar()) /
        (2 * step);
    const double num_refit =
        (loss_arap_graph(ad::constant(tu2, up), mesh.vertices, rings, 0.01).scalar() -
         loss_arap_graph(ad::constant(td2, dn), mesh.vertices, rings, 0.01).scalar()) /
        (2 * step);
    const double denom = std::max({std::abs(num_frozen), std::abs(g(i, c)), 1e-8});
    worst_frozen = std::max(worst_frozen, std::abs(num_frozen - g(i, c)) / denom);
    worst_refit = std::max(worst_refit, std::abs(num_refit - g(i, c)) / denom);
  }
  EXPECT_LT(worst_frozen, 1e-6);
  // with re-fit rotations the envelope argument does not hold for the robust
  // outer penalty; a visible mismatch is expected
  EXPECT_GT(worst_refit, worst_frozen);
}

TEST(LossGradients, EntropyThroughSoftmax) {
  Rng rng(8);
  Eigen::MatrixXd logits(5, 3);
  for (Eigen::Index i = 0; i < logits.size(); ++i) logits(i) = rng.gaussian();

  ad::Tape t;
  ad::Value l = ad::leaf(t, logits);
  ad::Value loss = loss_entropy_graph(ad::rowwise_softmax(l));
  t.backward(loss.id);
  const Eigen::MatrixXd g = t.grad(l.id);
  const double step = 1e-6;
  for (Eigen::Index i = 0; i < logits.rows(); ++i)
    for (int c = 0; c < 3; ++c) {
      Eigen::MatrixXd up = logits, dn = logits;
      up(i, c) += step;
      dn(i, c) -= step;
      ad::Tape tu, td;
      const double num = (loss_entropy_graph(ad::rowwise_softmax(ad::constant(tu, up))).scalar() -
                          loss_entropy_graph(ad::rowwise_softmax(ad::constant(td, dn))).scalar()) /
                         (2 * step);
      EXPECT_NEAR(g(i, c), num, 1e-6 * std::max(1.0, std::abs(num)));
    }
}
