#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>

#include "dp3d/optimizer.hpp"

using namespace dp3d;
using ad::Mat;

TEST(Grad, QuadraticGradientIsParameter) {
  ParamSet params;
  params.add("p", (Mat(2, 2) << 1, -2, 0.5, 3).finished());
  const LossFn loss = [](ad::Tape&, const ParamLeaves& leaves) {
    return ad::scale(ad::sum(ad::cmul(leaves.at("p"), leaves.at("p"))), 0.5);
  };
  const GradResult g = grad(loss, params);
  EXPECT_EQ(g.grads.at("p"), params.at("p"));
  EXPECT_NEAR(g.loss, 0.5 * params.at("p").squaredNorm(), 1e-14);
}

TEST(Grad, ConstantLossHasZeroGradients) {
  ParamSet params;
  params.add("p", Mat::Ones(3, 1));
  const LossFn loss = [](ad::Tape& t, const ParamLeaves&) { return ad::constant_scalar(t, 7.0); };
  const GradResult g = grad(loss, params);
  EXPECT_EQ(g.grads.at("p"), Mat::Zero(3, 1));
  EXPECT_EQ(g.loss, 7.0);
}

TEST(Grad, FrozenTensorsAreSkipped) {
  ParamSet params;
  params.add("a", Mat::Ones(2, 1), true);
  params.add("b", Mat::Ones(2, 1), false);
  const LossFn loss = [](ad::Tape&, const ParamLeaves& leaves) {
    return ad::sum(ad::cmul(leaves.at("a"), leaves.at("b")));
  };
  const GradResult g = grad(loss, params);
  EXPECT_EQ(g.grads.count("a"), 1u);
  EXPECT_EQ(g.grads.count("b"), 0u);
}

TEST(Grad, NonFiniteGradientNamesTensor) {
  ParamSet params;
  params.add("bad", Mat::Zero(1, 1));
  const LossFn loss = [](ad::Tape&, const ParamLeaves& leaves) {
    return ad::sum(ad::log(leaves.at("bad")));  // d/dp log p at 0 -> inf
  };
  try {
    grad(loss, params);
    FAIL() << "expected non-finite gradient error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("bad"), std::string::npos);
  }
}

TEST(CheckGradients, QuadraticPassesTightly) {
  ParamSet params;
  params.add("p", (Mat(3, 2) << 0.3, -1, 2, 0.1, -0.4, 1.4).finished());
  const LossFn loss = [](ad::Tape&, const ParamLeaves& leaves) {
    return ad::scale(ad::sum(ad::cmul(leaves.at("p"), leaves.at("p"))), 0.5);
  };
  const GradCheckReport report = check_gradients(loss, params, 1e-5, 1e-6);
  EXPECT_TRUE(report.passed);
  EXPECT_LT(report.max_rel_error, 1e-8);
  EXPECT_EQ(report.coordinates_checked, 6);
}

TEST(CheckGradients, CorruptedBackwardIsFlagged) {
  ParamSet params;
  params.add("p", (Mat(2, 1) << 1.0, -2.0).finished());
  // custom op with a deliberately wrong backward (x1.01)
  const LossFn loss = [](ad::Tape& t, const ParamLeaves& leaves) {
    const ad::Value p = leaves.at("p");
    const int out = t.next_id();
    const int ip = p.id;
    const Mat v = Mat::Constant(1, 1, p.val().squaredNorm());
    return ad::Value{&t, t.push(v, true, [out, ip](ad::Tape& tp) {
                       tp.grad(ip) += 1.01 * 2.0 * tp.grad(out)(0, 0) * tp.value(ip);
                     })};
  };
  const GradCheckReport report = check_gradients(loss, params, 1e-5, 1e-4);
  EXPECT_FALSE(report.passed);
  EXPECT_GT(report.max_rel_error, 5e-3);
  EXPECT_EQ(report.worst.tensor, "p");
}

TEST(CheckGradients, SubsamplesLargeTensors) {
  ParamSet params;
  params.add("big", Mat::Ones(40, 40));
  const LossFn loss = [](ad::Tape&, const ParamLeaves& leaves) {
    return ad::scale(ad::sum(ad::cmul(leaves.at("big"), leaves.at("big"))), 0.5);
  };
  const GradCheckReport report = check_gradients(loss, params, 1e-5, 1e-6, 200);
  EXPECT_TRUE(report.passed);
  EXPECT_EQ(report.coordinates_checked, 200);
}

namespace {

BatchLossFn quadratic_batch_loss() {
  return [](ad::Tape& t, const ParamLeaves& leaves, const std::vector<int>&, Rng&) {
    BatchGraph g;
    g.total = ad::scale(ad::sum(ad::cmul(leaves.at("p"), leaves.at("p"))), 0.5);
    g.values.total = g.total.scalar();
    g.values.rep = g.values.total;
    return g;
  };
}

}  // namespace

TEST(Train, DefaultsMatchReportedRecipe) {
  const OptimizerConfig cfg;
  EXPECT_EQ(cfg.learning_rate, 0.003);
  EXPECT_EQ(cfg.momentum, 0.99);
  EXPECT_EQ(cfg.weight_decay, 0.001);
  EXPECT_EQ(cfg.batch_size, 512);
  EXPECT_EQ(cfg.lr_drop_factor, 10.0);
  EXPECT_EQ(cfg.lr_drop_at_fraction, 0.8);
}

TEST(Train, ZeroLearningRateLeavesParamsBitExact) {
  ParamSet params;
  params.add("p", (Mat(2, 2) << 0.1, -0.7, 0.33, 1e-9).finished());
  const Mat before = params.at("p");
  OptimizerConfig cfg;
  cfg.learning_rate = 0.0;
  cfg.epochs = 5;
  cfg.batch_size = 2;
  const TrainResult result = train(std::move(params), 4, quadratic_batch_loss(), cfg);
  EXPECT_EQ(result.params.at("p"), before);
  EXPECT_EQ(result.history.size(), 5u);
}

TEST(Train, OneParamQuadraticGeometricDecay) {
  ParamSet params;
  params.add("p", Mat::Constant(1, 1, 1.0));
  OptimizerConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.momentum = 0.0;
  cfg.weight_decay = 0.0;
  cfg.epochs = 20;
  cfg.batch_size = 1;
  cfg.lr_drop_at_fraction = 1.0;  // no drop
  const TrainResult result = train(std::move(params), 1, quadratic_batch_loss(), cfg);
  EXPECT_NEAR(result.params.at("p")(0, 0), std::pow(0.9, 20), 1e-12);
}

TEST(Train, MomentumAndDecayMatchHandRecursion) {
  ParamSet params;
  params.add("p", Mat::Constant(1, 1, 2.0));
  OptimizerConfig cfg;
  cfg.learning_rate = 0.05;
  cfg.momentum = 0.9;
  cfg.weight_decay = 0.01;
  cfg.epochs = 7;
  cfg.batch_size = 1;
  cfg.lr_drop_at_fraction = 1.0;
  const TrainResult result = train(std::move(params), 1, quadratic_batch_loss(), cfg);

  double p = 2.0, v = 0.0;
  for (int step = 0; step < 7; ++step) {
    v = 0.9 * v + (p + 0.01 * p);  // gradient of p^2/2 is p; L2 term folded in
    p -= 0.05 * v;
  }
  EXPECT_NEAR(result.params.at("p")(0, 0), p, 1e-12);
}

TEST(Train, LearningRateDropsAtFraction) {
  ParamSet params;
  params.add("p", Mat::Constant(1, 1, 1.0));
  OptimizerConfig cfg;
  cfg.learning_rate = 0.01;
  cfg.epochs = 10;
  cfg.batch_size = 1;
  const TrainResult result = train(std::move(params), 1, quadratic_batch_loss(), cfg);
  for (int e = 0; e < 8; ++e) EXPECT_EQ(result.history[size_t(e)].lr, 0.01);
  for (int e = 8; e < 10; ++e) EXPECT_NEAR(result.history[size_t(e)].lr, 0.001, 1e-15);
}

TEST(Train, DivergenceAbortsWithLastGoodCheckpoint) {
  ParamSet params;
  params.add("p", Mat::Constant(1, 1, 1.0));
  auto counter = std::make_shared<int>(0);
  const BatchLossFn loss = [counter](ad::Tape& t, const ParamLeaves& leaves, const std::vector<int>&,
                                     Rng&) {
    BatchGraph g;
    if (++*counter > 3) {
      g.total = ad::constant_scalar(t, std::nan(""));
      g.values.total = std::nan("");
      return g;
    }
    g.total = ad::scale(ad::sum(ad::cmul(leaves.at("p"), leaves.at("p"))), 0.5);
    g.values.total = g.total.scalar();
    return g;
  };
  OptimizerConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.momentum = 0.0;
  cfg.weight_decay = 0.0;
  cfg.epochs = 10;
  cfg.batch_size = 1;
  cfg.lr_drop_at_fraction = 1.0;
  const TrainResult result = train(std::move(params), 1, loss, cfg);
  EXPECT_TRUE(result.diverged);
  EXPECT_EQ(result.history.size(), 3u);  // three clean epochs before the NaN
  EXPECT_NEAR(result.params.at("p")(0, 0), std::pow(0.9, 3), 1e-12);  // last good state
}

TEST(Train, BitDeterministicGivenSeed) {
  const auto run = [] {
    ParamSet params;
    params.add("p", (Mat(3, 3) << 1, 2, 3, 4, 5, 6, 7, 8, 9).finished());
    OptimizerConfig cfg;
    cfg.learning_rate = 0.01;
    cfg.epochs = 6;
    cfg.batch_size = 2;
    cfg.seed = 1234;
    return train(std::move(params), 5, quadratic_batch_loss(), cfg);
  };
  const TrainResult a = run();
  const TrainResult b = run();
  EXPECT_EQ(a.params.at("p"), b.params.at("p"));
  ASSERT_EQ(a.history.size(), b.history.size());
  for (size_t i = 0; i < a.history.size(); ++i)
    EXPECT_EQ(a.history[i].losses.total, b.history[i].losses.total);
}
